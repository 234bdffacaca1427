"""Registry of finite-difference checks for every kernel and loss.

Each item builds its inputs from a seed and returns the worst relative error
over all differentiable arguments. Loss items resolve the loss function from
:mod:`mapcon.losses` at call time, so a patched function is what gets checked.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses
from .tensor_core import Tape, Tensor, backward, finite_difference_check, ops
from .tensor_core.ops import KERNELS


@dataclass
class CheckResult:
    name: str
    group: str
    max_rel_error: float
    passed: bool


def _check_args(fn, args, diff, tol):
    """Max relative error of ``sum(fn(*args) * probe)`` over each index in ``diff``."""
    out = fn(*[Tensor(a) if isinstance(a, np.ndarray) else a for a in args])
    probe = np.random.default_rng(99).normal(size=out.shape)
    worst = 0.0
    for k in diff:
        def f(x, k=k):
            full = [Tensor(a) if isinstance(a, np.ndarray) else a for a in args]
            full[k] = x
            y = fn(*full)
            return ops.sum_axis(ops.mul(y, Tensor(probe)))
        rep = finite_difference_check(f, np.asarray(args[k], dtype=np.float64), tol=tol)
        worst = max(worst, rep.max_rel_error)
    return worst


def _away_from_zero(rng, shape, lo=0.2, hi=1.5):
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


# -- kernels --------------------------------------------------------------------

# input shapes cycle with the seed, so three consecutive seeds cover three shapes
KERNEL_SHAPES = ((5, 3, 4), (7, 4, 2), (6, 5, 3))
LOSS_SHAPES = ((6, 4), (8, 3), (7, 5))


def _kernel_cases(rng, variant: int = 0) -> dict:
    n, d, e = KERNEL_SHAPES[variant % len(KERNEL_SHAPES)]
    x = rng.normal(size=(n, d))
    pos = rng.uniform(0.5, 2.0, size=(n, d))
    idx = np.array([0, 2, 2, 4, 1])
    cost = rng.uniform(0.0, 1.0, size=(4, 3))
    return {
        "pointwise_linear": (ops.pointwise_linear, [x, rng.normal(size=(d, e)), rng.normal(size=e)], [0, 1, 2]),
        "conv1d_k3": (ops.conv1d_k3, [x, rng.normal(size=(3, d, e)), rng.normal(size=e)], [0, 1, 2]),
        "relu": (ops.relu, [_away_from_zero(rng, (n, d))], [0]),
        "add": (ops.add, [x, rng.normal(size=(1, d))], [0, 1]),
        "sub": (ops.sub, [x, rng.normal(size=(n, 1))], [0, 1]),
        "mul": (ops.mul, [x, rng.normal(size=(n, d))], [0, 1]),
        "div": (ops.div, [x, pos], [0, 1]),
        "mul_scalar": (lambda a: ops.mul_scalar(a, -1.7), [x], [0]),
        "matmul": (ops.matmul, [x, rng.normal(size=(d, e))], [0, 1]),
        "transpose": (ops.transpose, [x], [0]),
        "instance_norm": (ops.instance_norm, [x], [0]),
        "mean_all": (ops.mean_all, [x], [0]),
        "sum_axis": (lambda a: ops.sum_axis(a, axis=0, keepdims=True), [x], [0]),
        "logsumexp": (lambda a: ops.logsumexp(a, axis=1), [x], [0]),
        "sinkhorn": (lambda c: ops.sinkhorn(c, 0.3, 20), [cost], [0]),
        "l2_norm_rows": (ops.l2_norm_rows, [x], [0]),
        "channel_slice": (lambda a: ops.channel_slice(a, 1, 3), [x], [0]),
        "concat_channels": (ops.concat_channels, [x, rng.normal(size=(n, 2))], [0, 1]),
        "take_rows": (lambda a: ops.take_rows(a, idx), [x], [0]),
        "exp": (ops.exp, [x], [0]),
        "log": (ops.log, [pos], [0]),
        "abs": (ops.abs, [_away_from_zero(rng, (n, d))], [0]),
        "sqrt": (ops.sqrt, [pos], [0]),
        "sigmoid": (ops.sigmoid, [x], [0]),
        "relu_hinge": (ops.relu_hinge, [_away_from_zero(rng, (n, d))], [0]),
    }


def _stop_gradient_check(rng, tol):
    """The tape gradient through stop_gradient must be exactly zero."""
    x = rng.normal(size=(4, 3))
    leaf = Tensor(x, requires_grad=True)
    with Tape():
        y = ops.add(ops.mean_all(ops.mul(leaf, leaf)),
                    ops.mean_all(ops.mul(ops.stop_gradient(leaf), Tensor(x))))
        g = backward(y, wrt=[leaf])[leaf]
    expected = 2.0 * x / x.size
    scale = np.abs(expected).max()
    return float(np.abs(g - expected).max() / scale)


# -- losses ---------------------------------------------------------------------

def _loss_cases(rng, variant: int = 0) -> dict:
    n, d = LOSS_SHAPES[variant % len(LOSS_SHAPES)]
    pts = lambda: rng.normal(size=(n, 3))  # noqa: E731
    feat = lambda: rng.normal(size=(n, d))  # noqa: E731
    edges = np.array([[0, 1], [1, 2], [2, 3], [3, 4], [4, 5], [0, 5], [1, 4]])
    ref = pts()
    B = np.zeros((n, n))
    B[np.arange(n), rng.integers(0, n, size=n)] = 1.0
    w = losses.LossWeights(rec=3.0, edge=0.5, mesh_cc=1.0, mesh_ss=1.0, point=1.0, margin=1.0)
    L = losses
    return {
        "rec_loss": (lambda p, g: L.rec_loss(p, g), [pts(), pts()], [0, 1]),
        "edge_loss": (lambda p: L.edge_loss(p, Tensor(ref), edges), [pts()], [0]),
        "supervised_loss": (lambda p: L.supervised_loss(p, Tensor(ref + 0.1), Tensor(ref), edges, w),
                            [pts()], [0]),
        "mesh_triplet": (lambda a, p, q: L.mesh_triplet(a, p, q, 3.0), [feat(), feat(), feat()], [0, 1, 2]),
        "point_triplet": (lambda a, b: L.point_triplet(a, b, 3.0), [feat(), feat()], [0, 1]),
        "mesh_cc_loss": (lambda *f: L.mesh_cc_loss(*f, margin=3.0), [feat() for _ in range(6)], list(range(6))),
        "mesh_ss_loss": (lambda *f: L.mesh_ss_loss(*f, B=B, margin=3.0), [feat() for _ in range(6)], list(range(6))),
        "cc_loss": (lambda p: L.cc_loss(p, Tensor(ref + 0.1), Tensor(ref), edges, w), [pts()], [0]),
        "sc_loss": (lambda p: L.sc_loss(p, Tensor(ref - 0.1), Tensor(ref), edges, w), [pts()], [0]),
        "unsup_loss": (lambda p, q: L.unsup_loss(p, q, Tensor(ref + 0.1), Tensor(ref), edges, w),
                       [pts(), pts()], [0, 1]),
        "labelled_total": (lambda a, b, c: L.labelled_total(
            L.rec_loss(a, Tensor(ref)), L.mesh_triplet(a, b, c, 3.0), L.point_triplet(a, b, 3.0), w),
            [pts(), pts(), pts()], [0, 1, 2]),
        "unlabelled_total": (lambda a, b, c: L.unlabelled_total(
            L.unsup_loss(a, b, Tensor(ref), Tensor(ref), edges, w), L.mesh_triplet(a, b, c, 3.0),
            L.mesh_triplet(b, c, a, 3.0), L.point_triplet(a, c, 3.0), w),
            [pts(), pts(), pts()], [0, 1, 2]),
    }


def kernel_names() -> list:
    return list(KERNELS)


def loss_names() -> list:
    return list(_loss_cases(np.random.default_rng(0)))


def run_checks(which: str = "all", tol: float = 1e-4, seed: int = 0,
               progress: Callable | None = None) -> list:
    """Check every registered item once for ``seed``; returns CheckResults."""
    if which not in ("ops", "losses", "all"):
        raise ValueError(f"which must be ops, losses or all, got {which!r}")
    results = []

    def emit(name, group, err):
        r = CheckResult(name, group, float(err), bool(err <= tol))
        results.append(r)
        if progress:
            progress(r)

    if which in ("ops", "all"):
        cases = _kernel_cases(np.random.default_rng([seed, 0]), seed)
        for name in KERNELS:
            if name == "stop_gradient":
                emit(name, "ops", _stop_gradient_check(np.random.default_rng([seed, 1]), tol))
            else:
                fn, args, diff = cases[name]
                emit(name, "ops", _check_args(fn, args, diff, tol))
    if which in ("losses", "all"):
        for name, (fn, args, diff) in _loss_cases(np.random.default_rng([seed, 2]), seed).items():
            emit(name, "losses", _check_args(fn, args, diff, tol))
    return results
