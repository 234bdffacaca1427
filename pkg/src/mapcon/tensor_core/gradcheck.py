"""Central-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tape, Tensor, TensorError, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    tol: float
    n_coords: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def analytic_grad(f, x: np.ndarray) -> np.ndarray:
    leaf = Tensor(x, requires_grad=True)
    with Tape():
        out = f(leaf)
        if out.tape is None:
            # f does not depend on x through any recorded path
            return np.zeros_like(x)
        grads = backward(out, wrt=[leaf])
    return np.array(grads[leaf])


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        fp = f(Tensor(xp.reshape(x.shape))).item()
        fm = f(Tensor(xm.reshape(x.shape))).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise TensorError("finite_difference_check",
                              f"non-finite evaluation at coordinate {tuple(int(k) for k in np.unravel_index(i, x.shape))}")
        gf[i] = (fp - fm) / (2 * h)
    return g


def finite_difference_check(f, x, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare tape gradients of scalar ``f`` at ``x`` with central differences.

    The error is measured against the larger of the two gradients' max-norms,
    so coordinates whose true gradient is ~0 do not amplify round-off.
    Runs in double precision.
    """
    x = np.array(x.values if isinstance(x, Tensor) else x, dtype=np.float64)
    ga = analytic_grad(f, x)
    gn = numeric_grad(f, x, h)
    diff = np.abs(ga - gn)
    scale = max(np.abs(ga).max(initial=0.0), np.abs(gn).max(initial=0.0))
    max_abs = float(diff.max(initial=0.0))
    rel = 0.0 if scale == 0.0 else max_abs / scale
    return GradCheckReport(rel, max_abs, tol, x.size)
