"""Differentiable kernels.

Every kernel takes and returns :class:`Tensor`. When a tape is active and an
input requires grad, the output is recorded together with a closure mapping
the output gradient to input gradients.
"""

from __future__ import annotations

import numpy as np

from .tensor import NonFiniteError, Tensor, TensorError, active_tape, is_strict

IN_EPS = 1e-5
SINKHORN_MAX_SPAN = 200.0


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    arr = np.asarray(x, dtype=dtype)
    if arr.dtype.kind not in "fc":
        arr = arr.astype(np.float64)
    return Tensor._wrap(np.array(arr))


def _check_finite(kind, *tensors):
    if not is_strict():
        return
    for i, t in enumerate(tensors):
        if not np.all(np.isfinite(t.values)):
            raise NonFiniteError(kind, f"input {i} has non-finite values")


def _emit(kind, arr, inputs, bwd):
    out = Tensor._wrap(np.asarray(arr))
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(kind, out, inputs, bwd)
    return out


def _need(kind, cond, msg):
    if not cond:
        raise TensorError(kind, msg)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise TensorError(kind, f"shapes {a.shape} and {b.shape} do not broadcast") from None


# -- layers ---------------------------------------------------------------

def pointwise_linear(x, weight, bias):
    """Shared per-point affine map (a kernel-size-1 convolution): x @ W + b."""
    kind = "pointwise_linear"
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _need(kind, x.ndim == 2 and weight.ndim == 2 and bias.ndim == 1,
          f"expected (N,Din),(Din,Dout),(Dout,), got {x.shape},{weight.shape},{bias.shape}")
    _need(kind, x.shape[1] == weight.shape[0] and weight.shape[1] == bias.shape[0],
          f"width mismatch {x.shape} @ {weight.shape} + {bias.shape}")
    _check_finite(kind, x, weight, bias)
    xv, wv = x.values, weight.values

    def bwd(g):
        return g @ wv.T, xv.T @ g, g.sum(axis=0)

    return _emit(kind, xv @ wv + bias.values, (x, weight, bias), bwd)


def conv1d_k3(x, weight, bias):
    """Kernel-size-3 convolution along the point axis with zero padding.

    ``weight`` has shape (3, Din, Dout); tap 0 reads the previous point.
    """
    kind = "conv1d_k3"
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _need(kind, x.ndim == 2 and weight.ndim == 3 and weight.shape[0] == 3 and bias.ndim == 1,
          f"expected (N,Din),(3,Din,Dout),(Dout,), got {x.shape},{weight.shape},{bias.shape}")
    _need(kind, x.shape[1] == weight.shape[1] and weight.shape[2] == bias.shape[0],
          f"width mismatch {x.shape} * {weight.shape} + {bias.shape}")
    _check_finite(kind, x, weight, bias)
    n, din = x.shape
    xp = np.zeros((n + 2, din), dtype=x.dtype)
    xp[1:n + 1] = x.values
    wv = weight.values
    y = xp[0:n] @ wv[0] + xp[1:n + 1] @ wv[1] + xp[2:n + 2] @ wv[2] + bias.values

    def bwd(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wv)
        for k in range(3):
            gxp[k:k + n] += g @ wv[k].T
            gw[k] = xp[k:k + n].T @ g
        return gxp[1:n + 1], gw, g.sum(axis=0)

    return _emit(kind, y, (x, weight, bias), bwd)


def instance_norm(x, eps: float = IN_EPS):
    """Per-channel standardisation over the point axis of an (N, C) input."""
    kind = "instance_norm"
    x = as_tensor(x)
    _need(kind, x.ndim == 2, f"expected (N,C), got {x.shape}")
    _check_finite(kind, x)
    xv = x.values
    mu = xv.mean(axis=0, keepdims=True)
    var = ((xv - mu) ** 2).mean(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv

    def bwd(g):
        gm = g.mean(axis=0, keepdims=True)
        gx = inv * (g - gm - xhat * (g * xhat).mean(axis=0, keepdims=True))
        return (gx,)

    return _emit(kind, xhat, (x,), bwd)


# -- elementwise ----------------------------------------------------------

def relu(x):
    kind = "relu"
    x = as_tensor(x)
    _check_finite(kind, x)
    mask = x.values > 0
    return _emit(kind, np.where(mask, x.values, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def relu_hinge(x):
    """(x)^+ as used by the triplet hinges; same subgradient rule as relu."""
    kind = "relu_hinge"
    x = as_tensor(x)
    _check_finite(kind, x)
    mask = x.values > 0
    return _emit(kind, np.where(mask, x.values, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def add(a, b):
    kind = "add"
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape(kind, a, b)
    _check_finite(kind, a, b)
    sa, sb = a.shape, b.shape
    return _emit(kind, a.values + b.values, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    kind = "sub"
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape(kind, a, b)
    _check_finite(kind, a, b)
    sa, sb = a.shape, b.shape
    return _emit(kind, a.values - b.values, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    kind = "mul"
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape(kind, a, b)
    _check_finite(kind, a, b)
    av, bv = a.values, b.values
    return _emit(kind, av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b):
    kind = "div"
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape(kind, a, b)
    _check_finite(kind, a, b)
    av, bv = a.values, b.values
    y = av / bv

    def bwd(g):
        return _unbroadcast(g / bv, av.shape), _unbroadcast(-g * y / bv, bv.shape)

    return _emit(kind, y, (a, b), bwd)


def mul_scalar(x, c: float):
    kind = "mul_scalar"
    x = as_tensor(x)
    _check_finite(kind, x)
    c = float(c)
    return _emit(kind, x.values * c, (x,), lambda g: (g * c,))


def exp(x):
    kind = "exp"
    x = as_tensor(x)
    _check_finite(kind, x)
    y = np.exp(x.values)
    return _emit(kind, y, (x,), lambda g: (g * y,))


def log(x):
    kind = "log"
    x = as_tensor(x)
    _check_finite(kind, x)
    xv = x.values
    return _emit(kind, np.log(xv), (x,), lambda g: (g / xv,))


def abs(x):  # noqa: A001 - kernel name
    kind = "abs"
    x = as_tensor(x)
    _check_finite(kind, x)
    s = np.sign(x.values)
    return _emit(kind, np.abs(x.values), (x,), lambda g: (g * s,))


def sqrt(x):
    kind = "sqrt"
    x = as_tensor(x)
    _check_finite(kind, x)
    y = np.sqrt(x.values)
    return _emit(kind, y, (x,), lambda g: (g * 0.5 / y,))


def sigmoid(x):
    kind = "sigmoid"
    x = as_tensor(x)
    _check_finite(kind, x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.values))
    return _emit(kind, y, (x,), lambda g: (g * y * (1.0 - y),))


def stop_gradient(x):
    """Forward identity; the output is never recorded, so no gradient passes."""
    x = as_tensor(x)
    return Tensor._wrap(x.values)


# -- linear algebra / reductions -----------------------------------------

def matmul(a, b):
    kind = "matmul"
    a, b = as_tensor(a), as_tensor(b)
    _need(kind, a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[0],
          f"cannot multiply {a.shape} by {b.shape}")
    _check_finite(kind, a, b)
    av, bv = a.values, b.values
    return _emit(kind, av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(x):
    kind = "transpose"
    x = as_tensor(x)
    _need(kind, x.ndim == 2, f"expected 2-d, got {x.shape}")
    return _emit(kind, x.values.T, (x,), lambda g: (g.T,))


def mean_all(x):
    kind = "mean_all"
    x = as_tensor(x)
    _check_finite(kind, x)
    shape, n = x.shape, x.values.size
    return _emit(kind, np.asarray(x.values.mean()), (x,),
                 lambda g: (np.full(shape, g / n, dtype=x.dtype),))


def sum_axis(x, axis=None, keepdims: bool = False):
    kind = "sum_axis"
    x = as_tensor(x)
    _check_finite(kind, x)
    if axis is not None:
        _need(kind, -x.ndim <= axis < x.ndim, f"axis {axis} out of range for {x.shape}")
    shape = x.shape
    y = np.asarray(x.values.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(x.dtype),)

    return _emit(kind, y, (x,), bwd)


def logsumexp(x, axis: int, keepdims: bool = True):
    """Stable log-sum-exp along one axis."""
    kind = "logsumexp"
    x = as_tensor(x)
    _check_finite(kind, x)
    xv = x.values
    m = xv.max(axis=axis, keepdims=True)
    e = np.exp(xv - m)
    s = e.sum(axis=axis, keepdims=True)
    y = np.log(s) + m
    p = e / s

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * p,)

    return _emit(kind, y if keepdims else y.squeeze(axis), (x,), bwd)


def l2_norm_rows(x, eps: float = 0.0):
    """Row-wise Euclidean norm sqrt(sum x^2 + eps), shape (N, 1)."""
    kind = "l2_norm_rows"
    x = as_tensor(x)
    _need(kind, x.ndim == 2, f"expected (N,D), got {x.shape}")
    _check_finite(kind, x)
    xv = x.values
    nrm = np.sqrt((xv * xv).sum(axis=1, keepdims=True) + eps)
    # zero rows take the zero subgradient
    safe = np.where(nrm > 0, nrm, 1.0)
    return _emit(kind, nrm, (x,), lambda g: (np.where(nrm > 0, g * xv / safe, 0.0),))


def channel_slice(x, start: int, stop: int):
    kind = "channel_slice"
    x = as_tensor(x)
    _need(kind, x.ndim == 2 and 0 <= start < stop <= x.shape[1],
          f"slice [{start},{stop}) invalid for {x.shape}")
    shape = x.shape

    def bwd(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[:, start:stop] = g
        return (gx,)

    return _emit(kind, x.values[:, start:stop], (x,), bwd)


def concat_channels(*xs):
    kind = "concat_channels"
    xs = tuple(as_tensor(x) for x in xs)
    _need(kind, len(xs) >= 1 and all(x.ndim == 2 for x in xs), "expected 2-d inputs")
    n = xs[0].shape[0]
    _need(kind, all(x.shape[0] == n for x in xs),
          f"row counts differ: {[x.shape[0] for x in xs]}")
    cuts = np.cumsum([0] + [x.shape[1] for x in xs])

    def bwd(g):
        return tuple(g[:, cuts[i]:cuts[i + 1]] for i in range(len(xs)))

    return _emit(kind, np.concatenate([x.values for x in xs], axis=1), xs, bwd)


def take_rows(x, index):
    """Gather rows ``x[index]``; the backward pass scatter-adds."""
    kind = "take_rows"
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    _need(kind, x.ndim == 2 and index.ndim == 1, f"expected (N,D) and 1-d index, got {x.shape}")
    _need(kind, index.size == 0 or (index.min() >= 0 and index.max() < x.shape[0]),
          f"index out of range for {x.shape[0]} rows")
    shape = x.shape

    def bwd(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, index, g)
        return (gx,)

    return _emit(kind, x.values[index], (x,), bwd)


def sinkhorn(cost, epsilon: float, iterations: int):
    """Entropic transport plan with uniform marginals, as one fused kernel.

    Runs ``iterations`` scaling sweeps u = a / (K v), v = b / (K^T u) on the
    Gibbs kernel K = exp(-(cost - min cost) / epsilon) and returns
    diag(u) K diag(v); the shift leaves the plan unchanged. The backward pass
    differentiates through every sweep. Callers keep the cost span over
    epsilon small enough (see ``SINKHORN_MAX_SPAN``) that K does not underflow.
    """
    kind = "sinkhorn"
    cost = as_tensor(cost)
    _need(kind, cost.ndim == 2, f"expected a 2-d cost, got {cost.shape}")
    _need(kind, epsilon > 0 and iterations >= 1, "needs epsilon > 0 and iterations >= 1")
    _check_finite(kind, cost)
    n, m = cost.shape
    C = cost.values.astype(np.float64)
    K = np.exp(-(C - C.min()) / epsilon)
    a, b = 1.0 / n, 1.0 / m
    us = np.empty((iterations, n))
    vs = np.empty((iterations + 1, m))
    rs = np.empty((iterations, n))
    ss = np.empty((iterations, m))
    vs[0] = 1.0
    for t in range(iterations):
        rs[t] = K @ vs[t]
        us[t] = a / rs[t]
        ss[t] = K.T @ us[t]
        vs[t + 1] = b / ss[t]
    u, v = us[-1], vs[-1]
    T = u[:, None] * K * v[None, :]

    def bwd(g):
        g = g.astype(np.float64)
        gK = g * (u[:, None] * v[None, :])
        gu = (g * K) @ v
        gv = (g * K).T @ u
        grs = np.empty_like(rs)
        gss = np.empty_like(ss)
        for t in range(iterations - 1, -1, -1):
            gss[t] = -gv * vs[t + 1] / ss[t]
            gu = gu + K @ gss[t]
            grs[t] = -gu * us[t] / rs[t]
            gv = K.T @ grs[t]
            gu = np.zeros(n)
        gK += us.T @ gss + grs.T @ vs[:-1]
        return ((gK * K * (-1.0 / epsilon)).astype(cost.dtype),)

    return _emit(kind, T.astype(cost.dtype), (cost,), bwd)


KERNELS = {
    "pointwise_linear": pointwise_linear,
    "conv1d_k3": conv1d_k3,
    "relu": relu,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "mul_scalar": mul_scalar,
    "matmul": matmul,
    "transpose": transpose,
    "instance_norm": instance_norm,
    "mean_all": mean_all,
    "sum_axis": sum_axis,
    "logsumexp": logsumexp,
    "sinkhorn": sinkhorn,
    "l2_norm_rows": l2_norm_rows,
    "channel_slice": channel_slice,
    "concat_channels": concat_channels,
    "take_rows": take_rows,
    "exp": exp,
    "log": log,
    "abs": abs,
    "sqrt": sqrt,
    "sigmoid": sigmoid,
    "relu_hinge": relu_hinge,
    "stop_gradient": stop_gradient,
}


def op_forward(kind: str, inputs, attrs=None) -> Tensor:
    """Dispatch a kernel by name."""
    fn = KERNELS.get(kind)
    if fn is None:
        raise TensorError(kind, "unknown operation kind")
    return fn(*inputs, **(attrs or {}))
