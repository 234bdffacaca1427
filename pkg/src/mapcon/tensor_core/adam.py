from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, TensorError


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update.

    ``params`` maps names to leaf tensors and ``grads`` maps the same names to
    arrays. Returns a new parameter dict (tensors are immutable) and the
    advanced state; the input state is not modified.
    """
    if not lr > 0:
        raise TensorError("adam_step", f"learning rate must be positive, got {lr}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        if name not in grads:
            raise TensorError("adam_step", f"missing gradient for parameter {name!r}")
        g = np.asarray(grads[name], dtype=p.dtype)
        if g.shape != p.shape:
            raise TensorError("adam_step", f"gradient shape {g.shape} != parameter {name!r} {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.values)
            v = np.zeros_like(p.values)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        upd = p.values - lr * mhat / (np.sqrt(vhat) + state.eps)
        new_params[name] = Tensor(upd.astype(p.dtype), requires_grad=p.requires_grad)
        new_m[name] = m.astype(p.dtype)
        new_v[name] = v.astype(p.dtype)
    return new_params, AdamState(new_m, new_v, t, b1, b2, state.eps)
