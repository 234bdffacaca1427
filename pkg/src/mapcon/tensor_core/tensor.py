"""Dense tensors recorded on a define-by-run tape, and the reverse sweep."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class TensorError(ValueError):
    """Raised by an operation whose inputs violate its signature."""

    def __init__(self, op: str, message: str):
        super().__init__(f"{op}: {message}")
        self.op = op


class NonFiniteError(TensorError):
    pass


_strict = False


def set_strict(flag: bool) -> bool:
    """Toggle rejection of non-finite operation inputs. Returns the old value."""
    global _strict
    old, _strict = _strict, bool(flag)
    return old


def is_strict() -> bool:
    return _strict


@contextlib.contextmanager
def strict_mode(flag: bool = True):
    old = set_strict(flag)
    try:
        yield
    finally:
        set_strict(old)


class Tensor:
    """Immutable n-d array with an optional place on the active tape.

    Leaves are created directly by the user; every other tensor is the output
    of an operation. ``node_id`` is only set for tensors produced while a tape
    was recording.
    """

    __slots__ = ("values", "requires_grad", "node_id", "tape", "__weakref__")

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        arr = np.array(values, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float64)
        arr.setflags(write=False)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.node_id: Optional[int] = None
        self.tape: Optional[Tape] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        if arr.flags.writeable:
            arr.setflags(write=False)
        t.values = arr
        t.requires_grad = False
        t.node_id = None
        t.tape = None
        return t

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def numpy(self) -> np.ndarray:
        return np.array(self.values)

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.values)

    def __len__(self):
        return self.values.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; the kernels live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.mul_scalar(self, other)
        return ops.mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.mul_scalar(self, 1.0 / other)
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul_scalar(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


@dataclass
class Node:
    parents: tuple  # node ids, or None for inputs that carry no gradient
    backward: Optional[Callable]  # grad_out -> tuple of grads aligned with parents
    leaf: Optional[Tensor] = None
    kind: str = ""


@dataclass
class Tape:
    """Ordered record of executed operations.

    Nodes are appended as operations run, so parents always precede their
    children; the reverse sweep is a single pass over the list.
    """

    nodes: list = field(default_factory=list)
    _leaf_ids: dict = field(default_factory=dict)

    def leaf_id(self, t: Tensor) -> int:
        key = id(t)
        nid = self._leaf_ids.get(key)
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append(Node(parents=(), backward=None, leaf=t, kind="leaf"))
            self._leaf_ids[key] = nid
        return nid

    def node_of(self, t: Tensor) -> Optional[int]:
        if not t.requires_grad:
            return None
        if t.tape is self and t.node_id is not None:
            return t.node_id
        if t.node_id is None:
            return self.leaf_id(t)
        # produced on another tape: treat as a constant here
        return None

    def record(self, kind: str, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
        parents = tuple(self.node_of(t) for t in inputs)
        if all(p is None for p in parents):
            return out
        out.requires_grad = True
        out.node_id = len(self.nodes)
        out.tape = self
        self.nodes.append(Node(parents=parents, backward=backward, kind=kind))
        return out

    def __len__(self):
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.pop()
        return False


_tape_stack: list = []


def active_tape() -> Optional[Tape]:
    return _tape_stack[-1] if _tape_stack else None


class GradientMap:
    """Leaf tensor -> gradient array. Lookup is by identity."""

    def __init__(self):
        self._by_id = {}

    def _set(self, t: Tensor, g: np.ndarray):
        self._by_id[id(t)] = (t, g)

    def __getitem__(self, t):
        return self._by_id[id(t)][1]

    def __contains__(self, t):
        return id(t) in self._by_id

    def get(self, t, default=None):
        hit = self._by_id.get(id(t))
        return default if hit is None else hit[1]

    def __len__(self):
        return len(self._by_id)

    def __iter__(self):
        return (t for t, _ in self._by_id.values())

    def items(self):
        return list(self._by_id.values())

    def keys(self):
        return [t for t, _ in self._by_id.values()]

    def values(self):
        return [g for _, g in self._by_id.values()]


def backward(loss: Tensor, wrt: Iterable[Tensor] = ()) -> GradientMap:
    """Reverse sweep from a scalar ``loss``.

    Returns gradients for every reachable leaf that requires grad, plus any
    recorded intermediate listed in ``wrt``. A leaf or intermediate the sweep
    never reaches (e.g. only reachable through ``stop_gradient``) gets zeros
    when explicitly requested.
    """
    if loss.values.size != 1:
        raise TensorError("backward", f"loss must be scalar, got shape {loss.shape}")
    if loss.tape is None or loss.node_id is None:
        raise TensorError("backward", "loss is not recorded on a tape")
    tape = loss.tape
    wrt = list(wrt)
    want = {}
    for t in wrt:
        if t.tape is tape and t.node_id is not None:
            want[t.node_id] = t
        elif t.requires_grad and id(t) in tape._leaf_ids:
            want[tape._leaf_ids[id(t)]] = t

    grads: dict = {loss.node_id: np.ones(loss.shape, dtype=loss.dtype)}
    out = GradientMap()
    for nid in range(loss.node_id, -1, -1):
        g = grads.pop(nid, None)
        if g is None:
            continue
        node = tape.nodes[nid]
        if nid in want:
            out._set(want[nid], g)
        if node.leaf is not None:
            out._set(node.leaf, g)
            continue
        pgrads = node.backward(g)
        for pid, pg in zip(node.parents, pgrads):
            if pid is None or pg is None:
                continue
            acc = grads.get(pid)
            grads[pid] = pg if acc is None else acc + pg
    for t in wrt:
        if t not in out:
            out._set(t, np.zeros(t.shape, dtype=t.dtype))
    return out
