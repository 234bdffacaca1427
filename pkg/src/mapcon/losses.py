"""Reconstruction, edge, consistency and contrastive triplet losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import Tensor, TensorError, ops

NORM_EPS = 1e-12


class LossError(TensorError):
    pass


@dataclass(frozen=True)
class LossWeights:
    rec: float = 1000.0
    edge: float = 0.5
    mesh_cc: float = 1.0
    mesh_ss: float = 1.0
    point: float = 1.0
    margin: float = 1.0

    def __post_init__(self):
        for k in ("rec", "edge", "mesh_cc", "mesh_ss", "point", "margin"):
            if getattr(self, k) < 0:
                raise LossError("LossWeights", f"{k} must be non-negative")


def _t(x):
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x))


def _same_shape(kind, *xs):
    shapes = {tuple(x.shape) for x in xs}
    if len(shapes) != 1:
        raise LossError(kind, f"shape mismatch {[tuple(x.shape) for x in xs]}")


def rec_loss(pred, gt) -> Tensor:
    """Mean squared coordinate error, ||pred - gt||_F^2 / (3N)."""
    pred, gt = _t(pred), _t(gt)
    _same_shape("rec_loss", pred, gt)
    d = ops.sub(pred, gt)
    return ops.mean_all(ops.mul(d, d))


def edge_lengths(points: np.ndarray, edges: np.ndarray, dtype=np.float64) -> np.ndarray:
    p = np.asarray(points, dtype=dtype)
    d = p[edges[:, 0]] - p[edges[:, 1]]
    return np.sqrt((d * d).sum(axis=1))


def edge_loss(pred, ref, edges) -> Tensor:
    """Mean |len_pred / len_ref - 1| over the reference mesh's edges."""
    pred, ref = _t(pred), _t(ref)
    _same_shape("edge_loss", pred, ref)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        return Tensor._wrap(np.zeros((), dtype=pred.dtype))
    # same formula and precision as the prediction, so pred == ref gives exactly 0
    ref_len = edge_lengths(ref.values, edges, pred.dtype)
    bad = np.flatnonzero(ref_len == 0)
    if bad.size:
        j, k = edges[bad[0]]
        raise LossError("edge_loss", f"zero-length reference edge ({j}, {k})")
    diff = ops.sub(ops.take_rows(pred, edges[:, 0]), ops.take_rows(pred, edges[:, 1]))
    lengths = ops.l2_norm_rows(diff)
    ratio = ops.div(lengths, Tensor._wrap(ref_len[:, None]))
    return ops.mean_all(ops.abs(ops.sub(ratio, 1.0)))


def supervised_loss(pred, gt, id_input, edges, w: LossWeights = LossWeights()) -> Tensor:
    return ops.add(ops.mul_scalar(rec_loss(pred, gt), w.rec),
                   ops.mul_scalar(edge_loss(pred, id_input, edges), w.edge))


def _row_dist(a, b):
    return ops.l2_norm_rows(ops.sub(a, b), NORM_EPS)


def mesh_triplet(a, p, n, margin: float = 1.0) -> Tensor:
    """Hinge on the mesh-averaged (d(a,p) - d(a,n)); margin applies once per mesh."""
    a, p, n = _t(a), _t(p), _t(n)
    _same_shape("mesh_triplet", a, p, n)
    gap = ops.mean_all(ops.sub(_row_dist(a, p), _row_dist(a, n)))
    return ops.relu_hinge(ops.add(gap, margin))


def point_triplet(f_w, f_u, margin: float = 1.0) -> Tensor:
    """Per-point hinge; the negative for row j is row j+1 of ``f_u`` (wrapping)."""
    f_w, f_u = _t(f_w), _t(f_u)
    _same_shape("point_triplet", f_w, f_u)
    n = f_u.shape[0]
    if n < 2:
        raise LossError("point_triplet", "need at least 2 points for a negative")
    shifted = ops.take_rows(f_u, (np.arange(n) + 1) % n)
    d = ops.sub(_row_dist(f_w, f_u), _row_dist(f_w, shifted))
    return ops.mean_all(ops.relu_hinge(ops.add(d, margin)))


def mesh_cc_loss(pose_x1, pose_w, pose_x2, id_x1, id_x2, id_w, margin: float = 1.0) -> Tensor:
    """Cross-consistency triplets on aligned features (pose_x1 anchors pose, id_x1 anchors identity)."""
    return ops.add(mesh_triplet(pose_x1, pose_w, pose_x2, margin),
                   mesh_triplet(id_x1, id_x2, id_w, margin))


def check_one_hot(B: np.ndarray) -> None:
    B = np.asarray(B)
    if B.ndim != 2 or not np.all((B == 0) | (B == 1)) or not np.all(B.sum(axis=1) == 1):
        raise LossError("mesh_ss_loss", "B must have exactly one 1 per row")


def _reorder(B, feat: Tensor) -> Tensor:
    return ops.matmul(Tensor._wrap(np.asarray(B, dtype=feat.dtype)), feat)


def mesh_ss_loss(pose_w, pose_v, pose_u, id_w, id_u, id_v, B, margin: float = 1.0) -> Tensor:
    """Triplets across unaligned meshes; ``B`` pulls v's features into w/u order."""
    check_one_hot(B)
    pose_v, id_v = _t(pose_v), _t(id_v)
    return ops.add(mesh_triplet(pose_w, _reorder(B, pose_v), pose_u, margin),
                   mesh_triplet(id_w, id_u, _reorder(B, id_v), margin))


def consistency_loss(output, target, id_input, edges, w: LossWeights = LossWeights()) -> Tensor:
    """Shared form of the CC and SC reconstruction objectives."""
    return ops.add(ops.mul_scalar(rec_loss(output, target), w.rec),
                   ops.mul_scalar(edge_loss(output, id_input, edges), w.edge))


def cc_loss(x_hat_a1, x_a1, x_a2, edges, w: LossWeights = LossWeights()) -> Tensor:
    return consistency_loss(x_hat_a1, x_a1, x_a2, edges, w)


def sc_loss(x_tilde_a1, x_a1, x_a2, edges, w: LossWeights = LossWeights()) -> Tensor:
    return consistency_loss(x_tilde_a1, x_a1, x_a2, edges, w)


def unsup_loss(x_hat_a1, x_tilde_a1, x_a1, x_a2, edges, w: LossWeights = LossWeights()) -> Tensor:
    return ops.add(cc_loss(x_hat_a1, x_a1, x_a2, edges, w), sc_loss(x_tilde_a1, x_a1, x_a2, edges, w))


def _weighted(total, term, weight):
    if term is None or weight == 0.0:
        return total
    return ops.add(total, ops.mul_scalar(term, weight))


def labelled_total(l_s, l_mesh_ss, l_point, w: LossWeights = LossWeights()) -> Tensor:
    """Supervised loss plus the weighted mesh and point contrastive terms."""
    total = _weighted(l_s, l_mesh_ss, w.mesh_ss)
    return _weighted(total, l_point, w.point)


def unlabelled_total(l_us, l_mesh_cc, l_mesh_ss, l_point, w: LossWeights = LossWeights()) -> Tensor:
    """Consistency loss plus the weighted contrastive terms (a ``None`` term counts as zero).

    In the unsupervised pipeline ``l_mesh_ss`` is the sum of both SC passes and
    ``l_point`` the sum of the point terms over every warp.
    """
    total = _weighted(l_us, l_mesh_cc, w.mesh_cc)
    total = _weighted(total, l_mesh_ss, w.mesh_ss)
    return _weighted(total, l_point, w.point)
