"""Generator: feature extraction, OT correspondence, warping and refinement."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mesh_io import Mesh
from .tensor_core import Tensor, TensorError, ops

SINKHORN_EPS = 0.05
SINKHORN_ITERS = 30
STYLE_EPS = 1e-5
N_FEATURE_BLOCKS = 4


class NetworkError(TensorError):
    def __init__(self, message: str, op: str = "network"):
        super().__init__(op, message)


@dataclass(frozen=True)
class ModelDims:
    """Layer widths; ``from_scale(1.0)`` is the full-width table."""

    d1: int = 64
    d2: int = 128
    d_id: int = 128
    d_pose: int = 128
    d_corr: int = 256
    r1: int = 1024
    r2: int = 512
    r3: int = 256
    disentangle: bool = True

    def __post_init__(self):
        widths = (self.d1, self.d2, self.d_id, self.d_pose, self.d_corr, self.r1, self.r2, self.r3)
        if min(widths) < 1:
            raise NetworkError(f"all widths must be positive, got {widths}")
        if not self.r1 >= self.r2 >= self.r3:
            raise NetworkError("refinement widths must be non-increasing")

    @property
    def d_latent(self) -> int:
        return self.d_id + self.d_pose

    @property
    def d_style(self) -> int:
        """Width of the latent slice the refinement module sees."""
        return self.d_id if self.disentangle else self.d_latent

    @classmethod
    def from_scale(cls, s: float = 1.0, disentangle: bool = True) -> "ModelDims":
        def w(n):
            return max(1, int(round(n * s)))
        return cls(w(64), w(128), w(128), w(128), w(256), w(1024), w(512), w(256), disentangle)


# -- parameters -------------------------------------------------------------

def _layer_shapes(dims: ModelDims):
    """(name, weight shape, bias width) in a fixed order."""
    D = dims.d_latent
    out = [("f.conv1", (3, dims.d1)), ("f.conv2", (dims.d1, dims.d2)), ("f.conv3", (dims.d2, D))]
    for k in range(N_FEATURE_BLOCKS):
        out += [(f"f.rb{k}.conv1", (D, D)), (f"f.rb{k}.conv2", (D, D))]
    out += [("c.proj_id", (D, dims.d_corr)), ("c.proj_pose", (D, dims.d_corr))]
    out += [("r.entry", (3, 3, dims.r1)), ("r.pw0", (dims.r1, dims.r1))]
    widths = [dims.r1, dims.r2, dims.r3]
    for k, c in enumerate(widths):
        for u in (1, 2):
            out += [(f"r.eb{k}.elain{u}.style", (dims.d_style, c)),
                    (f"r.eb{k}.elain{u}.blend", (c, c)),
                    (f"r.eb{k}.conv{u}", (c, c))]
        if k + 1 < len(widths):
            out.append((f"r.pw{k + 1}", (c, widths[k + 1])))
    out.append(("r.out", (dims.r3, 3)))
    return out


def init_params(dims: ModelDims, seed: int = 0, dtype=np.float32) -> dict:
    """He-style uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params = {}
    for name, shape in _layer_shapes(dims):
        fan_in = int(np.prod(shape[:-1]))
        bound = np.sqrt(6.0 / fan_in)
        params[name + ".w"] = Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                                     requires_grad=True)
        params[name + ".b"] = Tensor(np.zeros(shape[-1], dtype=dtype), requires_grad=True)
    return params


def infer_dims(params: dict) -> ModelDims:
    """Recover widths from parameter shapes (used when loading checkpoints)."""
    try:
        d1 = params["f.conv1.w"].shape[1]
        d2 = params["f.conv2.w"].shape[1]
        D = params["f.conv3.w"].shape[1]
        d_corr = params["c.proj_id.w"].shape[1]
        r1 = params["r.pw0.w"].shape[1]
        r2 = params["r.pw1.w"].shape[1]
        r3 = params["r.pw2.w"].shape[1]
        d_style = params["r.eb0.elain1.style.w"].shape[0]
    except KeyError as exc:
        raise NetworkError(f"parameter set lacks {exc.args[0]!r}") from None
    if d_style == D:
        dims = ModelDims(d1, d2, D // 2, D - D // 2, d_corr, r1, r2, r3, disentangle=False)
    else:
        dims = ModelDims(d1, d2, d_style, D - d_style, d_corr, r1, r2, r3, disentangle=True)
    check_params(params, dims)
    return dims


def check_params(params: dict, dims: ModelDims) -> None:
    for name, shape in _layer_shapes(dims):
        w, b = params.get(name + ".w"), params.get(name + ".b")
        if w is None or b is None:
            raise NetworkError(f"missing parameter {name}")
        if tuple(w.shape) != tuple(shape) or b.shape != (shape[-1],):
            raise NetworkError(f"{name}: expected {shape}, got {w.shape}")


def _lin(params, name, x):
    return ops.pointwise_linear(x, params[name + ".w"], params[name + ".b"])


# -- feature extraction -------------------------------------------------------

@dataclass
class LatentFeature:
    values: Tensor
    d_id: int
    d_pose: int

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def identity(self) -> Tensor:
        return ops.channel_slice(self.values, 0, self.d_id)

    def pose(self) -> Tensor:
        return ops.channel_slice(self.values, self.d_id, self.d_id + self.d_pose)

    def reorder(self, binary: np.ndarray) -> "LatentFeature":
        """``B @ F`` for a one-hot row matrix, as a feature over B's rows."""
        return LatentFeature(ops.matmul(Tensor._wrap(binary.astype(self.values.dtype)), self.values),
                             self.d_id, self.d_pose)


def _as_points(points, dtype=np.float32) -> Tensor:
    if isinstance(points, Mesh):
        points = points.vertices
    if isinstance(points, Tensor):
        return points
    return Tensor._wrap(np.asarray(points, dtype=dtype))


def feature_extract(params: dict, points, dims: ModelDims) -> LatentFeature:
    """Pointwise trunk: three conv-ReLU layers, then four pre-norm residual blocks."""
    x = _as_points(points)
    if x.ndim != 2 or x.shape[1] != 3:
        raise NetworkError(f"points must be (N, 3), got {x.shape}", "feature_extract")
    if x.shape[0] < 2:
        raise NetworkError("need at least 2 points for instance statistics", "feature_extract")
    if params["f.conv3.w"].shape[1] != dims.d_latent:
        raise NetworkError(f"latent width {params['f.conv3.w'].shape[1]} != {dims.d_latent}",
                           "feature_extract")
    h = ops.relu(_lin(params, "f.conv1", x))
    h = ops.relu(_lin(params, "f.conv2", h))
    h = _lin(params, "f.conv3", h)
    for k in range(N_FEATURE_BLOCKS):
        y = _lin(params, f"f.rb{k}.conv1", ops.relu(ops.instance_norm(h)))
        y = _lin(params, f"f.rb{k}.conv2", ops.relu(ops.instance_norm(y)))
        h = ops.add(h, y)
    return LatentFeature(h, dims.d_id, dims.d_pose)


# -- correspondence -----------------------------------------------------------

@dataclass
class TransportPlan:
    T: Tensor
    rows: Tensor  # T with each row rescaled to sum to one
    epsilon: float
    iterations: int

    def numpy(self) -> np.ndarray:
        return np.array(self.T.values)


def sinkhorn_log(cost: Tensor, epsilon: float = SINKHORN_EPS, iterations: int = SINKHORN_ITERS):
    """Entropic OT with uniform marginals, unrolled in the log domain.

    Returns (log_T, log_T_rows); every step is a recorded kernel, so the plan
    is differentiable with respect to ``cost``.
    """
    if epsilon <= 0 or iterations < 1:
        raise NetworkError("sinkhorn needs epsilon > 0 and at least one iteration", "sinkhorn")
    n, m = cost.shape
    dtype = cost.dtype
    log_a = np.asarray(-np.log(n), dtype=dtype)
    log_b = np.asarray(-np.log(m), dtype=dtype)
    M = ops.mul_scalar(cost, -1.0 / epsilon)
    g = None
    for _ in range(iterations):
        Mg = M if g is None else ops.add(M, g)
        f = ops.sub(log_a, ops.logsumexp(Mg, axis=1))
        g = ops.sub(log_b, ops.logsumexp(ops.add(M, f), axis=0))
    log_t = ops.add(ops.add(M, f), g)
    log_rows = ops.sub(log_t, ops.logsumexp(log_t, axis=1))
    return log_t, log_rows


def cosine_cost(a: Tensor, b: Tensor) -> Tensor:
    """1 - cosine similarity between every row of ``a`` and every row of ``b``."""
    for name, t in (("identity", a), ("pose", b)):
        if np.any(np.sum(np.square(t.values, dtype=np.float64), axis=1) == 0.0):
            raise NetworkError(f"zero-norm projected {name} feature row; cosine undefined",
                               "correspondence")
    an = ops.div(a, ops.l2_norm_rows(a))
    bn = ops.div(b, ops.l2_norm_rows(b))
    return ops.sub(1.0, ops.matmul(an, ops.transpose(bn)))


def correspondence(params: dict, feat_id: LatentFeature, feat_pose: LatentFeature,
                   epsilon: float = SINKHORN_EPS, iterations: int = SINKHORN_ITERS) -> TransportPlan:
    if feat_id.values.shape[1] != feat_pose.values.shape[1]:
        raise NetworkError("identity and pose features have different widths", "correspondence")
    fi = _lin(params, "c.proj_id", feat_id.values)
    fp = _lin(params, "c.proj_pose", feat_pose.values)
    return transport_plan(cosine_cost(fi, fp), epsilon, iterations)


def transport_plan(cost: Tensor, epsilon: float = SINKHORN_EPS,
                   iterations: int = SINKHORN_ITERS) -> TransportPlan:
    """Sinkhorn plan for a cost matrix.

    Uses the fused scaling-domain kernel when the Gibbs kernel is
    representable, and the log-domain unroll otherwise (very small epsilon).
    """
    cv = cost.values
    if (float(cv.max()) - float(cv.min())) / epsilon <= ops.SINKHORN_MAX_SPAN:
        T = ops.sinkhorn(cost, epsilon, iterations)
        rows = ops.div(T, ops.sum_axis(T, axis=1, keepdims=True))
        return TransportPlan(T, rows, epsilon, iterations)
    log_t, log_rows = sinkhorn_log(cost, epsilon, iterations)
    return TransportPlan(ops.exp(log_t), ops.exp(log_rows), epsilon, iterations)


def binarize_transport(T) -> np.ndarray:
    """One-hot row argmax; ties go to the lowest column index."""
    t = T.numpy() if isinstance(T, TransportPlan) else np.asarray(T.values if isinstance(T, Tensor) else T)
    out = np.zeros(t.shape, dtype=np.float64)
    out[np.arange(t.shape[0]), np.argmax(t, axis=1)] = 1.0
    return out


def warp(T, pose_points) -> Tensor:
    """Convex recombination of pose vertices by a row-stochastic plan."""
    rows = T.rows if isinstance(T, TransportPlan) else T
    x = _as_points(pose_points)
    if rows.ndim != 2 or rows.shape[1] != x.shape[0]:
        raise NetworkError(f"plan {rows.shape} does not match pose points {x.shape}", "warp")
    return ops.matmul(rows, x)


# -- refinement ---------------------------------------------------------------

def elain(params: dict, prefix: str, h: Tensor, style: Tensor) -> Tensor:
    """Elastic instance norm: blend of re-styled IN(h) and h.

    Style statistics are the per-channel mean/std of a pointwise projection
    of the identity feature; the per-channel blend weight is a logistic
    function of the style mean.
    """
    s = _lin(params, prefix + ".style", style)
    n = s.shape[0]
    mu = ops.mul_scalar(ops.sum_axis(s, axis=0, keepdims=True), 1.0 / n)
    centred = ops.sub(s, mu)
    var = ops.mul_scalar(ops.sum_axis(ops.mul(centred, centred), axis=0, keepdims=True), 1.0 / n)
    sigma = ops.sqrt(ops.add(var, STYLE_EPS))
    a = ops.sigmoid(_lin(params, prefix + ".blend", mu))
    styled = ops.add(ops.mul(sigma, ops.instance_norm(h)), mu)
    return ops.add(h, ops.mul(a, ops.sub(styled, h)))


def elain_block(params: dict, prefix: str, h: Tensor, style: Tensor) -> Tensor:
    y = _lin(params, prefix + ".conv1", ops.relu(elain(params, prefix + ".elain1", h, style)))
    y = _lin(params, prefix + ".conv2", ops.relu(elain(params, prefix + ".elain2", y, style)))
    return ops.add(h, y)


def refine(params: dict, warped: Tensor, id_feature: Tensor) -> Tensor:
    """Final output from the warped mesh, conditioned on identity channels only."""
    warped = _as_points(warped)
    if id_feature.shape[0] != warped.shape[0]:
        raise NetworkError(f"identity feature has {id_feature.shape[0]} rows, warped has "
                           f"{warped.shape[0]}", "refine")
    if id_feature.shape[1] != params["r.eb0.elain1.style.w"].shape[0]:
        raise NetworkError(f"style width {id_feature.shape[1]} != "
                           f"{params['r.eb0.elain1.style.w'].shape[0]}", "refine")
    h = ops.conv1d_k3(warped, params["r.entry.w"], params["r.entry.b"])
    h = ops.relu(_lin(params, "r.pw0", h))
    k = 0
    while f"r.eb{k}.conv1.w" in params:
        h = elain_block(params, f"r.eb{k}", h, id_feature)
        if f"r.pw{k + 1}.w" in params:
            h = ops.relu(_lin(params, f"r.pw{k + 1}", h))
        k += 1
    return _lin(params, "r.out", h)


# -- full generator -------------------------------------------------------------

@dataclass
class GenerateResult:
    warped: Tensor
    final: Tensor
    plan: TransportPlan
    binary: np.ndarray
    feat_pose: LatentFeature
    feat_id: LatentFeature


def style_input(feat: LatentFeature, dims: ModelDims) -> Tensor:
    return feat.identity() if dims.disentangle else feat.values


def generate(params: dict, pose_mesh, id_mesh, dims: ModelDims,
             epsilon: float = SINKHORN_EPS, iterations: int = SINKHORN_ITERS,
             feat_pose: Optional[LatentFeature] = None,
             feat_id: Optional[LatentFeature] = None) -> GenerateResult:
    """x_hat = G(pose, identity); precomputed features may be passed in for reuse."""
    pose_pts = _as_points(pose_mesh)
    id_pts = _as_points(id_mesh)
    if feat_pose is None:
        feat_pose = feature_extract(params, pose_pts, dims)
    if feat_id is None:
        feat_id = feature_extract(params, id_pts, dims)
    plan = correspondence(params, feat_id, feat_pose, epsilon, iterations)
    warped = warp(plan, pose_pts)
    final = refine(params, warped, style_input(feat_id, dims))
    return GenerateResult(warped, final, plan, binarize_transport(plan), feat_pose, feat_id)
