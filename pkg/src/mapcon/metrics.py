"""Evaluation metrics: pointwise mesh distance, Chamfer distance, EMD."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

BRUTE_FORCE_BELOW = 256
# report units: PMD/CD in 1e-4, EMD in 1e-3
PMD_UNIT = 1e-4
CD_UNIT = 1e-4
EMD_UNIT = 1e-3
CSV_HEADER = ("pair_id", "pmd", "cd", "emd", "n_points", "seconds")


class MetricError(ValueError):
    pass


def _points(x) -> np.ndarray:
    x = getattr(x, "vertices", x)
    x = getattr(x, "values", x)
    p = np.asarray(x, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise MetricError(f"expected an (N, 3) point set, got {p.shape}")
    if len(p) == 0:
        raise MetricError("point set is empty")
    return p


def pmd(pred, gt) -> float:
    """Order-sensitive mean squared coordinate error (same form as the reconstruction loss)."""
    p, q = _points(pred), _points(gt)
    if p.shape != q.shape:
        raise MetricError(f"shape mismatch {p.shape} vs {q.shape}")
    d = p - q
    return float(np.mean(d * d))


def _sq_dist(p, q):
    d = p - q
    return np.sum(d * d, axis=-1)


def nearest_sq_brute(P, Q) -> np.ndarray:
    """Squared distance from each row of P to its nearest row of Q, O(|P||Q|)."""
    out = np.empty(len(P))
    for i, p in enumerate(P):
        out[i] = _sq_dist(p, Q).min()
    return out


def nearest_sq_kdtree(P, Q) -> np.ndarray:
    _, idx = cKDTree(Q).query(P, k=1)
    return _sq_dist(P, Q[idx])


def chamfer(P, Q, method: str = "auto") -> float:
    P, Q = _points(P), _points(Q)
    if method == "auto":
        method = "brute" if max(len(P), len(Q)) < BRUTE_FORCE_BELOW else "kdtree"
    nn = {"brute": nearest_sq_brute, "kdtree": nearest_sq_kdtree}.get(method)
    if nn is None:
        raise MetricError(f"unknown chamfer method {method!r}")
    return float(nn(P, Q).mean() + nn(Q, P).mean())


def emd_assignment(P, Q):
    """Optimal bijection minimising total Euclidean distance; returns (rows, cols, mean)."""
    P, Q = _points(P), _points(Q)
    if len(P) != len(Q):
        raise MetricError(f"EMD needs equal sizes, got {len(P)} and {len(Q)}")
    cost = np.sqrt(_sq_dist(P[:, None, :], Q[None, :, :]))
    rows, cols = linear_sum_assignment(cost)
    return rows, cols, float(cost[rows, cols].sum() / len(P))


def emd(P, Q) -> float:
    return emd_assignment(P, Q)[2]


@dataclass
class MetricReport:
    pmd: float
    cd: float
    emd: float
    n_points: int
    wall_time: float

    def row(self, pair_id) -> list:
        """CSV row in report units."""
        return [pair_id, f"{self.pmd / PMD_UNIT:.6f}", f"{self.cd / CD_UNIT:.6f}",
                f"{self.emd / EMD_UNIT:.6f}", self.n_points, f"{self.wall_time:.4f}"]


def evaluate_pair(pred, gt) -> MetricReport:
    t0 = time.perf_counter()
    p, q = _points(pred), _points(gt)
    rep = MetricReport(pmd(p, q), chamfer(p, q), emd(p, q), len(p), 0.0)
    rep.wall_time = time.perf_counter() - t0
    return rep
