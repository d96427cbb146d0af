"""Tour recovery: polar-angle sorting of a point cloud plus 2-opt refinement."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInstanceError
from .instances import Instance, Tour, cycle_length, make_tour, validate_permutation

IMPROVE_EPS = 1e-12
DEFAULT_MAX_PASSES = 100


def angular_sort(points: np.ndarray) -> Tour:
    """Order points by polar angle around their centroid.

    Ties fall back to radius, then to node index, so even coincident points
    yield a deterministic permutation. The returned length is the cycle
    length measured on ``points`` itself.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if pts.ndim != 2 or pts.shape[1] != 2 or n < 3:
        raise InvalidInstanceError(f"need an (n >= 3, 2) cloud, got shape {pts.shape}")
    centered = pts - pts.mean(axis=0)
    # wrap atan2 output into [0, 2*pi) so the sweep starts on the +x axis
    theta = np.mod(np.arctan2(centered[:, 1], centered[:, 0]), 2.0 * np.pi)
    radius = np.hypot(centered[:, 0], centered[:, 1])
    order = np.lexsort((np.arange(n), radius, theta))
    return Tour(order=order, length=cycle_length(pts, order), provenance="decoded")


def _distance_matrix(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def _exchange_deltas(d: np.ndarray, order: np.ndarray) -> np.ndarray:
    """Length change of reversing order[i+1..j], for all position pairs i < j."""
    n = order.shape[0]
    pos = np.arange(n)
    nxt = (pos + 1) % n
    dpos = d[np.ix_(order, order)]
    edge = dpos[pos, nxt]
    delta = dpos + dpos[np.ix_(nxt, nxt)] - edge[:, None] - edge[None, :]
    delta[~np.triu(np.ones((n, n), dtype=bool), k=1)] = np.inf
    return delta


def two_opt(
    inst: Instance,
    tour: Tour,
    max_passes: int = DEFAULT_MAX_PASSES,
    strategy: str = "best",
) -> Tour:
    """Refine a tour with 2-opt exchanges until no move improves.

    Each pass scans the full O(n^2) neighborhood and applies one exchange:
    the best-improving one for ``strategy="best"`` (the default), or the
    first-improving one in (i, j) scan order for ``strategy="first"``.
    Deterministic; the result is never longer than the input.
    """
    if strategy not in ("best", "first"):
        raise ValueError(f"unknown 2-opt strategy {strategy!r}")
    order = validate_permutation(tour.order, inst.n).copy()
    d = _distance_matrix(inst.points)
    for _ in range(max_passes):
        delta = _exchange_deltas(d, order)
        if strategy == "best":
            flat = int(np.argmin(delta))
            i, j = divmod(flat, order.shape[0])
            if delta[i, j] >= -IMPROVE_EPS:
                break
        else:
            hits = np.argwhere(delta < -IMPROVE_EPS)
            if hits.size == 0:
                break
            i, j = int(hits[0, 0]), int(hits[0, 1])
        order[i + 1 : j + 1] = order[i + 1 : j + 1][::-1]
    return make_tour(inst, order, tour.provenance)


@dataclass
class SolveResult:
    tour: Tour
    cloud: np.ndarray  # transported points (centered input coordinates)
    integrate_s: float
    decode_s: float
    refine_s: float

    @property
    def total_s(self) -> float:
        return self.integrate_s + self.decode_s + self.refine_s


def solve(model, inst: Instance, steps: int = 20, refine: bool = True) -> SolveResult:
    """Full inference: integrate the flow, sort by angle, optionally 2-opt."""
    from .flow import integrate  # local import keeps geometry-only use torch-free

    t0 = time.perf_counter()
    cloud = integrate(model, inst, steps)
    t1 = time.perf_counter()
    decoded = angular_sort(cloud)
    tour = make_tour(inst, decoded.order, "decoded")
    t2 = time.perf_counter()
    refine_s = 0.0
    if refine:
        tour = two_opt(inst, tour)
        refine_s = time.perf_counter() - t2
    return SolveResult(
        tour=tour,
        cloud=cloud,
        integrate_s=t1 - t0,
        decode_s=t2 - t1,
        refine_s=refine_s,
    )
