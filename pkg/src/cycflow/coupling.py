"""Training-pair construction: tour-on-circle targets aligned to the input.

The target cloud places the label tour's nodes on an origin-centered circle
whose radius matches the centered input's Frobenius norm, with arc lengths
proportional to tour edge lengths. The rotation ambiguity is resolved by
closed-form SO(2) Procrustes; the traversal-direction ambiguity by trying
both directions and keeping the lower-residual alignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInstanceError
from .instances import Instance, Tour, validate_permutation

DIRECTIONS = ("forward", "reversed")


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotate(points: np.ndarray, theta: float) -> np.ndarray:
    """Rotate each point counterclockwise by ``theta`` about the origin."""
    return points @ rotation_matrix(theta).T


@dataclass
class CoupledPair:
    """Aligned training pair: centered input and its circle-embedded target."""

    x0: np.ndarray  # centered input cloud (n, 2)
    x1: np.ndarray  # aligned circle target (n, 2), same Frobenius norm as x0
    tour: Tour
    radius: float
    rotation_applied: float
    direction: str

    @property
    def residual(self) -> float:
        return float(np.sum((self.x1 - self.x0) ** 2))


def circle_embed(inst: Instance, tour: Tour, direction: str = "forward") -> np.ndarray:
    """Place the tour on an origin-centered circle, arcs proportional to edges.

    Node ``tour.order[0]`` sits at angle 0 and node ``tour.order[k]`` at the
    cumulative tour length through k edges, rescaled to 2*pi; traversal is
    counterclockwise for "forward" and clockwise for "reversed". Row i of
    the result is the embedded position of node i.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    order = validate_permutation(tour.order, inst.n)
    centered = inst.points - inst.points.mean(axis=0)
    hops = centered[np.roll(order, -1)] - centered[order]
    edges = np.hypot(hops[:, 0], hops[:, 1])
    total = float(edges.sum())
    if total <= 0.0:
        raise DegenerateInstanceError(
            f"instance {inst.id}: all points coincide, tour has zero length"
        )
    radius = float(np.linalg.norm(centered)) / math.sqrt(inst.n)
    cum = np.concatenate(([0.0], np.cumsum(edges[:-1])))
    theta = 2.0 * math.pi * cum / total
    if direction == "reversed":
        theta = -theta
    out = np.empty((inst.n, 2))
    out[order, 0] = radius * np.cos(theta)
    out[order, 1] = radius * np.sin(theta)
    return out


def kabsch_so2(moving: np.ndarray, fixed: np.ndarray) -> tuple[float, bool]:
    """Closed-form rotation angle minimizing ||rotate(moving) - fixed||_F^2.

    Returns (theta, degenerate); ``degenerate`` is set when the covariance
    vanishes (both clouds radially symmetric about the origin), in which
    case theta is 0 and every rotation is equally good.
    """
    m = np.asarray(moving, dtype=np.float64)
    f = np.asarray(fixed, dtype=np.float64)
    if m.shape != f.shape:
        raise ValueError(f"cloud shapes differ: {m.shape} vs {f.shape}")
    dot = float(np.sum(m * f))
    cross = float(np.sum(m[:, 0] * f[:, 1] - m[:, 1] * f[:, 0]))
    if dot == 0.0 and cross == 0.0:
        return 0.0, True
    return math.atan2(cross, dot), False


def build_coupled_pair(inst: Instance, tour: Tour) -> CoupledPair:
    """Center the input, embed the tour both ways, keep the better alignment.

    Ties prefer "forward". The stored pair is deterministic and satisfies
    norm matching, on-circle rows, and arc proportionality by construction.
    """
    x0 = inst.points - inst.points.mean(axis=0)
    best = None
    for direction in DIRECTIONS:
        embedded = circle_embed(inst, tour, direction)
        theta, _ = kabsch_so2(embedded, x0)
        aligned = rotate(embedded, theta)
        residual = float(np.sum((aligned - x0) ** 2))
        if best is None or residual < best[0]:
            best = (residual, aligned, theta, direction)
    _, aligned, theta, direction = best
    radius = float(np.linalg.norm(x0)) / math.sqrt(inst.n)
    return CoupledPair(
        x0=x0,
        x1=aligned,
        tour=tour,
        radius=radius,
        rotation_applied=theta,
        direction=direction,
    )
