"""Spectral canonicalization: deterministic permutation plus rigid frame.

The node ordering is read off the Fiedler vector of the symmetric
normalized Laplacian of a Gaussian affinity graph (sign fixed by positive
skewness). The rigid frame centers the cloud, rotates a weighted
orientation vector onto the +y axis, and reflects across the y-axis when
the second half of the spectral sequence has negative aggregate x. Frames
invert exactly, so velocities predicted in the canonical pose transport
back to the input pose.

Symmetric inputs admit no equivariant canonicalization; the documented
fallbacks apply and the frame carries ``degenerate_flags`` so callers can
exclude such clouds from equivariance checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coupling import rotation_matrix
from .errors import DegenerateInstanceError, InvalidInstanceError, NumericalError

DENSE_EIGH_MAX_N = 256
SIGN_TIE_EPS = 1e-12
ORIENTATION_EPS = 1e-9
REFLECT_TIE_EPS = 1e-12


def gaussian_affinity(x: np.ndarray, sigma: float) -> np.ndarray:
    """W_ij = exp(-|x_i - x_j|^2 / sigma^2); symmetric, unit diagonal."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    pts = np.asarray(x, dtype=np.float64)
    diff = pts[:, None, :] - pts[None, :, :]
    sq = diff[..., 0] ** 2 + diff[..., 1] ** 2
    return np.exp(-sq / (sigma * sigma))


def median_pairwise_distance(x: np.ndarray) -> float:
    pts = np.asarray(x, dtype=np.float64)
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    iu = np.triu_indices(pts.shape[0], k=1)
    return float(np.median(dist[iu]))


def _fiedler_vector(laplacian: np.ndarray) -> np.ndarray:
    n = laplacian.shape[0]
    if n <= DENSE_EIGH_MAX_N:
        _, vecs = np.linalg.eigh(laplacian)
        return vecs[:, 1]
    from scipy.sparse.linalg import ArpackNoConvergence, eigsh

    try:
        # shift-invert just below 0 keeps L - sigma*I invertible (L is PSD)
        vals, vecs = eigsh(laplacian, k=2, sigma=-1e-2, which="LM", tol=1e-10)
    except ArpackNoConvergence as exc:
        raise NumericalError(
            f"Fiedler eigensolver did not converge at n={n}: "
            f"{len(exc.eigenvalues)} of 2 eigenpairs found"
        ) from exc
    return vecs[:, int(np.argsort(vals)[1])]


def fiedler_order(x: np.ndarray) -> tuple[np.ndarray, set[str]]:
    """Spectral node order: indices sorted by Fiedler-vector value.

    The eigenvector sign is flipped to enforce positive skewness; exact
    skewness ties set the "sign_tie" flag. Value ties break by ascending
    original index.
    """
    pts = np.asarray(x, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise InvalidInstanceError(f"need an (n >= 3, 2) cloud, got shape {pts.shape}")
    sigma = median_pairwise_distance(pts)
    if sigma <= 0:
        raise DegenerateInstanceError("median pairwise distance is zero")
    w = gaussian_affinity(pts, sigma)
    dinv_sqrt = 1.0 / np.sqrt(w.sum(axis=1))
    m = w * dinv_sqrt[:, None] * dinv_sqrt[None, :]
    laplacian = np.eye(pts.shape[0]) - 0.5 * (m + m.T)
    v = _fiedler_vector(laplacian)
    skew = float(np.sum(v**3))
    flags: set[str] = set()
    if abs(skew) < SIGN_TIE_EPS:
        flags.add("sign_tie")
    elif skew < 0:
        v = -v
    return np.argsort(v, kind="stable"), flags


@dataclass
class CanonicalFrame:
    """Permutation + translation + rotation + reflection mapping a cloud
    into its canonical pose (and back)."""

    perm: np.ndarray
    mean: np.ndarray
    rot: float
    reflect: bool
    degenerate_flags: frozenset[str] = frozenset()

    @property
    def n(self) -> int:
        return self.perm.shape[0]

    @property
    def degenerate(self) -> bool:
        return bool(self.degenerate_flags)


def frame_matrix(frame: CanonicalFrame) -> np.ndarray:
    """Linear part of the frame: rotation followed by optional reflection."""
    a = rotation_matrix(frame.rot)
    if frame.reflect:
        a = np.array([[-1.0, 0.0], [0.0, 1.0]]) @ a
    return a


def sequence_weights(n: int) -> np.ndarray:
    """Weights varying linearly from -1 to 1 (inclusive) along the sequence."""
    return -1.0 + 2.0 * np.arange(n) / (n - 1)


def canonical_frame(x: np.ndarray) -> CanonicalFrame:
    pts = np.asarray(x, dtype=np.float64)
    perm, flags = fiedler_order(pts)
    mean = pts.mean(axis=0)
    y = pts[perm] - mean
    w = sequence_weights(pts.shape[0])
    u = w @ y
    if math.hypot(u[0], u[1]) < ORIENTATION_EPS:
        rot = 0.0
        flags.add("zero_orientation")
    else:
        rot = 0.5 * math.pi - math.atan2(u[1], u[0])
    z = y @ rotation_matrix(rot).T
    agg_x = float(z[w > 0, 0].sum())
    if abs(agg_x) < REFLECT_TIE_EPS:
        reflect = False
        flags.add("reflect_tie")
    else:
        reflect = agg_x < 0
    return CanonicalFrame(
        perm=perm, mean=mean, rot=rot, reflect=reflect, degenerate_flags=frozenset(flags)
    )


def apply_frame(frame: CanonicalFrame, x: np.ndarray) -> np.ndarray:
    """Map a cloud into the frame's canonical pose (rows in spectral order)."""
    pts = np.asarray(x, dtype=np.float64)
    if pts.shape != (frame.n, 2):
        raise ValueError(f"cloud shape {pts.shape} does not match frame n={frame.n}")
    return (pts[frame.perm] - frame.mean) @ frame_matrix(frame).T


def restore_velocity(frame: CanonicalFrame, v_can: np.ndarray) -> np.ndarray:
    """Undo the frame's permutation and linear part (translation-free)."""
    v = np.asarray(v_can, dtype=np.float64)
    if v.shape != (frame.n, 2):
        raise ValueError(f"velocity shape {v.shape} does not match frame n={frame.n}")
    out = np.empty_like(v)
    out[frame.perm] = v @ frame_matrix(frame)
    return out


def canonical_cloud(x: np.ndarray) -> tuple[np.ndarray, CanonicalFrame]:
    frame = canonical_frame(x)
    return apply_frame(frame, x), frame
