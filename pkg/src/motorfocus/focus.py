"""Convergence-point estimation from motion rays.

Each sufficiently strong flow vector defines a ray: the line through its
pixel along the flow direction.  The focus point is the least-squares
minimizer of the summed squared perpendicular distances to those lines.
Scenes with several independent motions are handled by clustering rays
by direction, solving per cluster, and keeping the candidate whose line
inlier count is highest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergenceError
from .flow import FlowField

# Solutions outside the image rectangle grown by this factor per side are
# clamped onto it and flagged low-confidence; near-parallel ray fields
# otherwise push the solution toward infinity.
CLAMP_EXPAND = 0.5


@dataclass(frozen=True)
class MotionRay:
    """A ray at ``base`` along unit vector ``dir`` with flow-magnitude weight."""

    base: tuple[float, float]
    dir: tuple[float, float]
    weight: float


@dataclass
class RaySet:
    """Column-stacked rays: bases (N, 2), unit dirs (N, 2), weights (N,)."""

    base: np.ndarray
    dir: np.ndarray
    weight: np.ndarray
    frame_size: tuple[int, int] | None = None  # (width, height) of the source field

    def __post_init__(self) -> None:
        if not (len(self.base) == len(self.dir) == len(self.weight)):
            raise ValueError("ray arrays must share their length")
        if len(self.dir) and np.abs(np.hypot(self.dir[:, 0], self.dir[:, 1]) - 1.0).max() > 1e-9:
            raise ValueError("ray directions must be unit vectors")

    def __len__(self) -> int:
        return len(self.weight)

    def __getitem__(self, i: int) -> MotionRay:
        return MotionRay(
            base=(float(self.base[i, 0]), float(self.base[i, 1])),
            dir=(float(self.dir[i, 0]), float(self.dir[i, 1])),
            weight=float(self.weight[i]),
        )

    def subset(self, mask: np.ndarray) -> "RaySet":
        return RaySet(self.base[mask], self.dir[mask], self.weight[mask], self.frame_size)


@dataclass(frozen=True)
class FocusEstimate:
    """A candidate focus point with its support."""

    point: tuple[float, float]
    score: int
    mean_residual: float
    cluster_id: int
    low_confidence: bool = False


def extract_rays(field: FlowField, magnitude_threshold: float = 0.5, stride: int = 4) -> RaySet:
    """One ray per grid sample whose flow magnitude passes the threshold."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    v = field.vectors[::stride, ::stride].astype(np.float64)
    h, w = v.shape[:2]
    xs = np.arange(0, field.width, stride, dtype=np.float64)
    ys = np.arange(0, field.height, stride, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    flat = v.reshape(-1, 2)
    mag = np.hypot(flat[:, 0], flat[:, 1])
    keep = mag >= magnitude_threshold
    base = np.stack([gx.ravel(), gy.ravel()], axis=1)[keep]
    mags = mag[keep]
    dirs = flat[keep] / mags[:, None]
    return RaySet(base=base, dir=dirs, weight=mags, frame_size=(field.width, field.height))


def line_distances(rays: RaySet, point: np.ndarray) -> np.ndarray:
    """Perpendicular distance from ``point`` to every ray's line."""
    r = rays.base - np.asarray(point, dtype=np.float64)
    return np.abs(r[:, 0] * rays.dir[:, 1] - r[:, 1] * rays.dir[:, 0])


def solve_convergence(rays: RaySet) -> tuple[np.ndarray, float]:
    """Weighted least-squares convergence point of the ray lines.

    Solves A @ c = b with A = sum_i w_i (I - d_i d_i^T) and
    b = sum_i w_i (I - d_i d_i^T) p_i, the stationarity system of
    min_c sum_i w_i ||c - proj_i(c)||^2.  Returns the point and the
    unweighted mean squared perpendicular distance at the solution.

    Raises NoConvergenceError when fewer than two rays are given or the
    directions are all (anti-)parallel, which makes A singular.
    """
    n = len(rays)
    if n < 2:
        raise NoConvergenceError(f"need at least 2 rays, got {n}")
    dx, dy = rays.dir[:, 0], rays.dir[:, 1]
    px, py = rays.base[:, 0], rays.base[:, 1]
    w = rays.weight
    a11 = float(np.sum(w * dy * dy))
    a22 = float(np.sum(w * dx * dx))
    a12 = -float(np.sum(w * dx * dy))
    bx = float(np.sum(w * (dy * dy * px - dx * dy * py)))
    by = float(np.sum(w * (dx * dx * py - dx * dy * px)))
    det = a11 * a22 - a12 * a12
    scale = 0.5 * (a11 + a22)
    if det <= 1e-12 * max(scale * scale, 1e-300):
        raise NoConvergenceError("ray directions are parallel; no convergence point")
    cx = (a22 * bx - a12 * by) / det
    cy = (a11 * by - a12 * bx) / det
    point = np.array([cx, cy])
    residual = float(np.mean(line_distances(rays, point) ** 2))
    return point, residual


def clamp_point(point: np.ndarray, frame_size: tuple[int, int]) -> tuple[np.ndarray, bool]:
    """Clamp to the image rectangle expanded by CLAMP_EXPAND per side."""
    w, h = frame_size
    lo = np.array([-CLAMP_EXPAND * w, -CLAMP_EXPAND * h])
    hi = np.array([(1.0 + CLAMP_EXPAND) * w, (1.0 + CLAMP_EXPAND) * h])
    clamped = np.minimum(np.maximum(point, lo), hi)
    return clamped, bool(np.any(clamped != point))


def _kmeans_directions(dirs: np.ndarray, k: int, seed: int, max_iter: int = 50) -> np.ndarray:
    """Seeded k-means on unit direction vectors; returns labels.

    k-means++ initialization with a fixed RNG keeps the partition
    reproducible; centroids are renormalized onto the unit circle.
    """
    rng = np.random.default_rng(seed)
    n = len(dirs)
    centers = np.empty((k, 2))
    centers[0] = dirs[int(rng.integers(n))]
    d2 = np.sum((dirs - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j] = dirs[int(rng.integers(n))]
        else:
            centers[j] = dirs[int(rng.choice(n, p=d2 / total))]
        d2 = np.minimum(d2, np.sum((dirs - centers[j]) ** 2, axis=1))
    labels = np.full(n, -1, dtype=np.intp)
    for _ in range(max_iter):
        dist = ((dirs[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = dist.argmin(axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = dirs[labels == j]
            if len(members):
                c = members.mean(axis=0)
                norm = np.hypot(c[0], c[1])
                if norm > 1e-12:
                    centers[j] = c / norm
    return labels


def cluster_and_score(
    rays: RaySet,
    k: int = 3,
    inlier_radius: float = 10.0,
    seed: int = 0,
) -> tuple[list[FocusEstimate], FocusEstimate]:
    """Cluster rays by direction, solve each cluster, pick the best.

    Each cluster's convergence point is scored by the number of rays,
    over the whole set, whose line passes within ``inlier_radius`` of it.
    The selected estimate has the maximal score; ties break toward lower
    mean residual, then lower cluster id.
    """
    if k < 1:
        raise ValueError(f"cluster count must be >= 1, got {k}")
    n = len(rays)
    if n == 0:
        raise NoConvergenceError("no rays to cluster")
    k_eff = min(k, n)
    if k_eff == 1:
        labels = np.zeros(n, dtype=np.intp)
    else:
        labels = _kmeans_directions(rays.dir, k_eff, seed)

    estimates: list[FocusEstimate] = []
    for cluster_id in range(k_eff):
        members = rays.subset(labels == cluster_id)
        if len(members) < 2:
            continue
        try:
            point, residual = solve_convergence(members)
        except NoConvergenceError:
            continue
        low_confidence = False
        if rays.frame_size is not None:
            point, low_confidence = clamp_point(point, rays.frame_size)
        score = int(np.count_nonzero(line_distances(rays, point) <= inlier_radius))
        estimates.append(
            FocusEstimate(
                point=(float(point[0]), float(point[1])),
                score=score,
                mean_residual=residual,
                cluster_id=cluster_id,
                low_confidence=low_confidence,
            )
        )
    if not estimates:
        raise NoConvergenceError("every direction cluster was degenerate")
    selected = min(estimates, key=lambda e: (-e.score, e.mean_residual, e.cluster_id))
    return estimates, selected
