"""Temporal stabilization of focus estimates.

Per-frame focus points are splatted as unit-peak Gaussians whose spread
shrinks with motion intensity (sigma proportional to the inverse mean
flow magnitude); summing the most recent window and normalizing by the
maximum gives an attention mask whose peak is the stabilized focus.

Unit-peak rather than density-normalized Gaussians: with densities a
tight (small-sigma) entry would dominate the sum by amplitude alone and
invert the intended high-activity/tight-focus behavior.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import EmptyStateError

# Each Gaussian is only evaluated within this many sigmas of its center;
# beyond that its contribution is < 3.4e-4 of the peak.
SUPPORT_SIGMAS = 4.0


@dataclass(frozen=True)
class AggregationParams:
    window: int = 10
    kappa: float = 400.0  # sigma = kappa / activity, px^2/frame
    u_floor: float = 0.1
    sigma_min: float = 10.0
    sigma_max: float = 200.0

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.kappa <= 0 or self.u_floor <= 0:
            raise ValueError("kappa and u_floor must be positive")
        if not 0 < self.sigma_min <= self.sigma_max:
            raise ValueError(
                f"need 0 < sigma_min <= sigma_max, got {self.sigma_min}, {self.sigma_max}"
            )


@dataclass(frozen=True)
class GaussianEntry:
    center: tuple[float, float]
    sigma: float
    frame_index: int


@dataclass(frozen=True)
class AttentionMask:
    """Normalized scalar field in [0, 1]; peaks at exactly 1."""

    values: np.ndarray

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


def sigma_from_activity(
    u: float,
    kappa: float = 400.0,
    u_floor: float = 0.1,
    sigma_min: float = 10.0,
    sigma_max: float = 200.0,
) -> float:
    """Gaussian spread for a given mean flow magnitude.

    sigma = clamp(kappa / max(u, u_floor), sigma_min, sigma_max); a still
    camera therefore gets the widest spread.
    """
    if u < 0:
        raise ValueError(f"mean flow magnitude must be >= 0, got {u}")
    return float(min(max(kappa / max(u, u_floor), sigma_min), sigma_max))


class FocusAggregator:
    """Ring buffer of the most recent focus Gaussians."""

    def __init__(self, capacity: int = 10):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.entries: deque[GaussianEntry] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.entries)

    def push(self, center: tuple[float, float], sigma: float, frame_index: int = 0) -> None:
        """Append an entry, evicting the oldest once over capacity."""
        if sigma <= 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        self.entries.append(GaussianEntry(center=(float(center[0]), float(center[1])),
                                          sigma=float(sigma), frame_index=frame_index))

    def render_mask(self, width: int, height: int) -> AttentionMask:
        """Sum of unit-peak Gaussians, divided by its maximum.

        Each Gaussian is accumulated separably (outer product of the 1-D
        factors) inside its SUPPORT_SIGMAS bounding box.  If truncation
        leaves the grid all zero, the sum is redone without truncation;
        should even that underflow to zero, the pixel nearest the newest
        center is set to the peak so the mask invariant holds.
        """
        if not self.entries:
            raise EmptyStateError("cannot render a mask from an empty aggregator")
        acc = self._accumulate(width, height, truncate=True)
        peak = float(acc.max())
        if peak == 0.0:
            acc = self._accumulate(width, height, truncate=False)
            peak = float(acc.max())
        if peak == 0.0:
            last = self.entries[-1]
            px = min(max(int(round(last.center[0])), 0), width - 1)
            py = min(max(int(round(last.center[1])), 0), height - 1)
            acc[py, px] = 1.0
            peak = 1.0
        return AttentionMask(values=acc / peak)

    def _accumulate(self, width: int, height: int, truncate: bool) -> np.ndarray:
        acc = np.zeros((height, width), dtype=np.float64)
        xs = np.arange(width, dtype=np.float64)
        ys = np.arange(height, dtype=np.float64)
        for entry in self.entries:
            cx, cy = entry.center
            inv = 1.0 / (2.0 * entry.sigma * entry.sigma)
            if truncate:
                reach = SUPPORT_SIGMAS * entry.sigma
                x0 = max(int(np.floor(cx - reach)), 0)
                x1 = min(int(np.ceil(cx + reach)) + 1, width)
                y0 = max(int(np.floor(cy - reach)), 0)
                y1 = min(int(np.ceil(cy + reach)) + 1, height)
                if x0 >= x1 or y0 >= y1:
                    continue
            else:
                x0, x1, y0, y1 = 0, width, 0, height
            gx = np.exp(-((xs[x0:x1] - cx) ** 2) * inv)
            gy = np.exp(-((ys[y0:y1] - cy) ** 2) * inv)
            acc[y0:y1, x0:x1] += np.outer(gy, gx)
        return acc


def push_focus(state: FocusAggregator, center: tuple[float, float], sigma: float,
               frame_index: int = 0) -> FocusAggregator:
    state.push(center, sigma, frame_index)
    return state


def render_mask(state: FocusAggregator, width: int, height: int) -> AttentionMask:
    return state.render_mask(width, height)


def stabilized_focus(mask: AttentionMask) -> tuple[int, int]:
    """(x, y) of the mask maximum; ties go to the smallest row-major index."""
    flat_index = int(np.argmax(mask.values))
    y, x = divmod(flat_index, mask.width)
    return x, y
