"""Diagnostic rendering: flow colorization, magnitude maps, overlays.

All renderers are pure functions of their inputs, so identical inputs
produce bit-identical images and golden-file tests stay stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import AttentionMask
from .flow import FlowField
from .frames import Frame

# Percentile used to normalize flow magnitudes for display; a plain max
# lets a single outlier vector wash out the whole frame.
MAGNITUDE_PERCENTILE = 99.0

MARKER_COLOR = (0.95, 0.15, 0.15)

# Anchor rows of the built-in "ember" ramp (dark violet to pale yellow);
# the 256-entry table is linear interpolation between them.
_EMBER_ANCHORS = np.array(
    [
        (0.000, 0.00, 0.00, 0.02),
        (0.125, 0.10, 0.03, 0.25),
        (0.250, 0.30, 0.06, 0.42),
        (0.375, 0.51, 0.11, 0.42),
        (0.500, 0.71, 0.19, 0.33),
        (0.625, 0.87, 0.32, 0.20),
        (0.750, 0.96, 0.51, 0.10),
        (0.875, 0.99, 0.73, 0.17),
        (1.000, 0.99, 0.96, 0.64),
    ]
)


def _build_colormap() -> np.ndarray:
    xs = np.linspace(0.0, 1.0, 256)
    table = np.empty((256, 3))
    for ch in range(3):
        table[:, ch] = np.interp(xs, _EMBER_ANCHORS[:, 0], _EMBER_ANCHORS[:, ch + 1])
    return table


COLORMAP = _build_colormap()


@dataclass(frozen=True)
class OverlayStyle:
    arrow_stride: int = 16
    colormap: str = "ember"
    alpha: float = 0.6
    marker_radius: int = 6

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.arrow_stride < 4:
            raise ValueError(f"arrow_stride must be >= 4, got {self.arrow_stride}")
        if self.colormap != "ember":
            raise ValueError(f"unknown colormap {self.colormap!r}")
        if self.marker_radius < 0:
            raise ValueError("marker_radius must be >= 0")


def hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized HSV (all in [0, 1]) to RGB."""
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - f * s)
    t = v * (1.0 - (1.0 - f) * s)
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def flow_to_color(flow: FlowField) -> np.ndarray:
    """Hue by flow angle, saturation by magnitude, zero vectors white.

    Magnitudes are normalized by the per-frame 99th percentile and
    clipped, so one runaway vector cannot drain the rest of the image.
    """
    v = flow.vectors.astype(np.float64, copy=False)
    mag = np.hypot(v[..., 0], v[..., 1])
    angle = np.arctan2(v[..., 1], v[..., 0])
    hue = (angle / (2.0 * np.pi)) % 1.0
    norm = float(np.percentile(mag, MAGNITUDE_PERCENTILE))
    sat = np.clip(mag / norm, 0.0, 1.0) if norm > 0 else np.zeros_like(mag)
    val = np.ones_like(mag)
    return hsv_to_rgb(hue, sat, val)


def magnitude_map(field: FlowField) -> np.ndarray:
    """Per-pixel vector length normalized to [0, 1] by the frame maximum."""
    v = field.vectors.astype(np.float64, copy=False)
    mag = np.hypot(v[..., 0], v[..., 1])
    peak = float(mag.max())
    return mag / peak if peak > 0 else mag


def apply_colormap(values: np.ndarray) -> np.ndarray:
    """Scalar field in [0, 1] through the built-in 256-entry ramp."""
    idx = np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.intp)
    return COLORMAP[idx]


def render_overlay(
    frame: Frame,
    mask: AttentionMask,
    focus: tuple[float, float],
    style: OverlayStyle | None = None,
) -> np.ndarray:
    """Grayscale frame blended with the colormapped attention mask.

    The per-pixel blend weight is alpha * mask, so the frame stays
    visible where attention is low and the peak shows the pure colormap
    at alpha 1.  A filled disc marks the stabilized focus.
    """
    style = style or OverlayStyle()
    if (mask.height, mask.width) != frame.shape:
        raise ValueError(f"mask size {mask.values.shape} does not match frame {frame.shape}")
    gray = np.repeat(frame.data[..., None], 3, axis=2)
    heat = apply_colormap(mask.values)
    weight = (style.alpha * mask.values)[..., None]
    out = (1.0 - weight) * gray + weight * heat
    if style.marker_radius > 0:
        _draw_disc(out, focus, style.marker_radius, MARKER_COLOR)
    return out


def _draw_disc(image: np.ndarray, center: tuple[float, float], radius: int,
               color: tuple[float, float, float]) -> None:
    h, w = image.shape[:2]
    cx, cy = float(center[0]), float(center[1])
    x0 = max(int(np.floor(cx - radius)), 0)
    x1 = min(int(np.ceil(cx + radius)) + 1, w)
    y0 = max(int(np.floor(cy - radius)), 0)
    y1 = min(int(np.ceil(cy + radius)) + 1, h)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    inside = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius * radius
    image[y0:y1, x0:x1][inside] = color


def draw_flow_arrows(image: np.ndarray, flow: FlowField, stride: int = 16,
                     color: tuple[float, float, float] = (0.1, 0.9, 0.2),
                     scale: float = 1.0) -> np.ndarray:
    """Sparse flow vectors as short line segments on a copy of ``image``."""
    out = image.copy()
    h, w = out.shape[:2]
    for y in range(stride // 2, h, stride):
        for x in range(stride // 2, w, stride):
            vx, vy = flow.vectors[y, x]
            steps = int(max(abs(vx * scale), abs(vy * scale), 1))
            ts = np.linspace(0.0, 1.0, steps + 1)
            pxs = np.clip(np.rint(x + ts * vx * scale).astype(int), 0, w - 1)
            pys = np.clip(np.rint(y + ts * vy * scale).astype(int), 0, h - 1)
            out[pys, pxs] = color
    return out


def compose_panel(cells: list[np.ndarray], separator: int = 2) -> np.ndarray:
    """Stack equally sized color cells left to right with white seams."""
    if not cells:
        raise ValueError("panel needs at least one cell")
    h = cells[0].shape[0]
    for c in cells:
        if c.shape[0] != h or c.ndim != 3:
            raise ValueError("panel cells must be color images of equal height")
    seam = np.ones((h, separator, 3))
    parts: list[np.ndarray] = []
    for i, c in enumerate(cells):
        if i:
            parts.append(seam)
        parts.append(c)
    return np.concatenate(parts, axis=1)


def to_color(values: np.ndarray) -> np.ndarray:
    """Scalar field to a 3-channel grayscale image."""
    return np.repeat(np.clip(values, 0.0, 1.0)[..., None], 3, axis=2)
