"""Dense optical flow between consecutive frames.

The flow field follows the brightness-constancy convention: the scene
content at pixel (x, y) of the earlier frame appears at
(x + vx, y + vy) in the later frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .frames import Frame

FLOW_MAGIC = b"MFFLOW01"


@dataclass(frozen=True)
class FlowParams:
    """Coarse-to-fine polynomial-expansion flow parameters.

    Defaults are the widely used classical settings; all overridable.
    """

    pyramid_scale: float = 0.5
    levels: int = 3
    window_size: int = 15
    iterations: int = 3
    poly_neighborhood: int = 5
    poly_sigma: float = 1.2

    def __post_init__(self) -> None:
        if not 0.0 < self.pyramid_scale < 1.0:
            raise ValueError(f"pyramid_scale must lie in (0, 1), got {self.pyramid_scale}")
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.window_size < 5 or self.window_size % 2 == 0:
            raise ValueError(f"window_size must be odd and >= 5, got {self.window_size}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.poly_neighborhood < 3 or self.poly_neighborhood % 2 == 0:
            raise ValueError(f"poly_neighborhood must be odd, got {self.poly_neighborhood}")
        if self.poly_sigma <= 0.0:
            raise ValueError(f"poly_sigma must be positive, got {self.poly_sigma}")


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement grid, shape (height, width, 2) as (vx, vy)."""

    vectors: np.ndarray

    def __post_init__(self) -> None:
        v = self.vectors
        if v.ndim != 3 or v.shape[2] != 2:
            raise ValueError(f"flow vectors must have shape (H, W, 2), got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("flow vectors must be finite")

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.vectors.shape[:2]


# A flow-shaped grid holding the displacement attributed to camera motion.
EgoNoiseField = FlowField


def compute_flow(prev: Frame, nxt: Frame, params: FlowParams | None = None) -> FlowField:
    """Dense coarse-to-fine flow from ``prev`` to ``nxt`` (Farneback).

    Deterministic: identical inputs and parameters yield a bit-identical
    field regardless of the internal worker count.
    """
    if prev.shape != nxt.shape:
        raise ValueError(f"frame sizes differ: {prev.shape} vs {nxt.shape}")
    params = params or FlowParams()
    if min(prev.shape) < params.window_size:
        raise ValueError(
            f"frames of {prev.width}x{prev.height} are smaller than the "
            f"{params.window_size}px flow window"
        )
    a = np.rint(prev.data * 255.0).astype(np.uint8)
    b = np.rint(nxt.data * 255.0).astype(np.uint8)
    vectors = cv2.calcOpticalFlowFarneback(
        a,
        b,
        None,
        params.pyramid_scale,
        params.levels,
        params.window_size,
        params.iterations,
        params.poly_neighborhood,
        params.poly_sigma,
        0,
    )
    return FlowField(vectors=vectors)


def mean_magnitude(flow: FlowField) -> float:
    """Mean Euclidean vector length over the whole grid, px/frame."""
    v = flow.vectors.astype(np.float64, copy=False)
    return float(np.hypot(v[..., 0], v[..., 1]).mean())


def write_flow(flow: FlowField, path: str | Path) -> None:
    """Binary flow dump: 8-byte magic, int32-LE width/height, float32-LE
    (vx, vy) pairs row-major."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC)
        fh.write(struct.pack("<ii", flow.width, flow.height))
        fh.write(flow.vectors.astype("<f4", copy=False).tobytes())


def read_flow(path: str | Path) -> FlowField:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != FLOW_MAGIC:
            raise ValueError(f"{path}: bad flow file magic {magic!r}")
        width, height = struct.unpack("<ii", fh.read(8))
        raw = fh.read(width * height * 2 * 4)
        if len(raw) != width * height * 8:
            raise ValueError(f"{path}: truncated flow payload")
        vectors = np.frombuffer(raw, dtype="<f4").reshape(height, width, 2)
    return FlowField(vectors=np.ascontiguousarray(vectors))
