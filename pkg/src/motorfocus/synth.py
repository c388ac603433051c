"""Synthetic sequences and ray fields with exact ground truth.

Frame zero is band-limited seeded noise (white noise blurred with a 3 px
Gaussian, so there is gradient everywhere for dense flow); every later
frame warps its predecessor under a scripted motion.  The script's
analytic flow, rigid transform and expansion focus are returned next to
the frames and serve as the oracle for the rest of the pipeline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .egomotion import RigidTransform
from .flow import FlowField, write_flow
from .focus import RaySet
from .frames import Frame, write_image

# Scripts may not move anything farther than this fraction of the short
# frame side per frame; larger warps are ill-posed near the borders.
MAX_DISPLACEMENT_FRACTION = 0.25

TEXTURE_BLUR_SIGMA = 3.0


@dataclass(frozen=True)
class RadialMotion:
    cx: float
    cy: float
    rate: float


@dataclass(frozen=True)
class PatchMotion:
    x: int
    y: int
    w: int
    h: int
    dx: float
    dy: float


@dataclass(frozen=True)
class MotionStep:
    """Motion from one frame to the next: a global rigid part, an optional
    radial expansion, and an optional independently moving patch."""

    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    radial: RadialMotion | None = None
    patch: PatchMotion | None = None


@dataclass
class SynthSpec:
    width: int
    height: int
    frame_count: int
    texture_seed: int = 0
    steps: list[MotionStep] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.width < 16 or self.height < 16:
            raise ConfigError(f"frame size must be at least 16x16, got {self.width}x{self.height}")
        if self.frame_count < 2:
            raise ConfigError(f"frame_count must be >= 2, got {self.frame_count}")
        n_steps = self.frame_count - 1
        if len(self.steps) == 1 and n_steps > 1:
            self.steps = list(self.steps) * n_steps
        if len(self.steps) != n_steps:
            raise ConfigError(
                f"need {n_steps} motion steps for {self.frame_count} frames, got {len(self.steps)}"
            )
        bound = MAX_DISPLACEMENT_FRACTION * min(self.width, self.height)
        for i, step in enumerate(self.steps):
            if step.patch is not None and (step.theta != 0.0 or step.radial is not None):
                raise ConfigError(
                    f"step for frame {i + 1}: a moving patch requires a translation-only "
                    "global motion (theta == 0, no radial term)"
                )
            peak = _max_displacement(step, self.width, self.height)
            if peak > bound:
                raise ConfigError(
                    f"step for frame {i + 1} moves up to {peak:.1f}px, over the "
                    f"{bound:.1f}px limit"
                )

    @classmethod
    def from_json(cls, path: str | Path) -> "SynthSpec":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(raw, origin=str(path))

    @classmethod
    def from_dict(cls, raw: dict, origin: str = "<dict>") -> "SynthSpec":
        known = {"width", "height", "frame_count", "texture_seed", "steps"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"{origin}: unknown fields {sorted(unknown)}")
        steps = []
        for i, s in enumerate(raw.get("steps", [])):
            step_known = {"theta", "tx", "ty", "radial", "patch"}
            extra = set(s) - step_known
            if extra:
                raise ConfigError(f"{origin}: step {i} has unknown fields {sorted(extra)}")
            radial = RadialMotion(**s["radial"]) if s.get("radial") else None
            patch = PatchMotion(**s["patch"]) if s.get("patch") else None
            steps.append(MotionStep(theta=float(s.get("theta", 0.0)), tx=float(s.get("tx", 0.0)),
                                    ty=float(s.get("ty", 0.0)), radial=radial, patch=patch))
        try:
            return cls(width=int(raw["width"]), height=int(raw["height"]),
                       frame_count=int(raw["frame_count"]),
                       texture_seed=int(raw.get("texture_seed", 0)), steps=steps)
        except KeyError as exc:
            raise ConfigError(f"{origin}: missing required field {exc}") from exc


@dataclass(frozen=True)
class FrameTruth:
    """Exact motion into the frame with this index."""

    frame: int
    transform: RigidTransform
    foe: tuple[float, float] | None
    flow: FlowField


def _step_affine(step: MotionStep) -> tuple[np.ndarray, np.ndarray]:
    """The step's forward point map q = A @ p + b."""
    c, s = math.cos(step.theta), math.sin(step.theta)
    A = np.array([[c, -s], [s, c]])
    b = np.array([step.tx, step.ty], dtype=np.float64)
    if step.radial is not None:
        A = A + step.radial.rate * np.eye(2)
        b = b - step.radial.rate * np.array([step.radial.cx, step.radial.cy])
    return A, b


def _max_displacement(step: MotionStep, width: int, height: int) -> float:
    A, b = _step_affine(step)
    corners = np.array([[0, 0], [width - 1, 0], [0, height - 1], [width - 1, height - 1]],
                       dtype=np.float64)
    moved = corners @ A.T + b
    peak = float(np.hypot(*(moved - corners).T).max())
    if step.patch is not None:
        peak = max(peak, math.hypot(step.tx + step.patch.dx, step.ty + step.patch.dy))
    return peak


def texture(seed: int, height: int, width: int) -> np.ndarray:
    """Seeded band-limited noise in [0, 1]."""
    rng = np.random.default_rng(seed)
    t = ndimage.gaussian_filter(rng.random((height, width)), TEXTURE_BLUR_SIGMA)
    t -= t.min()
    peak = t.max()
    return t / peak if peak > 0 else t


def _warp_affine(img: np.ndarray, A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """out(q) = img(A^-1 (q - b)), bilinear with replicated edges."""
    h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    inv = np.linalg.inv(A)
    qx = xs - b[0]
    qy = ys - b[1]
    px = inv[0, 0] * qx + inv[0, 1] * qy
    py = inv[1, 0] * qx + inv[1, 1] * qy
    return ndimage.map_coordinates(img, [py, px], order=1, mode="nearest")


def _step_flow(step: MotionStep, width: int, height: int) -> np.ndarray:
    A, b = _step_affine(step)
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    fx = (A[0, 0] - 1.0) * xs[None, :] + A[0, 1] * ys[:, None] + b[0]
    fy = A[1, 0] * xs[None, :] + (A[1, 1] - 1.0) * ys[:, None] + b[1]
    flow = np.stack([fx, fy], axis=-1)
    if step.patch is not None:
        p = step.patch
        flow[p.y:p.y + p.h, p.x:p.x + p.w, 0] += p.dx
        flow[p.y:p.y + p.h, p.x:p.x + p.w, 1] += p.dy
    return flow


def _step_foe(step: MotionStep) -> tuple[float, float] | None:
    """Stationary point of the step's displacement field, if radial."""
    if step.radial is None:
        return None
    A, b = _step_affine(step)
    p = np.linalg.solve(A - np.eye(2), -b)
    return (float(p[0]), float(p[1]))


def _apply_step(img: np.ndarray, step: MotionStep) -> np.ndarray:
    A, b = _step_affine(step)
    out = _warp_affine(img, A, b)
    if step.patch is not None:
        p = step.patch
        sx = step.tx + p.dx
        sy = step.ty + p.dy
        x0 = int(math.floor(p.x + sx))
        y0 = int(math.floor(p.y + sy))
        x1 = int(math.ceil(p.x + sx + p.w))
        y1 = int(math.ceil(p.y + sy + p.h))
        x0c, y0c = max(x0, 0), max(y0, 0)
        x1c, y1c = min(x1, img.shape[1]), min(y1, img.shape[0])
        if x0c < x1c and y0c < y1c:
            ys, xs = np.mgrid[y0c:y1c, x0c:x1c].astype(np.float64)
            out[y0c:y1c, x0c:x1c] = ndimage.map_coordinates(
                img, [ys - sy, xs - sx], order=1, mode="nearest"
            )
    return out


def generate_sequence(spec: SynthSpec) -> tuple[list[Frame], list[FrameTruth]]:
    """Frames plus the exact analytic truth for every frame transition.

    truths[i] describes the motion into frames[i + 1]: the scripted rigid
    transform, the displacement field, and the expansion focus when the
    step has a radial term.  Identical specs produce bit-identical output.
    """
    frames = [Frame(index=0, data=texture(spec.texture_seed, spec.height, spec.width))]
    truths: list[FrameTruth] = []
    for i, step in enumerate(spec.steps):
        nxt = _apply_step(frames[-1].data, step)
        frames.append(Frame(index=i + 1, data=nxt))
        truths.append(
            FrameTruth(
                frame=i + 1,
                transform=RigidTransform.from_angle(step.theta, step.tx, step.ty),
                foe=_step_foe(step),
                flow=FlowField(vectors=_step_flow(step, spec.width, spec.height)),
            )
        )
    return frames, truths


def generate_ray_field(
    foe: tuple[float, float],
    width: int,
    height: int,
    outlier_fraction: float = 0.0,
    seed: int = 0,
    stride: int = 8,
    rate: float = 0.02,
) -> tuple[RaySet, np.ndarray]:
    """Grid rays radiating from ``foe``; magnitude grows with distance.

    Exactly floor(outlier_fraction * N) rays, chosen by the seeded RNG,
    get uniform-random directions instead; the returned boolean mask
    flags them.  Grid samples closer than 1e-9 px to the focus are
    skipped (no direction there).
    """
    if not 0.0 <= outlier_fraction < 1.0:
        raise ValueError(f"outlier_fraction must lie in [0, 1), got {outlier_fraction}")
    rng = np.random.default_rng(seed)
    xs = np.arange(0, width, stride, dtype=np.float64)
    ys = np.arange(0, height, stride, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    base = np.stack([gx.ravel(), gy.ravel()], axis=1)
    rel = base - np.asarray(foe, dtype=np.float64)
    dist = np.hypot(rel[:, 0], rel[:, 1])
    keep = dist > 1e-9
    base, rel, dist = base[keep], rel[keep], dist[keep]
    dirs = rel / dist[:, None]
    n = len(base)
    n_outliers = int(math.floor(outlier_fraction * n))
    outlier = np.zeros(n, dtype=bool)
    if n_outliers:
        chosen = rng.choice(n, size=n_outliers, replace=False)
        outlier[chosen] = True
        angles = rng.uniform(0.0, 2.0 * math.pi, size=n_outliers)
        dirs[chosen] = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    rays = RaySet(base=base, dir=dirs, weight=rate * dist, frame_size=(width, height))
    return rays, outlier


def two_source_ray_field(
    foe_major: tuple[float, float],
    foe_minor: tuple[float, float],
    minority_fraction: float = 0.3,
    width: int = 512,
    height: int = 512,
    seed: int = 0,
    stride: int = 8,
    rate: float = 0.02,
    direction_noise_deg: float = 1.0,
    block_jitter: float = 40.0,
) -> tuple[RaySet, np.ndarray]:
    """Two superimposed radial fields: a majority field everywhere except
    a contiguous block that follows the minority field.

    The minority block models an independently moving object: a square
    covering ``minority_fraction`` of the grid, centered between the two
    foci (jittered per seed), whose rays radiate from ``foe_minor``.
    Directions get a small seeded angular noise; weights grow with the
    distance to the owning focus.  Returns the rays and the minority mask.
    """
    if not 0.0 < minority_fraction < 1.0:
        raise ValueError(f"minority_fraction must lie in (0, 1), got {minority_fraction}")
    rng = np.random.default_rng(seed)
    xs = np.arange(0, width, stride, dtype=np.float64)
    ys = np.arange(0, height, stride, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    base = np.stack([gx.ravel(), gy.ravel()], axis=1)

    side = math.sqrt(minority_fraction * width * height)
    cx = 0.5 * (foe_major[0] + foe_minor[0]) + rng.uniform(-block_jitter, block_jitter)
    cy = 0.5 * (foe_major[1] + foe_minor[1]) + rng.uniform(-block_jitter, block_jitter)
    minor = (np.abs(base[:, 0] - cx) < side / 2) & (np.abs(base[:, 1] - cy) < side / 2)

    foe = np.where(minor[:, None], np.asarray(foe_minor, float), np.asarray(foe_major, float))
    rel = base - foe
    dist = np.hypot(rel[:, 0], rel[:, 1])
    keep = dist > 1e-9
    base, rel, dist, minor = base[keep], rel[keep], dist[keep], minor[keep]
    angles = np.arctan2(rel[:, 1], rel[:, 0])
    angles = angles + rng.normal(0.0, math.radians(direction_noise_deg), len(angles))
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    rays = RaySet(base=base, dir=dirs, weight=rate * dist, frame_size=(width, height))
    return rays, minor


def emit_sequence(spec: SynthSpec, out_dir: str | Path) -> list[Path]:
    """Write frames as PNGs plus a truth.jsonl with per-transition records
    (transform row, focus point, path of the binary flow dump)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames, truths = generate_sequence(spec)
    written = []
    for frame in frames:
        path = out / f"{frame.index:04d}.png"
        write_image(frame.data, path)
        written.append(path)
    truth_path = out / "truth.jsonl"
    with open(truth_path, "w", encoding="utf-8") as fh:
        for truth in truths:
            flow_name = f"flow_{truth.frame:04d}.mfflow"
            write_flow(FlowField(vectors=truth.flow.vectors.astype(np.float32)),
                       out / flow_name)
            record = {
                "frame": truth.frame,
                "transform": truth.transform.as_row(),
                "foe": list(truth.foe) if truth.foe is not None else None,
                "flow_file": flow_name,
            }
            fh.write(json.dumps(record) + "\n")
    written.append(truth_path)
    return written
