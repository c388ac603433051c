"""End-to-end per-frame-pair pipeline and its configuration.

Configuration precedence is defaults < config file < explicit overrides;
the resolved configuration can be serialized back to TOML so any run is
reproducible from its output directory.
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .aggregation import AggregationParams, FocusAggregator, sigma_from_activity, stabilized_focus
from .egomotion import RigidTransform, build_correspondences, compensate, ego_noise, fit_rigid
from .errors import ConfigError, NoConvergenceError
from .flow import FlowField, FlowParams, compute_flow, mean_magnitude
from .focus import FocusEstimate, cluster_and_score, extract_rays
from .frames import Frame

FIELD_SOURCES = ("compensated", "raw", "ego")

EMIT_CHOICES = ("overlay", "flow", "eps", "mask", "diag")


@dataclass(frozen=True)
class FocusParams:
    clusters: int = 3
    magnitude_threshold: float = 0.5
    stride: int = 4
    inlier_radius: float = 10.0
    field_source: str = "compensated"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.clusters < 1:
            raise ConfigError(f"clusters must be >= 1, got {self.clusters}")
        if self.magnitude_threshold < 0:
            raise ConfigError("magnitude_threshold must be >= 0")
        if self.stride < 1:
            raise ConfigError("focus stride must be >= 1")
        if self.inlier_radius <= 0:
            raise ConfigError("inlier_radius must be positive")
        if self.field_source not in FIELD_SOURCES:
            raise ConfigError(
                f"field_source must be one of {FIELD_SOURCES}, got {self.field_source!r}"
            )


@dataclass(frozen=True)
class PipelineConfig:
    flow: FlowParams = field(default_factory=FlowParams)
    correspondence_stride: int = 1
    focus: FocusParams = field(default_factory=FocusParams)
    aggregation: AggregationParams = field(default_factory=AggregationParams)
    emit: tuple[str, ...] = ()
    processing_size: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if self.correspondence_stride < 1:
            raise ConfigError("correspondence stride must be >= 1")
        for item in self.emit:
            if item not in EMIT_CHOICES:
                raise ConfigError(f"unknown emit target {item!r}; choices: {EMIT_CHOICES}")


_SECTION_FIELDS = {
    "flow": ("pyramid_scale", "levels", "window_size", "iterations",
             "poly_neighborhood", "poly_sigma"),
    "correspondence": ("stride",),
    "focus": ("clusters", "magnitude_threshold", "stride", "inlier_radius",
              "field_source", "seed"),
    "aggregation": ("window", "kappa", "u_floor", "sigma_min", "sigma_max"),
    "output": ("emit",),
    "processing": ("size",),
}


def config_from_dict(raw: dict, origin: str = "<config>") -> PipelineConfig:
    """Build a config from a nested mapping, rejecting unknown keys."""
    unknown_sections = set(raw) - set(_SECTION_FIELDS)
    if unknown_sections:
        raise ConfigError(f"{origin}: unknown config sections {sorted(unknown_sections)}")
    for section, keys in _SECTION_FIELDS.items():
        extra = set(raw.get(section, {})) - set(keys)
        if extra:
            raise ConfigError(f"{origin}: unknown keys in [{section}]: {sorted(extra)}")

    try:
        flow = FlowParams(**raw.get("flow", {}))
        focus = FocusParams(**raw.get("focus", {}))
        aggregation = AggregationParams(**raw.get("aggregation", {}))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{origin}: {exc}") from exc

    stride = int(raw.get("correspondence", {}).get("stride", 1))
    emit = tuple(raw.get("output", {}).get("emit", ()))
    size_raw = raw.get("processing", {}).get("size")
    size = None
    if size_raw is not None:
        if len(size_raw) != 2:
            raise ConfigError(f"{origin}: processing size must be [width, height]")
        size = (int(size_raw[0]), int(size_raw[1]))
    return PipelineConfig(flow=flow, correspondence_stride=stride, focus=focus,
                          aggregation=aggregation, emit=emit, processing_size=size)


def config_from_file(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from exc
    return config_from_dict(raw, origin=str(path))


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value)} to TOML")


def config_to_toml(config: PipelineConfig) -> str:
    """Serialize the resolved configuration; round-trips through
    ``config_from_file`` exactly."""
    f = config.flow
    fo = config.focus
    ag = config.aggregation
    sections: list[tuple[str, list[tuple[str, object]]]] = [
        ("flow", [("pyramid_scale", f.pyramid_scale), ("levels", f.levels),
                  ("window_size", f.window_size), ("iterations", f.iterations),
                  ("poly_neighborhood", f.poly_neighborhood), ("poly_sigma", f.poly_sigma)]),
        ("correspondence", [("stride", config.correspondence_stride)]),
        ("focus", [("clusters", fo.clusters), ("magnitude_threshold", fo.magnitude_threshold),
                   ("stride", fo.stride), ("inlier_radius", fo.inlier_radius),
                   ("field_source", fo.field_source), ("seed", fo.seed)]),
        ("aggregation", [("window", ag.window), ("kappa", ag.kappa), ("u_floor", ag.u_floor),
                         ("sigma_min", ag.sigma_min), ("sigma_max", ag.sigma_max)]),
        ("output", [("emit", list(config.emit))]),
    ]
    lines: list[str] = []
    for name, entries in sections:
        lines.append(f"[{name}]")
        for key, value in entries:
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    if config.processing_size is not None:
        lines.append("[processing]")
        lines.append(f"size = {_toml_value(list(config.processing_size))}")
        lines.append("")
    return "\n".join(lines)


@dataclass
class PairResult:
    """Everything computed for one consecutive frame pair."""

    frame: int
    flow: FlowField
    transform: RigidTransform
    eps: FlowField
    compensated: FlowField
    estimates: list[FocusEstimate]
    selected: FocusEstimate
    activity: float
    sigma: float
    mask_values: np.ndarray
    focus_point: tuple[int, int]
    correspondences: int
    timings: dict[str, float]


class MotorFocusPipeline:
    """Stateful per-stream pipeline: flow, rigid fit, compensation,
    convergence solve, temporal aggregation.

    One instance per video stream; ``process_pair`` must see consecutive
    frames in order.  Results are deterministic for identical inputs and
    configuration.
    """

    def __init__(self, config: PipelineConfig | None = None):
        self.config = config or PipelineConfig()
        self.aggregator = FocusAggregator(capacity=self.config.aggregation.window)
        self._last_selected: FocusEstimate | None = None

    def _focus_field(self, flow: FlowField, eps: FlowField, comp: FlowField) -> FlowField:
        source = self.config.focus.field_source
        if source == "raw":
            return flow
        if source == "ego":
            return eps
        return comp

    def _fallback_estimate(self, frame: Frame) -> FocusEstimate:
        if self._last_selected is not None:
            return replace(self._last_selected, score=0, low_confidence=True)
        center = (frame.width / 2.0, frame.height / 2.0)
        return FocusEstimate(point=center, score=0, mean_residual=math.inf,
                             cluster_id=-1, low_confidence=True)

    def process_pair(self, prev: Frame, nxt: Frame) -> PairResult:
        cfg = self.config
        timings: dict[str, float] = {}

        t0 = time.perf_counter()
        flow = compute_flow(prev, nxt, cfg.flow)
        timings["flow"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        p1, p2 = build_correspondences(flow, cfg.correspondence_stride)
        timings["correspondence"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        transform = fit_rigid(p1, p2)
        timings["fit"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        eps = ego_noise(flow, transform)
        comp = compensate(flow, eps)
        timings["compensate"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        rays = extract_rays(self._focus_field(flow, eps, comp),
                            cfg.focus.magnitude_threshold, cfg.focus.stride)
        try:
            estimates, selected = cluster_and_score(
                rays, cfg.focus.clusters, cfg.focus.inlier_radius, cfg.focus.seed
            )
        except NoConvergenceError:
            estimates = []
            selected = self._fallback_estimate(nxt)
        timings["focus"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        activity = mean_magnitude(flow)
        ag = cfg.aggregation
        if selected.low_confidence:
            sigma = ag.sigma_max
        else:
            sigma = sigma_from_activity(activity, ag.kappa, ag.u_floor,
                                        ag.sigma_min, ag.sigma_max)
        self.aggregator.push(selected.point, sigma, frame_index=nxt.index)
        mask = self.aggregator.render_mask(nxt.width, nxt.height)
        focus_point = stabilized_focus(mask)
        timings["aggregate"] = time.perf_counter() - t0

        self._last_selected = selected
        return PairResult(
            frame=nxt.index,
            flow=flow,
            transform=transform,
            eps=eps,
            compensated=comp,
            estimates=estimates,
            selected=selected,
            activity=activity,
            sigma=sigma,
            mask_values=mask.values,
            focus_point=focus_point,
            correspondences=len(p1),
            timings=timings,
        )

    def process_sequence(self, frames: Iterable[Frame]) -> Iterator[PairResult]:
        prev: Frame | None = None
        for frame in frames:
            if prev is not None:
                yield self.process_pair(prev, frame)
            prev = frame


def prediction_record(result: PairResult) -> dict:
    """The JSONL record emitted per frame pair."""
    return {
        "frame": result.frame,
        "x": float(result.focus_point[0]),
        "y": float(result.focus_point[1]),
        "score": result.selected.score,
        "sigma": result.sigma,
        "low_confidence": result.selected.low_confidence,
    }


def diagnostics_record(result: PairResult) -> dict:
    """Per-frame candidate dump for offline inspection."""
    def _finite(x: float):
        return x if math.isfinite(x) else None

    return {
        "frame": result.frame,
        "transform": result.transform.as_row(),
        "activity": result.activity,
        "sigma": result.sigma,
        "candidates": [
            {
                "x": e.point[0], "y": e.point[1], "score": e.score,
                "mean_residual": _finite(e.mean_residual), "cluster": e.cluster_id,
                "low_confidence": e.low_confidence,
            }
            for e in result.estimates
        ],
        "selected": {
            "x": result.selected.point[0], "y": result.selected.point[1],
            "score": result.selected.score,
            "low_confidence": result.selected.low_confidence,
        },
    }
