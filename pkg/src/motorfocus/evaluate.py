"""Prediction scoring against annotations, and pipeline stage timing."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import ConfigError, InsufficientFramesError, NoOverlapError
from .frames import Frame

STAGES = ("flow", "correspondence", "fit", "compensate", "focus", "aggregate")


@dataclass
class AnnotationTrack:
    """Per-frame (x, y) annotations; frame indices unique and sorted."""

    frames: np.ndarray
    points: np.ndarray

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.frames.ndim != 1 or self.points.shape != (len(self.frames), 2):
            raise ValueError("annotation track needs frames (N,) and points (N, 2)")
        if len(np.unique(self.frames)) != len(self.frames):
            raise ValueError("annotation track holds duplicate frame indices")
        order = np.argsort(self.frames)
        self.frames = self.frames[order]
        self.points = self.points[order]

    def __len__(self) -> int:
        return len(self.frames)

    def as_dict(self) -> dict[int, tuple[float, float]]:
        return {int(f): (float(x), float(y)) for f, (x, y) in zip(self.frames, self.points)}

    @classmethod
    def from_csv(cls, path: str | Path) -> "AnnotationTrack":
        """CSV with header ``frame,x,y``; parse errors carry line numbers."""
        frames: list[int] = []
        points: list[tuple[float, float]] = []
        path = Path(path)
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip().lower() for h in header[:3]] != ["frame", "x", "y"]:
                raise ConfigError(f"{path}:1: expected header 'frame,x,y', got {header}")
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                try:
                    frames.append(int(row[0]))
                    points.append((float(row[1]), float(row[2])))
                except (ValueError, IndexError) as exc:
                    raise ConfigError(f"{path}:{lineno}: malformed row {row!r}") from exc
        return cls(frames=np.array(frames, dtype=np.int64),
                   points=np.array(points, dtype=np.float64))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "x", "y"])
            for f, (x, y) in zip(self.frames, self.points):
                writer.writerow([int(f), float(x), float(y)])


def merge_annotations(tracks: list[AnnotationTrack]) -> tuple[AnnotationTrack, int]:
    """Average annotator tracks frame by frame.

    Only frames present in every track survive (averaged per axis);
    returns the merged track and the count of dropped frames.
    """
    if not tracks:
        raise ValueError("need at least one annotation track")
    common = set(int(f) for f in tracks[0].frames)
    union = set(common)
    for track in tracks[1:]:
        track_frames = set(int(f) for f in track.frames)
        common &= track_frames
        union |= track_frames
    dropped = len(union) - len(common)
    frames = np.array(sorted(common), dtype=np.int64)
    if len(frames) == 0:
        return AnnotationTrack(frames=frames, points=np.zeros((0, 2))), dropped
    lookup = [t.as_dict() for t in tracks]
    points = np.array([[d[int(f)] for d in lookup] for f in frames]).mean(axis=1)
    return AnnotationTrack(frames=frames, points=points), dropped


@dataclass(frozen=True)
class MetricReport:
    mae: float
    mse: float
    mae_x: float
    mae_y: float
    mse_x: float
    mse_y: float
    euclidean_mae: float
    frames: int
    coverage: float

    def to_dict(self) -> dict:
        return {
            "mae": self.mae, "mse": self.mse,
            "mae_x": self.mae_x, "mae_y": self.mae_y,
            "mse_x": self.mse_x, "mse_y": self.mse_y,
            "euclidean_mae": self.euclidean_mae,
            "frames": self.frames, "coverage": self.coverage,
        }

    def to_text(self) -> str:
        rows = [
            ("MAE (px)", f"{self.mae:.4f}"),
            ("MSE (px^2)", f"{self.mse:.4f}"),
            ("MAE x / y", f"{self.mae_x:.4f} / {self.mae_y:.4f}"),
            ("MSE x / y", f"{self.mse_x:.4f} / {self.mse_y:.4f}"),
            ("Euclidean MAE (px)", f"{self.euclidean_mae:.4f}"),
            ("frames scored", str(self.frames)),
            ("coverage", f"{self.coverage:.3f}"),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def score(predictions: AnnotationTrack, truth: AnnotationTrack) -> MetricReport:
    """MAE/MSE of predictions against ground truth on overlapping frames.

    MAE averages (|dx| + |dy|) / 2 per frame; MSE averages
    (dx^2 + dy^2) / 2.  Per-axis values and the mean Euclidean distance
    are reported alongside.
    """
    pred = predictions.as_dict()
    common = [int(f) for f in truth.frames if int(f) in pred]
    if not common:
        raise NoOverlapError("predictions and ground truth share no frames")
    truth_map = truth.as_dict()
    p = np.array([pred[f] for f in common])
    t = np.array([truth_map[f] for f in common])
    d = p - t
    abs_d = np.abs(d)
    sq_d = d * d
    return MetricReport(
        mae=float((abs_d[:, 0] + abs_d[:, 1]).mean() / 2.0),
        mse=float((sq_d[:, 0] + sq_d[:, 1]).mean() / 2.0),
        mae_x=float(abs_d[:, 0].mean()),
        mae_y=float(abs_d[:, 1].mean()),
        mse_x=float(sq_d[:, 0].mean()),
        mse_y=float(sq_d[:, 1].mean()),
        euclidean_mae=float(np.hypot(d[:, 0], d[:, 1]).mean()),
        frames=len(common),
        coverage=float(len(common)) / float(len(truth)),
    )


@dataclass
class TimingReport:
    """Per-stage wall times over the timed frames, milliseconds."""

    median_ms: dict[str, float]
    p95_ms: dict[str, float]
    total_median_ms: float
    correspondences: int
    frames_timed: int
    warmup: int
    worker_count: int
    frame_size: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "median_ms": self.median_ms,
            "p95_ms": self.p95_ms,
            "total_median_ms": self.total_median_ms,
            "correspondences": self.correspondences,
            "frames_timed": self.frames_timed,
            "warmup": self.warmup,
            "worker_count": self.worker_count,
            "frame_size": list(self.frame_size),
        }

    def to_text(self) -> str:
        lines = [f"{'stage':<16}{'median (ms)':>14}{'p95 (ms)':>14}"]
        for stage in STAGES:
            lines.append(
                f"{stage:<16}{self.median_ms[stage]:>14.3f}{self.p95_ms[stage]:>14.3f}"
            )
        lines.append(f"{'total':<16}{self.total_median_ms:>14.3f}")
        lines.append(
            f"correspondences N = {self.correspondences}, frames timed = "
            f"{self.frames_timed} (warmup {self.warmup}), workers = {self.worker_count}, "
            f"frame = {self.frame_size[0]}x{self.frame_size[1]}"
        )
        return "\n".join(lines)


def bench(config, frames: list[Frame], warmup: int = 3, timed: int = 10) -> TimingReport:
    """Time every pipeline stage with a monotonic clock.

    The first ``warmup`` frame pairs are processed but discarded from the
    statistics; medians and 95th percentiles cover the next ``timed``
    pairs.  Raises InsufficientFramesError when the source is too short.
    """
    from .pipeline import MotorFocusPipeline

    if timed < 1 or warmup < 0:
        raise ValueError("need timed >= 1 and warmup >= 0")
    needed = warmup + timed + 1
    if len(frames) < needed:
        raise InsufficientFramesError(
            f"benchmark needs {needed} frames ({warmup} warmup + {timed} timed + 1), "
            f"got {len(frames)}"
        )
    pipeline = MotorFocusPipeline(config)
    samples: dict[str, list[float]] = {stage: [] for stage in STAGES}
    totals: list[float] = []
    correspondences = 0
    for i in range(warmup + timed):
        result = pipeline.process_pair(frames[i], frames[i + 1])
        correspondences = result.correspondences
        if i < warmup:
            continue
        for stage in STAGES:
            samples[stage].append(result.timings[stage] * 1e3)
        totals.append(sum(result.timings[stage] for stage in STAGES) * 1e3)
    return TimingReport(
        median_ms={s: float(np.median(samples[s])) for s in STAGES},
        p95_ms={s: float(np.percentile(samples[s], 95)) for s in STAGES},
        total_median_ms=float(np.median(totals)),
        correspondences=correspondences,
        frames_timed=timed,
        warmup=warmup,
        worker_count=cv2.getNumThreads(),
        frame_size=(frames[0].width, frames[0].height),
    )


def monotonic_ms() -> float:
    return time.perf_counter() * 1e3


def read_predictions(path: str | Path) -> AnnotationTrack:
    """Load a predictions JSONL file as an annotation track."""
    frames: list[int] = []
    points: list[tuple[float, float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                frames.append(int(record["frame"]))
                points.append((float(record["x"]), float(record["y"])))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ConfigError(f"{path}:{lineno}: malformed prediction record") from exc
    return AnnotationTrack(frames=np.array(frames, dtype=np.int64),
                           points=np.array(points, dtype=np.float64))
