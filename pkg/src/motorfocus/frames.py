"""Frame ingestion and image output.

Supported inputs are directories of numerically named PNG/PGM images,
uncompressed YUV4MPEG2 video (mono or planar 4:2:0), and pre-generated
synthetic frame lists.  All frames are delivered as single-channel
intensity grids in [0, 1].
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import cv2
import numpy as np
from PIL import Image

from .errors import SequenceError

# Rec.601 luminance weights, fixed so tests can be exact.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# Fallback processing size when a directory mixes frame sizes and the
# caller did not request one.
DEFAULT_PROCESSING_SIZE = (512, 512)

MIN_FRAME_SIDE = 16

_IMAGE_EXTENSIONS = {".png", ".pgm"}


@dataclass(frozen=True)
class Frame:
    """One grayscale frame: row-major intensity grid in [0, 1]."""

    index: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.data.ndim != 2:
            raise ValueError(f"frame data must be 2-D, got shape {self.data.shape}")
        h, w = self.data.shape
        if w < MIN_FRAME_SIDE or h < MIN_FRAME_SIDE:
            raise ValueError(f"frame must be at least {MIN_FRAME_SIDE}px per side, got {w}x{h}")
        lo = float(self.data.min())
        hi = float(self.data.max())
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo < 0.0 or hi > 1.0:
            raise ValueError(f"frame intensities must lie in [0, 1], got [{lo}, {hi}]")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass
class SequenceSource:
    """Where frames come from.

    kind is one of ``image-directory``, ``video-file`` or ``synthetic``.
    ``target_size`` is (width, height); when set, every frame is resized
    (bilinear) before grayscale conversion.
    """

    kind: str
    path: Path | None = None
    frames: Sequence[Frame] = field(default_factory=list)
    target_size: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("image-directory", "video-file", "synthetic"):
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.path is not None:
            self.path = Path(self.path)


def source_from_path(path: str | Path, target_size: tuple[int, int] | None = None) -> SequenceSource:
    """Build a SequenceSource for a frame directory or a .y4m file."""
    p = Path(path)
    if p.is_dir():
        return SequenceSource("image-directory", path=p, target_size=target_size)
    if p.suffix.lower() in (".y4m", ".yuv4mpeg"):
        return SequenceSource("video-file", path=p, target_size=target_size)
    if not p.exists():
        raise SequenceError(f"input path does not exist: {p}")
    raise SequenceError(f"unsupported input {p}: expected a frame directory or .y4m file")


def _numeric_key(path: Path) -> int:
    m = re.search(r"(\d+)$", path.stem)
    if m is None:
        raise SequenceError(f"frame file {path.name!r} has no trailing frame number")
    return int(m.group(1))


def list_frame_files(directory: Path) -> list[Path]:
    """Image files of a frame directory, sorted by numeric stem."""
    files = [p for p in directory.iterdir() if p.suffix.lower() in _IMAGE_EXTENSIONS]
    return sorted(files, key=_numeric_key)


def _to_gray(arr: np.ndarray) -> np.ndarray:
    """Color or gray uint array -> float64 intensity grid in [0, 1]."""
    if arr.dtype == np.uint16:
        scale = 65535.0
    else:
        scale = 255.0
    if arr.ndim == 2:
        return arr.astype(np.float64) / scale
    r, g, b = LUMA_WEIGHTS
    luma = r * arr[..., 0] + g * arr[..., 1] + b * arr[..., 2]
    return luma.astype(np.float64) / scale


def _load_image_array(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("P", "CMYK", "RGBA", "LA"):
            im = im.convert("RGB")
        return np.asarray(im)


def read_image(path: str | Path) -> np.ndarray:
    """Read an image as float in [0, 1]; (H, W) for gray, (H, W, 3) for color."""
    arr = _load_image_array(Path(path))
    if arr.ndim == 2:
        return arr.astype(np.float64) / (65535.0 if arr.dtype == np.uint16 else 255.0)
    return arr[..., :3].astype(np.float64) / 255.0


def _resize(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    w, h = size
    if arr.shape[1] == w and arr.shape[0] == h:
        return arr
    return cv2.resize(arr, (w, h), interpolation=cv2.INTER_LINEAR)


def frame_from_array(arr: np.ndarray, index: int, target_size: tuple[int, int] | None) -> Frame:
    """Resize (optional), convert to grayscale and wrap as a Frame."""
    if target_size is not None:
        arr = _resize(arr, target_size)
    return Frame(index=index, data=_to_gray(arr))


def _iter_directory(source: SequenceSource) -> Iterator[Frame]:
    directory = source.path
    assert directory is not None
    if not directory.exists():
        raise SequenceError(f"input directory does not exist: {directory}")
    files = list_frame_files(directory)
    if len(files) < 2:
        raise SequenceError(
            f"{directory} holds {len(files)} frame image(s); at least 2 are needed"
        )
    reference: tuple[int, int] | None = None
    for index, path in enumerate(files):
        arr = _load_image_array(path)
        if source.target_size is None:
            shape = arr.shape[:2]
            if reference is None:
                reference = shape
            elif shape != reference:
                raise SequenceError(
                    f"mixed frame sizes in {directory}: {path.name} is "
                    f"{shape[1]}x{shape[0]}, expected {reference[1]}x{reference[0]}"
                )
        yield frame_from_array(arr, index, source.target_size)


def _parse_y4m_header(line: bytes, path: Path) -> tuple[int, int, str]:
    tokens = line.decode("ascii", "replace").split()
    if not tokens or tokens[0] != "YUV4MPEG2":
        raise SequenceError(f"{path}: not a YUV4MPEG2 stream")
    width = height = 0
    colorspace = "420"
    for tok in tokens[1:]:
        if tok.startswith("W"):
            width = int(tok[1:])
        elif tok.startswith("H"):
            height = int(tok[1:])
        elif tok.startswith("C"):
            colorspace = tok[1:]
    if width <= 0 or height <= 0:
        raise SequenceError(f"{path}: video header is missing frame dimensions")
    if colorspace.startswith("420"):
        kind = "420"
        if width % 2 or height % 2:
            raise SequenceError(f"{path}: 4:2:0 video needs even dimensions, got {width}x{height}")
    elif colorspace == "mono":
        kind = "mono"
    else:
        raise SequenceError(f"{path}: unsupported colorspace C{colorspace} (mono or 4:2:0 only)")
    return width, height, kind


def _iter_y4m(source: SequenceSource) -> Iterator[Frame]:
    path = source.path
    assert path is not None
    if not path.exists():
        raise SequenceError(f"video file does not exist: {path}")
    with open(path, "rb") as fh:
        header = fh.readline()
        width, height, kind = _parse_y4m_header(header, path)
        luma_bytes = width * height
        chroma_bytes = 0 if kind == "mono" else 2 * (width // 2) * (height // 2)
        index = 0
        while True:
            marker = fh.readline()
            if not marker:
                break
            if not marker.startswith(b"FRAME"):
                raise SequenceError(f"{path}: expected FRAME marker at frame {index}")
            raw = fh.read(luma_bytes)
            if len(raw) != luma_bytes:
                raise SequenceError(f"{path}: truncated frame {index}")
            fh.seek(chroma_bytes, 1)
            luma = np.frombuffer(raw, dtype=np.uint8).reshape(height, width)
            yield frame_from_array(luma, index, source.target_size)
            index += 1
        if index < 2:
            raise SequenceError(f"{path} holds {index} frame(s); at least 2 are needed")


def open_sequence(source: SequenceSource) -> Iterator[Frame]:
    """Yield frames with contiguous indices 0, 1, 2, ...

    All yielded frames share identical dimensions; a directory with mixed
    image sizes is rejected unless ``target_size`` forces a common size.
    """
    if source.kind == "image-directory":
        return _iter_directory(source)
    if source.kind == "video-file":
        return _iter_y4m(source)
    if len(source.frames) < 2:
        raise SequenceError("synthetic source needs at least 2 frames")
    return iter(source.frames)


def probe_sizes(source: SequenceSource) -> set[tuple[int, int]]:
    """Native (width, height) of every frame in the source, pre-resize."""
    if source.kind == "image-directory":
        assert source.path is not None
        if not source.path.exists():
            raise SequenceError(f"input directory does not exist: {source.path}")
        sizes = set()
        for p in list_frame_files(source.path):
            with Image.open(p) as im:
                sizes.add(im.size)
        return sizes
    if source.kind == "video-file":
        assert source.path is not None
        with open(source.path, "rb") as fh:
            w, h, _ = _parse_y4m_header(fh.readline(), source.path)
        return {(w, h)}
    return {(f.width, f.height) for f in source.frames}


def resolve_target_size(source: SequenceSource) -> tuple[int, int] | None:
    """Pick the processing size when the caller did not.

    Uniformly sized inputs run at native size; mixed sizes fall back to
    ``DEFAULT_PROCESSING_SIZE``.
    """
    if source.target_size is not None:
        return source.target_size
    sizes = probe_sizes(source)
    if len(sizes) > 1:
        return DEFAULT_PROCESSING_SIZE
    return None


def write_image(values: np.ndarray, path: str | Path) -> None:
    """Write a field as a lossless 8-bit image.

    Scalar (H, W) fields map through the linear gray ramp; (H, W, 3)
    fields are written as RGB.  Values are clipped to [0, 1] and
    quantized with round-to-nearest, so a round trip stays within 1/255.
    """
    path = Path(path)
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim not in (2, 3) or arr.size == 0:
        raise ValueError(f"expected a non-empty (H, W) or (H, W, 3) field, got shape {arr.shape}")
    quant = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    if arr.ndim == 2:
        image = Image.fromarray(quant, mode="L")
    else:
        if arr.shape[2] != 3:
            raise ValueError(f"color fields need 3 channels, got {arr.shape[2]}")
        image = Image.fromarray(quant, mode="RGB")
        if path.suffix.lower() == ".pgm":
            raise ValueError("PGM output supports grayscale fields only")
    path.parent.mkdir(parents=True, exist_ok=True)
    image.save(path)


def write_frame(frame: Frame, path: str | Path) -> None:
    write_image(frame.data, path)


def resize_frame(frame: Frame, size: tuple[int, int]) -> Frame:
    """Bilinear resize of an existing frame to (width, height)."""
    w, h = size
    if (frame.width, frame.height) == (w, h):
        return frame
    data = cv2.resize(frame.data, (w, h), interpolation=cv2.INTER_LINEAR)
    return Frame(index=frame.index, data=np.clip(data, 0.0, 1.0))


def frames_to_source(frames: Iterable[Frame], target_size: tuple[int, int] | None = None) -> SequenceSource:
    return SequenceSource("synthetic", frames=list(frames), target_size=target_size)
