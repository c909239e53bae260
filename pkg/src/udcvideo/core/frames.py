"""Clip container and frame-file I/O.

A clip on disk is a directory of ``%06d.<ext>`` frames plus a small
``meta.json``. Integer formats (8/16-bit PNG or TIFF) hold display-clamped
data; PFM float maps hold linear HDR data and round-trip bit-exactly.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import cv2
import numpy as np

Colorspace = Literal["linear-hdr", "display-clamped"]
Encoding = Literal["int8", "int16", "float"]

FRAME_PATTERN = "{:06d}"
META_NAME = "meta.json"
_INT_EXTS = {".png", ".tif", ".tiff"}
_FLOAT_EXTS = {".pfm"}
_EXT_FOR = {"int8": ".png", "int16": ".png", "float": ".pfm"}


class ClipError(ValueError):
    """Raised for malformed frame directories or invalid stacks."""


@dataclass(frozen=True)
class FrameStack:
    """A T x 3 x H x W clip of nonnegative linear-light intensities."""

    data: np.ndarray
    colorspace: Colorspace = "linear-hdr"

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, copy=True)
        if data.ndim != 4:
            raise ClipError(f"expected T x C x H x W, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] != 3:
            raise ClipError(f"need T >= 1 and C == 3, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ClipError("frame stack contains non-finite values")
        if data.min() < 0:
            raise ClipError(f"frame stack has negative values (min {data.min():g})")
        if self.colorspace not in ("linear-hdr", "display-clamped"):
            raise ClipError(f"unknown colorspace {self.colorspace!r}")
        if self.colorspace == "display-clamped" and data.max() > 1.0:
            raise ClipError(f"display-clamped stack exceeds 1 (max {data.max():g})")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    def __len__(self) -> int:
        return self.data.shape[0]

    def clamped(self, hi: float = 1.0) -> "FrameStack":
        return FrameStack(np.clip(self.data, 0.0, hi), "display-clamped")


def _read_frame(path: Path) -> tuple[np.ndarray, bool]:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise ClipError(f"cannot read frame {path}")
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    if img.shape[2] == 4:
        img = img[:, :, :3]
    img = img[:, :, ::-1]  # BGR -> RGB
    if np.issubdtype(img.dtype, np.integer):
        out = img.astype(np.float64) / np.iinfo(img.dtype).max
        return out.astype(np.float32).transpose(2, 0, 1), True
    return img.astype(np.float32).transpose(2, 0, 1), False


def list_frames(path: str | Path) -> list[Path]:
    """Return frame files of a clip directory in index order, checking for gaps."""
    path = Path(path)
    if not path.is_dir():
        raise ClipError(f"clip directory {path} does not exist")
    files = [p for p in path.iterdir()
             if p.suffix.lower() in _INT_EXTS | _FLOAT_EXTS and re.fullmatch(r"\d+", p.stem)]
    if not files:
        raise ClipError(f"no frame files in {path}")
    files.sort(key=lambda p: p.name)
    width = len(files[0].stem)
    numbers = [int(p.stem) for p in files]
    for prev, cur in zip(numbers, numbers[1:]):
        if cur != prev + 1:
            raise ClipError(f"missing frame {prev + 1:0{width}d} in {path}")
    return files


def load_clip(path: str | Path, frame_range: tuple[int, int] | None = None) -> FrameStack:
    """Load a directory of frames as a linear-light :class:`FrameStack`.

    Args:
        path: clip directory.
        frame_range: optional ``(start, stop)`` positions into the ordered
            frame list, half-open.
    """
    path = Path(path)
    files = list_frames(path)
    if frame_range is not None:
        start, stop = frame_range
        files = files[start:stop]
        if not files:
            raise ClipError(f"frame range {frame_range} selects no frames in {path}")
    frames, integer = [], []
    for f in files:
        arr, is_int = _read_frame(f)
        if frames and arr.shape != frames[0].shape:
            raise ClipError(
                f"mixed resolutions in {path}: {f.name} is {arr.shape[1:]}, "
                f"expected {frames[0].shape[1:]}")
        frames.append(arr)
        integer.append(is_int)
    colorspace: Colorspace = "display-clamped" if all(integer) else "linear-hdr"
    meta = path / META_NAME
    if meta.exists():
        colorspace = json.loads(meta.read_text()).get("colorspace", colorspace)
    data = np.stack(frames)
    if colorspace == "display-clamped" and data.max() > 1.0:
        colorspace = "linear-hdr"
    return FrameStack(data, colorspace)


def save_clip(stack: FrameStack, path: str | Path, encoding: Encoding = "float") -> None:
    """Write ``stack`` as ``%06d`` frame files plus ``meta.json``.

    Integer encodings clip to [0, 1] and round to the nearest code, so the
    round trip error is at most half a code step.
    """
    if encoding not in _EXT_FOR:
        raise ClipError(f"unknown encoding {encoding!r}")
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create clip directory {path}: {exc}") from exc
    ext = _EXT_FOR[encoding]
    for t, frame in enumerate(stack.data):
        hwc = np.ascontiguousarray(frame.transpose(1, 2, 0)[:, :, ::-1])
        if encoding == "float":
            img = hwc.astype(np.float32)
        else:
            dtype = np.uint8 if encoding == "int8" else np.uint16
            top = np.iinfo(dtype).max
            img = np.round(np.clip(hwc, 0.0, 1.0) * top).astype(dtype)
        target = path / (FRAME_PATTERN.format(t) + ext)
        if not cv2.imwrite(str(target), img):
            raise OSError(f"failed to write frame {target}")
    meta = {"n_frames": len(stack), "colorspace": stack.colorspace, "encoding": encoding,
            "height": stack.shape[2], "width": stack.shape[3]}
    (path / META_NAME).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
