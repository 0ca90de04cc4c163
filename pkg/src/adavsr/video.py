"""Video value type and frame-directory I/O.

A video is an immutable stack of frames with pixel values in [0, 1].
On disk a video is a directory of 8-bit PNG files named ``%06d.png``;
frames are ordered by lexicographic filename.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

_IMAGE_SUFFIXES = {".png"}


class VideoError(ValueError):
    """Raised when a video value or frame directory violates the contract."""


@dataclass(frozen=True)
class Video:
    """A finite frame sequence with uniform spatial size.

    ``pixels`` has shape (frames, height, width, channels) with float64
    values. Values are in [0, 1] for any video produced by I/O or the
    degradation operators; raw network outputs may transiently leave that
    range until clamped at inference.
    """

    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim == 3:  # single-channel convenience: (M, H, W) -> (M, H, W, 1)
            p = p[..., np.newaxis]
        if p.ndim != 4:
            raise VideoError(f"pixels must have shape (M, H, W, C), got {p.shape}")
        m, h, w, c = p.shape
        if m < 2:
            raise VideoError(f"frame_count < 2 (got {m})")
        if h < 1 or w < 1:
            raise VideoError(f"empty spatial dimensions: {h}x{w}")
        if c not in (1, 3):
            raise VideoError(f"channels must be 1 or 3, got {c}")
        p = np.ascontiguousarray(p)
        p.flags.writeable = False
        object.__setattr__(self, "pixels", p)

    @property
    def frame_count(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    @property
    def channels(self) -> int:
        return self.pixels.shape[3]

    def frame(self, index: int) -> np.ndarray:
        """Frame ``index`` as an (H, W, C) array."""
        return self.pixels[index]

    def in_unit_range(self, tol: float = 0.0) -> bool:
        return bool(self.pixels.min() >= -tol and self.pixels.max() <= 1.0 + tol)

    def __eq__(self, other) -> bool:
        return isinstance(other, Video) and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))


def load_video(directory_path: str | os.PathLike) -> Video:
    """Load a video from a directory of PNG frames.

    Frames are ordered by lexicographic filename and scaled to [0, 1].
    Raises VideoError naming the offending file on unreadable images or
    mismatched dimensions.
    """
    directory = Path(directory_path)
    if not directory.is_dir():
        raise FileNotFoundError(f"frame directory not found: {directory}")
    names = sorted(p.name for p in directory.iterdir()
                   if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not names:
        raise VideoError(f"no PNG frames in {directory}")
    if len(names) < 2:
        raise VideoError(f"frame_count < 2: {directory} holds only {names[0]}")

    frames = []
    shape = None
    for name in names:
        path = directory / name
        try:
            with Image.open(path) as img:
                if img.mode not in ("L", "RGB"):
                    img = img.convert("RGB" if img.mode in ("RGBA", "P") else "L")
                arr = np.asarray(img, dtype=np.float64) / 255.0
        except (OSError, SyntaxError) as exc:
            raise VideoError(f"unreadable frame {path}: {exc}") from exc
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise VideoError(
                f"frame {path} has shape {arr.shape[:2]}x{arr.shape[2]}, "
                f"expected {shape[:2]}x{shape[2]}")
        frames.append(arr)
    return Video(np.stack(frames))


def save_video(v: Video, directory_path: str | os.PathLike) -> None:
    """Write one 8-bit PNG per frame, named 000000.png, 000001.png, ...

    Reloading reproduces the video within 8-bit quantization
    (max abs error <= 1/255 per channel).
    """
    directory = Path(directory_path)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise VideoError(f"cannot create output directory {directory}: {exc}") from exc
    if not os.access(directory, os.W_OK):
        raise VideoError(f"output directory not writable: {directory}")

    quantized = np.rint(np.clip(v.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    for i in range(v.frame_count):
        frame = quantized[i]
        if frame.shape[2] == 1:
            img = Image.fromarray(frame[:, :, 0], mode="L")
        else:
            img = Image.fromarray(frame, mode="RGB")
        img.save(directory / f"{i:06d}.png")


def extract_patch(v: Video, top: int, left: int, size: int) -> Video:
    """Spatial crop of every frame: rows [top, top+size), cols [left, left+size)."""
    if top < 0 or left < 0 or size <= 0:
        raise VideoError(f"invalid crop (top={top}, left={left}, size={size})")
    if top + size > v.height or left + size > v.width:
        raise VideoError(
            f"crop (top={top}, left={left}, size={size}) exceeds "
            f"frame size {v.height}x{v.width}")
    return Video(v.pixels[:, top:top + size, left:left + size, :].copy())
