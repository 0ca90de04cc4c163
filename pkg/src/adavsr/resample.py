"""Keys cubic (a = -0.5) resampling tap tables.

Shared by the degradation operators (numpy path) and the network
baselines (torch path) so both sides use exactly the same grid
convention: sample centers map through
``in_coord = (out_coord + 0.5) * in_size / out_size - 0.5``
and out-of-range taps replicate the edge sample.

Downscaling stretches the kernel by the scale factor (anti-aliased
resampling); upscaling uses the plain 4-tap kernel.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

KEYS_A = -0.5

# Midpoint stencil of the Keys kernel at |x| in {0.5, 1.5}: (-1, 9, 9, -1)/16.
MIDPOINT_WEIGHTS = np.array([-1.0, 9.0, 9.0, -1.0]) / 16.0


def cubic_kernel(x: np.ndarray, a: float = KEYS_A) -> np.ndarray:
    """Keys piecewise-cubic kernel, zero outside |x| < 2."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(ax)
    near = ax <= 1.0
    far = (ax > 1.0) & (ax < 2.0)
    out[near] = ((a + 2.0) * ax[near] - (a + 3.0)) * ax[near] ** 2 + 1.0
    out[far] = (((ax[far] - 5.0) * ax[far] + 8.0) * ax[far] - 4.0) * a
    return out


@lru_cache(maxsize=128)
def resample_taps(in_size: int, out_size: int, antialias: bool):
    """Tap index and weight tables for cubic resampling along one axis.

    Returns (indices, weights): int64 and float64 arrays of shape
    (out_size, taps). Indices are clamped to [0, in_size) so edge samples
    replicate; weight rows sum to 1.
    """
    if in_size < 1 or out_size < 1:
        raise ValueError(f"invalid sizes {in_size} -> {out_size}")
    scale = in_size / out_size  # > 1 when downscaling
    centers = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    if antialias and scale > 1.0:
        width = 2.0 * scale
        taps = int(np.ceil(2.0 * width)) + 2
        left = np.floor(centers - width).astype(np.int64) + 1
        offsets = left[:, None] + np.arange(taps)[None, :]
        weights = cubic_kernel((offsets - centers[:, None]) / scale)
    else:
        taps = 4
        left = np.floor(centers).astype(np.int64) - 1
        offsets = left[:, None] + np.arange(taps)[None, :]
        weights = cubic_kernel(offsets - centers[:, None])
    weights = weights / weights.sum(axis=1, keepdims=True)
    indices = np.clip(offsets, 0, in_size - 1)
    indices.setflags(write=False)
    weights.setflags(write=False)
    return indices, weights


@lru_cache(maxsize=128)
def midpoint_taps(n_frames: int):
    """Taps for cubic interpolation halfway between consecutive samples.

    For each midpoint k+1/2 the stencil covers samples {k-1, k, k+1, k+2}
    with weights (-1, 9, 9, -1)/16; indices clamp to the valid range
    (edge-replicated stencil). Returns (indices, weights) with indices of
    shape (n_frames - 1, 4).
    """
    if n_frames < 2:
        raise ValueError(f"need at least 2 samples, got {n_frames}")
    k = np.arange(n_frames - 1, dtype=np.int64)
    offsets = k[:, None] + np.array([-1, 0, 1, 2], dtype=np.int64)[None, :]
    indices = np.clip(offsets, 0, n_frames - 1)
    indices.setflags(write=False)
    return indices, MIDPOINT_WEIGHTS


def resample_axis(arr: np.ndarray, axis: int, out_size: int,
                  antialias: bool) -> np.ndarray:
    """Cubic-resample one axis of a float array to ``out_size`` samples."""
    indices, weights = resample_taps(arr.shape[axis], out_size, antialias)
    moved = np.moveaxis(arr, axis, -1)
    gathered = moved[..., indices]          # (..., out_size, taps)
    out = np.einsum("...ot,ot->...o", gathered, weights)
    return np.moveaxis(out, -1, axis)


def cubic_scale_spatial(frames: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable cubic resampling of (..., H, W, C) arrays to out_h x out_w."""
    anti_h = out_h < frames.shape[-3]
    anti_w = out_w < frames.shape[-2]
    out = resample_axis(frames, -3, out_h, anti_h)
    out = resample_axis(out, -2, out_w, anti_w)
    return out
