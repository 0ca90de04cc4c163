"""Synthetic degradation tasks: spatial kernels, temporal subsampling,
temporal profiles, task sampling and meta-batch assembly.

A degradation task pairs one spatial down-scaling kernel (anisotropic
Gaussian or bicubic) with one temporal subsampling operator (alternate
frames or stride-2 window-3 averaging). Tasks are sampled on the fly
from a seeded distribution; every draw is a pure function of
(seed, draw index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import signal

from .resample import cubic_scale_spatial, midpoint_taps
from .video import Video, VideoError, extract_patch

SPATIAL_SCALE = 4
TEMPORAL_SCALE = 2

SIGMA_MIN = 0.2
SIGMA_MAX = 4.0
DEFAULT_SUPPORT = 13

# Stride-4 subsampling offset: LR sample centers sit on the integer grid at
# 4i + 2, the nearest integers to the centered-grid targets 4i + 1.5.
_STRIDE_OFFSET = SPATIAL_SCALE // 2

TEMPORAL_KINDS = ("alternate", "average3")
KERNEL_KINDS = ("bicubic", "aniso_gaussian")


class DegradationError(ValueError):
    """Raised on invalid kernel specs, tasks or undersized inputs."""


@dataclass(frozen=True)
class KernelSpec:
    """Spatial down-scaling kernel description.

    ``sigma1``/``sigma2`` are the standard deviations along the rotated
    principal axes (pixels); ``angle`` rotates the sigma1 axis
    counter-clockwise from the x axis. Bicubic kernels carry no
    parameters: they are realised as separable Keys resampling inside
    spatial_downscale instead of an explicit kernel.
    """

    kind: str
    sigma1: float | None = None
    sigma2: float | None = None
    angle: float | None = None
    support: int | None = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise DegradationError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "bicubic":
            if any(v is not None for v in
                   (self.sigma1, self.sigma2, self.angle, self.support)):
                raise DegradationError("bicubic kernels take no parameters")
            return
        if None in (self.sigma1, self.sigma2, self.angle, self.support):
            raise DegradationError("aniso_gaussian requires sigma1, sigma2, angle, support")
        for name, sig in (("sigma1", self.sigma1), ("sigma2", self.sigma2)):
            if not SIGMA_MIN <= sig <= SIGMA_MAX:
                raise DegradationError(
                    f"{name}={sig} outside [{SIGMA_MIN}, {SIGMA_MAX}]")
        if not 0.0 <= self.angle < math.pi:
            raise DegradationError(f"angle={self.angle} outside [0, pi)")
        if self.support % 2 == 0 or self.support < 1:
            raise DegradationError(f"support must be odd positive, got {self.support}")
        needed = 4 * math.ceil(max(self.sigma1, self.sigma2)) + 1
        if self.support < needed:
            raise DegradationError(
                f"support {self.support} < {needed} required for "
                f"sigma {max(self.sigma1, self.sigma2)}")


@dataclass(frozen=True)
class TemporalOp:
    """Temporal subsampling operator: 'alternate' or 'average3'."""

    kind: str

    def __post_init__(self):
        if self.kind not in TEMPORAL_KINDS:
            raise DegradationError(f"unknown temporal op {self.kind!r}")


@dataclass(frozen=True)
class DegradationTask:
    """One sampled task: spatial kernel + temporal operator, at the fixed
    scale factors (spatial x4, temporal x2)."""

    kernel: KernelSpec
    temporal: TemporalOp
    spatial_scale: int = SPATIAL_SCALE
    temporal_scale: int = TEMPORAL_SCALE

    def __post_init__(self):
        if self.spatial_scale != SPATIAL_SCALE or self.temporal_scale != TEMPORAL_SCALE:
            raise DegradationError(
                f"scales are fixed at x{SPATIAL_SCALE} spatial / "
                f"x{TEMPORAL_SCALE} temporal")


BICUBIC_ALTERNATE = DegradationTask(
    kernel=KernelSpec(kind="bicubic"), temporal=TemporalOp("alternate"))


@dataclass(frozen=True)
class TaskDistribution:
    """Parameter ranges for on-the-fly task sampling.

    Draws are pure functions of (rng_seed, draw index): the same pair
    always yields the same task.
    """

    rng_seed: int
    sigma_min: float = SIGMA_MIN
    sigma_max: float = SIGMA_MAX
    angle_min: float = 0.0
    angle_max: float = math.pi
    temporal_weights: tuple[float, float] = (0.5, 0.5)  # (alternate, average3)

    def __post_init__(self):
        if not SIGMA_MIN <= self.sigma_min <= self.sigma_max <= SIGMA_MAX:
            raise DegradationError(
                f"sigma range [{self.sigma_min}, {self.sigma_max}] outside "
                f"[{SIGMA_MIN}, {SIGMA_MAX}]")
        if not 0.0 <= self.angle_min <= self.angle_max <= math.pi:
            raise DegradationError("angle range outside [0, pi]")
        if min(self.temporal_weights) < 0 or sum(self.temporal_weights) <= 0:
            raise DegradationError(f"bad temporal weights {self.temporal_weights}")


@dataclass(frozen=True)
class VideoTriple:
    """One (input, temporal-target, spatial-target) training example.

    ``low`` is the network input; ``mid`` is the x2 temporal upscaling
    target for ``low``; ``high`` is the x4 spatial upscaling target for
    ``mid``. Train triples map (V_ts, V_s, V_lr); test triples map
    (V_lr, V_lr_hfr, V_hr).
    """

    low: Video
    mid: Video
    high: Video


@dataclass(frozen=True)
class MetaBatch:
    """Paired train/test triples for one meta-step, built under two
    distinct degradation tasks."""

    train_set: tuple[VideoTriple, ...]
    test_set: tuple[VideoTriple, ...]
    task_train: DegradationTask
    task_test: DegradationTask

    def __post_init__(self):
        if self.task_train == self.task_test:
            raise DegradationError("train and test tasks must differ")


def make_kernel(spec: KernelSpec) -> np.ndarray:
    """Materialize an anisotropic Gaussian kernel on its support grid.

    Entries are non-negative and sum to 1. Bicubic specs have no explicit
    kernel (separable resampling handles them) and raise.
    """
    if spec.kind == "bicubic":
        raise DegradationError(
            "bicubic has no explicit kernel; spatial_downscale applies "
            "separable Keys resampling directly")
    half = (spec.support - 1) // 2
    g = np.arange(-half, half + 1, dtype=np.float64)
    y, x = np.meshgrid(g, g, indexing="ij")
    c, s = math.cos(spec.angle), math.sin(spec.angle)
    # squared Mahalanobis distance along the rotated principal axes
    t1 = (x * c + y * s) / spec.sigma1
    t2 = (-x * s + y * c) / spec.sigma2
    k = np.exp(-0.5 * (t1 * t1 + t2 * t2))
    return k / k.sum()


def spatial_downscale(v: Video, task: DegradationTask) -> Video:
    """x4 spatial down-scaling with the task's kernel (f_s).

    Anisotropic path: reflect-padded correlation with the explicit kernel,
    then stride-4 subsampling at the fixed offset. Bicubic path: separable
    anti-aliased Keys resampling. Output is clamped to [0, 1].
    """
    a = task.spatial_scale
    if v.height % a or v.width % a:
        raise DegradationError(
            f"frame size {v.height}x{v.width} not divisible by {a}")
    if task.kernel.kind == "bicubic":
        out = cubic_scale_spatial(v.pixels, v.height // a, v.width // a)
    else:
        k = make_kernel(task.kernel)
        pad = (task.kernel.support - 1) // 2
        padded = np.pad(v.pixels, ((0, 0), (pad, pad), (pad, pad), (0, 0)),
                        mode="reflect")
        out_frames = []
        for t in range(v.frame_count):
            chans = [signal.correlate(padded[t, :, :, c_], k, mode="valid")
                     for c_ in range(v.channels)]
            conv = np.stack(chans, axis=-1)
            out_frames.append(conv[_STRIDE_OFFSET::a, _STRIDE_OFFSET::a, :])
        out = np.stack(out_frames)
    return Video(np.clip(out, 0.0, 1.0))


def temporal_downscale(v: Video, op: TemporalOp) -> Video:
    """x2 temporal down-scaling (f_t): output length ceil(M / 2).

    'alternate' keeps even-index frames. 'average3' averages the window
    {2k-1, 2k, 2k+1} with indices clamped to the valid range (clamped
    duplicates counted).
    """
    m = v.frame_count
    if m < 3:
        raise DegradationError(f"temporal_downscale needs M >= 3, got {m}")
    if op.kind == "alternate":
        return Video(v.pixels[0::2].copy())
    k = np.arange((m + 1) // 2)
    idx = np.clip(np.stack([2 * k - 1, 2 * k, 2 * k + 1], axis=1), 0, m - 1)
    return Video(v.pixels[idx].mean(axis=1))


def temporal_profile(v: Video) -> Video:
    """Cubic interpolation along time (f_r): 2M-1 frames.

    Even output frames are the inputs; odd frames are the Keys-cubic
    midpoints with an edge-replicated stencil.
    """
    m = v.frame_count
    if m < 2:
        raise DegradationError(f"temporal_profile needs M >= 2, got {m}")
    idx, w = midpoint_taps(m)
    mids = np.einsum("kt,kthwc->khwc", np.broadcast_to(w, idx.shape), v.pixels[idx])
    out = np.empty((2 * m - 1,) + v.pixels.shape[1:], dtype=np.float64)
    out[0::2] = v.pixels
    out[1::2] = mids
    return Video(out)


def apply_task(v: Video, task: DegradationTask) -> Video:
    """Full degradation: spatial down-scaling then temporal subsampling."""
    return temporal_downscale(spatial_downscale(v, task), task.temporal)


def _draw_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed,) + key))


def _draw_task(dist: TaskDistribution, *key: int) -> DegradationTask:
    rng = _draw_rng(dist.rng_seed, *key)
    sigma1 = rng.uniform(dist.sigma_min, dist.sigma_max)
    sigma2 = rng.uniform(dist.sigma_min, dist.sigma_max)
    angle = rng.uniform(dist.angle_min, min(dist.angle_max, math.pi))
    if angle >= math.pi:
        angle = 0.0
    support = max(DEFAULT_SUPPORT, 4 * math.ceil(max(sigma1, sigma2)) + 1)
    weights = np.asarray(dist.temporal_weights, dtype=np.float64)
    temporal = TEMPORAL_KINDS[rng.choice(2, p=weights / weights.sum())]
    return DegradationTask(
        kernel=KernelSpec(kind="aniso_gaussian", sigma1=sigma1, sigma2=sigma2,
                          angle=angle, support=support),
        temporal=TemporalOp(temporal))


def sample_task(dist: TaskDistribution, index: int = 0) -> DegradationTask:
    """Draw task number ``index`` from the distribution (pure in seed/index)."""
    return _draw_task(dist, index)


def _trim_to_odd(v: Video) -> Video:
    if v.frame_count % 2 == 0:
        return Video(v.pixels[:-1].copy())
    return v


def make_meta_batch(hr_videos: Sequence[Video], dist: TaskDistribution,
                    draw_index: int = 0, test_crop: int | None = None) -> MetaBatch:
    """Assemble one meta-batch from high-resolution source videos.

    The train side applies task T_i twice down the scale pyramid
    (source -> V_lr -> V_s -> V_ts); the test side applies a distinct
    task T_j once (source -> V_lr_hfr -> V_lr). Sources need H, W
    divisible by 16 and at least 5 frames; 256x256 is the documented
    minimum for useful train triples (smaller sources push V_ts below the
    16x16 patch floor). ``test_crop`` optionally evaluates the test side
    on a random square crop of each source, which keeps meta-steps cheap
    at desk scale.
    """
    if not hr_videos:
        raise DegradationError("empty video batch")
    needed = SPATIAL_SCALE * SPATIAL_SCALE
    for v in hr_videos:
        if v.height % needed or v.width % needed:
            raise DegradationError(
                f"source {v.height}x{v.width} not divisible by {needed}")
        if v.frame_count < 5:
            raise DegradationError(
                f"source needs >= 5 frames, got {v.frame_count}")
    if test_crop is not None and test_crop % SPATIAL_SCALE:
        raise DegradationError(f"test_crop {test_crop} not divisible by 4")

    task_i = _draw_task(dist, draw_index, 0)
    task_j = task_i
    for attempt in range(100):
        task_j = _draw_task(dist, draw_index, 1, attempt)
        if task_j != task_i:
            break
    else:
        raise DegradationError(
            "task distribution cannot produce two distinct tasks")

    train, test = [], []
    for n, v in enumerate(hr_videos):
        src = _trim_to_odd(v)
        # train side: degrade twice under T_i; odd-length V_lr keeps the
        # 2m-1 frame arithmetic aligned down the pyramid
        v_lr = _trim_to_odd(apply_task(src, task_i))
        v_s = spatial_downscale(v_lr, task_i)
        v_ts = temporal_downscale(v_s, task_i.temporal)
        train.append(VideoTriple(low=v_ts, mid=v_s, high=v_lr))
        # test side: degrade once under T_j
        t_src = src
        if test_crop is not None:
            rng = _draw_rng(dist.rng_seed, draw_index, 2, n)
            top = int(rng.integers(0, src.height - test_crop + 1))
            left = int(rng.integers(0, src.width - test_crop + 1))
            t_src = extract_patch(src, top, left, test_crop)
        v_lr_hfr = spatial_downscale(t_src, task_j)
        v_lr_lfr = temporal_downscale(v_lr_hfr, task_j.temporal)
        test.append(VideoTriple(low=v_lr_lfr, mid=v_lr_hfr, high=t_src))
    return MetaBatch(train_set=tuple(train), test_set=tuple(test),
                     task_train=task_i, task_test=task_j)


def task_to_line(task: DegradationTask) -> str:
    """Serialize a task as one key=value line (bit-exact round trip)."""
    k = task.kernel
    if k.kind == "bicubic":
        return f"kind=bicubic temporal={task.temporal.kind}"
    return (f"kind={k.kind} sigma1={k.sigma1!r} sigma2={k.sigma2!r} "
            f"angle={k.angle!r} support={k.support} temporal={task.temporal.kind}")


def task_from_line(line: str) -> DegradationTask:
    """Parse the task_to_line format back into a DegradationTask."""
    fields = {}
    for token in line.split():
        if "=" not in token:
            raise DegradationError(f"malformed task token {token!r}")
        key, value = token.split("=", 1)
        fields[key] = value
    try:
        kind = fields.pop("kind")
        temporal = TemporalOp(fields.pop("temporal"))
        if kind == "bicubic":
            kernel = KernelSpec(kind="bicubic")
        else:
            kernel = KernelSpec(kind=kind,
                                sigma1=float(fields.pop("sigma1")),
                                sigma2=float(fields.pop("sigma2")),
                                angle=float(fields.pop("angle")),
                                support=int(fields.pop("support")))
    except KeyError as exc:
        raise DegradationError(f"task line missing field {exc}") from exc
    if fields:
        raise DegradationError(f"unknown task fields {sorted(fields)}")
    return DegradationTask(kernel=kernel, temporal=temporal)
