"""Per-video internal learning and inference.

Given only a low-resolution low-frame-rate test video, a supervised pair
is built from the video itself: spatially down-sample it with the
(known or fallback) kernel, select alternate frames, and train the model
for a handful of plain gradient steps to reconstruct the original from
the down-sampled copy. The adapted model then produces the
high-resolution high-frame-rate output in one forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .degrade import (BICUBIC_ALTERNATE, DegradationError, DegradationTask,
                      TemporalOp, spatial_downscale, temporal_downscale)
from .models import (ArchitectureSpec, ParamSet, pipeline_apply,
                     tensor_to_video, video_to_tensor)
from .train import LossFn, mean_abs
from .video import Video

PROVIDER_MODES = ("oracle", "bicubic_fallback")


@dataclass(frozen=True)
class KernelProvider:
    """Source of the spatial kernel used to build the internal pair.

    'oracle' uses a known degradation task; 'bicubic_fallback' assumes
    bicubic when nothing better is available. Kernel-estimation
    algorithms plug in here by constructing an oracle provider from
    their estimate.
    """

    mode: str
    oracle_task: DegradationTask | None = None

    def __post_init__(self):
        if self.mode not in PROVIDER_MODES:
            raise DegradationError(f"unknown provider mode {self.mode!r}")
        if self.mode == "oracle" and self.oracle_task is None:
            raise DegradationError("oracle provider requires oracle_task")

    def task(self) -> DegradationTask:
        if self.mode == "oracle":
            return self.oracle_task
        return BICUBIC_ALTERNATE


@dataclass(frozen=True)
class InternalPair:
    """Self-supervised pair: down-sampled input and the original target.

    The target is trimmed from the tail to 2*|input| - 1 frames so the
    temporal network's output lines up with it.
    """

    input: Video
    target: Video

    def __post_init__(self):
        if self.target.frame_count != 2 * self.input.frame_count - 1:
            raise DegradationError(
                f"target must have 2m-1 frames: input {self.input.frame_count}, "
                f"target {self.target.frame_count}")
        if (self.target.height != 4 * self.input.height
                or self.target.width != 4 * self.input.width):
            raise DegradationError("target must be 4x the input's spatial size")


@dataclass
class InternalAdaptResult:
    theta: ParamSet
    phi: ParamSet
    losses: list[float] = field(default_factory=list)
    gradient_updates: int = 0
    warning: str | None = None


def build_internal_pair(v_lr: Video, provider: KernelProvider) -> InternalPair:
    """Down-sample the test video with the provider's kernel, then select
    alternate frames. Needs spatial dimensions divisible by 4 and at
    least 5 frames."""
    if v_lr.height % 4 or v_lr.width % 4:
        raise DegradationError(
            f"input {v_lr.height}x{v_lr.width} not divisible by 4")
    if v_lr.frame_count < 5:
        raise DegradationError(
            f"internal pair needs >= 5 frames, got {v_lr.frame_count}")
    task = provider.task()
    small = spatial_downscale(v_lr, task)
    v_i = temporal_downscale(small, TemporalOp("alternate"))
    target = Video(v_lr.pixels[:2 * v_i.frame_count - 1].copy())
    return InternalPair(input=v_i, target=target)


def internal_loss(theta: ParamSet, phi: ParamSet, pair: InternalPair,
                  arch: ArchitectureSpec, loss_fn: LossFn = mean_abs
                  ) -> torch.Tensor:
    """Mean absolute error of the full pipeline on the internal pair."""
    x = video_to_tensor(pair.input, theta.dtype)
    y = video_to_tensor(pair.target, theta.dtype)
    return loss_fn(pipeline_apply(theta.entries, phi.entries, x, arch), y)


def internal_adapt(theta: ParamSet, phi: ParamSet, pair: InternalPair,
                   gamma: float, n: int, arch: ArchitectureSpec,
                   loss_fn: LossFn = mean_abs) -> InternalAdaptResult:
    """Exactly ``n`` plain gradient updates on the internal loss.

    No optimizer state is kept. A non-finite loss stops early, returning
    the last finite parameters with a warning record instead of raising.
    """
    if gamma < 0:
        raise DegradationError("gamma must be non-negative")
    if n < 0:
        raise DegradationError("step count must be non-negative")
    x = video_to_tensor(pair.input, theta.dtype)
    y = video_to_tensor(pair.target, theta.dtype)
    names = [("t", k) for k in theta.entries] + [("s", k) for k in phi.entries]
    params = [t.detach().clone().requires_grad_(True)
              for t in list(theta.entries.values()) + list(phi.entries.values())]
    losses: list[float] = []
    warning = None
    for _ in range(n):
        td = {k: p for (g, k), p in zip(names, params) if g == "t"}
        sd = {k: p for (g, k), p in zip(names, params) if g == "s"}
        loss = loss_fn(pipeline_apply(td, sd, x, arch), y)
        if not torch.isfinite(loss):
            warning = (f"internal adaptation stopped after {len(losses)} "
                       f"updates: non-finite loss")
            break
        grads = torch.autograd.grad(loss, params)
        params = [(p - gamma * g).detach().requires_grad_(True)
                  for p, g in zip(params, grads)]
        losses.append(float(loss.detach()))
    theta_out = ParamSet("tsr", {k: p.detach() for (g, k), p in zip(names, params)
                                 if g == "t"})
    phi_out = ParamSet("ssr", {k: p.detach() for (g, k), p in zip(names, params)
                               if g == "s"})
    return InternalAdaptResult(theta=theta_out, phi=phi_out, losses=losses,
                               gradient_updates=len(losses), warning=warning)


def infer(theta: ParamSet, phi: ParamSet, v_lr: Video,
          arch: ArchitectureSpec) -> Video:
    """One forward pass: (M, H, W) -> (2M-1, 4H, 4W), clamped to [0, 1]."""
    x = video_to_tensor(v_lr, theta.dtype)
    with torch.no_grad():
        out = pipeline_apply(theta.entries, phi.entries, x, arch)
    return tensor_to_video(out, clamp=True)
