"""External training: large-scale pretraining and meta-transfer learning.

Pretraining warm-starts both networks on synthetic bicubic / alternate-frame
pairs. Meta-transfer learning then repeats: sample two distinct degradation
tasks, adapt (theta, phi) to the first with a few plain gradient steps, and
update the initial parameters so the adapted model does well on the second.
The inner loop is plain SGD; the outer loop and pretraining use a functional
Adam so state can be checkpointed exactly.

Every entry point is a pure function of (inputs, config, seed); data
sampling is keyed by (seed, step) so interrupted runs resume bit-exactly.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .degrade import (BICUBIC_ALTERNATE, MetaBatch, TaskDistribution,
                      TemporalOp, VideoTriple, make_meta_batch,
                      spatial_downscale, temporal_downscale)
from .models import (ArchitectureSpec, ParamSet, init_params, save_checkpoint,
                     ssr_apply, tsr_apply, video_to_tensor)
from .video import Video, extract_patch

LossFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient becomes non-finite."""


class TrainError(ValueError):
    """Raised on invalid configs or inconsistent batches."""


@dataclass
class TrainingConfig:
    """All scalar hyperparameters of the training system.

    ``alpha_tsr``/``alpha_ssr`` are the task-specific (inner) rates,
    ``beta`` the adaptation (outer/meta) rate and ``gamma`` the internal
    learning rate used at test time.
    """

    seed: int = 0
    alpha_tsr: float = 0.01
    alpha_ssr: float = 0.01
    beta: float = 1e-4
    gamma: float = 1e-4
    inner_iters: int = 10
    internal_steps: int = 10
    batch_size: int = 32
    patch_size: int = 64
    meta_task_count: int = 4
    videos_per_task: int = 1
    pretrain_steps: int = 500
    meta_steps: int = 1000
    second_order: bool = True
    pretrain_tsr: bool = True
    pretrain_ssr: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("alpha_tsr", "alpha_ssr", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise TrainError(f"{name} must be non-negative")
        if self.inner_iters < 1:
            raise TrainError("inner_iters must be >= 1")
        if self.internal_steps < 0:
            raise TrainError("internal_steps must be >= 0")
        if self.batch_size < 1 or self.meta_task_count < 1 or self.videos_per_task < 1:
            raise TrainError("batch sizes must be positive")
        if self.patch_size % 4:
            raise TrainError("patch_size must be divisible by 4")


@dataclass
class PretrainDatasets:
    """One batch of pretraining pairs.

    ``spatial_pairs`` holds (bicubic x4 downscale, original) pairs for the
    spatial network; ``temporal_pairs`` holds (alternate frames, original)
    pairs for the temporal network.
    """

    spatial_pairs: list[tuple[Video, Video]] = field(default_factory=list)
    temporal_pairs: list[tuple[Video, Video]] = field(default_factory=list)


class TrainLog:
    """Append-only training log: step,phase,loss_inner_mean,loss_test_mean,wall_seconds."""

    COLUMNS = ("step", "phase", "loss_inner_mean", "loss_test_mean", "wall_seconds")

    def __init__(self, path: str | Path | None = None):
        self.rows: list[dict] = []
        self.path = Path(path) if path else None
        if self.path and not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(self.COLUMNS)

    def add(self, step: int, phase: str, loss_inner: float, loss_test: float,
            wall: float) -> None:
        row = {"step": step, "phase": phase, "loss_inner_mean": loss_inner,
               "loss_test_mean": loss_test, "wall_seconds": wall}
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow(
                    [step, phase, f"{loss_inner:.8g}", f"{loss_test:.8g}",
                     f"{wall:.4f}"])

    def losses(self, phase: str, column: str = "loss_inner_mean") -> list[float]:
        return [r[column] for r in self.rows if r["phase"] == phase]


def mean_abs(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean element-wise absolute error (the reconstruction loss)."""
    if pred.shape != target.shape:
        raise TrainError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).abs().mean()


def charbonnier(eps: float = 1e-3) -> LossFn:
    """Smooth absolute-error variant, used where finite differencing needs
    a kink-free objective."""
    def fn(pred, target):
        if pred.shape != target.shape:
            raise TrainError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
        return torch.sqrt((pred - target) ** 2 + eps * eps).mean() - eps
    return fn


# ---------------------------------------------------------------------------
# functional Adam


@dataclass
class AdamState:
    m: dict[str, torch.Tensor]
    v: dict[str, torch.Tensor]
    step: int = 0


def adam_init(params: dict[str, torch.Tensor]) -> AdamState:
    return AdamState(m={n: torch.zeros_like(t) for n, t in params.items()},
                     v={n: torch.zeros_like(t) for n, t in params.items()})


def adam_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8
              ) -> tuple[dict[str, torch.Tensor], AdamState]:
    """One bias-corrected adaptive-moment update; returns fresh values."""
    t = state.step + 1
    new_m, new_v, new_p = {}, {}, {}
    for n, p in params.items():
        g = grads[n]
        m = beta1 * state.m[n] + (1 - beta1) * g
        v = beta2 * state.v[n] + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_p[n] = (p - lr * m_hat / (torch.sqrt(v_hat) + eps)).detach()
        new_m[n], new_v[n] = m, v
    return new_p, AdamState(m=new_m, v=new_v, step=t)


# ---------------------------------------------------------------------------
# losses


def _stack_pairs(batch: Sequence[tuple[Video, Video]], dtype: torch.dtype):
    if not batch:
        raise TrainError("empty batch")
    shape_in = batch[0][0].pixels.shape
    shape_out = batch[0][1].pixels.shape
    for a, b in batch:
        if a.pixels.shape != shape_in or b.pixels.shape != shape_out:
            raise TrainError("pretraining batch has inconsistent shapes")
    xs = torch.stack([video_to_tensor(a, dtype) for a, _ in batch])
    ys = torch.stack([video_to_tensor(b, dtype) for _, b in batch])
    return xs, ys


def loss_ssr_pretrain(phi: ParamSet, batch: Sequence[tuple[Video, Video]],
                      arch: ArchitectureSpec) -> torch.Tensor:
    """Mean absolute reconstruction error of the spatial network over a
    batch of (x4-downscaled, original) video pairs."""
    xs, ys = _stack_pairs(batch, phi.dtype)
    b, m = xs.shape[:2]
    pred = ssr_apply(phi.entries, xs.reshape(b * m, *xs.shape[2:]), arch)
    if pred.shape != ys.reshape(b * m, *ys.shape[2:]).shape:
        raise TrainError("spatial pretraining pair is not a x4 downscale")
    return mean_abs(pred, ys.reshape_as(pred))


def loss_tsr_pretrain(theta: ParamSet, batch: Sequence[tuple[Video, Video]],
                      arch: ArchitectureSpec) -> torch.Tensor:
    """Mean absolute reconstruction error of the temporal network over a
    batch of (alternate-frame, original) video pairs."""
    xs, ys = _stack_pairs(batch, theta.dtype)
    if ys.shape[1] != 2 * xs.shape[1] - 1:
        raise TrainError(
            f"temporal target must have 2m-1 frames: {xs.shape[1]} -> {ys.shape[1]}")
    preds = torch.stack([tsr_apply(theta.entries, x, arch) for x in xs])
    return mean_abs(preds, ys)


def _triple_tensors(triple: VideoTriple, dtype: torch.dtype):
    return (video_to_tensor(triple.low, dtype), video_to_tensor(triple.mid, dtype),
            video_to_tensor(triple.high, dtype))


def _pyramid_loss(theta_d, phi_d, triples_t, arch, loss_fn: LossFn) -> torch.Tensor:
    """Two-term reconstruction loss, averaged over triples:
    loss(F(low), mid) + loss(S(F(low)), high)."""
    total = None
    for low, mid, high in triples_t:
        up_t = tsr_apply(theta_d, low, arch)
        up_s = ssr_apply(phi_d, up_t, arch)
        term = loss_fn(up_t, mid) + loss_fn(up_s, high)
        total = term if total is None else total + term
    return total / len(triples_t)


def task_loss(theta: ParamSet, phi: ParamSet, d_tr: Sequence[VideoTriple],
              arch: ArchitectureSpec, loss_fn: LossFn = mean_abs) -> torch.Tensor:
    """Task-specific training loss over train triples (V_ts, V_s, V_lr)."""
    if not d_tr:
        raise TrainError("empty train set")
    triples_t = [_triple_tensors(t, theta.dtype) for t in d_tr]
    return _pyramid_loss(theta.entries, phi.entries, triples_t, arch, loss_fn)


# ---------------------------------------------------------------------------
# inner loop


def sgd_steps(loss_fn: Callable[[Sequence[torch.Tensor]], torch.Tensor],
              params: Sequence[torch.Tensor], lrs: Sequence[float], steps: int,
              create_graph: bool = False
              ) -> tuple[list[torch.Tensor], list[float]]:
    """``steps`` plain gradient-descent updates on an arbitrary loss.

    ``loss_fn`` maps the current parameter list to a scalar; ``lrs`` gives
    one rate per parameter. With ``create_graph`` the returned parameters
    stay differentiable w.r.t. the inputs. Returns (parameters, loss trace).
    """
    params = list(params)
    trace = []
    for _ in range(steps):
        loss = loss_fn(params)
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite inner loss {loss.item()!r}")
        grads = torch.autograd.grad(loss, params, create_graph=create_graph)
        if not all(torch.isfinite(g).all() for g in grads):
            raise TrainingDiverged("non-finite inner gradient")
        params = [p - lr * g for p, lr, g in zip(params, lrs, grads)]
        if not create_graph:
            params = [p.detach().requires_grad_(True) for p in params]
        trace.append(float(loss.detach()))
    return params, trace


def _adapt_dicts(theta_d, phi_d, triples_t, alphas, n_i, arch, create_graph,
                 loss_fn):
    names = [("t", n) for n in theta_d] + [("s", n) for n in phi_d]
    flat = list(theta_d.values()) + list(phi_d.values())
    lrs = [alphas[0]] * len(theta_d) + [alphas[1]] * len(phi_d)

    def objective(ps):
        td = {n: p for (g, n), p in zip(names, ps) if g == "t"}
        sd = {n: p for (g, n), p in zip(names, ps) if g == "s"}
        return _pyramid_loss(td, sd, triples_t, arch, loss_fn)

    flat, trace = sgd_steps(objective, flat, lrs, n_i, create_graph)
    theta_out = {n: p for (g, n), p in zip(names, flat) if g == "t"}
    phi_out = {n: p for (g, n), p in zip(names, flat) if g == "s"}
    return theta_out, phi_out, trace


def _as_alphas(alpha) -> tuple[float, float]:
    if isinstance(alpha, (tuple, list)):
        return float(alpha[0]), float(alpha[1])
    return float(alpha), float(alpha)


def inner_adapt(theta: ParamSet, phi: ParamSet, d_tr: Sequence[VideoTriple],
                alpha, n_i: int, arch: ArchitectureSpec,
                second_order: bool = False, loss_fn: LossFn = mean_abs
                ) -> tuple[ParamSet, ParamSet]:
    """Task-specific adaptation: ``n_i`` plain gradient steps on task_loss.

    ``alpha`` is a single rate or a (temporal, spatial) pair.
    """
    alphas = _as_alphas(alpha)
    triples_t = [_triple_tensors(t, theta.dtype) for t in d_tr]
    theta_d = {n: t.detach().clone().requires_grad_(True)
               for n, t in theta.entries.items()}
    phi_d = {n: t.detach().clone().requires_grad_(True)
             for n, t in phi.entries.items()}
    theta_d, phi_d, _ = _adapt_dicts(theta_d, phi_d, triples_t, alphas, n_i,
                                     arch, second_order, loss_fn)
    return (ParamSet("tsr", {n: t.detach() for n, t in theta_d.items()}),
            ParamSet("ssr", {n: t.detach() for n, t in phi_d.items()}))


# ---------------------------------------------------------------------------
# outer loop


@dataclass
class MetaStepResult:
    theta: ParamSet
    phi: ParamSet
    adam_state: AdamState
    inner_loss_mean: float
    test_loss_mean: float


def meta_step(theta: ParamSet, phi: ParamSet, batches: Sequence[MetaBatch],
              alpha, beta: float, arch: ArchitectureSpec, n_i: int = 10,
              second_order: bool = True, adam_state: AdamState | None = None,
              loss_fn: LossFn = mean_abs) -> MetaStepResult:
    """One blind-task-adaptation update.

    For every meta-batch the current parameters are adapted to its train
    task, the two-term test loss is evaluated at the adapted parameters,
    and (theta, phi) take one adaptive-moment step on the summed test
    loss. With ``second_order`` the gradient flows through the inner
    updates; otherwise the inner Jacobian is treated as identity and
    gradients are evaluated at the adapted parameters.
    """
    if not batches:
        raise TrainError("meta_step needs at least one meta-batch")
    alphas = _as_alphas(alpha)
    dtype = theta.dtype
    leaves = {f"tsr/{n}": t.detach().clone().requires_grad_(True)
              for n, t in theta.entries.items()}
    leaves.update({f"ssr/{n}": t.detach().clone().requires_grad_(True)
                   for n, t in phi.entries.items()})
    theta_d = {n: leaves[f"tsr/{n}"] for n in theta.entries}
    phi_d = {n: leaves[f"ssr/{n}"] for n in phi.entries}

    inner_losses, test_losses = [], []
    meta_grads = {n: torch.zeros_like(t) for n, t in leaves.items()}
    total_test = None
    for mb in batches:
        train_t = [_triple_tensors(t, dtype) for t in mb.train_set]
        test_t = [_triple_tensors(t, dtype) for t in mb.test_set]
        theta_i, phi_i, trace = _adapt_dicts(
            theta_d, phi_d, train_t, alphas, n_i, arch, second_order, loss_fn)
        test_loss = _pyramid_loss(theta_i, phi_i, test_t, arch, loss_fn)
        if not torch.isfinite(test_loss):
            raise TrainingDiverged(
                f"non-finite test loss on task {mb.task_train}")
        inner_losses.append(trace[-1])
        test_losses.append(float(test_loss.detach()))
        if second_order:
            total_test = test_loss if total_test is None else total_test + test_loss
        else:
            adapted = list(theta_i.values()) + list(phi_i.values())
            grads = torch.autograd.grad(test_loss, adapted)
            keys = ([f"tsr/{n}" for n in theta_i] + [f"ssr/{n}" for n in phi_i])
            for k, g in zip(keys, grads):
                meta_grads[k] = meta_grads[k] + g

    if second_order:
        grads = torch.autograd.grad(total_test, list(leaves.values()))
        meta_grads = dict(zip(leaves.keys(), grads))
    for n, g in meta_grads.items():
        if not torch.isfinite(g).all():
            raise TrainingDiverged(f"non-finite meta-gradient for {n}")

    state = adam_state if adam_state is not None else adam_init(leaves)
    values = {n: t.detach() for n, t in leaves.items()}
    new_values, state = adam_step(values, meta_grads, state, beta)
    new_theta = ParamSet("tsr", {n: new_values[f"tsr/{n}"] for n in theta.entries})
    new_phi = ParamSet("ssr", {n: new_values[f"ssr/{n}"] for n in phi.entries})
    return MetaStepResult(theta=new_theta, phi=new_phi, adam_state=state,
                          inner_loss_mean=float(np.mean(inner_losses)),
                          test_loss_mean=float(np.mean(test_losses)))


# ---------------------------------------------------------------------------
# data sampling and the two training drivers


def _rng(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed,) + tuple(key)))


def _trim_odd(v: Video) -> Video:
    return v if v.frame_count % 2 else Video(v.pixels[:-1].copy())


def make_pretrain_batch(videos: Sequence[Video], config: TrainingConfig,
                        step: int) -> PretrainDatasets:
    """Sample one pretraining batch of patch pairs (pure in seed and step).

    At most 8 patches are drawn per source video so a batch touches only
    a handful of videos; pairs follow the fixed synthetic recipes
    (bicubic x4 for the spatial net, alternate frames for the temporal
    net).
    """
    rng = _rng(config.seed, 0x9E1, step)
    per_video = min(config.batch_size, 8)
    n_videos = math.ceil(config.batch_size / per_video)
    ds = PretrainDatasets()
    for _ in range(n_videos):
        v = videos[int(rng.integers(0, len(videos)))]
        if v.height < config.patch_size or v.width < config.patch_size:
            raise TrainError(
                f"video {v.height}x{v.width} smaller than patch "
                f"{config.patch_size}")
        for _ in range(per_video):
            if len(ds.spatial_pairs) >= config.batch_size:
                break
            top = int(rng.integers(0, v.height - config.patch_size + 1))
            left = int(rng.integers(0, v.width - config.patch_size + 1))
            patch = extract_patch(v, top, left, config.patch_size)
            down = spatial_downscale(patch, BICUBIC_ALTERNATE)
            ds.spatial_pairs.append((down, patch))
            hfr = _trim_odd(patch)
            lfr = temporal_downscale(hfr, TemporalOp("alternate"))
            ds.temporal_pairs.append((lfr, hfr))
    return ds


def pretrain(videos: Sequence[Video], config: TrainingConfig,
             arch: ArchitectureSpec = ArchitectureSpec(),
             log: TrainLog | None = None) -> tuple[ParamSet, ParamSet]:
    """Large-scale warm start for both networks (Adam on the synthetic
    pretraining pairs). Modules can be excluded via the config's
    ``pretrain_tsr`` / ``pretrain_ssr`` flags; excluded modules keep their
    random initialization."""
    theta, phi = init_params(arch, config.seed)
    if config.pretrain_steps == 0 or not videos:
        return theta, phi
    state_t = adam_init(theta.entries)
    state_s = adam_init(phi.entries)
    t0 = time.perf_counter()
    for step in range(config.pretrain_steps):
        batch = make_pretrain_batch(videos, config, step)
        loss_s_val = loss_t_val = float("nan")
        if config.pretrain_ssr:
            leaves = {n: t.detach().clone().requires_grad_(True)
                      for n, t in phi.entries.items()}
            loss_s = loss_ssr_pretrain(ParamSet("ssr", leaves),
                                       batch.spatial_pairs, arch)
            if not torch.isfinite(loss_s):
                raise TrainingDiverged(f"spatial pretrain loss at step {step}")
            grads = torch.autograd.grad(loss_s, list(leaves.values()))
            new_vals, state_s = adam_step(
                {n: t.detach() for n, t in leaves.items()},
                dict(zip(leaves.keys(), grads)), state_s, config.beta)
            phi = ParamSet("ssr", new_vals)
            loss_s_val = float(loss_s.detach())
        if config.pretrain_tsr:
            leaves = {n: t.detach().clone().requires_grad_(True)
                      for n, t in theta.entries.items()}
            loss_t = loss_tsr_pretrain(ParamSet("tsr", leaves),
                                       batch.temporal_pairs, arch)
            if not torch.isfinite(loss_t):
                raise TrainingDiverged(f"temporal pretrain loss at step {step}")
            grads = torch.autograd.grad(loss_t, list(leaves.values()))
            new_vals, state_t = adam_step(
                {n: t.detach() for n, t in leaves.items()},
                dict(zip(leaves.keys(), grads)), state_t, config.beta)
            theta = ParamSet("tsr", new_vals)
            loss_t_val = float(loss_t.detach())
        if log is not None:
            log.add(step, "pretrain", loss_s_val, loss_t_val,
                    time.perf_counter() - t0)
    return theta, phi


def meta_train(videos: Sequence[Video], dist: TaskDistribution,
               config: TrainingConfig, theta0: ParamSet, phi0: ParamSet,
               arch: ArchitectureSpec = ArchitectureSpec(),
               log: TrainLog | None = None,
               checkpoint_dir: str | Path | None = None,
               config_hash: str = "", start_step: int = 0,
               adam_state: AdamState | None = None
               ) -> tuple[ParamSet, ParamSet]:
    """Meta-transfer learning (sample tasks -> inner adapt -> outer update).

    ``start_step``/``adam_state`` continue an interrupted run; because
    sampling is keyed by (seed, step), a resumed run is bit-identical to
    an uninterrupted one.
    """
    theta, phi = theta0, phi0
    state = adam_state
    t0 = time.perf_counter()
    for step in range(start_step, config.meta_steps):
        rng = _rng(config.seed, 0x9E2, step)
        batches = []
        for k in range(config.meta_task_count):
            picks = [videos[int(i)] for i in
                     rng.integers(0, len(videos), size=config.videos_per_task)]
            batches.append(make_meta_batch(
                picks, dist, draw_index=step * config.meta_task_count + k,
                test_crop=config.patch_size))
        result = meta_step(theta, phi, batches,
                           (config.alpha_tsr, config.alpha_ssr), config.beta,
                           arch, n_i=config.inner_iters,
                           second_order=config.second_order, adam_state=state)
        theta, phi, state = result.theta, result.phi, result.adam_state
        if log is not None:
            log.add(step, "meta", result.inner_loss_mean, result.test_loss_mean,
                    time.perf_counter() - t0)
        if (checkpoint_dir and config.checkpoint_every
                and (step + 1) % config.checkpoint_every == 0):
            save_meta_checkpoint(Path(checkpoint_dir) / f"step_{step + 1:06d}.ckpt",
                                 theta, phi, arch, state, step + 1, config_hash)
    return theta, phi


def save_meta_checkpoint(path: str | Path, theta: ParamSet, phi: ParamSet,
                         arch: ArchitectureSpec, state: AdamState | None,
                         step: int, config_hash: str = "") -> None:
    """Checkpoint including optimizer moments, for exact resumption."""
    opt = {}
    if state is not None:
        for n, t in state.m.items():
            opt[f"m/{n}"] = t
        for n, t in state.v.items():
            opt[f"v/{n}"] = t
    extra = {"step": step, "adam_step": state.step if state else 0}
    save_checkpoint(path, theta, phi, arch, config_hash=config_hash,
                    extra=extra, opt=opt)


def adam_state_from_checkpoint(opt: dict[str, torch.Tensor],
                               adam_step_count: int) -> AdamState | None:
    """Rebuild optimizer state saved by save_meta_checkpoint."""
    if not opt:
        return None
    m = {n[2:]: t for n, t in opt.items() if n.startswith("m/")}
    v = {n[2:]: t for n, t in opt.items() if n.startswith("v/")}
    return AdamState(m=m, v=v, step=adam_step_count)
