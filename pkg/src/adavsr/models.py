"""Temporal and spatial super-resolution networks with explicit parameters.

Both networks are residual CNNs over analytic baselines so that freshly
initialized models already compute a sensible interpolation:

* the temporal network doubles the frame rate (m -> 2m-1): even outputs
  pass the inputs through, odd outputs add a learned residual to the
  cubic temporal midpoint of the two flanking frames;
* the spatial network upscales x4: a learned residual (conv trunk plus
  two x2 sub-pixel stages) is added to the cubic x4 upscale.

Parameters are explicit call arguments (plain tensor dicts) rather than
module state, so adapted parameters stay differentiable w.r.t. the
parameters they were derived from.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .resample import midpoint_taps, resample_taps
from .video import Video

MAGIC = "ADAVSR-CKPT 1"


class ModelError(ValueError):
    """Raised on invalid architecture specs, parameter sets or checkpoints."""


@dataclass(frozen=True)
class ArchitectureSpec:
    """Channel widths, depths and nonlinearity for both networks.

    ``tsr_depth`` counts conv layers including the zero-initialized
    output layer (minimum 2); ``ssr_depth`` counts trunk convs between
    the head and the two fixed sub-pixel upsampling stages.
    """

    channels: int = 1
    tsr_width: int = 16
    tsr_depth: int = 3
    ssr_width: int = 16
    ssr_depth: int = 2
    nonlinearity: str = "relu"

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ModelError(f"channels must be 1 or 3, got {self.channels}")
        if self.tsr_depth < 2 or self.ssr_depth < 0:
            raise ModelError("tsr_depth >= 2 and ssr_depth >= 0 required")
        if min(self.tsr_width, self.ssr_width) < 1:
            raise ModelError("layer widths must be positive")
        if self.nonlinearity not in ("relu", "softplus"):
            raise ModelError(f"unknown nonlinearity {self.nonlinearity!r}")

    def tsr_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        c, w = self.channels, self.tsr_width
        widths = [2 * c] + [w] * (self.tsr_depth - 1) + [c]
        shapes = []
        for i, (cin, cout) in enumerate(zip(widths[:-1], widths[1:])):
            shapes.append((f"conv{i}.weight", (cout, cin, 3, 3)))
            shapes.append((f"conv{i}.bias", (cout,)))
        return shapes

    def ssr_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        c, w = self.channels, self.ssr_width
        shapes = [("head.weight", (w, c, 3, 3)), ("head.bias", (w,))]
        for i in range(self.ssr_depth):
            shapes.append((f"trunk{i}.weight", (w, w, 3, 3)))
            shapes.append((f"trunk{i}.bias", (w,)))
        for name in ("up0", "up1"):
            shapes.append((f"{name}.weight", (4 * w, w, 3, 3)))
            shapes.append((f"{name}.bias", (4 * w,)))
        shapes.append(("out.weight", (c, w, 3, 3)))
        shapes.append(("out.bias", (c,)))
        return shapes

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.tsr_shapes() + self.ssr_shapes())


@dataclass
class ParamSet:
    """Named, ordered parameter tensors for one network.

    ``role`` is 'tsr' or 'ssr'. Updates build new ParamSets; tensors are
    treated as immutable values.
    """

    role: str
    entries: dict[str, torch.Tensor]

    def __post_init__(self):
        if self.role not in ("tsr", "ssr"):
            raise ModelError(f"role must be 'tsr' or 'ssr', got {self.role!r}")
        for name, t in self.entries.items():
            if not torch.isfinite(t).all():
                raise ModelError(f"non-finite values in parameter {name!r}")

    def names(self) -> list[str]:
        return list(self.entries)

    def tensors(self) -> list[torch.Tensor]:
        return list(self.entries.values())

    @property
    def dtype(self) -> torch.dtype:
        return next(iter(self.entries.values())).dtype

    def param_count(self) -> int:
        return sum(t.numel() for t in self.entries.values())

    def with_entries(self, entries: dict[str, torch.Tensor]) -> "ParamSet":
        if list(entries) != self.names():
            raise ModelError("replacement entries must keep names and order")
        return ParamSet(self.role, dict(entries))

    def detached(self, requires_grad: bool = False) -> "ParamSet":
        return ParamSet(self.role, {
            n: t.detach().clone().requires_grad_(requires_grad)
            for n, t in self.entries.items()})

    def to_dtype(self, dtype: torch.dtype) -> "ParamSet":
        return ParamSet(self.role, {n: t.detach().to(dtype)
                                    for n, t in self.entries.items()})

    def allclose(self, other: "ParamSet", tol: float = 0.0) -> bool:
        return (self.names() == other.names() and all(
            torch.allclose(a, b, rtol=0.0, atol=tol)
            for a, b in zip(self.tensors(), other.tensors())))


def init_params(arch: ArchitectureSpec, seed: int,
                dtype: torch.dtype = torch.float32) -> tuple[ParamSet, ParamSet]:
    """Deterministic fan-in-scaled uniform initialization.

    Weights draw from U(-b, b) with b = sqrt(6 / fan_in); biases start at
    zero. The final conv of each network is zeroed so the untrained
    networks reproduce their analytic baselines exactly.
    """
    root = np.random.SeedSequence((seed, 0x1317))
    out = []
    for role, shapes in (("tsr", arch.tsr_shapes()), ("ssr", arch.ssr_shapes())):
        last_weight = shapes[-2][0]
        entries = {}
        children = root.spawn(len(shapes))
        for (name, shape), ss in zip(shapes, children):
            if name.endswith(".bias") or name in (last_weight,):
                arr = np.zeros(shape, dtype=np.float64)
            else:
                fan_in = int(np.prod(shape[1:]))
                bound = np.sqrt(6.0 / fan_in)
                rng = np.random.default_rng(ss)
                arr = rng.uniform(-bound, bound, size=shape)
            entries[name] = torch.as_tensor(arr).to(dtype)
        out.append(ParamSet(role, entries))
        root = root.spawn(1)[0]
    return out[0], out[1]


def _act(x: torch.Tensor, kind: str) -> torch.Tensor:
    if kind == "relu":
        return F.relu(x)
    return F.softplus(x)


@lru_cache(maxsize=64)
def _tap_arrays(in_size: int, out_size: int) -> tuple[np.ndarray, np.ndarray]:
    idx, w = resample_taps(in_size, out_size, antialias=out_size < in_size)
    return np.ascontiguousarray(idx), np.ascontiguousarray(w)


def _cubic_upscale4(x: torch.Tensor) -> torch.Tensor:
    """Differentiable cubic x4 upscale of (N, C, H, W) tensors."""
    for axis in (-2, -1):
        size = x.shape[axis]
        idx_np, w_np = _tap_arrays(size, 4 * size)
        idx = torch.as_tensor(idx_np)
        w = torch.as_tensor(w_np, dtype=x.dtype)
        moved = x.movedim(axis, -1)
        gathered = moved[..., idx]                      # (..., out, taps)
        out = (gathered * w).sum(dim=-1)
        x = out.movedim(-1, axis)
    return x


def _temporal_midpoints(x: torch.Tensor) -> torch.Tensor:
    """Cubic midpoints between consecutive frames of (m, C, H, W)."""
    idx_np, w_np = midpoint_taps(x.shape[0])
    idx = torch.as_tensor(np.ascontiguousarray(idx_np))
    w = torch.as_tensor(w_np, dtype=x.dtype)
    return (x[idx] * w.view(1, 4, 1, 1, 1)).sum(dim=1)


def _conv(x, params, name):
    return F.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], padding=1)


def tsr_apply(params: dict[str, torch.Tensor], x: torch.Tensor,
              arch: ArchitectureSpec) -> torch.Tensor:
    """Temporal x2 forward on an (m, C, H, W) tensor -> (2m-1, C, H, W)."""
    m = x.shape[0]
    if m < 2:
        raise ModelError(f"temporal upscaling needs >= 2 frames, got {m}")
    baseline = _temporal_midpoints(x)
    h = torch.cat([x[:-1], x[1:]], dim=1)  # flanking-frame pairs
    for i in range(arch.tsr_depth - 1):
        h = _act(_conv(h, params, f"conv{i}"), arch.nonlinearity)
    residual = _conv(h, params, f"conv{arch.tsr_depth - 1}")
    mids = baseline + residual
    woven = torch.stack([x[:-1], mids], dim=1).reshape(2 * (m - 1), *x.shape[1:])
    return torch.cat([woven, x[-1:]], dim=0)


def ssr_apply(params: dict[str, torch.Tensor], x: torch.Tensor,
              arch: ArchitectureSpec) -> torch.Tensor:
    """Spatial x4 forward on an (N, C, H, W) tensor -> (N, C, 4H, 4W)."""
    baseline = _cubic_upscale4(x)
    h = _act(_conv(x, params, "head"), arch.nonlinearity)
    for i in range(arch.ssr_depth):
        h = _act(_conv(h, params, f"trunk{i}"), arch.nonlinearity)
    for name in ("up0", "up1"):
        h = _act(F.pixel_shuffle(_conv(h, params, name), 2), arch.nonlinearity)
    return baseline + _conv(h, params, "out")


def pipeline_apply(theta: dict[str, torch.Tensor], phi: dict[str, torch.Tensor],
                   x: torch.Tensor, arch: ArchitectureSpec) -> torch.Tensor:
    """Temporal then spatial forward: (m, C, H, W) -> (2m-1, C, 4H, 4W)."""
    return ssr_apply(phi, tsr_apply(theta, x, arch), arch)


def video_to_tensor(v: Video, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(M, H, W, C) unit-range video -> (M, C, H, W) tensor."""
    return torch.as_tensor(v.pixels).permute(0, 3, 1, 2).contiguous().to(dtype)


def tensor_to_video(t: torch.Tensor, clamp: bool = False) -> Video:
    arr = t.detach().permute(0, 2, 3, 1).to(torch.float64).numpy()
    if clamp:
        arr = np.clip(arr, 0.0, 1.0)
    return Video(arr)


def tsr_forward(theta: ParamSet, v: Video, arch: ArchitectureSpec,
                clamp: bool = False) -> Video:
    """Temporal x2 super-resolution of a video (2m-1 output frames)."""
    out = tsr_apply(theta.entries, video_to_tensor(v, theta.dtype), arch)
    return tensor_to_video(out, clamp)


def ssr_forward(phi: ParamSet, v: Video, arch: ArchitectureSpec,
                clamp: bool = False) -> Video:
    """Spatial x4 super-resolution of a video."""
    out = ssr_apply(phi.entries, video_to_tensor(v, phi.dtype), arch)
    return tensor_to_video(out, clamp)


def forward_pipeline(theta: ParamSet, phi: ParamSet, v: Video,
                     arch: ArchitectureSpec, clamp: bool = False) -> Video:
    """Joint x2 temporal / x4 spatial super-resolution."""
    x = video_to_tensor(v, theta.dtype)
    return tensor_to_video(pipeline_apply(theta.entries, phi.entries, x, arch), clamp)


@dataclass
class Checkpoint:
    theta: ParamSet
    phi: ParamSet
    arch: ArchitectureSpec
    config_hash: str
    extra: dict
    opt: dict[str, torch.Tensor]


def _validate_shapes(ps: ParamSet, shapes: list[tuple[str, tuple[int, ...]]]):
    expected = {n: s for n, s in shapes}
    if list(ps.entries) != [n for n, _ in shapes]:
        raise ModelError(f"{ps.role} parameter names do not match architecture")
    for n, t in ps.entries.items():
        if tuple(t.shape) != expected[n]:
            raise ModelError(
                f"{ps.role}/{n} has shape {tuple(t.shape)}, expected {expected[n]}")


def save_checkpoint(path: str | Path, theta: ParamSet, phi: ParamSet,
                    arch: ArchitectureSpec, config_hash: str = "",
                    extra: dict | None = None,
                    opt: dict[str, torch.Tensor] | None = None) -> None:
    """Write a single-file checkpoint: textual manifest + raw float32 payload.

    The manifest lists (name, shape, offset) per entry in payload order,
    plus the architecture spec and a config hash. Round-trips are
    bit-exact, which requires float32 parameters.
    """
    _validate_shapes(theta, arch.tsr_shapes())
    _validate_shapes(phi, arch.ssr_shapes())
    named = ([(f"tsr/{n}", t) for n, t in theta.entries.items()]
             + [(f"ssr/{n}", t) for n, t in phi.entries.items()]
             + [(f"opt/{n}", t) for n, t in (opt or {}).items()])
    entries, blobs, offset = [], [], 0
    for name, t in named:
        if t.dtype != torch.float32:
            raise ModelError(
                f"checkpoints store 32-bit reals; {name} is {t.dtype}")
        raw = t.detach().numpy().astype("<f4").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "arch": asdict(arch),
        "config_hash": config_hash,
        "extra": extra or {},
        "entries": entries,
    }
    payload = (MAGIC + "\n" + json.dumps(manifest, sort_keys=True) + "\n\0").encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload + b"".join(blobs))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read a checkpoint written by save_checkpoint."""
    data = Path(path).read_bytes()
    sep = data.find(b"\0")
    if sep < 0:
        raise ModelError(f"not a checkpoint file: {path}")
    header = data[:sep].decode()
    first, _, manifest_text = header.partition("\n")
    if first != MAGIC:
        raise ModelError(f"bad checkpoint magic in {path}: {first!r}")
    manifest = json.loads(manifest_text)
    payload = data[sep + 1:]
    arch = ArchitectureSpec(**manifest["arch"])
    groups: dict[str, dict[str, torch.Tensor]] = {"tsr": {}, "ssr": {}, "opt": {}}
    for ent in manifest["entries"]:
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = ent["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        tensor = torch.as_tensor(arr.reshape(shape).copy())
        prefix, _, name = ent["name"].partition("/")
        if prefix not in groups:
            raise ModelError(f"unknown entry prefix {prefix!r} in {path}")
        groups[prefix][name] = tensor
    theta = ParamSet("tsr", groups["tsr"])
    phi = ParamSet("ssr", groups["ssr"])
    _validate_shapes(theta, arch.tsr_shapes())
    _validate_shapes(phi, arch.ssr_shapes())
    return Checkpoint(theta=theta, phi=phi, arch=arch,
                      config_hash=manifest["config_hash"],
                      extra=manifest["extra"], opt=groups["opt"])


def config_text_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()
