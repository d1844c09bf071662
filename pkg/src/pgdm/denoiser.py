"""Conditional score network: architecture, training loop, checkpoints.

The network is a U-Net style encoder/decoder without self-attention.  It
consumes a channel stack [noisy field, upsampled coarse field, source] and
an integer noise step t, injected at every residual block as a learned
additive bias computed from a sinusoidal embedding.  Spatio-temporal
samples fold their time axis into channels, so one 2D convolution core
serves every planar problem; volumetric problems use 3D convolutions.

Grids whose node count per axis is one short of a multiple of the
downsampling factor (zero-boundary interiors) are zero-padded with a single
low-edge layer per axis on the way in and cropped on the way out.

Set PGDM_DETERMINISTIC=1 to force single-threaded deterministic execution;
training randomness always comes from a counter-based numpy generator keyed
by the config seed, so seeded runs reproduce bitwise on one machine.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .diffusion import NoiseSchedule
from .errors import FieldFormatError, TrainingError
from .fields import Field

_MAGIC = b"PGDMCKPT"
_FORMAT_VERSION = 1


def _apply_determinism():
    if os.environ.get("PGDM_DETERMINISTIC") == "1":
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


@dataclass(frozen=True)
class DenoiserArch:
    """Architecture descriptor; fully determines the parameter layout.

    ``input_channels`` counts the stacked conditioning: noisy field and
    coarse field contribute the same channel count, the source one more, so
    it is always odd and the output has ``(input_channels - 1) // 2``.
    """

    input_channels: int
    spatial_dim: int = 2
    base_channels: int = 128
    channel_multipliers: tuple = (1, 2, 4, 8)
    middle_channels: tuple = (512, 512)

    def __post_init__(self):
        if self.input_channels < 3 or self.input_channels % 2 == 0:
            raise ValueError("input_channels must be odd and >= 3")
        if self.spatial_dim not in (2, 3):
            raise ValueError("spatial_dim must be 2 or 3")
        if self.base_channels < 1:
            raise ValueError("base_channels must be positive")
        mults = tuple(int(m) for m in self.channel_multipliers)
        mids = tuple(int(m) for m in self.middle_channels)
        if not mults or any(m < 1 for m in mults):
            raise ValueError("channel_multipliers must be positive and non-empty")
        if any(m < 1 for m in mids):
            raise ValueError("middle_channels must be positive")
        object.__setattr__(self, "channel_multipliers", mults)
        object.__setattr__(self, "middle_channels", mids)

    @property
    def output_channels(self) -> int:
        return (self.input_channels - 1) // 2

    @property
    def downsample_factor(self) -> int:
        return 2 ** (len(self.channel_multipliers) - 1)

    def to_dict(self) -> dict:
        return {
            "input_channels": self.input_channels,
            "spatial_dim": self.spatial_dim,
            "base_channels": self.base_channels,
            "channel_multipliers": list(self.channel_multipliers),
            "middle_channels": list(self.middle_channels),
        }

    @staticmethod
    def from_dict(d: dict) -> "DenoiserArch":
        return DenoiserArch(
            input_channels=int(d["input_channels"]),
            spatial_dim=int(d["spatial_dim"]),
            base_channels=int(d["base_channels"]),
            channel_multipliers=tuple(d["channel_multipliers"]),
            middle_channels=tuple(d["middle_channels"]),
        )


def _group_norm(channels):
    return nn.GroupNorm(math.gcd(8, channels), channels)


def _sinusoidal_embedding(t, dim, dtype):
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0)
        * torch.arange(half, dtype=dtype) / max(half - 1, 1))
    angles = t.to(dtype)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)


class _ResBlock(nn.Module):
    def __init__(self, conv_cls, c_in, c_out, embed_dim):
        super().__init__()
        self.norm1 = _group_norm(c_in)
        self.conv1 = conv_cls(c_in, c_out, 3, padding=1)
        self.embed = nn.Linear(embed_dim, c_out)
        self.norm2 = _group_norm(c_out)
        self.conv2 = conv_cls(c_out, c_out, 3, padding=1)
        self.skip = conv_cls(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        bias = self.embed(emb)
        h = h + bias.reshape(bias.shape + (1,) * (x.ndim - 2))
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class _UNet(nn.Module):
    def __init__(self, arch: DenoiserArch):
        super().__init__()
        conv_cls = nn.Conv2d if arch.spatial_dim == 2 else nn.Conv3d
        self.embed_dim = 2 * arch.base_channels
        levels = [arch.base_channels * m for m in arch.channel_multipliers]
        self.stem = conv_cls(arch.input_channels, levels[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.down_samplers = nn.ModuleList()
        ch = levels[0]
        for i, c in enumerate(levels):
            self.down_blocks.append(_ResBlock(conv_cls, ch, c, self.embed_dim))
            ch = c
            if i < len(levels) - 1:
                self.down_samplers.append(conv_cls(ch, ch, 3, stride=2, padding=1))

        self.middle_blocks = nn.ModuleList()
        for c in arch.middle_channels:
            self.middle_blocks.append(_ResBlock(conv_cls, ch, c, self.embed_dim))
            ch = c

        self.up_convs = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        for i in range(len(levels) - 2, -1, -1):
            self.up_convs.append(conv_cls(ch, ch, 3, padding=1))
            self.up_blocks.append(
                _ResBlock(conv_cls, ch + levels[i], levels[i], self.embed_dim))
            ch = levels[i]

        self.out_norm = _group_norm(ch)
        self.out_conv = conv_cls(ch, arch.output_channels, 3, padding=1)

    def forward(self, x, t):
        emb = _sinusoidal_embedding(t, self.embed_dim, self.stem.weight.dtype)
        x = self.stem(x)
        skips = []
        for i, block in enumerate(self.down_blocks):
            x = block(x, emb)
            if i < len(self.down_blocks) - 1:
                skips.append(x)
                x = self.down_samplers[i](x)
        for block in self.middle_blocks:
            x = block(x, emb)
        for conv, block in zip(self.up_convs, self.up_blocks):
            x = conv(F.interpolate(x, scale_factor=2, mode="nearest"))
            x = block(torch.cat([x, skips.pop()], dim=1), emb)
        return self.out_conv(F.silu(self.out_norm(x)))


class DenoiserModel:
    """A score network bound to its noise schedule.

    Instances are callable with the sampler protocol
    ``model(u_noisy, u_cond, source, t)`` on channels-first numpy arrays
    and return an array shaped like ``u_noisy``.
    """

    def __init__(self, arch: DenoiserArch, schedule: NoiseSchedule,
                 network=None, metadata=None, init_seed=0):
        self.arch = arch
        self.schedule = schedule
        self.metadata = dict(metadata) if metadata else {}
        if network is None:
            with torch.random.fork_rng():
                torch.manual_seed(init_seed)
                network = _UNet(arch)
        self.network = network

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.network.parameters())

    def parameters_vector(self) -> np.ndarray:
        with torch.no_grad():
            flat = torch.cat([p.reshape(-1) for p in self.network.parameters()])
        return flat.cpu().numpy().astype(np.float32)

    def load_parameters_vector(self, vec):
        vec = np.asarray(vec, dtype=np.float32)
        if vec.ndim != 1 or vec.size != self.parameter_count:
            raise FieldFormatError(
                f"parameter vector has {vec.size} entries, "
                f"architecture needs {self.parameter_count}")
        offset = 0
        with torch.no_grad():
            for p in self.network.parameters():
                n = p.numel()
                chunk = torch.from_numpy(vec[offset:offset + n].copy())
                p.copy_(chunk.reshape(p.shape).to(p.dtype))
                offset += n

    def zero_parameters(self):
        with torch.no_grad():
            for p in self.network.parameters():
                p.zero_()

    def _pad_amounts(self, spatial_shape):
        factor = self.arch.downsample_factor
        pads = []
        for size in spatial_shape:
            if size % factor == 0:
                pads.append(0)
            elif (size + 1) % factor == 0:
                pads.append(1)
            else:
                raise ValueError(
                    f"spatial size {size} is not within one of a multiple of "
                    f"the downsampling factor {factor}")
        return tuple(pads)

    def __call__(self, u_noisy, u_cond, source, t):
        _apply_determinism()
        stack = np.concatenate([
            np.asarray(u_noisy, dtype=np.float64),
            np.asarray(u_cond, dtype=np.float64),
            np.asarray(source, dtype=np.float64)], axis=0)
        if stack.shape[0] != self.arch.input_channels:
            raise ValueError(
                f"stacked inputs have {stack.shape[0]} channels, "
                f"architecture expects {self.arch.input_channels}")
        if stack.ndim - 1 != self.arch.spatial_dim:
            raise ValueError(
                f"inputs are {stack.ndim - 1}D, architecture is "
                f"{self.arch.spatial_dim}D")
        if not 1 <= t <= self.schedule.steps:
            raise ValueError(f"t must be in 1..{self.schedule.steps}, got {t}")
        pads = self._pad_amounts(stack.shape[1:])
        stack = np.pad(stack, ((0, 0),) + tuple((p, 0) for p in pads))
        dtype = next(self.network.parameters()).dtype
        with torch.no_grad():
            x = torch.from_numpy(stack[None]).to(dtype)
            out = self.network(x, torch.tensor([float(t)]))[0]
        out = out.cpu().numpy().astype(np.float64)
        crop = tuple(slice(p, None) for p in pads)
        return out[(slice(None),) + crop]


def build_denoiser(arch: DenoiserArch, schedule: NoiseSchedule,
                   init_seed: int = 0, metadata=None) -> DenoiserModel:
    _apply_determinism()
    return DenoiserModel(arch, schedule, metadata=metadata, init_seed=init_seed)


def denoiser_forward(model: DenoiserModel, u_noisy: Field, u_c_up: Field,
                     a: Field, t: int) -> Field:
    """Field-level evaluation; trajectories map their time axis to channels."""
    if u_noisy.grid != u_c_up.grid:
        raise ValueError("noisy and coarse fields must share a grid")

    def channels(f: Field):
        return f.values if f.grid.time_steps else f.values[None]

    out = model(channels(u_noisy), channels(u_c_up), a.values[None], t)
    if not u_noisy.grid.time_steps:
        out = out[0]
    return Field(u_noisy.grid, out)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.  The decay rule is a staircase: every
    ``decay_every`` steps the rate drops by ``decay_rate``, linearly from
    the initial rate by default or multiplicatively when selected."""

    batch_size: int = 2
    total_steps: int = 10000
    lr0: float = 2e-4
    decay_every: int = 5000
    decay_rate: float = 0.05
    decay_mode: str = "linear"
    time_per_element: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.decay_every < 1:
            raise ValueError("decay_every must be >= 1")
        if not 0.0 <= self.decay_rate < 1.0:
            raise ValueError("decay_rate must be in [0, 1)")
        if self.decay_mode not in ("linear", "multiplicative"):
            raise ValueError("decay_mode must be 'linear' or 'multiplicative'")


def learning_rate(step: int, config: TrainConfig) -> float:
    n = step // config.decay_every
    if config.decay_mode == "linear":
        return config.lr0 * max(0.0, 1.0 - config.decay_rate * n)
    return config.lr0 * (1.0 - config.decay_rate) ** n


def train(dataset, model: DenoiserModel, diffusion, config: TrainConfig,
          callback=None):
    """Optimize the score objective over ``dataset``.

    ``dataset`` is a sequence of triples (fine field, upsampled coarse
    field, source) as channels-first arrays of a common shape.  Each step
    draws a batch with replacement, a noise level (one per batch by
    default), and fresh Gaussian noise, then descends the batch-mean of
    the per-sample squared score error.  Returns the model and the
    per-step loss trace.
    """
    _apply_determinism()
    sched = getattr(diffusion, "schedule", diffusion)
    if not np.array_equal(sched.beta, model.schedule.beta):
        raise ValueError("training schedule disagrees with the model binding")
    data = list(dataset)
    if not data:
        raise ValueError("dataset is empty")
    fine = np.stack([np.asarray(s[0], dtype=np.float64) for s in data])
    coarse = np.stack([np.asarray(s[1], dtype=np.float64) for s in data])
    source = np.stack([np.asarray(s[2], dtype=np.float64) for s in data])
    if fine.shape != coarse.shape:
        raise ValueError("fine and coarse samples must share a shape")
    n_channels = fine.shape[1] + coarse.shape[1] + source.shape[1]
    if n_channels != model.arch.input_channels:
        raise ValueError(
            f"dataset stacks to {n_channels} channels, architecture expects "
            f"{model.arch.input_channels}")

    pads = model._pad_amounts(fine.shape[2:])
    pad_spec = ((0, 0), (0, 0)) + tuple((p, 0) for p in pads)
    crop = (slice(None), slice(None)) + tuple(slice(p, None) for p in pads)

    rng = np.random.default_rng(np.random.Philox(key=config.seed))
    opt = torch.optim.Adam(model.network.parameters(), lr=config.lr0)
    dtype = next(model.network.parameters()).dtype
    n_samples = fine.shape[0]
    steps_total = model.schedule.steps
    expand = (slice(None),) + (None,) * (fine.ndim - 1)
    losses = []
    for k in range(config.total_steps):
        lr = learning_rate(k, config)
        for group in opt.param_groups:
            group["lr"] = lr
        idx = rng.integers(0, n_samples, size=config.batch_size)
        if config.time_per_element:
            t = rng.integers(1, steps_total + 1, size=config.batch_size)
        else:
            t = np.full(config.batch_size, rng.integers(1, steps_total + 1))
        eps = rng.standard_normal((config.batch_size,) + fine.shape[1:])
        ab = model.schedule.alpha_bar[t][expand]
        noisy = np.sqrt(ab) * fine[idx] + np.sqrt(1.0 - ab) * eps
        stack = np.concatenate([noisy, coarse[idx], source[idx]], axis=1)
        stack = np.pad(stack, pad_spec)

        x = torch.from_numpy(stack).to(dtype)
        eps_t = torch.from_numpy(eps).to(dtype)
        score = model.network(x, torch.from_numpy(t.astype(np.float64)))[crop]
        diff = (score + eps_t).reshape(config.batch_size, -1)
        loss = (diff * diff).sum(dim=1).mean()
        value = float(loss.detach())
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss at step {k}", step=k)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(value)
        if callback is not None:
            callback(k, value)
    return model, losses


def save_checkpoint(model: DenoiserModel, path):
    """Header (JSON, length-prefixed) plus a little-endian float32 blob."""
    vec = model.parameters_vector()
    header = {
        "format_version": _FORMAT_VERSION,
        "arch": model.arch.to_dict(),
        "schedule": model.schedule.to_dict(),
        "param_count": int(vec.size),
        "metadata": model.metadata,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(vec.astype("<f4").tobytes())


def load_checkpoint(path) -> DenoiserModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:len(_MAGIC)] != _MAGIC:
        raise FieldFormatError("not a model checkpoint (bad magic)")
    cursor = len(_MAGIC)
    if len(raw) < cursor + 4:
        raise FieldFormatError(f"{cursor + 4 - len(raw)} bytes missing from header")
    (header_len,) = struct.unpack_from("<I", raw, cursor)
    cursor += 4
    if len(raw) < cursor + header_len:
        raise FieldFormatError(
            f"{cursor + header_len - len(raw)} bytes missing from header")
    try:
        header = json.loads(raw[cursor:cursor + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FieldFormatError(f"unreadable checkpoint header: {exc}") from exc
    cursor += header_len
    if header.get("format_version") != _FORMAT_VERSION:
        raise FieldFormatError(
            f"unsupported checkpoint version {header.get('format_version')}")
    count = int(header["param_count"])
    expected = count * 4
    got = len(raw) - cursor
    if got < expected:
        raise FieldFormatError(f"{expected - got} bytes missing from parameter blob")
    if got > expected:
        raise FieldFormatError(f"{got - expected} unexpected trailing bytes")
    arch = DenoiserArch.from_dict(header["arch"])
    schedule = NoiseSchedule.from_dict(header["schedule"])
    model = build_denoiser(arch, schedule, metadata=header.get("metadata"))
    if model.parameter_count != count:
        raise FieldFormatError(
            f"header declares {count} parameters but the architecture "
            f"builds {model.parameter_count}")
    vec = np.frombuffer(raw, dtype="<f4", count=count, offset=cursor)
    model.load_parameters_vector(vec)
    return model
