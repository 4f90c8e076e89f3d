"""Classifier architectures over downsampled CSI windows ``[batch, frames, subcarriers, antennas]``.

* ``model2``: antenna averaging, 10 intervals of 9 frames each run through a
  first LIF layer (``step`` passes per interval) whose spike rates go through a
  linear layer into a second LIF layer stepped once per interval; the final
  step's spikes are mapped to class logits.
* ``model1``: the whole window through one LIF layer over subcarriers x
  antennas, flattened spikes, two linear layers.
* ``feature``: the interval front end followed by a per-interval LIF layer whose
  spike counts give a distribution over the head's values for each interval.
* CNN: three same-padded 3x3 conv layers with ReLU and 2x2 max pooling,
  antennas as input channels.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from csihar import autodiff as ad
from csihar.autodiff import Tensor
from csihar.errors import ConfigError, ContractError, FormatError
from csihar.spiking import LifConfig, lif_sequence, lif_step

N_CLASSES = 7
Params = dict[str, Tensor]


@dataclass(frozen=True)
class SnnSpec:
    variant: str = "model2"  # model1 | model2 | feature
    subcarriers: int = 64
    antennas: int = 4
    hidden_dim: int = 50
    intervals: int = 10
    frames_per_interval: int = 9
    step: int = 5
    outputs: int = N_CLASSES  # classes, or value arity for a feature head
    lif: LifConfig = field(default_factory=LifConfig)

    def __post_init__(self):
        if self.variant not in ("model1", "model2", "feature"):
            raise ConfigError(f"unknown SNN variant {self.variant!r}")
        if min(self.subcarriers, self.antennas, self.hidden_dim, self.intervals,
               self.frames_per_interval, self.step, self.outputs) < 1:  # fmt: skip
            raise ConfigError("SNN dimensions must all be >= 1")

    @property
    def frames(self) -> int:
        return self.intervals * self.frames_per_interval


@dataclass(frozen=True)
class CnnSpec:
    subcarriers: int = 64
    antennas: int = 4
    frames: int = 90
    last_channel: int = 65
    conv_layers: int = 3
    kernel: int = 3
    outputs: int = N_CLASSES

    def __post_init__(self):
        self.channels  # validates the schedule
        if self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be odd, got {self.kernel}")
        h, w = self.frames, self.subcarriers
        for _ in range(self.conv_layers):
            h, w = h // 2, w // 2
        if h < 1 or w < 1:
            raise ConfigError(f"{self.conv_layers} pooling layers do not fit a {self.frames}x{self.subcarriers} input")

    @property
    def channels(self) -> list[int]:
        chans = [self.last_channel]
        for _ in range(self.conv_layers - 1):
            chans.append(math.floor(chans[-1] / 1.5))
        chans.reverse()
        if chans[0] < 1 or any(a >= b for a, b in zip(chans, chans[1:])):
            raise ConfigError(f"last_channel {self.last_channel} gives an invalid channel schedule {chans}")
        return chans


# -- shared pieces ---------------------------------------------------------------


def antenna_average(window: Tensor, weights: Tensor) -> Tensor:
    """Weighted sum over the trailing antenna axis (a 1x1 convolution with one output channel)."""
    if weights.shape != (window.shape[-1],):
        raise ContractError(f"{weights.shape[0]} antenna weights for {window.shape[-1]} antennas")
    return ad.reshape(ad.matmul(window, ad.reshape(weights, (-1, 1))), window.shape[:-1])


def _check_window(x: Tensor, frames: int, subcarriers: int, antennas: int) -> Tensor:
    if x.data.ndim == 3:
        x = ad.reshape(x, (1,) + x.shape)
    if x.data.ndim != 4 or x.shape[1:] != (frames, subcarriers, antennas):
        raise ContractError(
            f"expected windows [batch, {frames}, {subcarriers}, {antennas}], got {x.shape}"
        )
    return x


def _uniform(rng, fan_in: int, shape) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _linear(x: Tensor, params: Params, name: str) -> Tensor:
    return ad.add(ad.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


# -- spiking networks ------------------------------------------------------------


def init_snn(spec: SnnSpec, seed: int = 0) -> Params:
    rng = np.random.default_rng([seed, 1])
    s, a, h, o = spec.subcarriers, spec.antennas, spec.hidden_dim, spec.outputs
    p: Params = {}
    if spec.variant == "model1":
        flat = spec.frames * s * a
        p["fc1.w"] = _uniform(rng, flat, (flat, h))
        p["fc1.b"] = _uniform(rng, flat, (h,))
        p["fc2.w"] = _uniform(rng, h, (h, o))
        p["fc2.b"] = _uniform(rng, h, (o,))
        return p
    p["antenna"] = Tensor(np.full(a, 1.0 / a), requires_grad=True)
    if spec.variant == "model2":
        p["fc1.w"] = _uniform(rng, s, (s, h))
        p["fc1.b"] = _uniform(rng, s, (h,))
        p["out.w"] = _uniform(rng, h, (h, o))
        p["out.b"] = _uniform(rng, h, (o,))
    else:
        p["fc1.w"] = _uniform(rng, s, (s, o))
        p["fc1.b"] = _uniform(rng, s, (o,))
    return p


def _interval_currents(x: Tensor, spec: SnnSpec, params: Params) -> list[Tensor]:
    """Per-frame currents ``[batch, intervals, subcarriers]`` for the first LIF layer."""
    avg = antenna_average(x, params["antenna"])
    b = x.shape[0]
    blocks = ad.reshape(avg, (b, spec.intervals, spec.frames_per_interval, spec.subcarriers))
    return [blocks[:, :, f, :] for f in range(spec.frames_per_interval)]


def snn_forward(x: Tensor, spec: SnnSpec, params: Params, smooth: bool = False) -> Tensor:
    """Class distribution ``[batch, outputs]`` (``model1``/``model2``) or, for
    ``feature`` heads, per-interval distributions ``[batch, intervals, outputs]``."""
    x = _check_window(x, spec.frames, spec.subcarriers, spec.antennas)
    b = x.shape[0]
    if spec.variant == "model1":
        frames = [x[:, t, :, :] for t in range(spec.frames)]
        spikes, _ = lif_sequence(frames, spec.lif, smooth=smooth)
        flat = ad.reshape(ad.stack(spikes, axis=1), (b, -1))
        return ad.softmax(_linear(_linear(flat, params, "fc1"), params, "fc2"))

    frames = _interval_currents(x, spec, params)
    passes = frames * spec.step
    if spec.variant == "feature":
        u1 = u2 = None
        counts = None
        for cur in passes:
            s1, u1 = lif_step(u1, cur, spec.lif, smooth)
            s2, u2 = lif_step(u2, _linear(s1, params, "fc1"), spec.lif, smooth)
            counts = s2 if counts is None else ad.add(counts, s2)
        return ad.softmax(counts)

    spikes, _ = lif_sequence(passes, spec.lif, smooth=smooth)
    rates = ad.scale(ad.sum(ad.stack(spikes), axis=0), 1.0 / len(passes))
    hidden = _linear(rates, params, "fc1")  # [batch, intervals, hidden]
    u = None
    for k in range(spec.intervals):
        s, u = lif_step(u, hidden[:, k, :], spec.lif, smooth)
    return ad.softmax(_linear(s, params, "out"))


def window_distribution(interval_probs: Tensor) -> Tensor:
    """Collapse per-interval feature outputs to one distribution per window.

    Averaging the per-interval distributions keeps the result normalised.
    """
    return ad.mean(interval_probs, axis=1)


def first_layer_spike_count(x, spec: SnnSpec, params: Params) -> int:
    """Total spikes of the first LIF layer (diagnostic; no tape)."""
    x = _check_window(Tensor(x) if not isinstance(x, Tensor) else x, spec.frames, spec.subcarriers, spec.antennas)
    if spec.variant == "model1":
        currents = [x[:, t, :, :] for t in range(spec.frames)]
    else:
        currents = _interval_currents(x, spec, params) * spec.step
    spikes, _ = lif_sequence(currents, spec.lif)
    return int(sum(s.data.sum() for s in spikes))


# -- CNN -------------------------------------------------------------------------


def init_cnn(spec: CnnSpec, seed: int = 0) -> Params:
    rng = np.random.default_rng([seed, 2])
    p: Params = {}
    cin = spec.antennas
    for i, cout in enumerate(spec.channels):
        fan = cin * spec.kernel**2
        p[f"conv{i}.w"] = _uniform(rng, fan, (cout, cin, spec.kernel, spec.kernel))
        p[f"conv{i}.b"] = _uniform(rng, fan, (cout,))
        cin = cout
    h, w = spec.frames, spec.subcarriers
    for _ in range(spec.conv_layers):
        h, w = h // 2, w // 2
    flat = cin * h * w
    p["fc1.w"] = _uniform(rng, flat, (flat, spec.last_channel))
    p["fc1.b"] = _uniform(rng, flat, (spec.last_channel,))
    p["fc2.w"] = _uniform(rng, spec.last_channel, (spec.last_channel, spec.outputs))
    p["fc2.b"] = _uniform(rng, spec.last_channel, (spec.outputs,))
    return p


def cnn_forward(x: Tensor, spec: CnnSpec, params: Params) -> Tensor:
    x = _check_window(x, spec.frames, spec.subcarriers, spec.antennas)
    h = ad.transpose(x, (0, 3, 1, 2))  # antennas become channels
    for i in range(spec.conv_layers):
        h = ad.maxpool2d(ad.relu(ad.conv2d(h, params[f"conv{i}.w"], params[f"conv{i}.b"])), 2)
    flat = ad.reshape(h, (x.shape[0], -1))
    return ad.softmax(_linear(ad.relu(_linear(flat, params, "fc1")), params, "fc2"))


# -- checkpoints -----------------------------------------------------------------

CKPT_MAGIC = b"SPKW"


def save_checkpoint(path, tensors: list[np.ndarray]) -> None:
    """Little-endian: magic, u32 count, then per tensor u32 rank, u32 dims, f64 values."""
    parts = [CKPT_MAGIC, struct.pack("<I", len(tensors))]
    for t in tensors:
        arr = np.asarray(t, dtype="<f8")
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> list[np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {raw[:4]!r}", offset=0)
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"{path}: truncated checkpoint", offset=pos)
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = []
    for _ in range(count):
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        out.append(np.frombuffer(take(8 * n), dtype="<f8").reshape(dims).copy())
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes after {count} tensors", offset=pos)
    return out


def params_to_list(params: Params) -> list[np.ndarray]:
    return [params[k].data for k in params]


def params_from_list(template: Params, arrays: list[np.ndarray]) -> Params:
    if len(arrays) < len(template):
        raise FormatError(f"checkpoint holds {len(arrays)} tensors, model needs {len(template)}")
    out = {}
    for (name, t), arr in zip(template.items(), arrays):
        if arr.shape != t.shape:
            raise FormatError(f"checkpoint tensor for {name} has shape {arr.shape}, expected {t.shape}")
        out[name] = Tensor(arr, requires_grad=True)
    return out
