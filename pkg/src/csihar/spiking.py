"""Leaky integrate-and-fire dynamics.

Timing convention: at each step the membrane integrates ``U <- beta*U + I``; if
``U > threshold`` a spike is emitted at that same step and the reset is applied
before the next integration.  The membrane starts at 0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from csihar import autodiff as ad
from csihar.autodiff import Tensor
from csihar.errors import ConfigError, NumericError


class Reset(str, enum.Enum):
    ZERO = "zero"
    SUBTRACT = "subtract"


@dataclass(frozen=True)
class LifConfig:
    beta: float = 0.9
    threshold: float = 1.0
    reset: Reset = Reset.ZERO

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ConfigError(f"beta must lie in (0, 1], got {self.beta}")
        if not self.threshold > 0:
            raise ConfigError(f"threshold must be positive, got {self.threshold}")
        object.__setattr__(self, "reset", Reset(self.reset))


@dataclass
class SpikeState:
    """Result of running a LIF layer.

    ``potentials`` is the membrane after the last step (carry it into the next
    call to continue the sequence); ``trace`` holds the post-reset membrane at
    every step and ``spikes`` the emitted 0/1 values, both ``[time][neurons...]``.
    """

    potentials: np.ndarray
    spikes: np.ndarray
    trace: np.ndarray


def lif_forward(currents, config: LifConfig, initial: np.ndarray | None = None) -> SpikeState:
    """Reference (non-differentiable) simulation over the leading time axis."""
    cur = np.asarray(currents, dtype=np.float64)
    if cur.ndim == 1:
        cur = cur[:, None]
    if cur.shape[0] < 1:
        raise ConfigError("need at least one time step")
    if not np.all(np.isfinite(cur)):
        raise NumericError("LIF input currents must be finite")
    u = np.zeros(cur.shape[1:]) if initial is None else np.array(initial, dtype=np.float64)
    spikes = np.zeros_like(cur)
    trace = np.zeros_like(cur)
    for t in range(cur.shape[0]):
        u = config.beta * u + cur[t]
        fired = u > config.threshold
        if config.reset is Reset.ZERO:
            u = np.where(fired, 0.0, u)
        else:
            u = np.where(fired, u - config.threshold, u)
        spikes[t] = fired
        trace[t] = u
    return SpikeState(u, spikes, trace)


def surrogate_grad(u):
    """Derivative of ``arctan(pi u) / pi``: the stand-in for the spike's slope."""
    u = np.asarray(u, dtype=np.float64)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + (math.pi * u) ** 2)


def lif_step(u: Tensor | None, current: Tensor, config: LifConfig, smooth: bool = False):
    """One differentiable LIF step; returns ``(spikes, new_membrane)``.

    The reset uses the detached hard spike, so gradients flow through the
    membrane and the surrogate only.
    """
    u = current if u is None else ad.add(ad.scale(u, config.beta), current)
    s = ad.spike(u, config.threshold, smooth=smooth)
    fired = (u.data > config.threshold).astype(np.float64)
    if config.reset is Reset.ZERO:
        u = ad.mul(u, Tensor(1.0 - fired))
    else:
        u = ad.sub(u, Tensor(config.threshold * fired))
    return s, u


def lif_sequence(currents, config: LifConfig, u0: Tensor | None = None, smooth: bool = False):
    """Run :func:`lif_step` over a list of per-step current tensors.

    Returns ``(spike_list, final_membrane)``.
    """
    u = u0
    out = []
    for cur in currents:
        s, u = lif_step(u, cur, config, smooth)
        out.append(s)
    return out, u
