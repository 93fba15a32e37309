"""Leaky integrate-and-fire neurons with a surrogate spike gradient.

Forward dynamics are the explicit-Euler discretisation (unit time step) of
the leak equation: each step the membrane moves toward the input current
with time constant tau,

    v <- v + (I - v) / tau

fires a unit spike when v reaches the threshold and hard-resets to v_reset.
Backward differentiates the membrane recurrence exactly through time; the
Heaviside spike is replaced by an arctan-family surrogate and the reset path
is detached, so gradient flows only through the leak and the surrogate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError, NumericError


@dataclass(frozen=True)
class LifParams:
    tau: float = 2.0
    v_threshold: float = 1.0
    v_reset: float = 0.0
    surrogate_alpha: float = 2.0

    def __post_init__(self):
        if self.tau < 1.0:
            raise ConfigError(f"tau must be >= 1.0, got {self.tau}")
        if not self.v_threshold > self.v_reset:
            raise ConfigError(
                f"v_threshold ({self.v_threshold}) must exceed v_reset ({self.v_reset})"
            )
        if self.surrogate_alpha <= 0:
            raise ConfigError(f"surrogate_alpha must be positive, got {self.surrogate_alpha}")


@dataclass
class LifState:
    """Mutable membrane potential carried across timesteps of one sample."""

    v: np.ndarray


def fresh_state(shape, dtype=np.float32) -> LifState:
    return LifState(v=np.zeros(shape, dtype=dtype))


def surrogate_grad(v_minus_threshold, alpha: float):
    """Derivative surrogate for the spike Heaviside.

    Peaks at alpha/2 when the membrane sits exactly at threshold and decays
    quadratically away from it.
    """
    z = (np.pi * alpha / 2.0) * np.asarray(v_minus_threshold)
    return (alpha / 2.0) / (1.0 + z * z)


def lif_step(state: LifState, input_current: np.ndarray, params: LifParams) -> np.ndarray:
    """Advance the membrane one step; returns the binary spike plane.

    Mutates `state.v` (hard reset where a spike fired).
    """
    x = np.asarray(input_current)
    if x.shape != state.v.shape:
        raise DimensionError(f"lif_step: input shape {x.shape} != state shape {state.v.shape}")
    if not np.isfinite(x).all():
        raise NumericError("lif_step: non-finite input current")
    v = state.v + (x - state.v) / params.tau
    spikes = (v >= params.v_threshold).astype(x.dtype if x.dtype.kind == "f" else np.float32)
    state.v = np.where(spikes > 0, np.asarray(params.v_reset, dtype=v.dtype), v)
    return spikes


def lif_backward(v_pre: np.ndarray, upstream: np.ndarray, params: LifParams) -> np.ndarray:
    """Reverse recurrence through T recorded pre-reset membrane values.

    `v_pre[t]` is the membrane after integration at step t (before reset),
    `upstream[t]` is dLoss/dSpike[t].  Returns dLoss/dInput of shape [T, ...].
    The reset is detached: the post-reset membrane passes gradient only where
    no spike fired.
    """
    if v_pre.shape != upstream.shape:
        raise DimensionError(
            f"lif_backward: v_pre shape {v_pre.shape} != upstream shape {upstream.shape}"
        )
    if v_pre.ndim < 1 or v_pre.shape[0] < 1:
        raise DimensionError("lif_backward: need at least one timestep")
    decay = 1.0 - 1.0 / params.tau
    gx = np.empty_like(v_pre)
    g_vpost = np.zeros(v_pre.shape[1:], dtype=v_pre.dtype)
    for t in range(v_pre.shape[0] - 1, -1, -1):
        fired = v_pre[t] >= params.v_threshold
        g_vpre = upstream[t] * surrogate_grad(v_pre[t] - params.v_threshold, params.surrogate_alpha)
        g_vpre = g_vpre + g_vpost * (~fired)
        gx[t] = g_vpre / params.tau
        g_vpost = g_vpre * decay
    return gx


def mlif(x: ad.Tensor, params: LifParams) -> ad.Tensor:
    """Multistep LIF over the leading time axis of x [T, ...].

    State starts at zero for every call (one call = one sample) and is
    carried across the T steps internally.  Output is binary with the input
    dtype.
    """
    xd = x.data
    if xd.ndim < 1 or xd.shape[0] < 1:
        raise DimensionError(f"mlif: need a non-empty time axis, got shape {xd.shape}")
    if not np.isfinite(xd).all():
        raise NumericError("mlif: non-finite input current")
    T = xd.shape[0]
    inv_tau = 1.0 / params.tau
    v = np.zeros(xd.shape[1:], dtype=xd.dtype)
    v_pre = np.empty_like(xd)
    spikes = np.empty_like(xd)
    reset = np.asarray(params.v_reset, dtype=xd.dtype)
    for t in range(T):
        v = v + (xd[t] - v) * inv_tau
        v_pre[t] = v
        s = (v >= params.v_threshold).astype(xd.dtype)
        spikes[t] = s
        v = np.where(s > 0, reset, v)
    out = ad.Tensor(spikes, requires_grad=x.requires_grad)

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        return (lif_backward(v_pre, g, params),)

    ad._record("mlif", (x,), out, bwd)
    return out
