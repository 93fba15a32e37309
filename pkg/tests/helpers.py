"""Shared test utilities: finite-difference oracles and tiny model builders.

Everything here is deliberately independent of the library's own backward
implementations: gradients are re-derived by central differences and LIF
dynamics by a hand-written scalar simulator, so the tests act as oracles
rather than mirrors.
"""
from __future__ import annotations

import numpy as np

from spikedepth import autodiff as ad
from spikedepth.dataio import DepthMap, gen_synthetic
from spikedepth.losses import DistillConfig, FeatureProjections
from spikedepth.model import DepthModel, ModelConfig
from spikedepth.neuron import LifParams

REL_TOL = 1e-4
WORST_TOL = 1e-3


def fd_gradient(f, x, h=1e-5):
    """Central finite differences of a scalar function at a float64 array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def grad_agreement(analytic, numeric, rel_tol=REL_TOL, abs_floor=1e-8):
    """(fraction of coordinates within rel_tol, worst relative error).

    Coordinates where both magnitudes sit below abs_floor count as agreeing
    (both are numerically zero); elsewhere the error is |a-n|/max(|a|,|n|).
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 1.0, 0.0
    scale = np.maximum(np.abs(a), np.abs(n))
    zero = scale < abs_floor
    rel = np.zeros_like(scale)
    rel[~zero] = np.abs(a[~zero] - n[~zero]) / scale[~zero]
    return float(np.mean((rel <= rel_tol) | zero)), float(rel.max())


def fd_check(fn, arrays, h=1e-5):
    """FD-check `fn(*tensors) -> scalar Tensor` against the tape.

    arrays: float64 ndarrays, one per differentiable input.  Returns a list
    of (analytic_grad, numeric_grad) pairs in input order.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    params = [ad.parameter(a.copy()) for a in arrays]
    with ad.tape() as t:
        loss = fn(*params)
    t.backward(loss)
    analytic = [p.grad.copy() for p in params]

    pairs = []
    for i, a in enumerate(arrays):
        def f(x, i=i):
            args = [ad.tensor(arrays[j] if j != i else x) for j in range(len(arrays))]
            return float(fn(*args).data)

        pairs.append((analytic[i], fd_gradient(f, a, h)))
    return pairs


def assert_fd_match(fn, arrays, h=1e-5, frac=0.95, rel_tol=REL_TOL, worst_tol=WORST_TOL):
    for k, (got, want) in enumerate(fd_check(fn, arrays, h)):
        ok, worst = grad_agreement(got, want, rel_tol)
        assert ok >= frac, f"input {k}: only {ok:.1%} of coords within {rel_tol}"
        assert worst <= worst_tol, f"input {k}: worst relative error {worst:.2e}"


def scalar_lif_reference(inputs, p: LifParams):
    """Independent step-by-step simulator of the Euler-discretised neuron.

    inputs: [T] floats for one neuron.  Returns (spikes[T], v_pre[T]) where
    v_pre is the membrane after integration, before any reset.
    """
    v = 0.0
    spikes, v_pre = [], []
    for cur in inputs:
        v = v + (cur - v) / p.tau
        v_pre.append(v)
        if v >= p.v_threshold:
            spikes.append(1.0)
            v = p.v_reset
        else:
            spikes.append(0.0)
    return np.array(spikes), np.array(v_pre)


def scalar_lif_backward_reference(inputs, upstream, p: LifParams):
    """Chain rule applied step by step over the recorded scalar trace.

    Forward relations per step (detached hard reset):
      v_pre[t]  = v_post[t-1] * (1 - 1/tau) + I[t] / tau
      spike[t]  = H(v_pre[t] - theta)         (surrogate derivative)
      v_post[t] = v_pre[t] if no spike else v_reset (constant, detached)
    """
    spikes, v_pre = scalar_lif_reference(inputs, p)
    T = len(inputs)
    alpha = p.surrogate_alpha
    decay = 1.0 - 1.0 / p.tau
    g_in = np.zeros(T)
    g_vpost = 0.0
    for t in range(T - 1, -1, -1):
        x = v_pre[t] - p.v_threshold
        sur = (alpha / 2.0) / (1.0 + (np.pi * alpha / 2.0 * x) ** 2)
        g_vpre = upstream[t] * sur + (g_vpost if spikes[t] == 0.0 else 0.0)
        g_in[t] = g_vpre / p.tau
        g_vpost = g_vpre * decay
    return g_in


def tiny_model_cfg(**overrides) -> ModelConfig:
    """Small-but-complete config: full fusion head, 4 blocks, ~4.7k params."""
    kw = dict(t=2, c=2, h=16, w=16, d=8, l=4, mlp_ratio=2)
    kw.update(overrides)
    return ModelConfig(**kw).validate()


def tiny_model(seed=0, dtype=np.float32, **overrides) -> DepthModel:
    return DepthModel(tiny_model_cfg(**overrides), np.random.default_rng(seed), dtype)


def tiny_distill_cfg(**overrides) -> DistillConfig:
    kw = dict(teacher_dim=4, matched_blocks=(4,))
    kw.update(overrides)
    return DistillConfig(**kw)


def tiny_projections(cfg: DistillConfig, student_dim=8, seed=0, dtype=np.float32):
    return FeatureProjections(cfg, student_dim, np.random.default_rng(seed), dtype)


def tiny_dataset(seed=0, n=2, t=2, h=16, w=16, teacher_dim=4):
    return gen_synthetic(seed=seed, n_samples=n, t=t, h=h, w=w, teacher_dim=teacher_dim)


def random_spikes(rng, t=2, c=2, h=16, w=16, p=0.3, dtype=np.float32):
    return (rng.random((t, c, h, w)) < p).astype(dtype)


def snapshot_buffers(module):
    # buffers are plain ndarrays (BN running statistics)
    return {name: buf.copy() for name, buf in module.named_buffers()}


def restore_buffers(module, snap):
    for name, buf in module.named_buffers():
        buf[...] = snap[name]


def depth_map(values, mask=None) -> DepthMap:
    values = np.asarray(values, dtype=np.float32)
    if mask is None:
        mask = np.ones_like(values, dtype=bool)
    return DepthMap(values, np.asarray(mask, dtype=bool))
