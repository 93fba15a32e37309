"""Reverse-mode autodiff over dense numpy tensors.

The op set is exactly what the spiking depth network needs: conv / batchnorm /
pooling / bilinear upsampling for the layers, batched matmul for attention,
and elementwise arithmetic plus reductions for the losses.  Ops execute
eagerly on numpy arrays and, when a tape is active, append an entry holding
the backward closure.  `Tape.backward` replays the entries in reverse (the
recording order is already topological) and accumulates gradients into every
tensor created with `requires_grad=True`.

float32 is the production dtype; gradient-check tests build float64 graphs.
Ops keep the dtype of their inputs and never broadcast beyond the documented
cases -- shape mismatches raise DimensionError instead of promoting silently.
"""
from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericError, StaleTapeError

_FINITE_CHECKS = True


def set_finite_checks(enabled: bool) -> None:
    """Toggle the non-finite output guard (on by default)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def _guard(op, arr):
    if _FINITE_CHECKS and not np.isfinite(arr).all():
        raise NumericError(f"{op}: non-finite values in result")


class Tensor:
    """A dense array plus gradient bookkeeping.

    `grad` is populated by `Tape.backward` for tensors constructed with
    `requires_grad=True`.  `is_param` marks trainable weights so audits can
    tell parameters from activations.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "is_param", "_leaf")

    def __init__(self, data, requires_grad=False, name=None, is_param=False):
        self.data = data
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self.is_param = is_param
        self._leaf = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad=False, dtype=None, name=None) -> Tensor:
    """Wrap `data` as a Tensor; non-float input defaults to float32."""
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return Tensor(arr, requires_grad=requires_grad, name=name)


def parameter(data, name=None, dtype=None) -> Tensor:
    t = tensor(data, requires_grad=True, dtype=dtype, name=name)
    t.is_param = True
    return t


class TapeEntry:
    __slots__ = ("op", "scope", "inputs", "output", "bwd")

    def __init__(self, op, scope, inputs, output, bwd):
        self.op = op
        self.scope = scope
        self.inputs = inputs
        self.output = output
        self.bwd = bwd


class Tape:
    """Ordered record of executed ops; reverse replay computes gradients."""

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self._scopes: list[str] = []
        self._used = False

    @property
    def scope(self) -> str:
        return ".".join(self._scopes)

    def backward(self, loss: Tensor) -> None:
        """Accumulate dLoss/dT into T.grad for every requires_grad leaf.

        The tape is cleared afterwards; calling backward again without a new
        forward raises StaleTapeError.
        """
        if self._used:
            raise StaleTapeError("tape already consumed; run a new forward pass")
        if not self.entries:
            raise StaleTapeError("tape is empty; nothing was recorded")
        if loss.data.size != 1:
            raise DimensionError(f"backward expects a scalar loss, got shape {loss.data.shape}")
        self._used = True

        grads = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            g = grads.pop(id(entry.output), None)
            if g is None or entry.bwd is None:
                continue
            in_grads = entry.bwd(g)
            for t, gi in zip(entry.inputs, in_grads):
                if t is None or gi is None or not t.requires_grad:
                    continue
                if t._leaf:
                    t.grad = gi if t.grad is None else t.grad + gi
                else:
                    key = id(t)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi
        self.entries = []


_STACK: list[Tape] = []


def active_tape():
    return _STACK[-1] if _STACK else None


@contextmanager
def tape():
    t = Tape()
    _STACK.append(t)
    try:
        yield t
    finally:
        _STACK.pop()


@contextmanager
def scope(name: str):
    """Label ops recorded inside the block (nested scopes join with '.')."""
    t = active_tape()
    if t is None:
        yield
        return
    t._scopes.append(name)
    try:
        yield
    finally:
        t._scopes.pop()


def _record(op, inputs, output, bwd):
    output._leaf = False  # op outputs are interior nodes; grads flow through
    t = active_tape()
    if t is not None:
        t.entries.append(TapeEntry(op, t.scope, inputs, output, bwd))


def _needs(*tensors):
    return any(t is not None and t.requires_grad for t in tensors)


# ---------------------------------------------------------------------------
# elementwise ops


def _same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    out = Tensor(a.data + b.data, requires_grad=_needs(a, b))
    _guard("add", out.data)

    def bwd(g):
        return (g if a.requires_grad else None, g if b.requires_grad else None)

    _record("add", (a, b), out, bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    out = Tensor(a.data - b.data, requires_grad=_needs(a, b))
    _guard("sub", out.data)

    def bwd(g):
        return (g if a.requires_grad else None, -g if b.requires_grad else None)

    _record("sub", (a, b), out, bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    out = Tensor(ad * bd, requires_grad=_needs(a, b))
    _guard("mul", out.data)

    def bwd(g):
        return (g * bd if a.requires_grad else None, g * ad if b.requires_grad else None)

    _record("mul", (a, b), out, bwd)
    return out


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(x.data * s, requires_grad=x.requires_grad)
    _guard("scale", out.data)

    def bwd(g):
        return (g * s if x.requires_grad else None,)

    _record("scale", (x,), out, bwd)
    return out


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes inside the interval (inclusive)."""
    xd = x.data
    out = Tensor(np.clip(xd, lo, hi), requires_grad=x.requires_grad)

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        mask = (xd >= lo) & (xd <= hi)
        return (g * mask,)

    _record("clamp", (x,), out, bwd)
    return out


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out_data = np.empty_like(xd)
    pos = xd >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd(g):
        return (g * out_data * (1.0 - out_data) if x.requires_grad else None,)

    _record("sigmoid", (x,), out, bwd)
    return out


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise NumericError("log: non-positive input")
    out = Tensor(np.log(xd), requires_grad=x.requires_grad)
    _guard("log", out.data)

    def bwd(g):
        return (g / xd if x.requires_grad else None,)

    _record("log", (x,), out, bwd)
    return out


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.data.shape
    out = Tensor(x.data.reshape(shape), requires_grad=x.requires_grad)

    def bwd(g):
        return (g.reshape(orig) if x.requires_grad else None,)

    _record("reshape", (x,), out, bwd)
    return out


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if len(axes) != x.data.ndim:
        raise DimensionError(f"transpose: axes {axes} do not match ndim {x.data.ndim}")
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)), requires_grad=x.requires_grad)

    def bwd(g):
        return (g.transpose(inv) if x.requires_grad else None,)

    _record("transpose", (x,), out, bwd)
    return out


def reduce_sum(x: Tensor, axis=None) -> Tensor:
    """Sum over one axis, or over everything (axis=None -> scalar)."""
    xd = x.data
    out = Tensor(xd.sum(axis=axis), requires_grad=x.requires_grad)
    _guard("reduce_sum", out.data)

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        if axis is None:
            return (np.broadcast_to(g, xd.shape).astype(xd.dtype, copy=True),)
        ge = np.expand_dims(g, axis)
        return (np.broadcast_to(ge, xd.shape).astype(xd.dtype, copy=True),)

    _record("reduce_sum", (x,), out, bwd)
    return out


# ---------------------------------------------------------------------------
# matmul


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product [..., m, k] @ [..., k, n]; batch dims must match."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError("matmul: operands must be at least 2-D")
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul: inner dims differ {ad.shape} vs {bd.shape}")
    if ad.shape[:-2] != bd.shape[:-2]:
        raise DimensionError(f"matmul: batch dims differ {ad.shape} vs {bd.shape}")
    out = Tensor(ad @ bd, requires_grad=_needs(a, b))
    _guard("matmul", out.data)

    def bwd(g):
        ga = g @ bd.swapaxes(-1, -2) if a.requires_grad else None
        gb = ad.swapaxes(-1, -2) @ g if b.requires_grad else None
        return (ga, gb)

    _record("matmul", (a, b), out, bwd)
    return out


# ---------------------------------------------------------------------------
# convolution


def _corr2d(x, w, stride, pad):
    """Raw correlation core: x [B,Ci,H,W], w [Co,Ci,k,k] -> ([B,Co,Ho,Wo], cols)."""
    B, Ci, H, W = x.shape
    Co, _, k, _ = w.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, Ci * k * k)
    out = cols @ w.reshape(Co, -1).T
    return np.ascontiguousarray(out.reshape(B, Ho, Wo, Co).transpose(0, 3, 1, 2)), cols


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D correlation with optional bias.

    x: [Cin,H,W] or [B,Cin,H,W]; w: [Cout,Cin,k,k] (square kernel); b: [Cout].
    pad=(k-1)//2 with stride 1 preserves the spatial size for odd k.
    """
    xd = x.data
    squeezed = xd.ndim == 3
    if squeezed:
        xd = xd[None]
    if xd.ndim != 4:
        raise DimensionError(f"conv2d: input must be 3-D or 4-D, got {x.data.shape}")
    wd = w.data
    if wd.ndim != 4 or wd.shape[2] != wd.shape[3]:
        raise DimensionError(f"conv2d: kernel must be [Cout,Cin,k,k] square, got {wd.shape}")
    if wd.shape[1] != xd.shape[1]:
        raise DimensionError(f"conv2d: channel mismatch input {xd.shape[1]} vs kernel {wd.shape[1]}")
    if xd.shape[2] + 2 * pad < wd.shape[2] or xd.shape[3] + 2 * pad < wd.shape[3]:
        raise DimensionError("conv2d: kernel larger than padded input")

    out_data, cols = _corr2d(xd, wd, stride, pad)
    if b is not None:
        if b.data.shape != (wd.shape[0],):
            raise DimensionError(f"conv2d: bias shape {b.data.shape} != ({wd.shape[0]},)")
        out_data += b.data[None, :, None, None]
    _guard("conv2d", out_data)
    if squeezed:
        out = Tensor(out_data[0], requires_grad=_needs(x, w, b))
    else:
        out = Tensor(out_data, requires_grad=_needs(x, w, b))

    B, Ci, H, W = xd.shape
    Co, _, k, _ = wd.shape

    def bwd(g):
        if squeezed:
            g = g[None]
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, Co)
        gw = (gmat.T @ cols).reshape(wd.shape) if w.requires_grad else None
        gb = gmat.sum(0) if (b is not None and b.requires_grad) else None
        gx = None
        if x.requires_grad:
            Ho, Wo = g.shape[2], g.shape[3]
            if stride > 1:
                gd = np.zeros((B, Co, (Ho - 1) * stride + 1, (Wo - 1) * stride + 1), dtype=g.dtype)
                gd[:, :, ::stride, ::stride] = g
            else:
                gd = g
            # full correlation with the flipped, channel-swapped kernel
            wf = wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gx_full, _ = _corr2d(gd, np.ascontiguousarray(wf), 1, k - 1 - pad)
            if gx_full.shape[2] < H or gx_full.shape[3] < W:
                gx_full = np.pad(
                    gx_full,
                    ((0, 0), (0, 0), (0, H - gx_full.shape[2]), (0, W - gx_full.shape[3])),
                )
            gx = gx_full[:, :, :H, :W]
            if squeezed:
                gx = gx[0]
        return (gx, gw, gb)

    _record("conv2d", (x, w, b), out, bwd)
    return out


# ---------------------------------------------------------------------------
# batch normalisation


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean=None,
    running_var=None,
    training: bool = True,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation over all non-channel axes.

    x: [C,H,W] or [B,C,H,W]; channel axis is 1 after promotion.  Training mode
    normalises with batch statistics and, when running buffers are passed,
    updates them in place with `momentum` (unbiased variance, matching the
    usual convention).  Eval mode requires running buffers.
    """
    xd = x.data
    squeezed = xd.ndim == 3
    if squeezed:
        xd = xd[None]
    if xd.ndim != 4:
        raise DimensionError(f"batchnorm: input must be 3-D or 4-D, got {x.data.shape}")
    C = xd.shape[1]
    if C == 0:
        raise DimensionError("batchnorm: zero-size channel axis")
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise DimensionError(f"batchnorm: affine params must have shape ({C},)")

    axes = (0, 2, 3)
    n = xd.shape[0] * xd.shape[2] * xd.shape[3]
    if training:
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        if running_mean is not None and running_var is not None:
            unbiased = var * (n / (n - 1)) if n > 1 else var
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
    else:
        if running_mean is None or running_var is None:
            raise DimensionError("batchnorm: eval mode needs running statistics")
        mu = running_mean
        var = running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    _guard("batchnorm", out_data)
    out = Tensor(out_data[0] if squeezed else out_data, requires_grad=_needs(x, gamma, beta))

    def bwd(g):
        if squeezed:
            g = g[None]
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gs = gamma.data[None, :, None, None] * inv_std[None, :, None, None]
            if training:
                gm = g.mean(axis=axes)[None, :, None, None]
                gxh = (g * xhat).mean(axis=axes)[None, :, None, None]
                gx = gs * (g - gm - xhat * gxh)
            else:
                gx = gs * g
            if squeezed:
                gx = gx[0]
        return (gx, ggamma, gbeta)

    _record("batchnorm", (x, gamma, beta), out, bwd)
    return out


# ---------------------------------------------------------------------------
# pooling


def maxpool2d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Max pooling over the last two axes; ties resolve to the first index
    in row-major window order."""
    if k != stride:
        raise DimensionError("maxpool2d: only kernel == stride is supported")
    xd = x.data
    if xd.ndim < 2:
        raise DimensionError("maxpool2d: input must be at least 2-D")
    H, W = xd.shape[-2:]
    if H % stride or W % stride:
        raise DimensionError(f"maxpool2d: spatial dims ({H},{W}) not divisible by stride {stride}")
    lead = xd.shape[:-2]
    Ho, Wo = H // k, W // k
    win = xd.reshape(*lead, Ho, k, Wo, k)
    win = np.moveaxis(win, -3, -2)  # (..., Ho, Wo, k, k)
    flat = np.ascontiguousarray(win).reshape(*lead, Ho, Wo, k * k)
    idx = flat.argmax(-1)
    out_data = np.take_along_axis(flat, idx[..., None], -1)[..., 0]
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        buf = np.zeros_like(flat)
        np.put_along_axis(buf, idx[..., None], g[..., None], -1)
        buf = buf.reshape(*lead, Ho, Wo, k, k)
        buf = np.moveaxis(buf, -2, -3)
        return (buf.reshape(xd.shape),)

    _record("maxpool2d", (x,), out, bwd)
    return out


# ---------------------------------------------------------------------------
# bilinear upsampling


_BILINEAR_CACHE: dict = {}


def _bilinear_matrix(n_in: int, factor: int, dtype) -> np.ndarray:
    key = (n_in, factor, np.dtype(dtype).str)
    m = _BILINEAR_CACHE.get(key)
    if m is not None:
        return m
    n_out = n_in * factor
    M = np.zeros((n_out, n_in), dtype=dtype)
    for o in range(n_out):
        src = (o + 0.5) / factor - 0.5  # align_corners=False source coordinate
        i0 = math.floor(src)
        frac = src - i0
        if i0 < 0:
            i0, frac = 0, 0.0
        if i0 > n_in - 1:
            i0, frac = n_in - 1, 0.0
        i1 = min(i0 + 1, n_in - 1)
        M[o, i0] += 1.0 - frac
        M[o, i1] += frac
    _BILINEAR_CACHE[key] = M
    return M


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling of the last two axes by an integer factor
    (half-pixel / align_corners=False convention)."""
    factor = int(factor)
    if factor < 1:
        raise DimensionError(f"upsample_bilinear: factor must be >= 1, got {factor}")
    xd = x.data
    if xd.ndim < 2:
        raise DimensionError("upsample_bilinear: input must be at least 2-D")
    H, W = xd.shape[-2:]
    Mh = _bilinear_matrix(H, factor, xd.dtype)
    Mw = _bilinear_matrix(W, factor, xd.dtype)
    out_data = Mh @ xd @ Mw.T
    _guard("upsample_bilinear", out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        return (Mh.T @ g @ Mw,)

    _record("upsample_bilinear", (x,), out, bwd)
    return out
