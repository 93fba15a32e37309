"""Depth heads: multi-level fusion decoder and the minimal linear-FCN baseline.

Both heads consume the per-block spike feature stacks F_i [T, D, H/8, W/8],
rate-encode them over time, and emit a sigmoid-bounded depth map at full
resolution.  The fusion head progressively doubles resolution while adding
skip paths from every block; the linear-FCN baseline projects the final
block's rate map and upsamples in one jump.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import DimensionError
from .layers import Conv, ConvBN


def rate_encode(x: ad.Tensor, mode: str = "mean") -> ad.Tensor:
    """Collapse the leading time axis of a spike stack to firing rates
    (mode="mean") or spike counts (mode="sum")."""
    if x.data.ndim < 1 or x.data.shape[0] < 1:
        raise DimensionError(f"rate_encode: need a non-empty time axis, got {x.data.shape}")
    with ad.scope("rate"):
        s = ad.reduce_sum(x, axis=0)
        if mode == "mean":
            return ad.scale(s, 1.0 / x.data.shape[0])
        if mode == "sum":
            return s
    raise DimensionError(f"rate_encode: unknown mode {mode!r}")


class FusionHead:
    """Coarse-to-fine fusion of four rate-encoded feature levels.

    With rate maps R1..R4 at H/8 x W/8 (all D channels):

        Y2 = ConvBN(Up2(R1)) + Up2(R2)          at H/4
        Y3 = ConvBN(Up2(Y2)) + Up4(R3)          at H/2
        Y4 = ConvBN(Up2(Y3)) + Up8(R4)          at H
        Y  = sigmoid(proj1x1(Y4))               single channel

    Upsampling is bilinear (align_corners=False); the carried branch uses
    3x3 ConvBN at every level and the final projection is a plain 1x1 conv.
    """

    kind = "fusion"

    def __init__(self, cfg, rng, dtype=np.float32):
        d = cfg.d
        self.rate_mode = cfg.rate_mode
        self.conv2 = ConvBN("l2.conv", d, d, 3, 1, rng, dtype)
        self.conv3 = ConvBN("l3.conv", d, d, 3, 1, rng, dtype)
        self.conv4 = ConvBN("l4.conv", d, d, 3, 1, rng, dtype)
        self.proj = Conv("proj", d, 1, 1, 0, rng, dtype, bias=False)

    def forward(self, features, training):
        if len(features) != 4:
            raise DimensionError(f"fusion head needs exactly 4 feature stacks, got {len(features)}")
        with ad.scope("head"):
            r1, r2, r3, r4 = (rate_encode(f, self.rate_mode) for f in features)
            y2 = ad.add(self.conv2.forward(ad.upsample_bilinear(r1, 2), training),
                        ad.upsample_bilinear(r2, 2))
            y3 = ad.add(self.conv3.forward(ad.upsample_bilinear(y2, 2), training),
                        ad.upsample_bilinear(r3, 4))
            y4 = ad.add(self.conv4.forward(ad.upsample_bilinear(y3, 2), training),
                        ad.upsample_bilinear(r4, 8))
            out = ad.sigmoid(self.proj.forward(y4))
            return ad.reshape(out, out.data.shape[-2:])

    def modules(self):
        return (self.conv2, self.conv3, self.conv4, self.proj)

    def named_params(self):
        for m in self.modules():
            for n, p in m.named_params():
                yield f"head.{n}", p

    def named_buffers(self):
        for m in self.modules():
            for n, b in m.named_buffers():
                yield f"head.{n}", b


class LinearFcnHead:
    """Ablation baseline: 1x1 ConvBN on the final block's rate map, one x8
    bilinear upsample, sigmoid."""

    kind = "linear_fcn"

    def __init__(self, cfg, rng, dtype=np.float32):
        self.rate_mode = cfg.rate_mode
        self.proj = ConvBN("fcn.conv", cfg.d, 1, 1, 0, rng, dtype)

    def forward(self, features, training):
        if not features:
            raise DimensionError("linear_fcn head needs at least one feature stack")
        with ad.scope("head"):
            r = rate_encode(features[-1], self.rate_mode)
            y = self.proj.forward(r, training)
            out = ad.sigmoid(ad.upsample_bilinear(y, 8))
            return ad.reshape(out, out.data.shape[-2:])

    def modules(self):
        return (self.proj,)

    def named_params(self):
        for n, p in self.proj.named_params():
            yield f"head.{n}", p

    def named_buffers(self):
        for n, b in self.proj.named_buffers():
            yield f"head.{n}", b
