"""Weighted layer building blocks shared by the backbone and the depth heads."""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .neuron import LifParams, mlif


def kaiming_uniform(rng, shape, fan_in, dtype):
    """Fan-in scaled uniform init, U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv:
    """Plain 2-D convolution (used for final projections).

    `bias=False` suits projections that sit right before a loss or squashing
    nonlinearity on top of an affine stack: the bias would be a redundant
    degree of freedom there, and for offset-invariant losses it is an
    unconstrained one that optimizers random-walk.
    """

    def __init__(self, name, cin, cout, k, pad, rng, dtype=np.float32, bias=True):
        self.name = name
        self.k, self.pad = k, pad
        self.w = ad.parameter(
            kaiming_uniform(rng, (cout, cin, k, k), cin * k * k, dtype), name=f"{name}.w"
        )
        self.b = ad.parameter(np.zeros(cout, dtype=dtype), name=f"{name}.b") if bias else None

    def forward(self, x):
        with ad.scope(self.name):
            return ad.conv2d(x, self.w, self.b, stride=1, pad=self.pad)

    def named_params(self):
        yield self.w.name, self.w
        if self.b is not None:
            yield self.b.name, self.b

    def named_buffers(self):
        return iter(())


class ConvBN:
    """Convolution (bias-free) followed by per-channel batch normalisation.

    Training mode normalises with the statistics of the current call and
    updates running buffers (momentum 0.1); eval mode applies the running
    statistics.
    """

    def __init__(self, name, cin, cout, k, pad, rng, dtype=np.float32):
        self.name = name
        self.k, self.pad = k, pad
        self.w = ad.parameter(
            kaiming_uniform(rng, (cout, cin, k, k), cin * k * k, dtype), name=f"{name}.w"
        )
        self.gamma = ad.parameter(np.ones(cout, dtype=dtype), name=f"{name}.gamma")
        self.beta = ad.parameter(np.zeros(cout, dtype=dtype), name=f"{name}.beta")
        self.running_mean = np.zeros(cout, dtype=dtype)
        self.running_var = np.ones(cout, dtype=dtype)

    def forward(self, x, training):
        with ad.scope(self.name):
            y = ad.conv2d(x, self.w, None, stride=1, pad=self.pad)
            return ad.batchnorm(
                y,
                self.gamma,
                self.beta,
                running_mean=self.running_mean,
                running_var=self.running_var,
                training=training,
            )

    def named_params(self):
        yield self.w.name, self.w
        yield self.gamma.name, self.gamma
        yield self.beta.name, self.beta

    def named_buffers(self):
        yield f"{self.name}.running_mean", self.running_mean
        yield f"{self.name}.running_var", self.running_var


class Mlif:
    """Multistep LIF layer wrapper with a trace scope."""

    def __init__(self, name, params: LifParams):
        self.name = name
        self.params = params

    def forward(self, x):
        with ad.scope(self.name):
            return mlif(x, self.params)
