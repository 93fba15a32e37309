"""spikedepth: spike-driven transformer for event-camera depth estimation.

A numpy implementation of a binary-spike transformer backbone with
multiply-free attention, a multi-level fusion depth head, surrogate-gradient
training with cross-modality feature distillation, depth metrics, and a
theoretical energy audit.

Submodules are imported lazily so the command-line entry point can pin
math-library thread pools before numpy loads.
"""
from __future__ import annotations

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "autodiff",
    "checkpoint",
    "cli",
    "config",
    "dataio",
    "energy",
    "errors",
    "head",
    "layers",
    "losses",
    "metrics",
    "model",
    "neuron",
    "trace",
    "train",
)

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
