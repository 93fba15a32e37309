"""Binary model checkpoints.

Layout (all integers little-endian uint32):

    magic   b"SDTW"
    version 1
    config  length-prefixed UTF-8 flat key=value text
    count   number of tensors
    tensor  name length, name bytes, ndim, dims..., float32 payload

Tensors cover trainable parameters and batch-norm running statistics of
the depth model, plus distillation projection weights when present.
"""
from __future__ import annotations

import struct

import numpy as np

from . import config as cfgmod
from .dataio import _read_exact
from .errors import FormatError
from .losses import FeatureProjections
from .model import DepthModel

SDTW_MAGIC = b"SDTW"
SDTW_VERSION = 1


def _named_tensors(model, projections=None):
    for name, p in model.named_params():
        yield name, p.data
    for name, buf in model.named_buffers():
        yield name, buf
    if projections is not None:
        for name, p in projections.named_params():
            yield name, p.data


def save_checkpoint(path, model, projections=None, distill=None) -> None:
    text = cfgmod.encode_model_config(model.cfg, distill)
    items = list(_named_tensors(model, projections))
    with open(path, "wb") as fh:
        fh.write(SDTW_MAGIC)
        fh.write(struct.pack("<I", SDTW_VERSION))
        blob = text.encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(items)))
        for name, arr in items:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            arr = np.asarray(arr)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_checkpoint(path):
    """→ (model config, distill config or None, {name: float32 array})."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "checkpoint magic")
        if magic != SDTW_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "checkpoint version"))
        if version != SDTW_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        text = _read_exact(fh, clen, "config text").decode("utf-8")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(fh, 4, "tensor name length"))
            name = _read_exact(fh, nlen, "tensor name").decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, "tensor rank"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "tensor shape"))
            n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(_read_exact(fh, 4 * n, "tensor data"), dtype="<f4").reshape(shape)
            if name in tensors:
                raise FormatError(f"duplicate tensor {name!r} in checkpoint")
            tensors[name] = data.astype(np.float32)
    model_cfg, distill = cfgmod.decode_model_config(text)
    return model_cfg, distill, tensors


def load_model(path, seed: int = 0):
    """Rebuild a model (and projections, if saved) from a checkpoint."""
    model_cfg, distill, tensors = read_checkpoint(path)
    rng = np.random.default_rng(seed)
    model = DepthModel(model_cfg, rng)
    projections = None
    if distill is not None and any(k.startswith("kd.") for k in tensors):
        projections = FeatureProjections(distill, model_cfg.d, rng)
    slots = dict(_named_tensors(model, projections))
    missing = sorted(set(slots) - set(tensors))
    extra = sorted(set(tensors) - set(slots))
    if missing or extra:
        raise FormatError(f"checkpoint tensor mismatch: missing={missing} extra={extra}")
    for name, arr in slots.items():
        loaded = tensors[name]
        if loaded.shape != arr.shape:
            raise FormatError(
                f"checkpoint tensor {name!r}: shape {loaded.shape} != expected {arr.shape}"
            )
        arr[...] = loaded
    return model, projections, distill
