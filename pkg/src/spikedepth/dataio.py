"""Binary tensor formats, the synthetic event-scene generator, and dataset IO.

File formats (all headers little-endian u32 after a 4-byte ASCII magic):

  SPKT  magic "SPKT", version=1, T, C, H, W, then ceil(T*C*H*W/8) payload
        bytes.  Bits are packed MSB-first in flattened row-major order,
        flat index ((t*C + c)*H + h)*W + w.
  DPTH  magic "DPTH", H, W, then H*W float32 LE row-major; NaN marks an
        invalid pixel.
  FEAT  magic "FEAT", D, H, W, then D*H*W float32 LE row-major.

A dataset directory holds one .spkt/.dpth/.feat triple per sample plus a
plain-text manifest listing relative paths.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, FormatError

SPKT_MAGIC = b"SPKT"
SPKT_VERSION = 1
DPTH_MAGIC = b"DPTH"
FEAT_MAGIC = b"FEAT"


class SpikeTensor:
    """Bit-packed binary tensor over (T, C, H, W)."""

    __slots__ = ("t", "c", "h", "w", "bits")

    def __init__(self, t, c, h, w, bits: bytes):
        n = t * c * h * w
        need = (n + 7) // 8
        if len(bits) != need:
            raise DimensionError(f"SpikeTensor: payload of {len(bits)} bytes, expected {need}")
        self.t, self.c, self.h, self.w = t, c, h, w
        self.bits = bits

    @property
    def shape(self):
        return (self.t, self.c, self.h, self.w)

    @classmethod
    def from_dense(cls, arr) -> "SpikeTensor":
        arr = np.asarray(arr)
        if arr.ndim != 4:
            raise DimensionError(f"SpikeTensor.from_dense: need (T,C,H,W), got {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise DataError("SpikeTensor.from_dense: values must be exactly 0 or 1")
        packed = np.packbits(arr.astype(np.uint8).reshape(-1), bitorder="big")
        return cls(*arr.shape, packed.tobytes())

    def to_dense(self, dtype=np.float32) -> np.ndarray:
        n = self.t * self.c * self.h * self.w
        flat = np.unpackbits(np.frombuffer(self.bits, dtype=np.uint8), count=n, bitorder="big")
        return flat.reshape(self.t, self.c, self.h, self.w).astype(dtype)

    def firing_rate(self) -> float:
        n = self.t * self.c * self.h * self.w
        flat = np.unpackbits(np.frombuffer(self.bits, dtype=np.uint8), count=n, bitorder="big")
        return float(flat.mean()) if n else 0.0


@dataclass
class DepthMap:
    """Normalized depth in [0, 1] with a per-pixel validity mask.

    `values` holds 0.0 at invalid pixels in memory; on disk invalid pixels
    are stored as NaN.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.mask.shape:
            raise DimensionError(
                f"DepthMap: values {self.values.shape} and mask {self.mask.shape} must be equal 2-D"
            )

    @property
    def shape(self):
        return self.values.shape


@dataclass
class SampleTuple:
    spikes: SpikeTensor
    depth: DepthMap
    teacher_features: np.ndarray | None = None
    name: str = ""


# ---------------------------------------------------------------------------
# codecs


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def write_spikes(path, spikes: SpikeTensor) -> None:
    with open(path, "wb") as f:
        f.write(SPKT_MAGIC)
        f.write(struct.pack("<5I", SPKT_VERSION, spikes.t, spikes.c, spikes.h, spikes.w))
        f.write(spikes.bits)


def read_spikes(path) -> SpikeTensor:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "SPKT magic")
        if magic != SPKT_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {SPKT_MAGIC!r}")
        version, t, c, h, w = struct.unpack("<5I", _read_exact(f, 20, "SPKT header"))
        if version != SPKT_VERSION:
            raise FormatError(f"unsupported SPKT version {version}")
        n = t * c * h * w
        payload = f.read()
    need = (n + 7) // 8
    if len(payload) != need:
        raise FormatError(f"SPKT payload length {len(payload)}, expected {need}")
    return SpikeTensor(t, c, h, w, payload)


def write_depth(path, depth: DepthMap) -> None:
    vals = depth.values.astype("<f4", copy=True)
    vals[~depth.mask] = np.float32("nan")
    with open(path, "wb") as f:
        f.write(DPTH_MAGIC)
        f.write(struct.pack("<2I", depth.values.shape[0], depth.values.shape[1]))
        f.write(vals.tobytes())


def read_depth(path) -> DepthMap:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "DPTH magic")
        if magic != DPTH_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {DPTH_MAGIC!r}")
        h, w = struct.unpack("<2I", _read_exact(f, 8, "DPTH header"))
        payload = f.read()
    if len(payload) != h * w * 4:
        raise FormatError(f"DPTH payload length {len(payload)}, expected {h * w * 4}")
    vals = np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float32)
    mask = np.isfinite(vals)
    vals = np.where(mask, vals, np.float32(0.0))
    return DepthMap(values=vals, mask=mask)


def write_features(path, feats: np.ndarray) -> None:
    feats = np.asarray(feats, dtype="<f4")
    if feats.ndim != 3:
        raise DimensionError(f"write_features: need (D,H,W), got {feats.shape}")
    with open(path, "wb") as f:
        f.write(FEAT_MAGIC)
        f.write(struct.pack("<3I", *feats.shape))
        f.write(feats.tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "FEAT magic")
        if magic != FEAT_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {FEAT_MAGIC!r}")
        d, h, w = struct.unpack("<3I", _read_exact(f, 12, "FEAT header"))
        payload = f.read()
    if len(payload) != d * h * w * 4:
        raise FormatError(f"FEAT payload length {len(payload)}, expected {d * h * w * 4}")
    return np.frombuffer(payload, dtype="<f4").reshape(d, h, w).astype(np.float32)


def export_pgm(path, depth_values: np.ndarray) -> None:
    """Write normalized depth as a 16-bit binary PGM (maxval 65535, MSB first)."""
    vals = np.asarray(depth_values, dtype=np.float64)
    if vals.ndim != 2:
        raise DimensionError(f"export_pgm: need a 2-D map, got {vals.shape}")
    if vals.min() < 0.0 or vals.max() > 1.0:
        raise DataError("export_pgm: depth values must lie in [0, 1]")
    h, w = vals.shape
    pix = np.rint(vals * 65535.0).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(pix.tobytes())


# ---------------------------------------------------------------------------
# synthetic scenes


def _block_texture(rng, h, w, cell=4):
    """Blocky random texture in (0.15, 1.0]; coarse cells so 1-px motion only
    fires events at cell borders and object edges."""
    gh, gw = math.ceil(h / cell), math.ceil(w / cell)
    grid = 0.15 + 0.85 * rng.random((gh, gw))
    return np.repeat(np.repeat(grid, cell, axis=0), cell, axis=1)[:h, :w]


def _box_smooth3(x):
    """3x3 box filter with edge replication."""
    p = np.pad(x, ((1, 1), (1, 1)), mode="edge")
    out = np.zeros_like(x)
    for dy in range(3):
        for dx in range(3):
            out += p[dy : dy + x.shape[0], dx : dx + x.shape[1]]
    return out / 9.0


def gen_synthetic(
    seed: int,
    n_samples: int,
    t: int = 4,
    h: int = 64,
    w: int = 64,
    contrast_threshold: float = 0.15,
    n_rects: tuple = (2, 5),
    depth_range: tuple = (0.45, 0.75),
    size_range: tuple = (0.55, 0.85),
    speed_range: tuple = (1, 2),
    bg_depth: float = 0.85,
    teacher_dim: int = 16,
    teacher_noise: float = 0.05,
) -> list[SampleTuple]:
    """Procedural event scenes: textured rectangles at distinct depths
    translating over a static textured background at depth `bg_depth`.

    A spike fires on a pixel/polarity when the log-intensity change between
    consecutive frames reaches `contrast_threshold` (channel 0 positive,
    channel 1 negative).  Ground truth is the nearest surface depth of the
    final frame, normalized to [0, 1]; rectangle edges land on the 8-pixel
    token grid in that frame so the coarsest feature map can represent them
    exactly.  Depths stay away from 0 and 1 because a sigmoid-bounded
    regressor can only approach the codomain endpoints asymptotically.
    Teacher features are a smoothed multi-channel linear encoding of the
    depth map (at H/8 x W/8) plus seeded noise; the encoding basis is fixed
    per dataset so one frozen "teacher" explains every sample.  Fully
    deterministic in `seed`.
    """
    if h % 8 or w % 8:
        raise DimensionError(f"gen_synthetic: H and W must be divisible by 8, got ({h},{w})")
    if t < 1 or n_samples < 0:
        raise DimensionError("gen_synthetic: need t >= 1 and n_samples >= 0")
    if contrast_threshold <= 0:
        raise DataError("gen_synthetic: contrast_threshold must be positive")
    if not 0.0 < bg_depth <= 1.0:
        raise DataError(f"gen_synthetic: bg_depth must lie in (0, 1], got {bg_depth}")

    rng = np.random.default_rng(seed)
    # teacher encoding basis, drawn once per dataset
    gains = rng.uniform(0.8, 1.6, size=teacher_dim) * rng.choice((-1.0, 1.0), size=teacher_dim)
    offsets = rng.uniform(-0.2, 0.2, size=teacher_dim)

    depth_grid = np.linspace(depth_range[0], depth_range[1], 16)
    samples = []
    for idx in range(n_samples):
        bg = _block_texture(rng, h, w)
        k = int(rng.integers(n_rects[0], n_rects[1] + 1))
        depths = rng.choice(depth_grid, size=min(k, len(depth_grid)), replace=False)
        rects = []
        for d in depths:
            # sizes and final-frame corners on the 8-px grid (see docstring)
            rh = max(8, int(round(h * rng.uniform(*size_range) / 8)) * 8)
            rw = max(8, int(round(w * rng.uniform(*size_range) / 8)) * 8)
            yf = int(rng.integers(0, max((h - rh) // 8, 0) + 1)) * 8
            xf = int(rng.integers(0, max((w - rw) // 8, 0) + 1)) * 8
            lo, hi = int(speed_range[0]), int(speed_range[1])
            if hi == 0:
                vy = vx = 0
            else:
                while True:
                    vy = int(rng.integers(-hi, hi + 1))
                    vx = int(rng.integers(-hi, hi + 1))
                    if max(abs(vy), abs(vx)) >= max(lo, 1):
                        break
            rects.append(
                dict(depth=float(d), tex=_block_texture(rng, rh, rw), yf=yf, xf=xf, vy=vy, vx=vx)
            )

        def render(step):
            inten = bg.copy()
            dep = np.full((h, w), bg_depth, dtype=np.float64)
            # paint far to near so nearer surfaces occlude
            for r in sorted(rects, key=lambda r: -r["depth"]):
                y = r["yf"] - r["vy"] * (t - step)
                x = r["xf"] - r["vx"] * (t - step)
                rh, rw = r["tex"].shape
                ys, ye = max(y, 0), min(y + rh, h)
                xs, xe = max(x, 0), min(x + rw, w)
                if ys >= ye or xs >= xe:
                    continue
                inten[ys:ye, xs:xe] = r["tex"][ys - y : ye - y, xs - x : xe - x]
                dep[ys:ye, xs:xe] = r["depth"]
            return inten, dep

        spikes = np.zeros((t, 2, h, w), dtype=np.uint8)
        prev_log = np.log(render(0)[0])
        final_depth = None
        for step in range(1, t + 1):
            inten, dep = render(step)
            cur_log = np.log(inten)
            diff = cur_log - prev_log
            spikes[step - 1, 0] = diff >= contrast_threshold
            spikes[step - 1, 1] = diff <= -contrast_threshold
            prev_log = cur_log
            final_depth = dep

        depth_map = DepthMap(values=final_depth.astype(np.float32), mask=np.ones((h, w), bool))

        d8 = final_depth.reshape(h // 8, 8, w // 8, 8).mean(axis=(1, 3))
        feats = np.empty((teacher_dim, h // 8, w // 8), dtype=np.float32)
        for j in range(teacher_dim):
            feats[j] = _box_smooth3(gains[j] * 2.0 * (d8 - 0.5) + offsets[j])
        feats += rng.normal(0.0, teacher_noise, size=feats.shape).astype(np.float32)

        samples.append(
            SampleTuple(
                spikes=SpikeTensor.from_dense(spikes),
                depth=depth_map,
                teacher_features=feats,
                name=f"sample_{idx:03d}",
            )
        )
    return samples


# ---------------------------------------------------------------------------
# dataset directories


MANIFEST_NAME = "manifest.txt"


def write_dataset(out_dir, samples: list[SampleTuple]) -> list[str]:
    """Write one .spkt/.dpth/.feat triple per sample plus the manifest.
    Returns the relative paths written (manifest last)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"count={len(samples)}"]
    written = []
    for s in samples:
        spk, dpt, fea = f"{s.name}.spkt", f"{s.name}.dpth", f"{s.name}.feat"
        write_spikes(out / spk, s.spikes)
        write_depth(out / dpt, s.depth)
        if s.teacher_features is None:
            raise DataError(f"write_dataset: sample {s.name} has no teacher features")
        write_features(out / fea, s.teacher_features)
        lines.append(f"sample={s.name} spk={spk} depth={dpt} feat={fea}")
        written += [spk, dpt, fea]
    (out / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return written + [MANIFEST_NAME]


def load_dataset(data_dir, need_teacher: bool = False) -> list[SampleTuple]:
    root = Path(data_dir)
    manifest = root / MANIFEST_NAME
    if not manifest.is_file():
        raise DataError(f"no manifest at {manifest}")
    samples = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("count="):
            continue
        fields = dict(part.split("=", 1) for part in line.split())
        if "spk" not in fields or "depth" not in fields:
            raise DataError(f"malformed manifest line: {line!r}")
        spikes = read_spikes(root / fields["spk"])
        depth = read_depth(root / fields["depth"])
        teacher = None
        feat_rel = fields.get("feat", "-")
        if feat_rel != "-" and (root / feat_rel).is_file():
            teacher = read_features(root / feat_rel)
        elif need_teacher:
            raise DataError(f"missing teacher feature file for sample {fields.get('sample')}")
        if need_teacher and teacher is None:
            raise DataError(f"missing teacher feature file for sample {fields.get('sample')}")
        if spikes.h != depth.shape[0] or spikes.w != depth.shape[1]:
            raise DataError(
                f"sample {fields.get('sample')}: spike dims {spikes.h}x{spikes.w} "
                f"!= depth dims {depth.shape[0]}x{depth.shape[1]}"
            )
        if teacher is not None and teacher.shape[1:] != (spikes.h // 8, spikes.w // 8):
            raise DataError(
                f"sample {fields.get('sample')}: teacher grid {teacher.shape[1:]} "
                f"!= (H/8, W/8) = {(spikes.h // 8, spikes.w // 8)}"
            )
        samples.append(
            SampleTuple(spikes=spikes, depth=depth, teacher_features=teacher, name=fields.get("sample", ""))
        )
    return samples
