"""Theoretical energy audit of a forward pass.

Accounting convention (45 nm CMOS estimates):

  * spike-driven layers cost accumulate ops only:
        energy = e_ac * equivalent_MACs * firing_rate * T
    where equivalent_MACs is the dense single-pass MAC count of the layer
    and the firing rate is measured on the actual spike operands, so the
    product equals the exact number of synaptic accumulates;
  * float layers (the first patch-embedding convolution, which sees analog
    event currents, the depth head, distillation projections, and membrane
    updates) cost full multiply-accumulates: energy = e_mac * executed MACs;
  * batch norm folds into the preceding convolution at inference and is not
    charged; pooling, upsampling interpolation and residual adds are
    comparison/add-only and left out of the tally.

Per-layer rows always sum exactly to the reported total.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DimensionError

E_MAC_PJ = 4.6
E_AC_PJ = 0.9

# scope prefixes whose weighted ops are charged at full MAC cost
FLOAT_SCOPES = ("embed.s1.conv", "head", "kd")


def spike_energy_pj(equiv_macs: float, firing_rate: float, timesteps: int, e_ac_pj: float = E_AC_PJ) -> float:
    """Accumulate-only energy of a spike-driven layer."""
    return e_ac_pj * equiv_macs * firing_rate * timesteps


def float_energy_pj(macs: float, e_mac_pj: float = E_MAC_PJ) -> float:
    """Multiply-accumulate energy of a conventional layer."""
    return e_mac_pj * macs


@dataclass
class EnergyRow:
    name: str
    kind: str  # "spike" | "float"
    equiv_macs: int  # dense single-pass MACs
    timesteps: int
    firing_rate: float
    synops: float  # charged ops: accumulates (spike) or MACs (float)
    energy_pj: float


@dataclass
class EnergyReport:
    rows: list
    e_mac_pj: float
    e_ac_pj: float
    param_count: int

    @property
    def total_pj(self) -> float:
        return float(sum(r.energy_pj for r in self.rows))

    @property
    def total_mj(self) -> float:
        return self.total_pj * 1e-9

    @property
    def spike_pj(self) -> float:
        return float(sum(r.energy_pj for r in self.rows if r.kind == "spike"))

    @property
    def float_pj(self) -> float:
        return float(sum(r.energy_pj for r in self.rows if r.kind == "float"))

    def float_twin_pj(self) -> float:
        """Energy of the spike-driven layers if each ran as one dense pass."""
        return float(sum(self.e_mac_pj * r.equiv_macs for r in self.rows if r.kind == "spike"))

    def to_lines(self):
        """One ``key=value`` pair per line; row energies sum to ``total_pj``.

        Floats use repr so parsing the lines back reproduces the exact
        values (summing the parsed per-layer energies in order equals the
        parsed total bit-for-bit).
        """
        out = [
            f"e_mac_pj={self.e_mac_pj!r}",
            f"e_ac_pj={self.e_ac_pj!r}",
            f"params={self.param_count}",
        ]
        for i, r in enumerate(self.rows):
            out.append(f"layer.{i}.name={r.name}")
            out.append(f"layer.{i}.kind={r.kind}")
            out.append(f"layer.{i}.equiv_macs={r.equiv_macs}")
            out.append(f"layer.{i}.firing_rate={r.firing_rate!r}")
            out.append(f"layer.{i}.energy_pj={r.energy_pj!r}")
        out.append(f"spike_pj={self.spike_pj!r}")
        out.append(f"float_pj={self.float_pj!r}")
        out.append(f"float_twin_pj={self.float_twin_pj()!r}")
        out.append(f"total_pj={self.total_pj!r}")
        out.append(f"total_mj={self.total_mj!r}")
        return out

    def csv_rows(self):
        yield "name,kind,equiv_macs,timesteps,firing_rate,synops,energy_pj"
        for r in self.rows:
            yield (
                f"{r.name},{r.kind},{r.equiv_macs},{r.timesteps},"
                f"{r.firing_rate:.9f},{r.synops:.3f},{r.energy_pj:.6f}"
            )


def param_count(module) -> int:
    """Exact number of trainable scalars."""
    return int(sum(p.data.size for _, p in module.named_params()))


def _window_active_sum(x, k, stride, pad):
    """Total active inputs summed over all sliding windows (exact synop base)."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    from numpy.lib.stride_tricks import sliding_window_view

    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    return float(win.sum())


def _is_binary(arr) -> bool:
    return bool(np.isin(arr, (0, 1)).all())


def _conv_row(entry, e_mac_pj, e_ac_pj):
    x, w = entry.inputs[0], entry.inputs[1]
    xd = x.data if x.data.ndim == 4 else x.data[None]
    B = xd.shape[0]
    cout, cin, k, _ = w.data.shape
    od = entry.output.data
    ho, wo = od.shape[-2], od.shape[-1]
    equiv = cout * cin * k * k * ho * wo
    is_float = any(entry.scope.startswith(p) for p in FLOAT_SCOPES)
    if is_float or not _is_binary(xd):
        macs = equiv * B
        return EnergyRow(entry.scope, "float", equiv, B, 1.0, macs, float_energy_pj(macs, e_mac_pj))
    # stride/pad are recoverable from shapes for the layers we build (stride 1)
    pad = ((ho - 1) + k - xd.shape[2]) // 2
    synops = cout * _window_active_sum(xd, k, 1, pad)
    rate = synops / (equiv * B) if equiv else 0.0
    return EnergyRow(entry.scope, "spike", equiv, B,
                     rate, synops, spike_energy_pj(equiv, rate, B, e_ac_pj))


def _matmul_row(entry, e_mac_pj, e_ac_pj):
    a, b = entry.inputs
    ashape, bshape = a.data.shape, b.data.shape
    T = int(np.prod(ashape[:-2])) if len(ashape) > 2 else 1
    m, kk = ashape[-2], ashape[-1]
    n = bshape[-1]
    equiv = m * kk * n
    a_bin, b_bin = _is_binary(a.data), _is_binary(b.data)
    if not (a_bin or b_bin) or any(entry.scope.startswith(p) for p in FLOAT_SCOPES):
        macs = equiv * T
        return EnergyRow(entry.scope, "float", equiv, T, 1.0, macs, float_energy_pj(macs, e_mac_pj))
    if a_bin and b_bin:
        synops = float(entry.output.data.sum())  # exact co-activation count
    elif b_bin:
        synops = m * float(b.data.sum())
    else:
        synops = n * float(a.data.sum())
    rate = synops / (equiv * T) if equiv else 0.0
    return EnergyRow(entry.scope, "spike", equiv, T,
                     rate, synops, spike_energy_pj(equiv, rate, T, e_ac_pj))


def _mlif_row(entry, e_mac_pj):
    xd = entry.inputs[0].data
    T = xd.shape[0]
    neurons = int(np.prod(xd.shape[1:]))
    macs = 2 * neurons * T  # leak decay + scaled input add per neuron-step
    return EnergyRow(entry.scope, "float", 2 * neurons, T, 1.0, macs, float_energy_pj(macs, e_mac_pj))


def audit(model, spikes_dense, e_mac_pj: float = E_MAC_PJ, e_ac_pj: float = E_AC_PJ) -> EnergyReport:
    """Run one eval-mode forward pass and price every weighted layer."""
    spikes_dense = np.asarray(spikes_dense)
    if spikes_dense.ndim != 4:
        raise DimensionError(f"audit: spikes must be (T,C,H,W), got {spikes_dense.shape}")
    with ad.tape() as tp:
        model.forward(spikes_dense, training=False)
        entries = list(tp.entries)
    rows = []
    for e in entries:
        if e.scope.startswith("loss"):
            continue
        if e.op == "conv2d":
            rows.append(_conv_row(e, e_mac_pj, e_ac_pj))
        elif e.op == "matmul":
            rows.append(_matmul_row(e, e_mac_pj, e_ac_pj))
        elif e.op == "mlif":
            rows.append(_mlif_row(e, e_mac_pj))
    return EnergyReport(rows=rows, e_mac_pj=e_mac_pj, e_ac_pj=e_ac_pj, param_count=param_count(model))
