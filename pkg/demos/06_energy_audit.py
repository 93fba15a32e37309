"""Theoretical energy audit: why sparse binary activity is cheap.

Spike-driven layers pay accumulate cost only on actual spikes
(e_ac * MACs * rate * T); conventional layers pay full multiply-accumulate
cost (e_mac * MACs).  The audit runs one forward pass, measures real firing
rates, and prices every weighted layer.
"""
import numpy as np

from spikedepth.dataio import gen_synthetic
from spikedepth.energy import audit
from spikedepth.model import DepthModel, ModelConfig

cfg = ModelConfig(t=4, h=64, w=64, d=64, l=4)
model = DepthModel(cfg, np.random.default_rng(0))
sample = gen_synthetic(seed=3, n_samples=1, t=4, h=64, w=64, teacher_dim=16)[0]

report = audit(model, sample.spikes.to_dense())

print(f"parameters       : {report.param_count:,}")
print(f"input firing rate: {sample.spikes.to_dense().mean():.3f}")
print(f"spike-driven     : {report.spike_pj / 1e6:.3f} uJ")
print(f"float layers     : {report.float_pj / 1e6:.3f} uJ")
print(f"total            : {report.total_mj:.6f} mJ")
print(f"float twin of the spiking layers (one dense pass each): "
      f"{report.float_twin_pj() / 1e6:.3f} uJ "
      f"-> {report.float_twin_pj() / max(report.spike_pj, 1e-12):.1f}x the spiking cost")

rows = sorted(report.rows, key=lambda r: -r.energy_pj)[:10]
print("\nmost expensive layers:")
print(f"  {'layer':24s} {'kind':6s} {'rate':>6s} {'energy':>12s}")
for r in rows:
    print(f"  {r.name:24s} {r.kind:6s} {r.firing_rate:6.3f} {r.energy_pj / 1e3:9.1f} nJ")

# the crossover rule: a spike layer undercuts its dense float twin
# exactly when rate * T * e_ac < e_mac
worst = max((r for r in report.rows if r.kind == "spike"),
            key=lambda r: r.firing_rate)
margin = report.e_mac_pj / (worst.timesteps * report.e_ac_pj)
print(f"\nbusiest spike layer: {worst.name} at rate {worst.firing_rate:.3f}")
print(f"it would need rate > {margin:.3f} over T={worst.timesteps} steps "
      f"to cost more than a single dense float pass")

# zero input costs exactly zero spike energy
quiet = audit(model, np.zeros((cfg.t, cfg.c, cfg.h, cfg.w), np.float32))
print(f"all-zero input -> spike energy {quiet.spike_pj} pJ "
      f"(float front/head still pay {quiet.float_pj / 1e6:.3f} uJ)")
