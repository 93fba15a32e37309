"""Leaky integrate-and-fire dynamics and the surrogate spike gradient.

The membrane moves toward the input current with time constant tau
(v <- v + (I - v)/tau), emits a unit spike on reaching threshold, and
hard-resets.  The backward pass swaps the spike Heaviside for an arctan
surrogate so training signals survive the discrete nonlinearity.
"""
import numpy as np

from spikedepth import autodiff as ad
from spikedepth.neuron import LifParams, fresh_state, lif_step, mlif, surrogate_grad

params = LifParams()  # tau=2, threshold=1, reset=0

# --- membrane trace under a constant drive ----------------------------------
print("constant current I=1.2 (reaches threshold, then resets):")
state = fresh_state(())
for t in range(8):
    v_before = float(state.v)
    spike = float(lif_step(state, np.asarray(1.2), params))
    bar = "#" * int(max(v_before, 0) * 30)
    print(f"  t={t}  v={v_before:6.3f} {'SPIKE' if spike else '     '}  |{bar}")

print("\nconstant current I=0.9 (sub-threshold, v -> I asymptotically):")
state = fresh_state(())
for t in range(6):
    lif_step(state, np.asarray(0.9), params)
    print(f"  t={t}  v={float(state.v):6.3f}")

# --- multistep form: one call covers all T steps of a sample ----------------
rng = np.random.default_rng(0)
currents = rng.uniform(-0.5, 2.5, size=(6, 4))
spikes = mlif(ad.tensor(currents), params)
print("\nmlif over a [T=6, 4-neuron] current stack (rows are timesteps):")
print(spikes.data.astype(int))
print("firing rate:", spikes.data.mean())

# --- the surrogate gradient peaks at the threshold --------------------------
print("\nsurrogate derivative vs membrane distance to threshold (alpha=2):")
for dv in (-2.0, -0.5, 0.0, 0.5, 2.0):
    g = float(surrogate_grad(dv, params.surrogate_alpha))
    print(f"  v - thr = {dv:+4.1f}  ->  {g:5.3f}  |{'=' * int(g * 40)}")

# --- gradients flow through spike trains -------------------------------------
x = ad.parameter(currents)
with ad.tape() as tape:
    out = mlif(x, params)
    tape.backward(ad.reduce_sum(out))
print("\n|d(total spikes)/d(current)| per timestep:",
      np.abs(x.grad).mean(axis=1).round(4))
