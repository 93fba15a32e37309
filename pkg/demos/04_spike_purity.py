"""Why the backbone is "purely spike-driven", shown on a live op trace.

Every weighted layer in the transformer backbone consumes binary tensors:
convolutions see spikes, and the attention products (QK^T)V multiply binary
matrices, so their entries are exact non-negative integers and no softmax
is needed.  An instrumentation pass walks the recorded ops and proves it.
"""
import numpy as np

from spikedepth import autodiff as ad
from spikedepth.model import DepthModel, ModelConfig, spike_attention_product
from spikedepth.trace import assert_spike_purity, trace_scopes

# --- attention algebra on a hand-sized example ------------------------------
q = ad.tensor(np.array([[[1.0, 0.0], [0.0, 1.0]]]))
k = ad.tensor(np.array([[[1.0, 1.0], [0.0, 0.0]]]))
v = ad.tensor(np.array([[[0.0, 1.0], [1.0, 0.0]]]))
with ad.tape():
    out = spike_attention_product(q, k, v, s=1.0)
scores = q.data @ np.transpose(k.data, (0, 2, 1))
print("QK^T (co-activation counts):\n", scores[0].astype(int))
print("(QK^T)V:\n", out.data[0])
left = scores @ v.data
right = q.data @ (np.transpose(k.data, (0, 2, 1)) @ v.data)
print("associativity exact:", np.array_equal(left, right))

# --- full-backbone audit ------------------------------------------------------
cfg = ModelConfig(t=4, h=32, w=32, d=32, l=4)
model = DepthModel(cfg, np.random.default_rng(0))
rng = np.random.default_rng(1)
spikes = (rng.random((cfg.t, cfg.c, cfg.h, cfg.w)) < 0.25).astype(np.float32)

with ad.tape() as tape:
    feats, pred = model.forward(spikes, training=False)
    counters = assert_spike_purity(tape.entries, boundary_tensors=feats)

print("\npurity audit counters:", counters)
print("block outputs binary :", all(np.isin(f.data, (0, 1)).all() for f in feats))
print("softmax ops recorded :", sum(e.op == "softmax" for e in tape.entries))
print("prediction range     : [%.3f, %.3f]  (untrained net: sparse activity "
      "fades, the head falls back to its 0.5 prior)" % (pred.data.min(), pred.data.max()))

scopes = trace_scopes(tape.entries)
print(f"\n{len(tape.entries)} ops across {len(set(scopes))} scopes; a sample path:")
for s in list(dict.fromkeys(scopes))[:8]:
    print("  ", s)
