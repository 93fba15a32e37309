"""Surrogate-gradient training with optional feature distillation.

The loop is deterministic in its seed: parameter init, sample order and
every arithmetic step are driven by one `numpy` generator, so two runs
with identical inputs produce byte-identical loss curves and checkpoints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint
from .dataio import DepthMap, SampleTuple, load_dataset
from .errors import ConfigError, DataError, EmptyMaskError, NumericError
from .losses import DistillConfig, FeatureProjections, total_loss
from .metrics import DEFAULT_EPS, average_reports, evaluate
from .model import DepthModel, ModelConfig

LOSS_CSV_NAME = "loss_curve.csv"
CHECKPOINT_NAME = "model.sdtw"


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 1
    steps: int = 0  # >0 caps total optimizer steps, cycling epochs as needed
    batch_size: int = 1
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    kd: bool = True
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def validate(self):
        if self.epochs < 0 or self.steps < 0 or (self.epochs == 0 and self.steps == 0):
            raise ConfigError("need epochs > 0 or steps > 0")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be positive")
        return self


def build_train_config(raw: dict) -> TrainConfig:
    from .config import _convert, _flag  # shared key typing

    kw = {}
    for key in ("seed", "epochs", "steps", "batch_size", "checkpoint_every"):
        if key in raw:
            kw[key] = _convert(key, raw[key])
    for key in ("lr", "beta1", "beta2", "adam_eps", "grad_clip"):
        if key in raw:
            kw[key] = _convert(key, raw[key])
    if "kd" in raw:
        kw["kd"] = _flag("kd", raw["kd"])
    return TrainConfig(**kw).validate()


class Adam:
    """Adam with optional global-norm gradient clipping."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8, grad_clip=0.0):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def _grads(self, scale):
        return [
            (p.grad * scale if p.grad is not None else np.zeros_like(p.data))
            for p in self.params
        ]

    def step(self, grad_scale: float = 1.0) -> float:
        """Apply one update from the accumulated grads; returns the global
        gradient norm before clipping."""
        grads = self._grads(grad_scale)
        gnorm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
        if self.grad_clip > 0 and gnorm > self.grad_clip:
            factor = self.grad_clip / gnorm
            grads = [g * factor for g in grads]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return gnorm


@dataclass
class TrainResult:
    model: DepthModel
    projections: FeatureProjections | None
    rows: list  # (step, total, l_p, l_2) per optimizer step
    csv_path: str
    checkpoint_path: str

    @property
    def steps(self) -> int:
        return len(self.rows)

    @property
    def first_l2(self) -> float:
        return self.rows[0][3]

    @property
    def final_l2(self) -> float:
        return self.rows[-1][3]

    @property
    def final_total(self) -> float:
        return self.rows[-1][1]


def _write_csv(path, rows):
    lines = ["step,total,l_p,l_2"]
    lines += [f"{s},{t!r},{lp!r},{l2!r}" for s, t, lp, l2 in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def train(
    dataset: list[SampleTuple],
    model_cfg: ModelConfig,
    distill_cfg: DistillConfig,
    train_cfg: TrainConfig,
    out_dir,
) -> TrainResult:
    """Optimize a fresh model on `dataset`; writes the per-step loss CSV and
    checkpoint(s) under `out_dir` and returns the trained model."""
    model_cfg.validate()
    distill_cfg.validate(model_cfg.l)
    train_cfg.validate()
    if not dataset:
        raise DataError("train: empty dataset")
    if train_cfg.kd:
        missing = [s.name for s in dataset if s.teacher_features is None]
        if missing:
            raise DataError(f"train: KD is on but samples lack teacher features: {missing}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(train_cfg.seed)
    model = DepthModel(model_cfg, rng)
    projections = FeatureProjections(distill_cfg, model_cfg.d, rng) if train_cfg.kd else None

    params = model.param_tensors()
    if projections is not None:
        params = params + [p for _, p in projections.named_params()]
    opt = Adam(params, train_cfg.lr, train_cfg.beta1, train_cfg.beta2,
               train_cfg.adam_eps, train_cfg.grad_clip)

    n = len(dataset)
    per_epoch = math.ceil(n / train_cfg.batch_size)
    if train_cfg.steps > 0:
        max_steps = train_cfg.steps
        epochs = math.ceil(max_steps / per_epoch)
    else:
        epochs = train_cfg.epochs
        max_steps = epochs * per_epoch

    dense_cache = {s.name or id(s): s.spikes.to_dense() for s in dataset}
    save_distill = distill_cfg if train_cfg.kd else None
    rows = []
    step = 0
    for _ in range(epochs):
        if step >= max_steps:
            break
        order = rng.permutation(n)
        for start in range(0, n, train_cfg.batch_size):
            if step >= max_steps:
                break
            batch = [dataset[i] for i in order[start:start + train_cfg.batch_size]]
            opt.zero_grad()
            tot_acc = lp_acc = l2_acc = 0.0
            for sample in batch:
                with ad.tape() as tp:
                    feats, pred = model.forward(dense_cache[sample.name or id(sample)], training=True)
                    total, lp, l2 = total_loss(
                        feats, pred, sample.depth, sample.teacher_features,
                        projections, distill_cfg, rate_mode=model_cfg.rate_mode,
                        use_kd=train_cfg.kd,
                    )
                    tp.backward(total)
                tot_acc += float(total.data)
                lp_acc += lp
                l2_acc += l2
            k = len(batch)
            if not math.isfinite(tot_acc):
                raise NumericError(f"training diverged at step {step + 1}: loss {tot_acc}")
            opt.step(grad_scale=1.0 / k)
            step += 1
            rows.append((step, tot_acc / k, lp_acc / k, l2_acc / k))
            if train_cfg.checkpoint_every > 0 and step % train_cfg.checkpoint_every == 0:
                save_checkpoint(out / f"model_{step:06d}.sdtw", model, projections, save_distill)

    csv_path = out / LOSS_CSV_NAME
    _write_csv(csv_path, rows)
    ckpt_path = out / CHECKPOINT_NAME
    save_checkpoint(ckpt_path, model, projections, save_distill)
    return TrainResult(model=model, projections=projections, rows=rows,
                       csv_path=str(csv_path), checkpoint_path=str(ckpt_path))


def evaluate_model(model: DepthModel, dataset, eps: float = DEFAULT_EPS):
    """→ (aggregate MetricsReport, per-sample [(name, MetricsReport), ...])."""
    if not dataset:
        raise EmptyMaskError("evaluate_model: no samples to evaluate")
    per_sample = []
    for s in dataset:
        pred = model.predict(s.spikes.to_dense())
        pred_map = DepthMap(pred, np.ones_like(pred, dtype=bool))
        per_sample.append((s.name, evaluate(pred_map, s.depth, eps)))
    return average_reports([r for _, r in per_sample]), per_sample


@dataclass
class EvalResult:
    """Aggregate metrics plus a single-sample energy audit."""

    metrics: object  # MetricsReport averaged over the dataset
    per_sample: list  # [(name, MetricsReport), ...] in dataset order
    energy: object  # EnergyReport for the first sample's forward pass


def evaluate_checkpoint(ckpt_path, data_dir, eps: float = DEFAULT_EPS) -> EvalResult:
    """Metrics over every sample; energy audited on the first sample only
    (the theoretical audit is input-dependent but slow, and one forward
    pass characterizes the operating point).
    """
    from .checkpoint import load_model
    from .energy import audit

    model, _, _ = load_model(ckpt_path)
    dataset = load_dataset(data_dir)
    if not dataset:
        raise EmptyMaskError("evaluate_checkpoint: no samples to evaluate")
    cfg = model.cfg
    got = dataset[0].spikes
    want = (cfg.t, cfg.c, cfg.h, cfg.w)
    if (got.t, got.c, got.h, got.w) != want:
        raise ConfigError(
            "checkpoint/data mismatch: model expects spikes "
            f"(t,c,h,w)={want}, dataset has {(got.t, got.c, got.h, got.w)}"
        )
    metrics, per_sample = evaluate_model(model, dataset, eps)
    report = audit(model, dataset[0].spikes.to_dense())
    return EvalResult(metrics=metrics, per_sample=per_sample, energy=report)
