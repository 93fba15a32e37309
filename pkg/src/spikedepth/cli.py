"""Command-line interface.

Subcommands: gen, train, eval, infer, energy.  Standard output is
machine-parsable ``key=value`` lines only; failures print a single
``error=CATEGORY/message`` line and exit non-zero.  The ``SDT_THREADS``
environment variable (default 1) caps BLAS/OpenMP thread pools for
reproducible timings.
"""
from __future__ import annotations

import os


def _init_threads():
    """Pin math-library thread pools before numpy is first imported."""
    raw = os.environ.get("SDT_THREADS", "1")
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        return f"SDT_THREADS must be a positive integer, got {raw!r}"
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(var, str(n))
    return None


_THREAD_ERROR = _init_threads()

import argparse
import sys

import numpy as np

from . import checkpoint as ckpt
from . import config as cfgmod
from . import dataio, energy
from .errors import ConfigError, SpikeDepthError
from .train import build_train_config, evaluate_checkpoint, train


def _emit(**kv):
    for key, value in kv.items():
        print(f"{key}={value}")


def _cmd_gen(args) -> int:
    samples = dataio.gen_synthetic(
        seed=args.seed, n_samples=args.samples, t=args.timesteps,
        h=args.height, w=args.width,
        contrast_threshold=args.contrast, teacher_dim=args.teacher_dim,
    )
    files = dataio.write_dataset(args.out, samples)
    _emit(out=args.out, count=len(samples), seed=args.seed,
          data_files=len(files) - 1, manifest=files[-1])
    return 0


def _cmd_train(args) -> int:
    raw = cfgmod.read_config(args.config) if args.config else {}
    raw = cfgmod.apply_overrides(raw, args.set)
    data_dir = args.data or raw.get("data")
    out_dir = args.out or raw.get("out")
    if not data_dir:
        raise ConfigError("train: no dataset (pass --data or config key data=)")
    if not out_dir:
        raise ConfigError("train: no output directory (pass --out or config key out=)")
    model_cfg = cfgmod.build_model_config(raw)
    distill_cfg = cfgmod.build_distill_config(raw, n_blocks=model_cfg.l)
    train_cfg = build_train_config(raw)
    dataset = dataio.load_dataset(data_dir, need_teacher=train_cfg.kd)
    result = train(dataset, model_cfg, distill_cfg, train_cfg, out_dir)
    _emit(
        steps=result.steps,
        final_total=repr(result.final_total),
        final_l_2=repr(result.final_l2),
        loss_csv=result.csv_path,
        checkpoint=result.checkpoint_path,
    )
    return 0


def _cmd_eval(args) -> int:
    res = evaluate_checkpoint(args.ckpt, args.data, eps=args.eps)
    _emit(count=len(res.per_sample))
    for line in res.metrics.to_lines():
        print(line)
    for line in res.energy.to_lines():
        print(f"energy.{line}")
    if args.csv:
        from .metrics import MetricsReport

        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(MetricsReport.csv_header() + "\n")
            for name, rep in res.per_sample:
                fh.write(rep.to_csv_row(name) + "\n")
        _emit(csv=args.csv)
    return 0


def _cmd_infer(args) -> int:
    model, _, _ = ckpt.load_model(args.ckpt)
    spikes = dataio.read_spikes(args.spk)
    pred = model.predict(spikes.to_dense())
    if str(args.out).lower().endswith(".pgm"):
        dataio.export_pgm(args.out, pred)
    else:
        dataio.write_depth(args.out, dataio.DepthMap(pred, np.ones(pred.shape, dtype=bool)))
    _emit(out=args.out, h=pred.shape[0], w=pred.shape[1])
    return 0


def _cmd_energy(args) -> int:
    model, _, _ = ckpt.load_model(args.ckpt)
    spikes = dataio.read_spikes(args.spk)
    report = energy.audit(model, spikes.to_dense(), e_mac_pj=args.e_mac, e_ac_pj=args.e_ac)
    for line in report.to_lines():
        print(line)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            for row in report.csv_rows():
                fh.write(row + "\n")
        _emit(csv=args.csv)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikedepth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic event/depth dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--timesteps", type=int, default=4)
    p.add_argument("--contrast", type=float, default=0.15)
    p.add_argument("--teacher-dim", type=int, default=16)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--data", default=None, help="dataset dir (overrides config key data=)")
    p.add_argument("--out", default=None, help="output dir (overrides config key out=)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="metrics + energy audit of a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--csv", default=None, help="write per-sample metrics CSV here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("infer", help="predict depth for one spike file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--spk", required=True)
    p.add_argument("--out", required=True,
                   help="output path; .pgm extension exports 16-bit PGM, else DPTH")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("energy", help="theoretical energy audit of one forward pass")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--spk", required=True)
    p.add_argument("--e-mac", type=float, default=energy.E_MAC_PJ)
    p.add_argument("--e-ac", type=float, default=energy.E_AC_PJ)
    p.add_argument("--csv", default=None, help="write per-layer rows CSV here")
    p.set_defaults(func=_cmd_energy)
    return parser


def main(argv=None) -> int:
    if _THREAD_ERROR is not None:
        print(f"error=CONFIG/{_THREAD_ERROR}")
        return 1
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SpikeDepthError as exc:
        msg = str(exc).replace("\n", "; ")
        print(f"error={exc.category}/{msg}")
        return 1
    except OSError as exc:
        msg = str(exc).replace("\n", "; ")
        print(f"error=IO/{msg}")
        return 1


def entry() -> None:
    try:
        sys.exit(main())
    except BrokenPipeError:  # stdout consumer (e.g. head) went away
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        sys.exit(1)


if __name__ == "__main__":
    entry()
