"""Command-line interface: full pipeline, output contract, error lines."""
import re
import subprocess
import sys

import numpy as np
import pytest

from spikedepth import dataio
from spikedepth.cli import main
from spikedepth.metrics import METRIC_KEYS

KEY_VALUE = re.compile(r"^[A-Za-z0-9_.]+=.*$")

TINY_GEN = ["--samples", "4", "--height", "16", "--width", "16",
            "--timesteps", "2", "--teacher-dim", "4"]

TINY_TRAIN_CFG = """\
# pipeline smoke config
t=2
h=16
w=16
d=8
l=4
teacher_dim=4
steps=2
lr=0.001
seed=1
"""


def _run(capsys, argv):
    rc = main(argv)
    out = capsys.readouterr().out.splitlines()
    return rc, out


def _kv(lines):
    return dict(line.split("=", 1) for line in lines)


def _pipeline(tmp_path, capsys):
    """gen + train once; returns (data_dir, ckpt_path, all stdout lines)."""
    data = tmp_path / "data"
    run = tmp_path / "run"
    rc, gen_out = _run(capsys, ["gen", "--out", str(data), "--seed", "3"] + TINY_GEN)
    assert rc == 0
    cfg = tmp_path / "train.cfg"
    cfg.write_text(TINY_TRAIN_CFG + f"data={data}\nout={run}\n")
    rc, train_out = _run(capsys, ["train", "--config", str(cfg)])
    assert rc == 0
    return data, _kv(train_out)["checkpoint"], gen_out + train_out


def test_gen_reports_files(tmp_path, capsys):
    rc, out = _run(capsys, ["gen", "--out", str(tmp_path / "d")] + TINY_GEN)
    assert rc == 0
    kv = _kv(out)
    assert kv["count"] == "4"
    assert kv["data_files"] == "12"  # spikes + depth + features per sample
    assert kv["manifest"] == "manifest.txt"
    files = sorted(p.name for p in (tmp_path / "d").iterdir())
    assert len(files) == 13 and "manifest.txt" in files


def test_gen_deterministic(tmp_path, capsys):
    for sub in ("a", "b"):
        rc, _ = _run(capsys, ["gen", "--out", str(tmp_path / sub), "--seed", "5"] + TINY_GEN)
        assert rc == 0
    for p in sorted((tmp_path / "a").iterdir()):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes(), p.name


def test_gen_bad_height_is_config_error(tmp_path, capsys):
    rc, out = _run(capsys, ["gen", "--out", str(tmp_path / "d"), "--height", "20"])
    assert rc == 1
    assert len(out) == 1 and out[0].startswith("error=CONFIG/")


def test_full_pipeline(tmp_path, capsys):
    data, ckpt, lines = _pipeline(tmp_path, capsys)

    # --- eval: count, metrics exactly once each, energy.* block, CSV sidecar
    csv_path = tmp_path / "per_sample.csv"
    rc, out = _run(capsys, ["eval", "--ckpt", ckpt, "--data", str(data),
                            "--csv", str(csv_path)])
    assert rc == 0
    lines += out
    kv = _kv(out)
    assert kv["count"] == "4"
    joined = "\n".join(out)
    for key in METRIC_KEYS:
        assert len(re.findall(rf"^{key}=", joined, re.M)) == 1, key
    assert "energy.total_pj" in kv
    csv_lines = csv_path.read_text().splitlines()
    assert len(csv_lines) == 5 and csv_lines[0].startswith("sample,abs_rel")

    # --- infer: DPTH output round-trips, PGM gets the right header
    spk = next(p for p in sorted(data.iterdir()) if p.suffix == ".spkt")
    dpth = tmp_path / "pred.dpth"
    rc, out = _run(capsys, ["infer", "--ckpt", ckpt, "--spk", str(spk),
                            "--out", str(dpth)])
    assert rc == 0
    lines += out
    pred = dataio.read_depth(dpth)
    assert pred.shape == (16, 16) and pred.mask.all()
    pgm = tmp_path / "pred.pgm"
    rc, out = _run(capsys, ["infer", "--ckpt", ckpt, "--spk", str(spk),
                            "--out", str(pgm)])
    assert rc == 0
    lines += out
    assert pgm.read_bytes().startswith(b"P5\n16 16\n65535\n")

    # --- energy: parsed per-layer rows sum exactly to the parsed total
    ecsv = tmp_path / "energy.csv"
    rc, out = _run(capsys, ["energy", "--ckpt", ckpt, "--spk", str(spk),
                            "--csv", str(ecsv)])
    assert rc == 0
    lines += out
    kv = _kv(out)
    n_rows = max(int(m.group(1)) for m in
                 (re.match(r"layer\.(\d+)\.", k) for k in kv) if m) + 1
    parts = [float(kv[f"layer.{i}.energy_pj"]) for i in range(n_rows)]
    assert sum(parts) == float(kv["total_pj"])
    assert len(ecsv.read_text().splitlines()) == 1 + n_rows

    # --- global stdout contract: every line is a key=value pair
    for line in lines:
        assert KEY_VALUE.match(line), line


def test_train_overrides_and_missing_paths(tmp_path, capsys):
    data = tmp_path / "data"
    rc, _ = _run(capsys, ["gen", "--out", str(data)] + TINY_GEN)
    assert rc == 0
    cfg = tmp_path / "t.cfg"
    cfg.write_text(TINY_TRAIN_CFG)  # no data=/out= keys
    rc, out = _run(capsys, ["train", "--config", str(cfg)])
    assert rc == 1 and out[0].startswith("error=CONFIG/")
    # --data/--out and --set fill the gaps
    rc, out = _run(capsys, ["train", "--config", str(cfg), "--data", str(data),
                            "--out", str(tmp_path / "run"), "--set", "steps=1"])
    assert rc == 0
    assert _kv(out)["steps"] == "1"


def test_infer_zero_spikes_is_uniform_half(tmp_path, capsys):
    _, ckpt, _ = _pipeline_untrained(tmp_path)
    spk = tmp_path / "zero.spkt"
    dataio.write_spikes(spk, dataio.SpikeTensor.from_dense(np.zeros((2, 2, 16, 16))))
    out = tmp_path / "pred.dpth"
    rc, _ = _run(capsys, ["infer", "--ckpt", ckpt, "--spk", str(spk),
                          "--out", str(out)])
    assert rc == 0
    pred = dataio.read_depth(out)
    np.testing.assert_allclose(pred.values, 0.5, atol=1e-7)


def _pipeline_untrained(tmp_path):
    """Checkpoint of a freshly initialized model (no training)."""
    from helpers import tiny_model
    from spikedepth.checkpoint import save_checkpoint

    ckpt = tmp_path / "init.sdtw"
    save_checkpoint(ckpt, tiny_model(seed=0))
    return None, str(ckpt), None


def test_error_categories(tmp_path, capsys):
    rc, out = _run(capsys, ["eval", "--ckpt", str(tmp_path / "missing.sdtw"),
                            "--data", str(tmp_path)])
    assert rc == 1 and out[0].startswith("error=IO/")

    bad = tmp_path / "bad.spkt"
    bad.write_bytes(b"NOPE" + b"\x00" * 32)
    _, ckpt, _ = _pipeline_untrained(tmp_path)
    rc, out = _run(capsys, ["infer", "--ckpt", ckpt, "--spk", str(bad),
                            "--out", str(tmp_path / "x.dpth")])
    assert rc == 1 and out[0].startswith("error=IO/")

    rc, out = _run(capsys, ["eval", "--ckpt", ckpt, "--data", str(tmp_path / "nodata")])
    assert rc == 1 and out[0].startswith("error=DATA/")


@pytest.mark.parametrize("value,ok", [("1", True), ("abc", False), ("0", False)])
def test_sdt_threads_validation(tmp_path, value, ok):
    import os

    env = dict(os.environ, SDT_THREADS=value)
    proc = subprocess.run(
        [sys.executable, "-m", "spikedepth", "gen", "--out", str(tmp_path / "d"),
         "--samples", "1", "--height", "16", "--width", "16",
         "--timesteps", "1", "--teacher-dim", "2"],
        capture_output=True, text=True, env=env, cwd="/root/pkg",
    )
    if ok:
        assert proc.returncode == 0, proc.stdout + proc.stderr
    else:
        assert proc.returncode == 1
        assert proc.stdout.startswith("error=CONFIG/SDT_THREADS")
