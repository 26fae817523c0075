import json
import os
import subprocess
import sys

import pytest

from synsamp import cli
from synsamp.io import CHECKPOINT, MANIFEST, read_manifest

from conftest import SMALL


def _run(argv):
    return cli.main(argv)


def _csv_bytes(d):
    return {f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d)) if f.endswith(".csv")}


def _sets(name):
    out = []
    for o in SMALL[name]:
        out += ["--set", o]
    return out


def test_run_writes_outputs(tmp_path):
    out = tmp_path / "r"
    assert _run(["rbm-generalization", "--out", str(out), "--seed", "2", "--quiet",
                 "--prior", "uniform"] + _sets("rbm-generalization")) == 0
    m = read_manifest(out)
    assert m["status"] == "complete" and m["seed"] == 2
    assert "sampler.prior" not in m
    assert "prior = uniform" in (out / m["config_file"]).read_text()
    for f in ("test_log_likelihood.csv", "summary.json", "config.ini"):
        assert (out / f).exists()
    assert json.loads((out / "summary.json").read_text())["prior"] == "uniform"


def test_resume_is_bit_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = _sets("rbm-generalization") + ["--seed", "5", "--quiet"]
    assert _run(["rbm-generalization", "--out", str(a)] + args) == 0
    assert _run(["rbm-generalization", "--out", str(b), "--max-chunks", "2"] + args) == 0
    assert read_manifest(b)["status"] == "running"
    assert _run(["resume", str(b), "--max-chunks", "1", "--quiet"]) == 0
    assert _run(["resume", str(b / MANIFEST), "--quiet"]) == 0
    assert _csv_bytes(a) == _csv_bytes(b)


def test_resume_across_lesion_does_not_replay_it(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = _sets("wta-lesion") + ["--seed", "1", "--quiet"]
    assert _run(["wta-lesion", "--out", str(a)] + args) == 0
    # stop right after the first lesion has been applied
    assert _run(["wta-lesion", "--out", str(b), "--max-chunks", "3"] + args) == 0
    assert read_manifest(b)["lesion_times_ms"] == [10000.0]
    assert _run(["resume", str(b), "--quiet"]) == 0
    lesions = (b / "lesions.csv").read_text().splitlines()
    assert len(lesions) == 3  # header + one row per lesion
    assert _csv_bytes(a) == _csv_bytes(b)
    assert read_manifest(b)["lesion_times_ms"] == [10000.0, 20000.0]


def test_resume_refuses_tampered_checkpoint(tmp_path, capsys):
    out = tmp_path / "t"
    _run(["rbm-generalization", "--out", str(out), "--max-chunks", "1", "--quiet"]
         + _sets("rbm-generalization"))
    with open(out / CHECKPOINT, "ab") as f:
        f.write(b"x")
    assert _run(["resume", str(out)]) == cli.EXIT_RESUME
    assert "mismatch" in capsys.readouterr().err


def test_resume_refuses_complete_run(tmp_path):
    out = tmp_path / "c"
    _run(["rbm-generalization", "--out", str(out), "--quiet"] + _sets("rbm-generalization"))
    assert _run(["resume", str(out)]) == cli.EXIT_RESUME


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[run]\nexperiment = wta-adapt\n[task]\nprobe_ms = 200\ncolour = red\n")
    assert _run(["run", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "line 5" in capsys.readouterr().err
    assert _run(["wta-adapt", "--out", str(tmp_path / "o"), "--set", "wta.b_per_s=-1"]) == cli.EXIT_CONFIG
    assert _run(["wta-adapt", "--out", str(tmp_path / "o"), "--set", "task.presentations=1,2"]) == cli.EXIT_CONFIG
    assert _run(["rbm-generalization", "--out", str(tmp_path / "o"), "--config", str(cfg)]) == cli.EXIT_CONFIG
    assert _run(["wta-adapt", "--out", str(tmp_path / "o"), "--config", str(tmp_path / "none.ini")]) == cli.EXIT_CONFIG


def test_run_subcommand_uses_config_file(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nexperiment = rbm-generalization\nseed = 8\n[sampler]\nn_steps = 1000\n"
                   "eval_every = 500\nreplicas = 1\nend_evals = 1\n")
    assert _run(["run", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    assert read_manifest(tmp_path / "o")["seed"] == 8


def test_sweep_launches_one_process_per_seed(tmp_path):
    out = tmp_path / "s"
    r = subprocess.run([sys.executable, "-m", "synsamp", "sweep", "rbm-generalization",
                        "--seeds", "1,2", "--jobs", "2", "--out", str(out)] + _sets("rbm-generalization"),
                       capture_output=True, text=True, timeout=600)
    assert r.returncode == 0, r.stderr
    a, b = (read_manifest(out / f"seed_{s}") for s in (1, 2))
    assert (a["seed"], b["seed"]) == (1, 2)
    assert _csv_bytes(out / "seed_1") != _csv_bytes(out / "seed_2")
