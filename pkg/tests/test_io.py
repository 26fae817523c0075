import json
import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from synsamp.io import (CHECKPOINT, CheckpointError, ConfigError, ExperimentLog, IdxFormatError,
                        load_checkpoint, load_idx, parse_config, read_manifest, read_pgm,
                        save_checkpoint, sha256_file, write_idx, write_manifest, write_pgm)

DEFAULTS = {"wta": {"b_per_s": 1e-4, "noise_interval_ms": 10.0, "n_data": 100},
            "task": {"prior": "bimodal", "frozen": False}}


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, size=(5, 4, 3), dtype=np.uint8)
    write_idx(tmp_path / "i.idx", imgs)
    d = load_idx(tmp_path / "i.idx")
    assert d.magic == 0x803 and d.dims == (5, 4, 3) and len(d) == 5
    assert d.pixel(2, 1, 0) == imgs[2, 1, 0]
    assert d.flat().shape == (5, 12)
    write_idx(tmp_path / "l.idx", np.array([1, 2, 3]))
    assert load_idx(tmp_path / "l.idx").data.tolist() == [1, 2, 3]


def test_idx_matches_reference_byte_layout(tmp_path):
    # hand-built big-endian file
    raw = struct.pack(">IIII", 0x803, 2, 2, 2) + bytes(range(8))
    (tmp_path / "r.idx").write_bytes(raw)
    d = load_idx(tmp_path / "r.idx")
    assert d.data[1].tolist() == [[4, 5], [6, 7]]


def test_idx_bad_magic(tmp_path):
    (tmp_path / "b.idx").write_bytes(struct.pack(">II", 0x802, 1) + b"\0")
    with pytest.raises(IdxFormatError) as e:
        load_idx(tmp_path / "b.idx")
    assert e.value.offset == 0 and "magic" in str(e.value)


def test_idx_corrupt_dims_do_not_allocate(tmp_path):
    (tmp_path / "c.idx").write_bytes(struct.pack(">IIII", 0x803, 60000, 60000, 60000) + b"\0" * 16)
    with pytest.raises(IdxFormatError) as e:
        load_idx(tmp_path / "c.idx")
    assert e.value.offset == 16


def test_idx_truncated_header(tmp_path):
    (tmp_path / "t.idx").write_bytes(struct.pack(">II", 0x803, 3))
    with pytest.raises(IdxFormatError):
        load_idx(tmp_path / "t.idx")


def test_config_merges_and_coerces():
    text = "[run]\nexperiment = wta-adapt\nseed = 4\n[wta]\nb_per_s = 1e-2\n[task]\nfrozen = yes\n"
    c = parse_config(text, DEFAULTS)
    assert c.experiment == "wta-adapt" and c.seed == 4
    assert c.get("wta", "b_per_s") == 1e-2 and c.get("task", "frozen") is True
    assert c.get("wta", "n_data") == 100
    assert DEFAULTS["wta"]["b_per_s"] == 1e-4  # defaults untouched


def test_config_overrides_and_precedence():
    text = "[run]\nexperiment = x\nseed = 4\n"
    c = parse_config(text, DEFAULTS, seed=9, overrides=["wta.n_data=7", "run.seed=11"])
    assert c.seed == 11 and c.get("wta", "n_data") == 7
    assert parse_config(text, DEFAULTS, seed=9).seed == 9


@pytest.mark.parametrize("text,line", [
    ("[run]\nexperiment = x\n[wta]\nb_per_s = 1\nbogus = 2\n", 5),
    ("[run]\nexperiment = x\n\n[nope]\na = 1\n", 4),
    ("[run]\nexperiment = x\n[wta]\nn_data = many\n", 4),
    ("[run]\nexperiment = x\ncolour = red\n", 3),
])
def test_config_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as e:
        parse_config(text, DEFAULTS)
    assert e.value.line == line
    assert f"line {line}" in str(e.value)


def test_config_validators_and_missing_experiment():
    with pytest.raises(ConfigError, match="out of range"):
        parse_config("[wta]\nb_per_s = -1\n", DEFAULTS, experiment="x",
                     validators={("wta", "b_per_s"): lambda v: v > 0})
    with pytest.raises(ConfigError, match="experiment"):
        parse_config("", DEFAULTS)
    with pytest.raises(ConfigError):
        parse_config("", DEFAULTS, experiment="x", overrides=["wta_b=1"])


@given(b=st.floats(1e-9, 1.0), n=st.integers(1, 10_000), seed=st.integers(0, 2**31))
@settings(max_examples=40)
def test_config_ini_round_trip(b, n, seed):
    c = parse_config("", DEFAULTS, experiment="x", seed=seed,
                     overrides=[f"wta.b_per_s={b!r}", f"wta.n_data={n}"])
    again = parse_config(c.to_ini(), DEFAULTS)
    assert again.sections == c.sections and again.seed == seed
    assert again.digest() == c.digest()


def test_log_writes_repr_floats(tmp_path):
    log = ExperimentLog()
    log.record("m", step=1, value=0.1 + 0.2)
    log.record("m", step=np.int64(2), value=np.float64(1 / 3))
    log.record("a", flag=True)
    paths = log.write(tmp_path)
    assert [os.path.basename(p) for p in paths] == ["a.csv", "m.csv"]
    assert (tmp_path / "m.csv").read_text() == "step,value\n1,0.30000000000000004\n2,0.3333333333333333\n"
    assert log.column("m", "step") == [1, 2]
    with pytest.raises(ValueError):
        log.record("m", value=1.0)


def test_manifest_contents(tmp_path):
    c = parse_config("", DEFAULTS, experiment="wta-adapt", seed=3)
    write_manifest(tmp_path, c, status="running")
    m = read_manifest(tmp_path)
    assert m["seed"] == 3 and m["status"] == "running" and m["code_version"]
    assert os.path.exists(tmp_path / m["config_file"])
    copy = parse_config((tmp_path / m["config_file"]).read_text(), DEFAULTS)
    assert copy.digest() == m["config_sha256"]


def test_checkpoint_hash_guard(tmp_path):
    sha = save_checkpoint(tmp_path, {"x": np.arange(3)})
    assert sha == sha256_file(tmp_path / CHECKPOINT)
    np.testing.assert_array_equal(load_checkpoint(tmp_path, sha)["x"], [0, 1, 2])
    with open(tmp_path / CHECKPOINT, "ab") as f:
        f.write(b"tampered")
    with pytest.raises(CheckpointError, match="mismatch"):
        load_checkpoint(tmp_path, sha)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing", sha)


@given(h=st.integers(1, 12), w=st.integers(1, 12), seed=st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_pgm_round_trip(tmp_path_factory, h, w, seed):
    img = np.random.default_rng(seed).integers(0, 256, (h, w)) / 255.0
    p = tmp_path_factory.mktemp("pgm") / "x.pgm"
    write_pgm(p, img)
    np.testing.assert_allclose(read_pgm(p), img)


def test_pgm_rejects_out_of_range(tmp_path):
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "x.pgm", np.array([[1.5]]))
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "x.pgm", np.zeros(3))
