"""File formats and run bookkeeping: IDX datasets, INI configs, metric logs,
manifests, checkpoints and PGM images."""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import os
import pickle
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
_IDX_NDIM = {IDX_IMAGES: 3, IDX_LABELS: 1}

MANIFEST = "manifest.json"
CHECKPOINT = "checkpoint.pkl"
CONFIG_COPY = "config.ini"


# ---------------------------------------------------------------- IDX

class IdxFormatError(ValueError):
    """Malformed IDX file; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class IdxDataset:
    magic: int
    dims: tuple
    data: np.ndarray   # uint8, shape == dims

    def __len__(self):
        return self.dims[0]

    def pixel(self, item, row, col):
        return int(self.data[item, row, col])

    def flat(self):
        """Items as rows of gray levels, shape (n, prod(dims[1:]))."""
        return self.data.reshape(self.dims[0], -1)


def load_idx(path) -> IdxDataset:
    """Read an unsigned-byte IDX file (images 0x803 or labels 0x801).

    The header is validated against the file size before the payload is
    read, so corrupt dimension fields cannot trigger a large allocation.
    """
    size = os.path.getsize(path)
    with open(path, "rb") as f:
        head = f.read(4)
        if len(head) < 4:
            raise IdxFormatError("file too short for the magic number", len(head))
        (magic,) = struct.unpack(">I", head)
        if magic not in _IDX_NDIM:
            raise IdxFormatError(
                f"bad magic: expected 0x{IDX_IMAGES:08x} or 0x{IDX_LABELS:08x}, "
                f"found 0x{magic:08x}", 0)
        ndim = _IDX_NDIM[magic]
        raw = f.read(4 * ndim)
        if len(raw) < 4 * ndim:
            raise IdxFormatError("truncated dimension header", 4 + len(raw))
        dims = struct.unpack(f">{ndim}I", raw)
        header = 4 + 4 * ndim
        expected = int(np.prod(dims, dtype=object))
        if expected != size - header:
            raise IdxFormatError(
                f"payload length {size - header} does not match dims {dims} "
                f"(expected {expected} bytes)", header)
        payload = f.read(expected)
    data = np.frombuffer(payload, dtype=np.uint8).reshape(dims)
    return IdxDataset(magic, tuple(int(d) for d in dims), data)


def write_idx(path, array, magic=None):
    a = np.asarray(array)
    if a.dtype != np.uint8:
        if np.any((a < 0) | (a > 255)) or np.any(a != np.round(a)):
            raise ValueError("IDX payload must be integers in 0..255")
        a = a.astype(np.uint8)
    if magic is None:
        magic = IDX_IMAGES if a.ndim == 3 else IDX_LABELS
    if a.ndim != _IDX_NDIM.get(magic, -1):
        raise ValueError(f"array with {a.ndim} dims does not fit magic 0x{magic:08x}")
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{a.ndim}I", *a.shape))
        f.write(a.tobytes(order="C"))


# ---------------------------------------------------------------- config

class ConfigError(ValueError):
    def __init__(self, message, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


@dataclass
class RunConfig:
    """Typed sections (section -> key -> value) of one experiment run."""

    experiment: str
    seed: int
    sections: dict
    out_dir: Optional[str] = None

    def get(self, section, key):
        return self.sections[section][key]

    def to_ini(self) -> str:
        lines = ["[run]", f"experiment = {self.experiment}", f"seed = {self.seed}", ""]
        for sec in sorted(self.sections):
            lines.append(f"[{sec}]")
            for k in sorted(self.sections[sec]):
                lines.append(f"{k} = {_format_value(self.sections[sec][k])}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(text, default, where, line):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {type(default).__name__}", line) from None
    return text


def _key_lines(text):
    """Line number of every (section, key) in an INI text."""
    out, sec = {}, None
    for n, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            sec = s[1:-1].strip()
        elif s and not s.startswith(("#", ";")) and "=" in s and sec is not None:
            out[(sec, s.split("=", 1)[0].strip().lower())] = n
    return out


def parse_config(text: str, defaults: dict, experiment: Optional[str] = None,
                 seed: Optional[int] = None, overrides=(), validators=None) -> RunConfig:
    """Merge INI ``text`` into ``defaults`` (section -> key -> typed default).

    Unknown sections or keys are errors carrying the offending line number.
    ``overrides`` are 'section.key=value' strings applied last.
    ``validators`` maps (section, key) to a predicate on the parsed value.
    """
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e).splitlines()[0], getattr(e, "lineno", None)) from None
    lines = _key_lines(text)
    sections = {s: dict(v) for s, v in defaults.items()}
    run = {"experiment": experiment, "seed": seed}
    for sec in cp.sections():
        if sec == "run":
            for k, v in cp[sec].items():
                if k not in ("experiment", "seed"):
                    raise ConfigError(f"unknown key run.{k}", lines.get((sec, k)))
                if run[k] is None:
                    run[k] = v.strip() if k == "experiment" else _coerce(v, 0, "run.seed", lines.get((sec, k)))
            continue
        if sec not in sections:
            raise ConfigError(f"unknown section [{sec}]", _section_line(text, sec))
        for k, v in cp[sec].items():
            if k not in sections[sec]:
                raise ConfigError(f"unknown key {sec}.{k}", lines.get((sec, k)))
            sections[sec][k] = _coerce(v, defaults[sec][k], f"{sec}.{k}", lines.get((sec, k)))
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        path, value = item.split("=", 1)
        sec, k = path.strip().split(".", 1)
        if sec == "run" and k == "seed":
            run["seed"] = _coerce(value, 0, "run.seed", None)
            continue
        if sec not in sections or k not in sections[sec]:
            raise ConfigError(f"unknown override key {sec}.{k}")
        sections[sec][k] = _coerce(value, defaults[sec][k], f"{sec}.{k}", None)
    for (sec, k), ok in (validators or {}).items():
        if not ok(sections[sec][k]):
            raise ConfigError(f"value {sections[sec][k]!r} out of range for {sec}.{k}",
                              lines.get((sec, k)))
    if run["experiment"] is None:
        raise ConfigError("no experiment named (run.experiment)")
    return RunConfig(run["experiment"], int(run["seed"] or 0), sections)


def _section_line(text, sec):
    for n, raw in enumerate(text.splitlines(), start=1):
        if raw.strip() == f"[{sec}]":
            return n
    return None


# ---------------------------------------------------------------- metric log

class ExperimentLog:
    """Named tables of metric rows, written as one CSV per metric.

    Floats are written with ``repr`` so reruns are byte-identical.
    """

    def __init__(self):
        self.tables = {}

    def record(self, metric, **values):
        cols, rows = self.tables.setdefault(metric, (list(values), []))
        if list(values) != cols:
            raise ValueError(f"metric {metric!r} expects columns {cols}, got {list(values)}")
        rows.append([values[c] for c in cols])

    def rows(self, metric):
        cols, rows = self.tables[metric]
        return [dict(zip(cols, r)) for r in rows]

    def column(self, metric, name):
        cols, rows = self.tables[metric]
        i = cols.index(name)
        return [r[i] for r in rows]

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for metric in sorted(self.tables):
            cols, rows = self.tables[metric]
            path = os.path.join(out_dir, f"{metric}.csv")
            with open(path, "w", newline="") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow(cols)
                for r in rows:
                    w.writerow([_format_value(_plain(v)) for v in r])
            paths.append(path)
        return paths


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


# ---------------------------------------------------------------- manifest / checkpoint

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, config: RunConfig, **extra):
    """Manifest with everything needed to reproduce the run."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, CONFIG_COPY), "w") as f:
        f.write(config.to_ini())
    data = {"experiment": config.experiment, "seed": config.seed,
            "config_file": CONFIG_COPY, "config_sha256": config.digest(),
            "code_version": __version__}
    data.update(extra)
    path = os.path.join(out_dir, MANIFEST)
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")
    return path


def read_manifest(path):
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST)
    with open(path) as f:
        return json.load(f)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def save_checkpoint(out_dir, state) -> str:
    """Pickle ``state`` atomically and return its sha256."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, CHECKPOINT)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        pickle.dump(state, f, protocol=pickle.HIGHEST_PROTOCOL)
    os.replace(tmp, path)
    return sha256_file(path)


class CheckpointError(RuntimeError):
    pass


def load_checkpoint(out_dir, expected_sha256):
    path = os.path.join(out_dir, CHECKPOINT)
    if not os.path.exists(path):
        raise CheckpointError(f"no checkpoint at {path}")
    found = sha256_file(path)
    if found != expected_sha256:
        raise CheckpointError(f"checkpoint hash mismatch: manifest has {expected_sha256}, "
                              f"file has {found}; refusing to resume")
    with open(path, "rb") as f:
        return pickle.load(f)


# ---------------------------------------------------------------- images

def write_pgm(path, image, maxval=255):
    """Binary PGM (P5) from a 2-D array of values in [0, 1]."""
    img = np.asarray(image, float)
    if img.ndim != 2:
        raise ValueError("PGM export needs a 2-D image")
    if np.any(~np.isfinite(img)) or img.min() < 0 or img.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    data = np.round(img * maxval).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode())
        f.write(data.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        raw = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h, maxval = (int(t) for t in tokens[1:])
    body = raw[pos + 1:pos + 1 + w * h]  # exactly one whitespace byte after maxval
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(float) / maxval
