"""Command-line entry point: ``synsamp <subcommand> [options]``."""
from __future__ import annotations

import argparse
import configparser
import json
import os
import subprocess
import sys

from .experiments import EXPERIMENTS
from .io import (CONFIG_COPY, CheckpointError, ConfigError, load_checkpoint, parse_config,
                 read_manifest, save_checkpoint, write_manifest, write_pgm)

EXIT_CONFIG = 2
EXIT_RESUME = 3


def _config_experiment(text):
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e).splitlines()[0], getattr(e, "lineno", None)) from None
    return cp.get("run", "experiment", fallback=None)


def build_config(experiment, config_path=None, seed=None, overrides=()):
    """Defaults of ``experiment`` updated by the config file, then by overrides."""
    cls = EXPERIMENTS[experiment]
    text = ""
    if config_path is not None:
        with open(config_path) as f:
            text = f.read()
    named = _config_experiment(text)
    if named is not None and named.strip() != experiment:
        raise ConfigError(f"config names experiment {named.strip()!r}, command is {experiment!r}")
    return parse_config(text, cls.DEFAULTS, experiment=experiment, seed=seed,
                        overrides=overrides, validators=cls.VALIDATORS)


def _manifest_extra(exp, status, sha=None):
    return {"status": status, "chunks_done": exp.chunk, "checkpoint_sha256": sha,
            "phase_boundaries_ms": list(exp.phase_boundaries_ms),
            "lesion_times_ms": list(exp.lesion_times_ms)}


def execute(exp, cfg, out_dir, max_chunks=None, checkpoint=True, quiet=False):
    """Advance ``exp`` to completion (or ``max_chunks``) writing checkpoints.

    Returns True when the experiment finished.
    """
    os.makedirs(out_dir, exist_ok=True)
    n = 0
    sha = None
    write_manifest(out_dir, cfg, **_manifest_extra(exp, "running"))
    while not exp.done:
        if max_chunks is not None and n >= max_chunks:
            return False
        exp.step()
        n += 1
        if checkpoint:
            sha = save_checkpoint(out_dir, exp)
            write_manifest(out_dir, cfg, **_manifest_extra(exp, "running", sha))
        if not quiet:
            print(f"[{exp.name}] chunk {exp.chunk} done", file=sys.stderr, flush=True)
    exp.log.write(out_dir)
    for name, img in exp.images.items():
        write_pgm(os.path.join(out_dir, f"{name}.pgm"), img)
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(exp.summary, f, indent=2, sort_keys=True, default=float)
        f.write("\n")
    write_manifest(out_dir, cfg, **_manifest_extra(exp, "complete", sha))
    return True


def run_experiment(experiment, out_dir, config_path=None, seed=None, overrides=(),
                   max_chunks=None, checkpoint=True, quiet=False):
    cfg = build_config(experiment, config_path, seed, overrides)
    exp = EXPERIMENTS[experiment](cfg.sections, cfg.seed)
    finished = execute(exp, cfg, out_dir, max_chunks, checkpoint, quiet)
    return exp, finished


def resume(path, max_chunks=None, quiet=False):
    out_dir = path if os.path.isdir(path) else os.path.dirname(path)
    man = read_manifest(path)
    if man.get("status") == "complete":
        raise CheckpointError("run already complete; nothing to resume")
    if not man.get("checkpoint_sha256"):
        raise CheckpointError("manifest lists no checkpoint")
    exp = load_checkpoint(out_dir, man["checkpoint_sha256"])
    cfg = build_config(man["experiment"], os.path.join(out_dir, CONFIG_COPY))
    finished = execute(exp, cfg, out_dir, max_chunks, True, quiet)
    return exp, finished


def _common(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--max-chunks", type=int, default=None,
                   help="stop after this many chunks (resume later)")
    p.add_argument("--no-checkpoint", action="store_true")
    p.add_argument("--quiet", action="store_true")


def make_parser():
    ap = argparse.ArgumentParser(prog="synsamp", description="Synaptic sampling experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=EXPERIMENTS[name].__doc__.splitlines()[0])
        _common(p)
        if name == "rbm-generalization":
            p.add_argument("--prior", choices=("bimodal", "uniform"))
    p = sub.add_parser("run", help="run the experiment named in a config file")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", dest="overrides", action="append", default=[])
    p.add_argument("--max-chunks", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    p = sub.add_parser("resume", help="continue an interrupted run from its manifest")
    p.add_argument("manifest", help="output directory or manifest.json")
    p.add_argument("--max-chunks", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    p = sub.add_parser("sweep", help="independent seeded runs, one process each")
    p.add_argument("experiment", choices=sorted(EXPERIMENTS))
    p.add_argument("--seeds", required=True, help="comma-separated seeds")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--set", dest="overrides", action="append", default=[])
    p.add_argument("--jobs", type=int, default=1)
    return ap


def _sweep(args):
    procs, codes = [], []
    for s in [int(v) for v in args.seeds.split(",") if v.strip()]:
        cmd = [sys.executable, "-m", "synsamp", args.experiment, "--seed", str(s), "--quiet",
               "--out", os.path.join(args.out, f"seed_{s}")]
        if args.config:
            cmd += ["--config", args.config]
        for o in args.overrides:
            cmd += ["--set", o]
        procs.append(subprocess.Popen(cmd))
        if len(procs) >= args.jobs:
            codes.append(procs.pop(0).wait())
    codes += [p.wait() for p in procs]
    return max(codes) if codes else 0


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        if args.command == "resume":
            _, finished = resume(args.manifest, args.max_chunks, args.quiet)
        elif args.command == "sweep":
            return _sweep(args)
        elif args.command == "run":
            with open(args.config) as f:
                name = _config_experiment(f.read())
            name = name.strip() if name else name
            if name not in EXPERIMENTS:
                raise ConfigError(f"config must name one of {sorted(EXPERIMENTS)} in [run] experiment")
            _, finished = run_experiment(name, args.out, args.config, args.seed, args.overrides,
                                         args.max_chunks, True, args.quiet)
        else:
            overrides = list(args.overrides)
            if getattr(args, "prior", None):
                overrides.append(f"sampler.prior={args.prior}")
            _, finished = run_experiment(args.command, args.out, args.config, args.seed, overrides,
                                         args.max_chunks, not args.no_checkpoint, args.quiet)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as e:
        print(f"cannot resume: {e}", file=sys.stderr)
        return EXIT_RESUME
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if not finished:
        print("stopped before completion; continue with 'synsamp resume'", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
