"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 missing champions.
``EVOAD_WORKERS`` sets the fitness worker count unless ``--set`` does.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import yaml

from evoad.config import ConfigError, apply_overrides, load_config, parse_config
from evoad.data import SynthConfig, save_csv, split_train_test, synth_generate
from evoad.errors import EvoADError
from evoad.genome import Limits, deserialize, validate
from evoad.pipeline import MissingChampions, load_run_config, stage_eval, stage_evolve, stage_finetune, load_training

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHAMPIONS = 0, 2, 3, 4

log = logging.getLogger("evoad")


def _worker_override(overrides: list[str]) -> list[str]:
    env = os.environ.get("EVOAD_WORKERS")
    if env is None or any(o.startswith("evolution.workers=") for o in overrides):
        return overrides
    return [f"evolution.workers={env}"] + overrides


def _new_run_dir(root: Path) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    path = root / f"run-{stamp}"
    n = 1
    while path.exists():
        path = root / f"run-{stamp}-{n}"
        n += 1
    return path


def cmd_evolve(args) -> int:
    cfg = load_config(args.config, _worker_override(args.set))
    train = load_training(cfg)
    run_dir = Path(args.run_dir) if args.run_dir else _new_run_dir(Path(args.out))
    subspaces, run = stage_evolve(cfg, train, run_dir)
    for s in subspaces:
        best = run.champions[s.id].fitness
        log.info("subspace %s: champion fitness %.6g", list(s.feature_indices), best)
    print(run_dir)
    return EXIT_OK


def _require_champions(run_dir: Path) -> None:
    if not (run_dir / "champions" / "index.json").exists():
        raise MissingChampions(f"no champions in {run_dir}; run 'evoad evolve' first")


def cmd_finetune(args) -> int:
    run_dir = Path(args.run_dir)
    _require_champions(run_dir)
    cfg = load_run_config(run_dir)
    if args.set:
        cfg = parse_config(apply_overrides(cfg.document, args.set))
    results = stage_finetune(cfg, run_dir)
    for k, res in enumerate(results):
        log.info("champion %d: FP %d -> %s", k, res.initial_fp, res.fps)
    print(run_dir / "finetune")
    return EXIT_OK


def cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    _require_champions(run_dir)
    cfg = load_run_config(run_dir)
    stage_eval(cfg, run_dir, args.test_csv)
    print((run_dir / "reports" / "eval.txt").read_text(), end="")
    return EXIT_OK


def _synth_config(path: Path, overrides) -> SynthConfig:
    text = path.read_text()
    doc = yaml.safe_load(text)  # JSON is valid YAML
    if isinstance(doc, dict) and doc.get("format") == "evoad-synth/1":
        d = dict(doc["config"])
        d["anomaly_kinds"] = tuple(d["anomaly_kinds"])
        return SynthConfig(**d)
    return load_config(path, overrides).synth


def cmd_synth(args) -> int:
    try:
        cfg = _synth_config(Path(args.config), args.set)
    except (TypeError, KeyError) as exc:
        raise ConfigError("synth", str(exc)) from exc
    ds, meta = synth_generate(cfg)
    train, test = split_train_test(ds, meta["train_rows"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(train, out / "train.csv")
    save_csv(test, out / "test.csv")
    (out / "metadata.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    print(out)
    return EXIT_OK


def cmd_validate_genome(args) -> int:
    genome = deserialize(Path(args.genome).read_text())
    problems = validate(genome, Limits())
    if problems:
        for v in problems:
            print(f"{v.code}: {v.message}")
        return EXIT_DATA
    print(f"ok {genome.family} window={genome.window} layers={genome.n_layers} id={genome.id:016x}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evoad", description="Evolved autoencoder ensembles for time-series anomaly detection.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def overrides(sp):
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key, e.g. evolution.iterations=5")

    e = sub.add_parser("evolve", help="subspace search and model evolution")
    e.add_argument("config")
    e.add_argument("--out", default="runs", help="parent folder for run-<timestamp>/")
    e.add_argument("--run-dir", help="exact run folder (skips the timestamped name)")
    overrides(e)
    e.set_defaults(func=cmd_evolve)

    f = sub.add_parser("finetune", help="fine-tune the champions of a run")
    f.add_argument("run_dir")
    overrides(f)
    f.set_defaults(func=cmd_finetune)

    v = sub.add_parser("eval", help="score a labeled test CSV with the run's ensemble")
    v.add_argument("run_dir")
    v.add_argument("test_csv")
    v.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="write a synthetic train/test pair")
    s.add_argument("config", help="run config (synth section) or a metadata.json to regenerate")
    s.add_argument("out")
    overrides(s)
    s.set_defaults(func=cmd_synth)

    g = sub.add_parser("validate-genome", help="check a genome file")
    g.add_argument("genome")
    g.set_defaults(func=cmd_validate_genome)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingChampions as exc:
        print(f"missing champions: {exc}", file=sys.stderr)
        return EXIT_CHAMPIONS
    except (EvoADError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
