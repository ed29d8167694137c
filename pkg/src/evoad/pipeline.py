"""End-to-end stages over a run directory.

Layout of a run directory::

    config.yaml                 normalized configuration snapshot
    normalization.json          per-sensor min/max fitted on training rows
    subspaces.json              sensor groups (vanilla family only)
    champions/sub-K.genome      best genome per subspace
    champions/sub-K.npy         its trained weights
    checkpoints/gen-XXX.json    evolution state after every generation
    logs/evolution.jsonl        best/mean fitness per generation and subspace
    finetune/sub-K/model-I.npy  fine-tuned weight sets
    finetune/sub-K/log.jsonl    FP trajectory with restart markers
    finetune/summary.json       FP of every fine-tuned model
    reports/eval.txt            fixed-threshold and sweep reports
    reports/eval.jsonl          the same as JSON lines
    reports/scores.csv          per-point ensemble score and label
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from evoad.config import ConfigError, RunConfig, parse_config
from evoad.data import TimeSeriesDataset, apply_normalization, load_csv, normalize, select
from evoad.detector import EvalReport, ScoreSeries, best_f1_sweep, detect, ensemble_score, fixed_threshold, pointwise_f1
from evoad.engine import EvolutionRun, evolve, evolve_subspaces
from evoad.errors import DataError
from evoad.finetune import FineTuneResult, finetune
from evoad.genome import GRAPH, Subspace, deserialize, serialize
from evoad.nn.model import TrainedModel, build_model, reconstruction_errors


class MissingChampions(FileNotFoundError):
    pass


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def load_training(cfg: RunConfig) -> TimeSeriesDataset:
    if not cfg.dataset_path:
        raise ConfigError("dataset.path", "missing")
    has_labels = {"auto": None, "yes": True, "no": False}[cfg.dataset_labels]
    try:
        ds = load_csv(cfg.dataset_path, has_labels=has_labels)
    except OSError as exc:
        raise DataError(f"cannot read {cfg.dataset_path}: {exc}") from exc
    if ds.labels is not None and np.any(ds.labels):
        raise DataError("training data must be anomaly-free but has labeled rows")
    return ds


def stage_evolve(cfg: RunConfig, train: TimeSeriesDataset, run_dir) -> tuple[list[Subspace], EvolutionRun]:
    """Normalize, find subspaces, evolve champions; writes artifacts to ``run_dir``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(cfg.to_yaml())
    norm = normalize(train)
    lo, hi = norm.normalization
    _dump(
        run_dir / "normalization.json",
        {"sensors": list(train.sensor_names), "min": lo.tolist(), "max": hi.tolist()},
    )
    evo = cfg.evolution
    subspaces = evolve_subspaces(evo, norm)
    if evo.family != GRAPH:
        _dump(run_dir / "subspaces.json", [list(s.feature_indices) for s in subspaces])
    run = evolve(evo, norm, subspaces, run_dir=run_dir)
    for k, s in enumerate(subspaces):
        ch = run.champions[s.id]
        base = run_dir / "champions" / f"sub-{k}"
        base.parent.mkdir(parents=True, exist_ok=True)
        base.with_suffix(".genome").write_text(serialize(ch.genome))
        weights = ch.weights if ch.weights is not None else build_model(ch.genome, s).get_weights()
        np.save(base.with_suffix(".npy"), weights)
    _dump(
        run_dir / "champions" / "index.json",
        [
            {"subspace": list(s.feature_indices), "fitness": run.champions[s.id].fitness}
            for s in subspaces
        ],
    )
    return subspaces, run


def load_run_config(run_dir) -> RunConfig:
    return parse_config(yaml.safe_load((Path(run_dir) / "config.yaml").read_text()))


def load_normalization(run_dir) -> tuple[np.ndarray, np.ndarray]:
    d = json.loads((Path(run_dir) / "normalization.json").read_text())
    return np.asarray(d["min"], dtype=float), np.asarray(d["max"], dtype=float)


def load_champions(run_dir) -> list[TrainedModel]:
    run_dir = Path(run_dir)
    index = run_dir / "champions" / "index.json"
    if not index.exists():
        raise MissingChampions(f"no champions in {run_dir}")
    models = []
    for k, entry in enumerate(json.loads(index.read_text())):
        base = run_dir / "champions" / f"sub-{k}"
        try:
            genome = deserialize(base.with_suffix(".genome").read_text())
            weights = np.load(base.with_suffix(".npy"))
        except OSError as exc:
            raise MissingChampions(f"champion {k} incomplete: {exc}") from exc
        models.append(build_model(genome, Subspace(tuple(entry["subspace"]))).set_weights(weights))
    return models


def stage_finetune(cfg: RunConfig, run_dir, train: Optional[TimeSeriesDataset] = None) -> list[FineTuneResult]:
    """Fine-tune every champion on the normalized training series."""
    run_dir = Path(run_dir)
    champions = load_champions(run_dir)
    if train is None:
        train = load_training(cfg)
    values = apply_normalization(train, load_normalization(run_dir)).values
    results, summary = [], []
    for k, model in enumerate(champions):
        ft_cfg = cfg.finetune
        # distinct but reproducible stream per champion
        seed = int(np.random.SeedSequence([ft_cfg.seed, k]).generate_state(1)[0])
        res = finetune(model, select(values, model.subspace), replace(ft_cfg, seed=seed))
        out = run_dir / "finetune" / f"sub-{k}"
        out.mkdir(parents=True, exist_ok=True)
        for old in out.glob("model-*.npy"):
            old.unlink()
        for i, w in enumerate(res.models):
            np.save(out / f"model-{i}.npy", w)
        (out / "log.jsonl").write_text("".join(e.to_record() + "\n" for e in res.log))
        summary.append({"subspace": list(model.subspace.feature_indices), "initial_fp": res.initial_fp, "fps": res.fps})
        results.append(res)
    _dump(run_dir / "finetune" / "summary.json", summary)
    return results


def ensemble_members(run_dir) -> list[TrainedModel]:
    """Lowest-FP fine-tuned model per subspace, or the raw champions."""
    run_dir = Path(run_dir)
    champions = load_champions(run_dir)
    summary_path = run_dir / "finetune" / "summary.json"
    if not summary_path.exists():
        return champions
    summary = json.loads(summary_path.read_text())
    members = []
    for k, (model, entry) in enumerate(zip(champions, summary)):
        i = int(np.argmin(entry["fps"]))
        members.append(model.clone().set_weights(np.load(run_dir / "finetune" / f"sub-{k}" / f"model-{i}.npy")))
    return members


@dataclass
class Evaluation:
    fixed: EvalReport
    sweep: EvalReport
    scores: ScoreSeries
    train_scores: ScoreSeries


def evaluate_ensemble(
    members: list[TrainedModel], train_values: np.ndarray, test_values: np.ndarray, truth: np.ndarray, fp_factor: float
) -> Evaluation:
    """Score the test series and report both thresholding modes.

    Each member's errors are divided by its mean training error, the
    ensemble takes the per-point maximum, and the fixed threshold is
    ``fp_factor`` times the mean ensemble score on the training series.
    """
    per_test, per_train = [], []
    for m in members:
        tr = reconstruction_errors(m, select(train_values, m.subspace))
        mean = float(np.mean(tr.scores))
        per_train.append((m.subspace, ScoreSeries(tr.scores, tr.window, mean)))
        te = reconstruction_errors(m, select(test_values, m.subspace))
        per_test.append((m.subspace, ScoreSeries(te.scores, te.window, mean)))
    train_ens = ensemble_score(per_train)
    test_ens = ensemble_score(per_test)
    thr = fixed_threshold(train_ens, fp_factor)
    fixed = pointwise_f1(detect(test_ens, thr, "fixed"), truth)
    _, sweep = best_f1_sweep(test_ens, truth)
    return Evaluation(fixed, sweep, test_ens, train_ens)


def stage_eval(cfg: RunConfig, run_dir, test_path, train: Optional[TimeSeriesDataset] = None) -> Evaluation:
    run_dir = Path(run_dir)
    members = ensemble_members(run_dir)
    norm = load_normalization(run_dir)
    if train is None:
        train = load_training(cfg)
    try:
        test = load_csv(test_path, has_labels=True)
    except OSError as exc:
        raise DataError(f"cannot read {test_path}: {exc}") from exc
    if test.n_sensors != train.n_sensors:
        raise DataError(f"test data has {test.n_sensors} sensors, training data {train.n_sensors}")
    if not np.any(test.labels):
        raise DataError("test labels are all normal; F1 is undefined")
    result = evaluate_ensemble(
        members,
        apply_normalization(train, norm).values,
        apply_normalization(test, norm).values,
        test.labels,
        cfg.finetune.fp_factor,
    )
    out = run_dir / "reports"
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.txt").write_text(
        "[fixed]\n" + result.fixed.to_text() + "\n[sweep]\n" + result.sweep.to_text()
    )
    (out / "eval.jsonl").write_text(result.fixed.to_record() + "\n" + result.sweep.to_record() + "\n")
    lines = ["t,score,label"] + [
        f"{t},{s!r},{int(l)}" for t, (s, l) in enumerate(zip(result.scores.scores.tolist(), test.labels))
    ]
    (out / "scores.csv").write_text("\n".join(lines) + "\n")
    return result


def run_all(cfg: RunConfig, run_dir, test_path) -> Evaluation:
    train = load_training(cfg)
    stage_evolve(cfg, train, run_dir)
    stage_finetune(cfg, run_dir, train)
    return stage_eval(cfg, run_dir, test_path, train)


__all__ = [
    "stage_evolve",
    "stage_finetune",
    "stage_eval",
    "run_all",
    "evaluate_ensemble",
    "ensemble_members",
    "load_champions",
    "load_run_config",
    "MissingChampions",
]
