"""Scores to verdicts: ensemble aggregation, thresholding, point-wise F1."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from evoad.errors import LengthMismatch
from evoad.genome import Subspace


@dataclass
class ScoreSeries:
    """Per-time-point reconstruction errors.

    ``train_mean`` is the member's mean score on normal training data; the
    ensemble divides by it to make members comparable.
    """

    scores: np.ndarray
    window: int = 1
    train_mean: Optional[float] = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)

    def __len__(self):
        return len(self.scores)

    def normalized(self) -> np.ndarray:
        ref = self.train_mean if self.train_mean is not None else float(np.mean(self.scores))
        if ref <= 0:
            return np.zeros_like(self.scores)
        return self.scores / ref


@dataclass
class Verdict:
    labels: np.ndarray
    threshold: float
    source: str = "fixed"


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    threshold: float
    source: str = "fixed"

    def to_text(self) -> str:
        return "".join(f"{k}: {v}\n" for k, v in asdict(self).items())

    def to_record(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def ensemble_score(per_model: Sequence[tuple[Subspace, ScoreSeries]]) -> ScoreSeries:
    """Max over members of each member's mean-normalized score."""
    if not per_model:
        raise ValueError("ensemble needs at least one member")
    lengths = {len(s) for _, s in per_model}
    if len(lengths) != 1:
        raise LengthMismatch(f"member score lengths differ: {sorted(lengths)}")
    stacked = np.stack([s.normalized() for _, s in per_model])
    window = max(s.window for _, s in per_model)
    return ScoreSeries(stacked.max(axis=0), window)


def detect(scores: ScoreSeries | np.ndarray, threshold: float, source: str = "fixed") -> Verdict:
    if not threshold > 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    s = scores.scores if isinstance(scores, ScoreSeries) else np.asarray(scores, dtype=float)
    return Verdict((s > threshold).astype(np.int8), float(threshold), source)


def _report(tp, fp, fn, tn, threshold, source) -> EvalReport:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalReport(precision, recall, f1, int(tp), int(fp), int(fn), int(tn), float(threshold), source)


def pointwise_f1(verdict: Verdict, truth) -> EvalReport:
    pred = np.asarray(verdict.labels).astype(bool)
    true = np.asarray(truth).astype(bool)
    if pred.shape != true.shape:
        raise LengthMismatch(f"verdict length {pred.size} != truth length {true.size}")
    tp = int(np.sum(pred & true))
    fp = int(np.sum(pred & ~true))
    fn = int(np.sum(~pred & true))
    tn = int(np.sum(~pred & ~true))
    return _report(tp, fp, fn, tn, verdict.threshold, verdict.source)


def best_f1_sweep(scores: ScoreSeries | np.ndarray, truth) -> tuple[float, EvalReport]:
    """Best point-wise F1 over every threshold that changes the labeling.

    Candidates are each distinct score value (label = score > value) and one
    value just below the minimum, which labels everything positive. Ties go
    to the larger threshold.
    """
    s = scores.scores if isinstance(scores, ScoreSeries) else np.asarray(scores, dtype=float)
    y = np.asarray(truth).astype(bool)
    if s.shape != y.shape:
        raise LengthMismatch(f"scores length {s.size} != truth length {y.size}")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("best_f1_sweep needs at least one positive label")
    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    pos_cum = np.concatenate([[0], np.cumsum(y[order])])
    values = np.unique(s_sorted)
    thresholds = np.concatenate([[np.nextafter(values[0], -np.inf)], values])
    n_le = np.searchsorted(s_sorted, thresholds, side="right")
    tp = n_pos - pos_cum[n_le]
    pp = len(s) - n_le
    f1 = 2.0 * tp / (pp + n_pos)
    best = len(f1) - 1 - int(np.argmax(f1[::-1]))
    t_best = float(thresholds[best])
    tpb, ppb = int(tp[best]), int(pp[best])
    fp = ppb - tpb
    fn = n_pos - tpb
    tn = len(s) - tpb - fp - fn
    return t_best, _report(tpb, fp, fn, tn, t_best, "sweep")


def fixed_threshold(train_scores: ScoreSeries | np.ndarray, fp_factor: float) -> float:
    """Deployment threshold: ``fp_factor`` times the mean normal-data score."""
    s = train_scores.scores if isinstance(train_scores, ScoreSeries) else np.asarray(train_scores)
    return float(fp_factor * np.mean(s))
