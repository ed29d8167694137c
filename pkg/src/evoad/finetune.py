"""Gradient-free fine-tuning of trained weights.

Variants of the current model are produced by scaling randomly chosen
weights by ``1 +/- p_m * tau``. The variant with the fewest false positives
on normal data survives. When a run stagnates, the current model is saved
and the search restarts from the variant farthest from it in weight space.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from evoad.detector import ScoreSeries
from evoad.errors import ArchitectureMismatch
from evoad.nn.model import TrainedModel, reconstruction_errors


@dataclass(frozen=True)
class FineTuneConfig:
    population: int = 8
    iterations: int = 50
    p_m: float = 0.1
    tau: float = 0.05
    fp_factor: float = 2.0
    stagnation_window: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.population < 1:
            raise ValueError("population must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.p_m <= 1:
            raise ValueError("p_m must be in [0, 1]")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if not self.fp_factor > 0:
            raise ValueError("fp_factor must be > 0")
        if self.stagnation_window < 1:
            raise ValueError("stagnation_window must be >= 1")


def perturb_weights(
    weights: np.ndarray,
    p_m: float,
    tau: float,
    rng: np.random.Generator,
    selected: Optional[np.ndarray] = None,
    signs: Optional[np.ndarray] = None,
) -> np.ndarray:
    """``theta * (1 +/- p_m * tau)`` on a Bernoulli(p_m) subset of weights.

    ``selected`` and ``signs`` override the random draws.
    """
    weights = np.asarray(weights, dtype=float)
    if selected is None:
        selected = rng.random(weights.shape) < p_m
    if signs is None:
        signs = np.where(rng.random(weights.shape) < 0.5, 1.0, -1.0)
    factor = np.where(selected, 1.0 + signs * p_m * tau, 1.0)
    return weights * factor


def count_false_positives(scores: ScoreSeries | np.ndarray, fp_factor: float) -> int:
    """Points whose error exceeds ``fp_factor`` times the mean error."""
    s = scores.scores if isinstance(scores, ScoreSeries) else np.asarray(scores, dtype=float)
    return int(np.sum(s > fp_factor * np.mean(s)))


def fp_count(model: TrainedModel, normal_series: np.ndarray, fp_factor: float) -> int:
    return count_false_positives(reconstruction_errors(model, normal_series), fp_factor)


def segment_distance(a: np.ndarray, b: np.ndarray, segments) -> float:
    """Sum over segments of the Euclidean norm of the weight difference."""
    return float(sum(np.linalg.norm(a[s:e] - b[s:e]) for s, e in segments))


def weight_distance(m1: TrainedModel, m2: TrainedModel) -> float:
    if m1.genome != m2.genome or m1.segments != m2.segments:
        raise ArchitectureMismatch("weight distance needs identical architectures")
    return segment_distance(m1.flat_weights, m2.flat_weights, m1.segments)


@dataclass
class LogEntry:
    iteration: int
    fp: int
    restarts: int
    saved: bool = False
    distance: Optional[float] = None  # weight distance of the restart point

    def to_record(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class FineTuneResult:
    models: list[np.ndarray]  # weight vectors of the saved set
    fps: list[int]
    log: list[LogEntry] = field(default_factory=list)
    initial_fp: int = 0

    def best(self) -> tuple[np.ndarray, int]:
        """Saved weights with the fewest false positives (earliest on ties)."""
        i = int(np.argmin(self.fps))
        return self.models[i], self.fps[i]


def finetune(
    champion: TrainedModel, normal_series: np.ndarray, cfg: FineTuneConfig = FineTuneConfig()
) -> FineTuneResult:
    """Evolve the champion's weights to reduce false positives on normal data.

    Per iteration, ``population`` variants of the current model compete with
    the current model itself; the incumbent is only replaced by a strictly
    better variant. Reaching FP 0 saves the model and ends the run. A plateau
    of ``stagnation_window`` unchanged iterations saves the model and starts a
    new segment from the variant farthest from it.

    The champion's weights are left untouched.
    """
    rng = np.random.default_rng(cfg.seed)
    work = champion.clone()
    current = champion.get_weights()

    def fp_of(w):
        work.set_weights(w)
        return fp_count(work, normal_series, cfg.fp_factor)

    current_fp = fp_of(current)
    result = FineTuneResult([], [], initial_fp=current_fp)
    segment = [current_fp]
    restarts = 0
    for g in range(cfg.iterations):
        variants = [perturb_weights(current, cfg.p_m, cfg.tau, rng) for _ in range(cfg.population)]
        fps = [fp_of(v) for v in variants]
        best = int(np.argmin(fps))
        if fps[best] < current_fp:
            current, current_fp = variants[best], fps[best]
        segment.append(current_fp)
        window = segment[-(cfg.stagnation_window + 1) :]
        stagnated = current_fp == 0 or (
            len(window) == cfg.stagnation_window + 1 and all(f == current_fp for f in window)
        )
        entry = LogEntry(g, current_fp, restarts)
        if stagnated:
            result.models.append(current.copy())
            result.fps.append(current_fp)
            if current_fp == 0:
                # nothing left to improve
                entry.saved = True
                result.log.append(entry)
                return result
            dists = [segment_distance(current, v, champion.segments) for v in variants]
            far = int(np.argmax(dists))
            current, current_fp = variants[far], fps[far]
            segment = [current_fp]
            restarts += 1
            entry.saved = True
            entry.distance = dists[far]
        result.log.append(entry)
    if not result.models:
        result.models.append(current.copy())
        result.fps.append(current_fp)
    return result
