"""Population-based search over architectures and sensor subspaces.

Two searches run here. ``evolve_subspaces`` groups sensors using a tiny
probe autoencoder as the judge. ``evolve`` then breeds one genome population
per subspace. Each individual is trained on normal data and scored on a
held-out tail of that data. No labels are involved.
"""

from __future__ import annotations

import base64
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from evoad.data import TimeSeriesDataset, select, windows
from evoad.errors import CheckpointWriteError, EvoADError
from evoad.finetune import count_false_positives
from evoad.genome import (
    DENSE,
    GRAPH,
    VANILLA,
    Genome,
    LayerGene,
    Limits,
    Subspace,
    deserialize,
    random_genome,
    serialize,
    validate,
)
from evoad.nn.model import TrainConfig, TrainedModel, build_model, reconstruction_errors, train
from evoad.operators import crossover_models, crossover_subspaces, mutate_model, mutate_subspace

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 20
    iterations: int = 20
    mutation_rate: float = 0.02
    tournament_k: int = 3
    elitism: int = 1
    limits: Limits = Limits()
    train_cfg: TrainConfig = TrainConfig()
    seed: int = 0
    family: str = VANILLA
    fp_factor: float = 2.0
    fp_penalty: float = 0.01
    val_fraction: float = 0.2
    # subspace search
    n_subspaces: int = 2
    subspace_population: int = 12
    subspace_iterations: int = 8
    subspace_mutation_rate: float = 0.125
    size_bonus: float = 0.01
    workers: int = 1

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0 <= self.mutation_rate <= 1:
            raise ValueError("mutation_rate must be in [0, 1]")
        if self.tournament_k < 1:
            raise ValueError("tournament_k must be >= 1")
        if not 0 <= self.elitism < self.population_size:
            raise ValueError("elitism must be in [0, population_size)")
        if self.family not in (VANILLA, GRAPH):
            raise ValueError(f"family must be {VANILLA!r} or {GRAPH!r}")
        if not self.fp_factor > 0:
            raise ValueError("fp_factor must be > 0")
        if self.fp_penalty < 0:
            raise ValueError("fp_penalty must be >= 0")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.n_subspaces < 1:
            raise ValueError("n_subspaces must be >= 1")
        if self.subspace_population < 2:
            raise ValueError("subspace_population must be >= 2")
        if self.subspace_iterations < 0:
            raise ValueError("subspace_iterations must be >= 0")
        if not 0 <= self.subspace_mutation_rate <= 1:
            raise ValueError("subspace_mutation_rate must be in [0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["limits"]["kernels"] = list(self.limits.kernels)
        d["limits"]["kinds"] = list(self.limits.kinds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvolutionConfig":
        d = dict(d)
        lim = dict(d.pop("limits", {}))
        for key in ("kernels", "kinds"):
            if key in lim:
                lim[key] = tuple(lim[key])
        return cls(limits=Limits(**lim), train_cfg=TrainConfig(**d.pop("train_cfg", {})), **d)


# ---------------------------------------------------------------- fitness


def split_validation(values: np.ndarray, val_fraction: float, min_rows: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Time-ordered split: the last ``val_fraction`` of rows is held out."""
    n_val = max(min_rows, int(round(len(values) * val_fraction)))
    if n_val >= len(values):
        raise ValueError(f"{len(values)} rows leave nothing to train on after holding out {n_val}")
    return values[:-n_val], values[-n_val:]


def score_model(model: TrainedModel, val_series: np.ndarray, fp_factor: float, fp_penalty: float) -> float:
    """Negative mean squared point error, minus the false-positive rate penalty."""
    s = reconstruction_errors(model, val_series)
    computed = s.scores[s.window - 1 :]
    loss = float(np.mean(computed**2))
    fp = count_false_positives(s, fp_factor)
    return -loss - fp_penalty * fp / len(s.scores)


def eval_seed(seed: int, genome: Genome, subspace: Subspace) -> int:
    return int(np.random.SeedSequence([seed, genome.id, subspace.id]).generate_state(1)[0])


@dataclass
class Evaluation:
    fitness: float
    weights: Optional[np.ndarray] = None
    error: str = ""


def evaluate(
    genome: Genome,
    subspace: Subspace,
    train_series: np.ndarray,
    val_series: np.ndarray,
    train_cfg: TrainConfig,
    fp_factor: float = 2.0,
    fp_penalty: float = 0.01,
    seed: int = 0,
) -> Evaluation:
    """Build, train and score one individual. Failures score ``-inf``."""
    s = eval_seed(seed, genome, subspace)
    try:
        model = build_model(genome, subspace, seed=s)
        train(model, windows(train_series, genome.window), replace(train_cfg, seed=s))
        value = score_model(model, val_series, fp_factor, fp_penalty)
    except (EvoADError, ValueError, FloatingPointError) as exc:
        return Evaluation(-np.inf, None, f"{type(exc).__name__}: {exc}")
    if not np.isfinite(value):
        return Evaluation(-np.inf, None, "non-finite score")
    return Evaluation(value, model.get_weights())


def fitness(
    genome: Genome,
    subspace: Subspace,
    train_series: np.ndarray,
    val_series: np.ndarray,
    train_cfg: TrainConfig = TrainConfig(),
    fp_factor: float = 2.0,
    fp_penalty: float = 0.01,
    seed: int = 0,
) -> float:
    """Fitness of a genome on a subspace; higher is better, 0 is perfect.

    Both series are already restricted to the subspace's columns.
    """
    return evaluate(genome, subspace, train_series, val_series, train_cfg, fp_factor, fp_penalty, seed).fitness


def _evaluate_task(args):
    return evaluate(*args)


# ---------------------------------------------------------------- model evolution


@dataclass
class Champion:
    genome: Genome
    subspace: Subspace
    fitness: float
    weights: Optional[np.ndarray]

    def model(self) -> TrainedModel:
        m = build_model(self.genome, self.subspace)
        if self.weights is not None:
            m.set_weights(self.weights)
        return m


@dataclass
class _Lineage:
    """Search state of one subspace's population."""

    subspace: Subspace
    rng: np.random.Generator
    population: list[Genome] = field(default_factory=list)
    fitness: list[float] = field(default_factory=list)
    cache: dict[int, float] = field(default_factory=dict)
    history: list[tuple[float, float]] = field(default_factory=list)
    champion: Optional[Champion] = None


@dataclass
class EvolutionRun:
    """Outcome of ``evolve``.

    ``generation`` counts evaluated generations with the initial one
    included, so every history list has exactly ``generation`` entries.
    """

    generation: int
    subspaces: list[Subspace]
    populations: dict[int, list[Genome]]
    fitness: dict[int, list[float]]
    fitness_history: dict[int, list[tuple[float, float]]]
    champions: dict[int, Champion]
    rng_state: dict[int, dict]
    checkpoints: list[Path] = field(default_factory=list)
    evaluations: dict[int, list[int]] = field(default_factory=dict)


def _tournament(fit: Sequence[float], k: int, rng) -> int:
    picks = rng.integers(0, len(fit), size=k)
    best = int(picks[0])
    for p in picks[1:]:
        p = int(p)
        if fit[p] > fit[best] or (fit[p] == fit[best] and p < best):
            best = p
    return best


def _rank(fit: Sequence[float]) -> list[int]:
    """Indices by fitness, best first; ties keep population order."""
    return sorted(range(len(fit)), key=lambda i: (-fit[i], i))


def _breed(lin: _Lineage, config: EvolutionConfig) -> list[Genome]:
    rng = lin.rng
    order = _rank(lin.fitness)
    nxt = [lin.population[i] for i in order[: config.elitism]]
    while len(nxt) < config.population_size:
        p1 = lin.population[_tournament(lin.fitness, config.tournament_k, rng)]
        p2 = lin.population[_tournament(lin.fitness, config.tournament_k, rng)]
        children = crossover_models(p1, p2, rng)
        for child, parent in zip(children, (p1, p2)):
            if rng.random() < config.mutation_rate:
                child = mutate_model(child, config.limits, rng)
            if validate(child, config.limits):
                child = parent
            nxt.append(child)
    return nxt[: config.population_size]


def _mean_finite(fit: Sequence[float]) -> float:
    finite = [f for f in fit if np.isfinite(f)]
    return float(np.mean(finite)) if finite else float("-inf")


class _Evaluator:
    def __init__(self, config: EvolutionConfig, data: dict[int, tuple[np.ndarray, np.ndarray]]):
        self.config = config
        self.data = data
        self.pool = ProcessPoolExecutor(config.workers) if config.workers > 1 else None

    def run(self, jobs: list[tuple[Genome, Subspace]]) -> list[Evaluation]:
        c = self.config
        args = [
            (g, s, *self.data[s.id], c.train_cfg, c.fp_factor, c.fp_penalty, c.seed) for g, s in jobs
        ]
        if self.pool is None:
            return [_evaluate_task(a) for a in args]
        return list(self.pool.map(_evaluate_task, args))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def _evaluate_generation(lineages: list[_Lineage], evaluator: _Evaluator) -> list[int]:
    """Fill in fitness for every population; returns trainings per lineage."""
    jobs, owners = [], []
    for li, lin in enumerate(lineages):
        seen = set()
        for g in lin.population:
            if g.id not in lin.cache and g.id not in seen:
                seen.add(g.id)
                jobs.append((g, lin.subspace))
                owners.append(li)
    results = evaluator.run(jobs)
    trained = [0] * len(lineages)
    for (g, _), li, res in zip(jobs, owners, results):
        lin = lineages[li]
        lin.cache[g.id] = res.fitness
        trained[li] += 1
        best = lin.champion
        if res.weights is not None and (best is None or res.fitness > best.fitness):
            lin.champion = Champion(g, lin.subspace, res.fitness, res.weights)
    for lin in lineages:
        lin.fitness = [lin.cache[g.id] for g in lin.population]
        if lin.champion is None:
            # every individual failed; keep the first one so there is a champion to report
            lin.champion = Champion(lin.population[0], lin.subspace, float("-inf"), None)
        lin.history.append((max(lin.fitness), _mean_finite(lin.fitness)))
    return trained


def _encode_weights(w: Optional[np.ndarray]) -> Optional[str]:
    if w is None:
        return None
    return base64.b64encode(np.ascontiguousarray(w, dtype="<f8").tobytes()).decode("ascii")


def _decode_weights(text: Optional[str]) -> Optional[np.ndarray]:
    if text is None:
        return None
    return np.frombuffer(base64.b64decode(text), dtype="<f8").astype(float)


def _checkpoint_doc(config: EvolutionConfig, generation: int, lineages: list[_Lineage]) -> dict:
    subs = []
    for lin in lineages:
        ch = lin.champion
        subs.append(
            {
                "subspace": list(lin.subspace.feature_indices),
                "rng_state": lin.rng.bit_generator.state,
                "population": [serialize(g) for g in lin.population],
                "fitness": lin.fitness,
                "cache": {str(k): v for k, v in sorted(lin.cache.items())},
                "history": [list(h) for h in lin.history],
                "champion": {
                    "genome": serialize(ch.genome),
                    "fitness": ch.fitness,
                    "weights": _encode_weights(ch.weights),
                },
            }
        )
    return {"version": CHECKPOINT_VERSION, "generation": generation, "config": config.to_dict(), "lineages": subs}


def write_checkpoint(path: Path, doc: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_text(json.dumps(doc, sort_keys=True, indent=1))
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointWriteError(f"cannot write checkpoint {path}: {exc}") from exc


def _restore(doc: dict) -> tuple[int, list[_Lineage]]:
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    lineages = []
    for d in doc["lineages"]:
        sub = Subspace(tuple(d["subspace"]))
        rng = np.random.default_rng()
        rng.bit_generator.state = d["rng_state"]
        ch = d["champion"]
        lineages.append(
            _Lineage(
                subspace=sub,
                rng=rng,
                population=[deserialize(t) for t in d["population"]],
                fitness=[float(f) for f in d["fitness"]],
                cache={int(k): float(v) for k, v in d["cache"].items()},
                history=[(float(b), float(m)) for b, m in d["history"]],
                champion=Champion(deserialize(ch["genome"]), sub, float(ch["fitness"]), _decode_weights(ch["weights"])),
            )
        )
    return int(doc["generation"]), lineages


def load_checkpoint(path) -> tuple[EvolutionConfig, int, list[_Lineage]]:
    doc = json.loads(Path(path).read_text())
    generation, lineages = _restore(doc)
    return EvolutionConfig.from_dict(doc["config"]), generation, lineages


def _lineage_rng(seed: int, subspace: Subspace) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, subspace.id]))


def evolve(
    config: EvolutionConfig,
    dataset: TimeSeriesDataset | np.ndarray,
    subspaces: Sequence[Subspace],
    run_dir=None,
    resume=None,
) -> EvolutionRun:
    """Breed one genome population per subspace for ``config.iterations`` generations.

    ``dataset`` holds normalized, anomaly-free rows; its tail is held out for
    scoring. With ``run_dir`` a checkpoint (``checkpoints/gen-XXX.json``) and a
    log line per subspace are written after every generation. ``resume``
    names a checkpoint to continue from.
    """
    values = dataset.values if isinstance(dataset, TimeSeriesDataset) else np.asarray(dataset, dtype=float)
    subspaces = list(subspaces)
    if not subspaces:
        raise ValueError("need at least one subspace")
    lo_w, hi_w = config.limits.window_range(config.family)
    train_rows, val_rows = split_validation(values, config.val_fraction, min_rows=hi_w)
    if len(train_rows) < hi_w:
        raise ValueError(f"only {len(train_rows)} training rows for windows up to {hi_w}")

    def columns(s):
        return select(train_rows, s), select(val_rows, s)

    data = {s.id: columns(s) for s in subspaces}
    run_dir = Path(run_dir) if run_dir is not None else None
    checkpoints: list[Path] = []
    evaluations: dict[int, list[int]] = {s.id: [] for s in subspaces}

    if resume is not None:
        _, done, lineages = load_checkpoint(resume)
        if [l.subspace for l in lineages] != subspaces:
            raise ValueError("checkpoint subspaces differ from the requested ones")
        generation = done + 1
    else:
        lineages = []
        for s in subspaces:
            rng = _lineage_rng(config.seed, s)
            pop = [random_genome(config.limits, config.family, len(s), rng) for _ in range(config.population_size)]
            lineages.append(_Lineage(s, rng, pop))
        generation = 0

    evaluator = _Evaluator(config, data)
    try:
        while generation <= config.iterations:
            if generation > 0:
                for lin in lineages:
                    lin.population = _breed(lin, config)
            trained = _evaluate_generation(lineages, evaluator)
            for lin, n in zip(lineages, trained):
                evaluations[lin.subspace.id].append(n)
            if run_dir is not None:
                path = run_dir / "checkpoints" / f"gen-{generation:03d}.json"
                write_checkpoint(path, _checkpoint_doc(config, generation, lineages))
                checkpoints.append(path)
                _append_log(run_dir / "logs" / "evolution.jsonl", generation, lineages, trained)
            generation += 1
    finally:
        evaluator.close()

    return EvolutionRun(
        generation=generation,
        subspaces=subspaces,
        populations={l.subspace.id: list(l.population) for l in lineages},
        fitness={l.subspace.id: list(l.fitness) for l in lineages},
        fitness_history={l.subspace.id: list(l.history) for l in lineages},
        champions={l.subspace.id: l.champion for l in lineages},
        rng_state={l.subspace.id: l.rng.bit_generator.state for l in lineages},
        checkpoints=checkpoints,
        evaluations=evaluations,
    )


def _append_log(path: Path, generation: int, lineages: list[_Lineage], trained: list[int]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as fh:
        for lin, n in zip(lineages, trained):
            best, mean = lin.history[-1]
            rec = {
                "generation": generation,
                "subspace": lin.subspace.id,
                "best": best,
                "mean": mean,
                "evaluations": len(lin.population),
                "trained": n,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------- subspace evolution


def probe_genome(width: int) -> Genome:
    """One linear layer to a single latent unit, window 1."""
    return Genome(VANILLA, 1, (LayerGene(DENSE, width, 1),))


def subspace_fitness(
    s: Subspace, train_values: np.ndarray, val_values: np.ndarray, config: EvolutionConfig
) -> float:
    """How well one latent unit explains the subspace, plus a bonus for size.

    The loss is per feature so subspaces of different sizes compare fairly.
    """
    g = probe_genome(len(s))
    tr, va = select(train_values, s), select(val_values, s)
    seed = eval_seed(config.seed, g, s)
    try:
        model = build_model(g, s, seed=seed)
        train(model, windows(tr, 1), replace(config.train_cfg, seed=seed))
        errs = reconstruction_errors(model, va)
    except (EvoADError, ValueError, FloatingPointError):
        return float("-inf")
    loss = float(np.mean(errs.scores**2)) / len(s)
    fp = count_false_positives(errs, config.fp_factor)
    value = -loss - config.fp_penalty * fp / len(errs.scores) + config.size_bonus * len(s) / train_values.shape[1]
    return value if np.isfinite(value) else float("-inf")


def _random_partition(n: int, k: int, rng) -> list[Subspace]:
    perm = rng.permutation(n)
    return [Subspace(tuple(int(i) for i in part)) for part in np.array_split(perm, k) if len(part)]


def _cover(chosen: list[Subspace], n: int, train_values: np.ndarray) -> list[Subspace]:
    """Attach every uncovered sensor to the subspace it correlates with most."""
    covered = set(i for s in chosen for i in s.feature_indices)
    missing = [i for i in range(n) if i not in covered]
    if not missing:
        return chosen
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.nan_to_num(np.abs(np.corrcoef(train_values, rowvar=False)))
    members = [list(s.feature_indices) for s in chosen]
    for i in missing:
        best = max(range(len(members)), key=lambda j: (float(np.mean(corr[i, members[j]])), -j))
        members[best].append(i)
    return [Subspace(tuple(m)) for m in members]


def evolve_subspaces(config: EvolutionConfig, dataset: TimeSeriesDataset | np.ndarray) -> list[Subspace]:
    """Evolve sensor subsets; return up to ``n_subspaces`` disjoint ones covering all sensors."""
    values = dataset.values if isinstance(dataset, TimeSeriesDataset) else np.asarray(dataset, dtype=float)
    n = values.shape[1]
    if n == 1:
        return [Subspace((0,))]
    if config.family == GRAPH:
        return [Subspace.full(n)]
    train_values, val_values = split_validation(values, config.val_fraction)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5B5]))
    k = min(config.n_subspaces, n)

    pop: list[Subspace] = []
    while len(pop) < config.subspace_population:
        pop.extend(_random_partition(n, k, rng))
    pop = pop[: config.subspace_population]

    cache: dict[int, float] = {}

    def score(population):
        for s in population:
            if s.id not in cache:
                cache[s.id] = subspace_fitness(s, train_values, val_values, config)
        return [cache[s.id] for s in population]

    fit = score(pop)
    for _ in range(config.subspace_iterations):
        order = _rank(fit)
        nxt = [pop[i] for i in order[: config.elitism]]
        while len(nxt) < config.subspace_population:
            a = pop[_tournament(fit, config.tournament_k, rng)]
            b = pop[_tournament(fit, config.tournament_k, rng)]
            for child in crossover_subspaces(a, b, rng, n):
                nxt.append(mutate_subspace(child, n, config.subspace_mutation_rate, rng))
        pop = nxt[: config.subspace_population]
        fit = score(pop)

    ranked = sorted(cache.items(), key=lambda kv: (-kv[1], kv[0]))
    chosen: list[Subspace] = []
    used: set[int] = set()
    for sid, _ in ranked:
        s = Subspace(tuple(i for i in range(n) if sid >> i & 1))
        if used.isdisjoint(s.feature_indices):
            chosen.append(s)
            used.update(s.feature_indices)
        if len(chosen) == k:
            break
    return _cover(chosen, n, train_values)


__all__ = [
    "EvolutionConfig",
    "EvolutionRun",
    "Champion",
    "Evaluation",
    "evaluate",
    "fitness",
    "score_model",
    "split_validation",
    "evolve",
    "evolve_subspaces",
    "subspace_fitness",
    "probe_genome",
    "load_checkpoint",
    "write_checkpoint",
]
