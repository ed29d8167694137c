import json
from dataclasses import replace

import numpy as np
import pytest

from conftest import dense_genome
from evoad.data import SynthConfig, normalize, split_train_test, synth_generate
from evoad.engine import (
    EvolutionConfig,
    evaluate,
    evolve,
    evolve_subspaces,
    fitness,
    load_checkpoint,
    score_model,
    split_validation,
    write_checkpoint,
)
from evoad.errors import CheckpointWriteError
from evoad.genome import Limits, Subspace, is_valid
from evoad.nn import TrainConfig, build_model
from evoad.operators import crossover_models

TINY = EvolutionConfig(
    population_size=4,
    iterations=2,
    limits=Limits(c_max=4, L_max=2, w_max=3),
    train_cfg=TrainConfig(epochs=2, learning_rate=1e-2),
    seed=3,
)


def series(rows=160, sensors=3, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(rows)
    base = np.sin(t / 5.0)[:, None] * rng.uniform(0.5, 1.5, size=sensors)
    return base + rng.normal(0, 0.05, size=(rows, sensors))


@pytest.fixture(scope="module")
def synth8():
    ds, meta = synth_generate(SynthConfig(sensors=8, length=4000, seed=0))
    train, _ = split_train_test(ds, meta["train_rows"])
    return normalize(train).values, meta


# ---------------------------------------------------------------- fitness


def test_perfect_reconstruction_scores_zero():
    m = build_model(dense_genome([2, 2]), Subspace((0, 1)))
    eye = np.eye(2).ravel()
    m.set_weights(np.concatenate([eye, np.zeros(2), eye, np.zeros(2)]))
    assert score_model(m, series(sensors=2), fp_factor=2.0, fp_penalty=0.01) == 0.0


def test_constant_output_model_on_standard_data():
    rng = np.random.default_rng(0)
    val = rng.normal(size=(4000, 3))
    m = build_model(dense_genome([3, 2]), Subspace((0, 1, 2)))
    m.set_weights(np.zeros(m.n_weights))  # output is the constant 0
    norms = np.linalg.norm(val, axis=1)
    fp = np.sum(norms > 2.0 * norms.mean())
    expected = -np.mean(norms**2) - 0.01 * fp / len(val)
    got = score_model(m, val, fp_factor=2.0, fp_penalty=0.01)
    assert got == pytest.approx(expected, rel=1e-12)
    # E||x||^2 = width for unit-variance features
    assert got == pytest.approx(-3.0, abs=0.15)


def test_identical_genomes_equal_fitness():
    x = series()
    tr, va = split_validation(x, 0.2)
    g = dense_genome([3, 2], window=2)
    cfg = TrainConfig(epochs=3)
    a = fitness(g, Subspace((0, 1, 2)), tr, va, cfg, seed=5)
    b = fitness(dense_genome([3, 2], window=2), Subspace((0, 1, 2)), tr, va, cfg, seed=5)
    assert a == b and np.isfinite(a) and a < 0


def test_failing_individual_scores_minus_inf():
    x = series()
    tr, va = split_validation(x, 0.2)
    tr = tr.copy()
    tr[3, 1] = np.nan
    res = evaluate(dense_genome([3, 2]), Subspace((0, 1, 2)), tr, va, TrainConfig(epochs=1))
    assert res.fitness == -np.inf and res.weights is None and res.error


def test_split_validation_is_time_ordered():
    x = np.arange(10.0)[:, None]
    tr, va = split_validation(x, 0.2)
    assert tr[:, 0].tolist() == list(range(8)) and va[:, 0].tolist() == [8.0, 9.0]
    with pytest.raises(ValueError):
        split_validation(x, 0.2, min_rows=10)


def test_config_bounds():
    with pytest.raises(ValueError):
        EvolutionConfig(population_size=1)
    with pytest.raises(ValueError):
        EvolutionConfig(population_size=4, elitism=4)
    with pytest.raises(ValueError):
        EvolutionConfig(mutation_rate=1.5)
    assert EvolutionConfig.from_dict(TINY.to_dict()) == TINY


# ---------------------------------------------------------------- evolve


def test_generation_one_is_recombination_only(tmp_path):
    cfg = replace(TINY, iterations=1, mutation_rate=0.0)
    sub = Subspace((0, 1, 2))
    run = evolve(cfg, series(), [sub], run_dir=tmp_path)
    _, _, lineages = load_checkpoint(tmp_path / "checkpoints" / "gen-000.json")
    initial = lineages[0].population
    reachable = set(initial)
    for a in initial:
        for b in initial:
            for level in range(min(a.n_layers, b.n_layers)):
                reachable.update(crossover_models(a, b, np.random.default_rng(0), kind=0, level=level))
            reachable.update(crossover_models(a, b, np.random.default_rng(0), kind=1))
    assert run.generation == 2
    assert all(g in reachable for g in run.populations[sub.id])


def test_seeded_runs_are_identical():
    subs = [Subspace((0, 1)), Subspace((2,))]
    a = evolve(TINY, series(), subs)
    b = evolve(TINY, series(), subs)
    assert a.fitness_history == b.fitness_history
    assert a.populations == b.populations
    for s in subs:
        assert np.array_equal(a.champions[s.id].weights, b.champions[s.id].weights)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_best_fitness_never_decreases(seed):
    cfg = replace(TINY, iterations=4, mutation_rate=0.5, seed=seed)
    run = evolve(cfg, series(seed=seed), [Subspace((0, 1, 2))])
    for hist in run.fitness_history.values():
        best = [b for b, _ in hist]
        assert all(y >= x for x, y in zip(best, best[1:]))


def test_budget_and_history_length(tmp_path):
    subs = [Subspace((0,)), Subspace((1, 2))]
    run = evolve(TINY, series(), subs, run_dir=tmp_path)
    assert run.generation == TINY.iterations + 1
    for s in subs:
        assert len(run.fitness_history[s.id]) == run.generation
        assert all(n <= TINY.population_size for n in run.evaluations[s.id])
        assert is_valid(run.champions[s.id].genome, TINY.limits)
    records = [json.loads(line) for line in (tmp_path / "logs" / "evolution.jsonl").read_text().splitlines()]
    assert len(records) == run.generation * len(subs)
    assert all(r["evaluations"] == TINY.population_size for r in records)
    assert sorted(p.name for p in (tmp_path / "checkpoints").iterdir()) == ["gen-000.json", "gen-001.json", "gen-002.json"]


def test_champion_is_the_best_seen():
    run = evolve(TINY, series(), [Subspace((0, 1, 2))])
    (ch,) = run.champions.values()
    (hist,) = run.fitness_history.values()
    assert ch.fitness == max(b for b, _ in hist)
    m = ch.model()
    assert np.array_equal(m.get_weights(), ch.weights)


def test_resume_is_bit_identical(tmp_path):
    cfg = replace(TINY, iterations=3, mutation_rate=0.3)
    subs = [Subspace((0, 2)), Subspace((1,))]
    full = evolve(cfg, series(), subs, run_dir=tmp_path / "a")
    resumed = evolve(cfg, series(), subs, run_dir=tmp_path / "b", resume=tmp_path / "a" / "checkpoints" / "gen-001.json")
    assert resumed.generation == full.generation
    assert resumed.fitness_history == full.fitness_history
    assert resumed.populations == full.populations
    assert resumed.rng_state == full.rng_state
    for s in subs:
        assert np.array_equal(resumed.champions[s.id].weights, full.champions[s.id].weights)
    assert (tmp_path / "a" / "checkpoints" / "gen-003.json").read_text() == (
        tmp_path / "b" / "checkpoints" / "gen-003.json"
    ).read_text()


def test_resume_rejects_other_subspaces(tmp_path):
    evolve(replace(TINY, iterations=0), series(), [Subspace((0,))], run_dir=tmp_path)
    with pytest.raises(ValueError):
        evolve(TINY, series(), [Subspace((1,))], resume=tmp_path / "checkpoints" / "gen-000.json")


def test_unwritable_checkpoint(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(CheckpointWriteError):
        write_checkpoint(blocker / "gen-000.json", {})


def test_graph_family_evolves():
    cfg = replace(
        TINY,
        family="graph",
        iterations=1,
        limits=Limits(graph_dim_max=70, w_max=4),
    )
    run = evolve(cfg, series(), [Subspace((0, 1, 2))])
    (ch,) = run.champions.values()
    assert ch.genome.family == "graph" and np.isfinite(ch.fitness)


# ---------------------------------------------------------------- subspaces


def test_single_sensor_gives_single_subspace():
    assert evolve_subspaces(TINY, series(sensors=1)) == [Subspace((0,))]


def test_graph_family_uses_all_sensors():
    assert evolve_subspaces(replace(TINY, family="graph"), series(sensors=4)) == [Subspace.full(4)]


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_subspaces_cover_all_sensors(seed):
    cfg = replace(TINY, seed=seed, n_subspaces=3, subspace_population=6, subspace_iterations=2)
    subs = evolve_subspaces(cfg, series(rows=120, sensors=5, seed=seed))
    covered = sorted(i for s in subs for i in s.feature_indices)
    assert covered == list(range(5))
    assert 1 <= len(subs) <= 3


def test_subspaces_separate_independent_groups(synth8):
    values, meta = synth8
    cfg = EvolutionConfig(train_cfg=TrainConfig(epochs=20, learning_rate=1e-2), seed=0)
    subs = evolve_subspaces(cfg, values)
    groups = meta["groups"]
    assert sorted(s.feature_indices for s in subs) == [(0, 2, 4, 6), (1, 3, 5, 7)]
    for s in subs:
        assert len({groups[i] for i in s.feature_indices}) == 1
