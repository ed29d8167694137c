import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import dense_genome
from evoad.errors import ArchitectureMismatch
from evoad.finetune import (
    FineTuneConfig,
    count_false_positives,
    finetune,
    fp_count,
    perturb_weights,
    segment_distance,
    weight_distance,
)
from evoad.genome import Subspace
from evoad.nn import TrainConfig, build_model, train
from evoad.data import windows

SUB3 = Subspace((0, 1, 2))


def normal_series(rows=300, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(rows)
    base = np.stack([np.sin(t / 7), np.cos(t / 5), np.sin(t / 3)], axis=1)
    return base + rng.normal(0, 0.1, size=(rows, 3))


def trained_champion(seed=0, epochs=3):
    x = normal_series(seed=seed)
    m = build_model(dense_genome([3, 2]), SUB3, seed=seed)
    train(m, windows(x, 1), TrainConfig(epochs=epochs, learning_rate=1e-2, seed=seed))
    return m, x


# ---------------------------------------------------------------- perturbation


@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_zero_rate_or_zero_power_is_identity(seed, p):
    w = np.random.default_rng(seed).normal(size=50)
    assert np.array_equal(perturb_weights(w, 0.0, 0.3, np.random.default_rng(seed)), w)
    assert np.array_equal(perturb_weights(w, p, 0.0, np.random.default_rng(seed)), w)


def test_hand_case():
    out = perturb_weights(
        np.array([1.0, -2.0]), 0.1, 0.5, None, selected=np.array([True, True]), signs=np.array([1.0, -1.0])
    )
    np.testing.assert_allclose(out, [1.05, -1.9], rtol=0, atol=1e-15)


def test_mutated_fraction_within_three_sigma():
    n, p = 100_000, 0.1
    w = np.ones(n)
    out = perturb_weights(w, p, 0.5, np.random.default_rng(0))
    changed = np.count_nonzero(out != w)
    assert abs(changed - n * p) <= 3 * np.sqrt(n * p * (1 - p))
    # both signs occur about equally often
    up = np.count_nonzero(out > 1)
    assert abs(up - changed / 2) <= 3 * np.sqrt(changed / 4)


def test_perturbation_keeps_length():
    assert perturb_weights(np.zeros(7), 0.5, 0.5, np.random.default_rng(0)).shape == (7,)


# ---------------------------------------------------------------- false positives


def test_fp_rule_hand_case():
    # mean 2.8, threshold 5.6
    assert count_false_positives([1, 1, 1, 1, 10], 2.0) == 1


def test_equal_errors_give_no_false_positives():
    assert count_false_positives([0.3] * 6, 1.5) == 0


def test_vanishing_factor_flags_everything():
    s = np.random.default_rng(0).uniform(0.1, 1.0, size=40)
    assert count_false_positives(s, 1e-12) == 40


def test_fp_count_on_model():
    m, x = trained_champion()
    from evoad.nn import reconstruction_errors

    s = reconstruction_errors(m, x).scores
    assert fp_count(m, x, 2.0) == int(np.sum(s > 2.0 * s.mean()))


# ---------------------------------------------------------------- distance


def test_distance_hand_case():
    assert segment_distance(np.array([1.0, 2.0]), np.array([4.0, 6.0]), [(0, 2)]) == pytest.approx(5.0, abs=1e-12)


def test_distance_sums_per_layer_norms():
    a = build_model(dense_genome([1, 1]), Subspace((0,)))
    b = build_model(dense_genome([1, 1]), Subspace((0,)))
    a.set_weights([1.0, 2.0, 0.0, 0.0])
    b.set_weights([4.0, 6.0, 3.0, 4.0])
    assert weight_distance(a, b) == pytest.approx(10.0, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_distance_identity_and_symmetry(seed):
    a = build_model(dense_genome([3, 4, 2]), SUB3, seed=seed)
    b = build_model(dense_genome([3, 4, 2]), SUB3, seed=seed + 1)
    assert weight_distance(a, a) == 0.0
    assert weight_distance(a, b) == weight_distance(b, a) > 0


def test_distance_needs_same_architecture():
    with pytest.raises(ArchitectureMismatch):
        weight_distance(build_model(dense_genome([3, 2]), SUB3), build_model(dense_genome([3, 1]), SUB3))


# ---------------------------------------------------------------- algorithm


def test_config_bounds():
    for bad in ({"population": 0}, {"iterations": 0}, {"p_m": 1.5}, {"tau": -1}, {"fp_factor": 0}, {"stagnation_window": 0}):
        with pytest.raises(ValueError):
            FineTuneConfig(**bad)


def test_zero_fp_champion_stops_at_once():
    m = build_model(dense_genome([3, 3]), SUB3)
    eye = np.eye(3).ravel()
    m.set_weights(np.concatenate([eye, np.zeros(3), eye, np.zeros(3)]))
    res = finetune(m, normal_series(), FineTuneConfig(iterations=30))
    assert res.initial_fp == 0
    assert len(res.models) == 1 and np.array_equal(res.models[0], m.get_weights())
    assert [(e.iteration, e.fp, e.saved) for e in res.log] == [(0, 0, True)]


@pytest.mark.parametrize("window", [1, 3, 5])
def test_plateau_saves_after_exactly_window_iterations(window):
    m, x = trained_champion()
    cfg = FineTuneConfig(p_m=0.0, iterations=window, stagnation_window=window, fp_factor=1.2)
    res = finetune(m, x, cfg)
    assert res.initial_fp > 0
    saved = [e.iteration for e in res.log if e.saved]
    assert saved == [window - 1]
    assert res.fps == [res.initial_fp]
    assert res.log[-1].distance == 0.0  # every variant equals the saved model


def test_hand_simulated_single_iteration():
    m, x = trained_champion(seed=1)
    cfg = FineTuneConfig(population=2, iterations=1, p_m=0.3, tau=0.5, seed=42)
    res = finetune(m, x, cfg)

    rng = np.random.default_rng(42)
    theta = m.get_weights()
    probe = m.clone()
    variants, fps = [], []
    for _ in range(2):
        sel = rng.random(theta.shape) < 0.3
        sign = np.where(rng.random(theta.shape) < 0.5, 1.0, -1.0)
        v = theta * np.where(sel, 1 + sign * 0.15, 1.0)
        probe.set_weights(v)
        variants.append(v)
        fps.append(fp_count(probe, x, 2.0))
    fp0 = fp_count(m, x, 2.0)
    best = int(np.argmin(fps))
    keep = fps[best] < fp0
    expected_w = variants[best] if keep else theta
    expected_fp = fps[best] if keep else fp0

    assert res.initial_fp == fp0
    assert len(res.models) == 1 and np.array_equal(res.models[0], expected_w)
    assert res.fps == [expected_fp]
    assert [(e.iteration, e.fp, e.restarts, e.saved) for e in res.log] == [(0, expected_fp, 0, expected_fp == 0)]


@pytest.mark.parametrize("seed", range(20))
def test_fp_never_rises_between_restarts(seed):
    m, x = trained_champion(seed=seed % 4, epochs=2)
    cfg = FineTuneConfig(population=4, iterations=15, p_m=0.3, tau=0.3, fp_factor=1.2, stagnation_window=3, seed=seed)
    before = m.get_weights()
    res = finetune(m, x, cfg)
    assert np.array_equal(m.get_weights(), before)
    assert 1 <= len(res.models) and len(res.log) <= cfg.iterations
    segments = {}
    for e in res.log:
        segments.setdefault(e.restarts, []).append(e.fp)
    for fps in segments.values():
        assert all(b <= a for a, b in zip(fps, fps[1:]))
        assert min(fps) >= 0
    assert segments[0][0] <= res.initial_fp
    assert min(res.fps) <= res.initial_fp


def test_log_records_are_json():
    m, x = trained_champion()
    res = finetune(m, x, FineTuneConfig(iterations=2))
    rec = json.loads(res.log[0].to_record())
    assert set(rec) == {"iteration", "fp", "restarts", "saved", "distance"}


def test_finetune_is_deterministic():
    m, x = trained_champion()
    cfg = FineTuneConfig(iterations=6, population=3, seed=9)
    a, b = finetune(m, x, cfg), finetune(m, x, cfg)
    assert a.fps == b.fps and [e.to_record() for e in a.log] == [e.to_record() for e in b.log]
    assert all(np.array_equal(p, q) for p, q in zip(a.models, b.models))
