import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import dense_genome
from evoad.errors import FamilyMismatch
from evoad.genome import GRAPH, ConnectionGene, Genome, LayerGene, Limits, Subspace, is_valid, random_genome, validate
from evoad.operators import crossover_models, crossover_subspaces, mutate_model, mutate_subspace

LIM = Limits()


class ScriptedRng:
    """Stands in for a Generator: ``integers`` replays a script and checks bounds."""

    def __init__(self, values):
        self.values = list(values)
        self.calls = []

    def integers(self, low, high=None):
        self.calls.append((low, high))
        v = self.values.pop(0)
        assert low <= v < high
        return v


def graph_genome(window=4, dims=(100, 80)):
    genes, prev = [], window
    for d in dims:
        genes.append(LayerGene("graph", prev, d))
        prev = d
    return Genome(GRAPH, window, tuple(genes))


# ---------------------------------------------------------------- mutation


@given(st.integers(0, 2**32 - 1))
def test_window_mutation_touches_only_window(seed):
    g = dense_genome([4, 8, 2], window=3, connections=[ConnectionGene(1, "dense")], attention=[0])
    child = mutate_model(g, LIM, np.random.default_rng(seed), mutation=2)
    assert 1 <= child.window <= LIM.w_max
    assert child.encoder_genes == g.encoder_genes
    assert child.connections == g.connections and child.attention_sites == g.attention_sites


def test_channel_mutation_hand_case():
    g = dense_genome([4, 8, 2])
    rng = ScriptedRng([6])
    child = mutate_model(g, LIM, rng, mutation=0, level=0)
    # c' is drawn from [F[0].in, F[1].in] = [4, 8]
    assert rng.calls == [(4, 9)]
    assert [(x.in_channels, x.out_channels) for x in child.encoder_genes] == [(4, 6), (6, 2)]


def test_channel_mutation_locality():
    rng = np.random.default_rng(0)
    for _ in range(500):
        g = random_genome(LIM, "vanilla", 5, rng)
        child = mutate_model(g, LIM, rng, mutation=0)
        changed = [a != b for a, b in zip(g.encoder_genes, child.encoder_genes)]
        assert sum(changed) <= 2
        assert child.n_layers == g.n_layers and child.window == g.window


def test_resize_truncates_and_extends():
    g = dense_genome([4, 8, 6, 5, 3], connections=[ConnectionGene(3, "dense")], attention=[1, 3])
    short = mutate_model(g, LIM, np.random.default_rng(0), mutation=1, level=1)
    assert [x.out_channels for x in short.encoder_genes] == [8, 6]
    assert short.connections == () and short.attention_sites == (1,)
    long = mutate_model(dense_genome([4, 8]), LIM, np.random.default_rng(0), mutation=1, level=5)
    assert long.n_layers == 5 and is_valid(long)


@pytest.mark.parametrize("m, kind", [(3, "skip"), (4, "dense")])
def test_connection_mutations(m, kind):
    g = dense_genome([4, 8, 2])
    child = mutate_model(g, LIM, np.random.default_rng(0), mutation=m, level=1)
    assert child.connections == (ConnectionGene(1, kind),)
    assert child.encoder_genes == g.encoder_genes
    # the level is taken, so a pinned retry gives the genome back unchanged
    assert mutate_model(child, LIM, np.random.default_rng(0), mutation=m, level=1) == child


def test_attention_mutation():
    g = dense_genome([4, 8, 2])
    child = mutate_model(g, LIM, np.random.default_rng(0), mutation=5, level=0)
    assert child.attention_sites == (0,)
    assert mutate_model(child, LIM, np.random.default_rng(0), mutation=5, level=0) == child


@pytest.mark.parametrize("m", [1, 3, 4, 5])
@given(seed=st.integers(0, 2**32 - 1))
def test_guarded_mutations_on_graph_change_only_dims(m, seed):
    g = graph_genome()
    child = mutate_model(g, LIM, np.random.default_rng(seed), mutation=m)
    assert child.n_layers == g.n_layers and child.window == g.window
    assert child.connections == () and child.attention_sites == ()
    assert child.encoder_genes[0].in_channels == g.window
    assert is_valid(child)


def test_graph_window_mutation_moves_first_input():
    child = mutate_model(graph_genome(window=4), LIM, np.random.default_rng(2), mutation=2)
    assert child.encoder_genes[0].in_channels == child.window
    assert 3 <= child.window <= 7


def test_mutation_is_deterministic():
    g = random_genome(LIM, "vanilla", 5, np.random.default_rng(0))
    a = [mutate_model(g, LIM, np.random.default_rng(4)) for _ in range(2)]
    assert a[0] == a[1]


def test_mutation_types_are_uniform():
    rng = np.random.default_rng(0)
    draws = [int(rng.integers(0, 6)) for _ in range(6000)]
    counts = np.bincount(draws, minlength=6)
    assert counts.min() > 900


# ---------------------------------------------------------------- crossover


@given(st.integers(0, 2**32 - 1), st.integers(0, 1))
def test_identical_parents_give_identical_children(seed, kind):
    g = random_genome(LIM, "vanilla", 4, np.random.default_rng(seed))
    c1, c2 = crossover_models(g, g, np.random.default_rng(seed), kind=kind)
    assert c1 == g and c2 == g


def test_length_exchange_hand_case():
    g1 = dense_genome([4, 8, 6, 5, 3], attention=[3])
    g2 = dense_genome([4, 7, 2])
    c1, c2 = crossover_models(g1, g2, np.random.default_rng(0), kind=1)
    # g1 truncated to two layers ending in g2's latent width
    assert [(x.in_channels, x.out_channels) for x in c1.encoder_genes] == [(4, 8), (8, 2)]
    # g2 extended with g1's tail, re-chained at the junction
    assert [(x.in_channels, x.out_channels) for x in c2.encoder_genes] == [(4, 7), (7, 2), (2, 5), (5, 3)]
    assert c1.attention_sites == () and c2.attention_sites == (3,)
    assert is_valid(c1) and is_valid(c2)
    d1, d2 = crossover_models(g2, g1, np.random.default_rng(0), kind=1)
    assert (d1.n_layers, d2.n_layers) == (4, 2)


def test_layer_swap_rechains_neighbours():
    g1 = dense_genome([4, 8, 6, 2])
    g2 = Genome("vanilla", 1, (LayerGene("lstm", 4, 5), LayerGene("conv1d", 5, 9, 3), LayerGene("dense", 9, 3)))
    c1, c2 = crossover_models(g1, g2, np.random.default_rng(0), kind=0, level=1)
    assert c1.encoder_genes[1] == g2.encoder_genes[1]
    assert c1.encoder_genes[0].out_channels == 5 and c1.encoder_genes[2].in_channels == 9
    assert c2.encoder_genes[1] == g1.encoder_genes[1]
    assert is_valid(c1) and is_valid(c2)


def test_graph_crossover_only_swaps_layers():
    rng = np.random.default_rng(0)
    for _ in range(200):
        g1 = random_genome(LIM, GRAPH, 3, rng)
        g2 = random_genome(LIM, GRAPH, 3, rng)
        c1, c2 = crossover_models(g1, g2, rng, kind=1)
        assert (c1.n_layers, c2.n_layers) == (g1.n_layers, g2.n_layers)
        assert is_valid(c1) and is_valid(c2)


def test_family_mismatch():
    with pytest.raises(FamilyMismatch):
        crossover_models(dense_genome([3, 2]), graph_genome(), np.random.default_rng(0))


def test_closure_ten_thousand_applications():
    lim = Limits(c_max=16)
    rng = np.random.default_rng(0)
    pool = {f: [random_genome(lim, f, 6, rng) for _ in range(20)] for f in ("vanilla", GRAPH)}
    for step in range(10_000):
        fam = "vanilla" if step % 3 else GRAPH
        genomes = pool[fam]
        i, j = rng.integers(0, len(genomes), size=2)
        if rng.random() < 0.5:
            kids = [mutate_model(genomes[i], lim, rng)]
        else:
            kids = list(crossover_models(genomes[i], genomes[j], rng))
        for k in kids:
            assert not validate(k, lim), (k, validate(k, lim))
        genomes[i] = kids[0]


# ---------------------------------------------------------------- subspaces


def test_subspace_rate_zero_is_identity():
    s = Subspace((1, 3))
    assert mutate_subspace(s, 5, 0.0, np.random.default_rng(0)) == s


def test_subspace_rate_one_on_full_keeps_one_feature():
    out = mutate_subspace(Subspace.full(5), 5, 1.0, np.random.default_rng(0))
    assert len(out) == 1


@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_subspace_mutation_never_empty(seed, rate):
    out = mutate_subspace(Subspace((0,)), 6, rate, np.random.default_rng(seed))
    assert 1 <= len(out) and max(out.feature_indices) < 6


def test_subspace_crossover_hand_case():
    s1, s2 = Subspace((0, 1, 2)), Subspace((3, 4, 5))
    coins = np.random.default_rng(7).random(6) < 0.5
    assert coins.tolist() == [False, False, False, True, True, False]
    # features 3 and 4 swap owners, everything else stays put
    c1, c2 = crossover_subspaces(s1, s2, np.random.default_rng(7), sensor_count=6)
    assert c1.feature_indices == (0, 1, 2, 3, 4)
    assert c2.feature_indices == (5,)
