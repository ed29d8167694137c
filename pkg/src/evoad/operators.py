"""Genetic operators on genomes and subspaces.

``mutate_model`` draws one of six mutation types:

====  =========================================================
m     effect
====  =========================================================
0     re-sample one layer's out_channels and re-chain its successor
1     resize the encoder (truncate, or extend with fresh layers)
2     re-sample the window
3     add a skip connection at an encoder level
4     add a dense connection at an encoder level
5     add attention after an encoder level
====  =========================================================

Types 1, 3, 4 and 5 only touch vanilla genomes. On graph genomes they fall
back to re-sampling one graph layer's width, so every draw does something.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

import numpy as np

from evoad.errors import FamilyMismatch
from evoad.genome import (
    DENSE_CONN,
    GRAPH,
    SKIP,
    ConnectionGene,
    Genome,
    LayerGene,
    Limits,
    Subspace,
    _skip_widths,
    random_layer,
)

N_MUTATIONS = 6
MAX_RETRIES = 10


def _randint(rng: np.random.Generator, a: int, b: int) -> int:
    """Uniform integer in the closed range spanned by a and b."""
    lo, hi = min(a, b), max(a, b)
    return int(rng.integers(lo, hi + 1))


def _rechain(genes: list[LayerGene], level: int, out_channels: int) -> None:
    genes[level] = replace(genes[level], out_channels=out_channels)
    if level + 1 < len(genes):
        genes[level + 1] = replace(genes[level + 1], in_channels=out_channels)


def _keep_levels(genome: Genome, n: int) -> dict:
    return {
        "connections": tuple(c for c in genome.connections if c.encoder_level < n),
        "attention_sites": tuple(s for s in genome.attention_sites if s < n),
    }


def _mutate_graph_dims(genome: Genome, limits: Limits, rng, level: Optional[int] = None) -> Genome:
    genes = list(genome.encoder_genes)
    l = int(rng.integers(0, len(genes))) if level is None else level
    _rechain(genes, l, int(rng.integers(limits.graph_dim_min, limits.graph_dim_max + 1)))
    return replace(genome, encoder_genes=tuple(genes))


def _apply(genome: Genome, m: int, limits: Limits, rng, level: Optional[int]) -> Optional[Genome]:
    """One mutation attempt; None when the drawn mutation cannot apply."""
    genes = list(genome.encoder_genes)
    n = len(genes)
    graph = genome.family == GRAPH

    if m == 2:
        lo, hi = limits.window_range(genome.family)
        w = int(rng.integers(lo, hi + 1))
        if graph:
            # a graph node's features are its window, so the first layer follows it
            genes[0] = replace(genes[0], in_channels=w)
        return replace(genome, window=w, encoder_genes=tuple(genes))

    if graph:
        return _mutate_graph_dims(genome, limits, rng, level)

    if m == 0:
        l = int(rng.integers(0, n)) if level is None else level
        upper = genes[l + 1].in_channels if l + 1 < n else int(rng.integers(1, limits.c_max + 1))
        c = min(_randint(rng, genes[l].in_channels, upper), limits.c_max)
        _rechain(genes, l, c)
        return replace(genome, encoder_genes=tuple(genes))

    if m == 1:
        l = int(rng.integers(0, limits.L_max + 1)) if level is None else level
        if l < n:
            keep = l + 1
            return replace(genome, encoder_genes=tuple(genes[:keep]), **_keep_levels(genome, keep))
        while len(genes) < l:
            prev = genes[-1].out_channels
            c = min(_randint(rng, prev, prev + limits.c_max), limits.c_max)
            kind = str(rng.choice(limits.kinds))
            genes.append(random_layer(kind, prev, c, limits, rng))
        return replace(genome, encoder_genes=tuple(genes))

    l = int(rng.integers(0, n)) if level is None else level
    if m in (3, 4):
        if genome.connection_at(l) is not None:
            return None
        kind = SKIP if m == 3 else DENSE_CONN
        if kind == SKIP:
            enc_w, dec_w = _skip_widths(genes, l)
            if enc_w != dec_w:
                kind = DENSE_CONN
        return replace(genome, connections=genome.connections + (ConnectionGene(l, kind),))

    if m == 5:
        if l in genome.attention_sites:
            return None
        return replace(genome, attention_sites=genome.attention_sites + (l,))

    raise ValueError(f"mutation type must be in 0..5, got {m}")


def mutate_model(
    genome: Genome,
    limits: Limits,
    rng: np.random.Generator,
    mutation: Optional[int] = None,
    level: Optional[int] = None,
) -> Genome:
    """Return a mutated copy of ``genome``.

    ``mutation`` and ``level`` pin the draw (used by tests and tooling).
    Inapplicable draws are retried up to ``MAX_RETRIES`` times, after which
    the genome comes back unchanged.
    """
    for _ in range(MAX_RETRIES):
        m = int(rng.integers(0, N_MUTATIONS)) if mutation is None else mutation
        child = _apply(genome, m, limits, rng, level)
        if child is not None:
            return child
        if level is not None and mutation is not None:
            break
    return genome


def _swap_layer(child: list[LayerGene], donor: LayerGene, l: int, first_in: int) -> None:
    gene = donor if l > 0 else replace(donor, in_channels=first_in)
    child[l] = gene
    if l > 0:
        child[l - 1] = replace(child[l - 1], out_channels=gene.in_channels)
    if l + 1 < len(child):
        child[l + 1] = replace(child[l + 1], in_channels=gene.out_channels)


def _transplant_tail(short: Genome, long: Genome) -> tuple[Genome, Genome]:
    """Children of the length exchange: (long truncated, short extended)."""
    n = short.n_layers
    trunc = list(long.encoder_genes[:n])
    trunc[-1] = replace(trunc[-1], out_channels=short.encoder_genes[-1].out_channels)
    truncated = replace(long, encoder_genes=tuple(trunc), **_keep_levels(long, n))

    tail = list(long.encoder_genes[n:])
    if tail:
        tail[0] = replace(tail[0], in_channels=short.encoder_genes[-1].out_channels)
    extended = replace(
        short,
        encoder_genes=short.encoder_genes + tuple(tail),
        connections=short.connections + tuple(c for c in long.connections if c.encoder_level >= n),
        attention_sites=short.attention_sites + tuple(s for s in long.attention_sites if s >= n),
    )
    return truncated, extended


def crossover_models(
    g1: Genome, g2: Genome, rng: np.random.Generator, kind: Optional[int] = None, level: Optional[int] = None
) -> tuple[Genome, Genome]:
    """Layer exchange (kind 0) or length exchange (kind 1, vanilla only).

    After a layer swap the neighbours are re-chained to the swapped layer's
    widths; layer 0 keeps the child's own input width. The length exchange
    returns children with the parents' lengths swapped.
    """
    if g1.family != g2.family:
        raise FamilyMismatch(f"cannot cross {g1.family} with {g2.family}")
    m = int(rng.integers(0, 2)) if kind is None else kind
    if g1.family == GRAPH:
        m = 0
    if m == 0:
        l = int(rng.integers(0, min(g1.n_layers, g2.n_layers))) if level is None else level
        c1, c2 = list(g1.encoder_genes), list(g2.encoder_genes)
        _swap_layer(c1, g2.encoder_genes[l], l, g1.encoder_genes[0].in_channels)
        _swap_layer(c2, g1.encoder_genes[l], l, g2.encoder_genes[0].in_channels)
        return replace(g1, encoder_genes=tuple(c1)), replace(g2, encoder_genes=tuple(c2))
    if g1.n_layers > g2.n_layers:
        return _transplant_tail(g2, g1)
    # equal or shorter g1: g2 takes g1's latent width, g1 gains g2's tail
    truncated, extended = _transplant_tail(g1, g2)
    return extended, truncated


# ---------------------------------------------------------------- subspaces


def _non_empty(mask: np.ndarray, pool: np.ndarray, rng) -> np.ndarray:
    if not mask.any():
        mask[int(rng.choice(pool))] = True
    return mask


def mutate_subspace(s: Subspace, sensor_count: int, rate: float, rng: np.random.Generator) -> Subspace:
    """Flip each feature's membership with probability ``rate``; never empty."""
    mask = s.mask(sensor_count)
    flips = rng.random(sensor_count) < rate
    mask ^= flips
    return Subspace.from_mask(_non_empty(mask, np.arange(sensor_count), rng))


def crossover_subspaces(
    s1: Subspace, s2: Subspace, rng: np.random.Generator, sensor_count: Optional[int] = None
) -> tuple[Subspace, Subspace]:
    """Uniform crossover: each feature's membership bit is swapped on a fair coin."""
    n = sensor_count or max(s1.feature_indices + s2.feature_indices) + 1
    m1, m2 = s1.mask(n), s2.mask(n)
    swap = rng.random(n) < 0.5
    c1 = np.where(swap, m2, m1)
    c2 = np.where(swap, m1, m2)
    pool = np.flatnonzero(m1 | m2)
    return (
        Subspace.from_mask(_non_empty(c1, pool, rng)),
        Subspace.from_mask(_non_empty(c2, pool, rng)),
    )


__all__ = ["mutate_model", "crossover_models", "mutate_subspace", "crossover_subspaces"]
