"""Architecture genomes.

A genome describes one autoencoder at three levels: the family (vanilla or
graph), the encoder layer genes, and optional extras (skip/dense
connections between mirrored encoder/decoder levels, attention after an
encoder level). Decoders are never stored; :func:`mirror_decoder` derives
them.

Genomes are frozen dataclasses. Operators return new genomes via
:func:`dataclasses.replace`.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

from evoad.errors import ParseError

VANILLA = "vanilla"
GRAPH = "graph"
FAMILIES = (VANILLA, GRAPH)

DENSE, CONV1D, LSTM, GRAPH_NODE = "dense", "conv1d", "lstm", "graph"
VANILLA_KINDS = (DENSE, CONV1D, LSTM)

SKIP, DENSE_CONN = "skip", "dense"
CONNECTION_KINDS = (SKIP, DENSE_CONN)

FORMAT_HEADER = "evoad-genome/1"


@dataclass(frozen=True)
class Limits:
    """Search-space bounds shared by initialization, mutation and validation."""

    w_min: int = 1
    w_max: int = 7
    L_max: int = 6
    c_max: int = 64
    kernels: tuple[int, ...] = (1, 3, 5)
    kinds: tuple[str, ...] = VANILLA_KINDS
    graph_w_min: int = 3
    graph_L_max: int = 2
    graph_dim_min: int = 64
    graph_dim_max: int = 512

    def window_range(self, family: str) -> tuple[int, int]:
        lo = self.graph_w_min if family == GRAPH else self.w_min
        return lo, self.w_max

    def max_layers(self, family: str) -> int:
        return self.graph_L_max if family == GRAPH else self.L_max


@dataclass(frozen=True)
class LayerGene:
    kind: str
    in_channels: int
    out_channels: int
    kernel: int = 0  # conv1d only

    def describe(self) -> str:
        s = f"{self.kind} in={self.in_channels} out={self.out_channels}"
        if self.kind == CONV1D:
            s += f" kernel={self.kernel}"
        return s


@dataclass(frozen=True)
class ConnectionGene:
    encoder_level: int
    kind: str


@dataclass(frozen=True)
class Genome:
    family: str
    window: int
    encoder_genes: tuple[LayerGene, ...]
    connections: tuple[ConnectionGene, ...] = ()
    attention_sites: tuple[int, ...] = ()

    def __post_init__(self):
        # canonical ordering keeps equality and ids independent of insertion order
        object.__setattr__(self, "encoder_genes", tuple(self.encoder_genes))
        object.__setattr__(
            self,
            "connections",
            tuple(sorted(self.connections, key=lambda c: (c.encoder_level, c.kind))),
        )
        object.__setattr__(self, "attention_sites", tuple(sorted(set(self.attention_sites))))

    @property
    def n_layers(self) -> int:
        return len(self.encoder_genes)

    @property
    def input_width(self) -> int:
        """Feature width the first layer consumes (per-node window for graphs)."""
        return self.encoder_genes[0].in_channels

    @property
    def latent_width(self) -> int:
        return self.encoder_genes[-1].out_channels

    @property
    def graph_dims(self) -> Optional[tuple[tuple[int, int], ...]]:
        if self.family != GRAPH:
            return None
        return tuple((g.in_channels, g.out_channels) for g in self.encoder_genes)

    def connection_at(self, level: int) -> Optional[ConnectionGene]:
        for c in self.connections:
            if c.encoder_level == level:
                return c
        return None

    @cached_property
    def id(self) -> int:
        """Stable 64-bit content hash; equal genomes share an id."""
        digest = hashlib.blake2b(_body(self).encode(), digest_size=8).digest()
        return int.from_bytes(digest, "big")


@dataclass(frozen=True)
class Subspace:
    feature_indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "feature_indices", tuple(sorted(set(int(i) for i in self.feature_indices))))

    @property
    def id(self) -> int:
        """Bitmask of member features."""
        return sum(1 << i for i in self.feature_indices)

    def __len__(self) -> int:
        return len(self.feature_indices)

    def mask(self, sensor_count: int) -> np.ndarray:
        m = np.zeros(sensor_count, dtype=bool)
        m[list(self.feature_indices)] = True
        return m

    @classmethod
    def from_mask(cls, mask: Iterable[bool]) -> "Subspace":
        return cls(tuple(i for i, on in enumerate(mask) if on))

    @classmethod
    def full(cls, sensor_count: int) -> "Subspace":
        return cls(tuple(range(sensor_count)))


def validate_subspace(s: Subspace, sensor_count: int) -> list[str]:
    problems = []
    if not s.feature_indices:
        problems.append("subspace is empty")
    if any(i < 0 or i >= sensor_count for i in s.feature_indices):
        problems.append(f"subspace index outside [0, {sensor_count})")
    return problems


# ---------------------------------------------------------------- validation


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


def validate(genome: Genome, limits: Limits = Limits()) -> list[Violation]:
    """Return every broken invariant; an empty list means the genome is valid."""
    out: list[Violation] = []

    def bad(code, msg):
        out.append(Violation(code, msg))

    if genome.family not in FAMILIES:
        bad("UnknownFamily", f"family {genome.family!r}")
        return out
    family = genome.family
    genes = genome.encoder_genes
    lo, hi = limits.window_range(family)
    if not lo <= genome.window <= hi:
        bad("WindowOutOfRange", f"window {genome.window} not in [{lo}, {hi}]")
    if not 1 <= len(genes) <= limits.max_layers(family):
        bad("LengthOutOfRange", f"{len(genes)} layers, allowed [1, {limits.max_layers(family)}]")
    for k, g in enumerate(genes):
        if family == VANILLA and g.kind not in VANILLA_KINDS:
            bad("BadLayerKind", f"layer {k}: kind {g.kind!r} not allowed in a vanilla genome")
        if family == GRAPH and g.kind != GRAPH_NODE:
            bad("BadLayerKind", f"layer {k}: graph genomes hold only graph layers")
        if g.in_channels < 1 or g.out_channels < 1:
            bad("ChannelOutOfRange", f"layer {k}: channels must be >= 1")
        if family == VANILLA and g.out_channels > limits.c_max:
            bad("ChannelOutOfRange", f"layer {k}: out_channels {g.out_channels} > c_max {limits.c_max}")
        if family == GRAPH and not limits.graph_dim_min <= g.out_channels <= limits.graph_dim_max:
            bad(
                "GraphDimOutOfRange",
                f"layer {k}: dim {g.out_channels} not in [{limits.graph_dim_min}, {limits.graph_dim_max}]",
            )
        if g.kind == CONV1D and (g.kernel < 1 or g.kernel % 2 == 0):
            bad("BadKernel", f"layer {k}: kernel {g.kernel} must be odd and >= 1")
        if g.kind != CONV1D and g.kernel != 0:
            bad("BadKernel", f"layer {k}: kernel set on a {g.kind} layer")
    for k in range(len(genes) - 1):
        if genes[k].out_channels != genes[k + 1].in_channels:
            bad(
                "ChannelChainBreak",
                f"layer {k} out={genes[k].out_channels} != layer {k + 1} in={genes[k + 1].in_channels}",
            )
    if family == GRAPH and genes and genes[0].in_channels != genome.window:
        bad("GraphInputMismatch", f"graph layer 0 in={genes[0].in_channels} != window {genome.window}")

    levels = [c.encoder_level for c in genome.connections]
    if len(set(levels)) != len(levels):
        bad("DuplicateConnection", "more than one connection at an encoder level")
    for c in genome.connections:
        if family == GRAPH:
            bad("BadConnection", "graph genomes carry no connections")
            break
        if c.kind not in CONNECTION_KINDS:
            bad("BadConnection", f"connection kind {c.kind!r}")
        if not 0 <= c.encoder_level < len(genes):
            bad("BadConnection", f"connection at missing level {c.encoder_level}")
        elif c.kind == SKIP:
            enc_w, dec_w = _skip_widths(genes, c.encoder_level)
            if enc_w != dec_w:
                bad("SkipWidthMismatch", f"skip at level {c.encoder_level}: {enc_w} vs {dec_w}")
    for s in genome.attention_sites:
        if family == GRAPH:
            bad("BadAttentionSite", "graph genomes carry no attention")
            break
        if not 0 <= s < len(genes):
            bad("BadAttentionSite", f"attention at missing level {s}")
    return out


def _skip_widths(genes: Sequence[LayerGene], level: int) -> tuple[int, int]:
    """(encoder output width, incoming decoder width) at the mirrored pair."""
    n = len(genes)
    i = n - 1 - level
    incoming = genes[-1].out_channels if i == 0 else genes[n - i].in_channels
    return genes[level].out_channels, incoming


def is_valid(genome: Genome, limits: Limits = Limits()) -> bool:
    return not validate(genome, limits)


# ---------------------------------------------------------------- decoder


@dataclass(frozen=True)
class DecoderLayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    kernel: int
    mirrors: int  # encoder level this layer mirrors
    connection: Optional[str]  # skip / dense arriving at this layer's input


def mirror_decoder(genome: Genome) -> list[DecoderLayerSpec]:
    """Decoder layer i mirrors encoder level L-1-i with in/out swapped.

    A dense connection at that level concatenates the encoder output onto the
    decoder input, so the input width grows by the encoder's out_channels.
    """
    genes = genome.encoder_genes
    n = len(genes)
    out = []
    for i in range(n):
        level = n - 1 - i
        g = genes[level]
        conn = genome.connection_at(level)
        width = g.out_channels
        if conn is not None and conn.kind == DENSE_CONN:
            width += g.out_channels
        out.append(
            DecoderLayerSpec(
                kind=g.kind,
                in_channels=width,
                out_channels=g.in_channels,
                kernel=g.kernel,
                mirrors=level,
                connection=conn.kind if conn else None,
            )
        )
    return out


# ---------------------------------------------------------------- random init


def random_layer(kind: str, in_ch: int, out_ch: int, limits: Limits, rng: np.random.Generator) -> LayerGene:
    kernel = int(rng.choice(limits.kernels)) if kind == CONV1D else 0
    return LayerGene(kind, int(in_ch), int(out_ch), kernel)


def random_genome(
    limits: Limits, family: str, sensor_count: int, rng: np.random.Generator
) -> Genome:
    """Draw a genome with no connections or attention (those come from mutation)."""
    lo, hi = limits.window_range(family)
    window = int(rng.integers(lo, hi + 1))
    n = int(rng.integers(1, limits.max_layers(family) + 1))
    genes = []
    if family == GRAPH:
        prev = window
        for _ in range(n):
            d = int(rng.integers(limits.graph_dim_min, limits.graph_dim_max + 1))
            genes.append(LayerGene(GRAPH_NODE, prev, d))
            prev = d
    elif family == VANILLA:
        prev = sensor_count
        for _ in range(n):
            kind = str(rng.choice(limits.kinds))
            c = int(rng.integers(1, limits.c_max + 1))
            genes.append(random_layer(kind, prev, c, limits, rng))
            prev = c
    else:
        raise ValueError(f"unknown family {family!r}")
    return Genome(family, window, tuple(genes))


# ---------------------------------------------------------------- serialization


def _body(genome: Genome) -> str:
    lines = [
        FORMAT_HEADER,
        f"family: {genome.family}",
        f"window: {genome.window}",
        f"layers: {genome.n_layers}",
    ]
    for k, g in enumerate(genome.encoder_genes):
        lines.append(f"layer.{k}: {g.describe()}")
    conns = " ".join(f"{c.encoder_level}:{c.kind}" for c in genome.connections)
    lines.append(f"connections: {conns}".rstrip())
    att = " ".join(str(s) for s in genome.attention_sites)
    lines.append(f"attention: {att}".rstrip())
    return "\n".join(lines) + "\n"


def serialize(genome: Genome) -> str:
    return _body(genome) + f"id: {genome.id:016x}\n"


def deserialize(text: str) -> Genome:
    fields: dict[str, tuple[int, str]] = {}
    lines = text.splitlines()
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise ParseError(f"expected header {FORMAT_HEADER!r}", 1, "header")
    for no, raw in enumerate(lines[1:], start=2):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        key, sep, value = raw.partition(":")
        if not sep:
            raise ParseError(f"expected 'key: value', got {raw!r}", no)
        key = key.strip()
        if key in fields:
            raise ParseError(f"duplicate field {key!r}", no, key)
        fields[key] = (no, value.strip())

    def need(key):
        if key not in fields:
            raise ParseError(f"missing field {key!r}", 0, key)
        return fields[key]

    def as_int(key, no, s):
        try:
            return int(s)
        except ValueError:
            raise ParseError(f"field {key!r}: {s!r} is not an integer", no, key) from None

    _, family = need("family")
    no, w = need("window")
    window = as_int("window", no, w)
    no, n = need("layers")
    n_layers = as_int("layers", no, n)
    genes = []
    for k in range(n_layers):
        key = f"layer.{k}"
        no, spec = need(key)
        parts = spec.split()
        if not parts:
            raise ParseError(f"field {key!r} is empty", no, key)
        kind, attrs = parts[0], {}
        for p in parts[1:]:
            name, eq, val = p.partition("=")
            if not eq:
                raise ParseError(f"field {key!r}: bad attribute {p!r}", no, key)
            attrs[name] = as_int(key, no, val)
        try:
            genes.append(LayerGene(kind, attrs["in"], attrs["out"], attrs.get("kernel", 0)))
        except KeyError as e:
            raise ParseError(f"field {key!r}: missing attribute {e.args[0]!r}", no, key) from None
    no, conn_s = need("connections")
    conns = []
    for tok in conn_s.split():
        lvl, sep, kind = tok.partition(":")
        if not sep:
            raise ParseError(f"bad connection {tok!r}", no, "connections")
        conns.append(ConnectionGene(as_int("connections", no, lvl), kind))
    no, att_s = need("attention")
    sites = tuple(as_int("attention", no, s) for s in att_s.split())
    genome = Genome(family, window, tuple(genes), tuple(conns), sites)
    no, id_s = need("id")
    try:
        stored = int(id_s, 16)
    except ValueError:
        raise ParseError(f"field 'id': {id_s!r} is not hex", no, "id") from None
    if stored != genome.id:
        raise ParseError(f"id {id_s} does not match genome content ({genome.id:016x})", no, "id")
    return genome


__all__ = [
    "Genome",
    "LayerGene",
    "ConnectionGene",
    "Subspace",
    "Limits",
    "Violation",
    "ParseError",
    "validate",
    "is_valid",
    "random_genome",
    "mirror_decoder",
    "serialize",
    "deserialize",
]
