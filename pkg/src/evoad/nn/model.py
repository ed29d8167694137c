"""Genome -> trainable autoencoder.

Vanilla models stack encoder layers (each optionally followed by an
attention block), then the mirrored decoder. Decoder layer ``i`` pairs with
encoder level ``L-1-i``; a skip connection adds that level's output to the
decoder input, a dense connection concatenates it in front.

Hidden layers use tanh. The latent (last encoder) layer and the output layer
are linear, so a one-level dense genome is a linear autoencoder.

Graph models see a window ``(steps, sensors)`` as one node per sensor whose
feature vector is that sensor's window, and reconstruct it node by node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from evoad.detector import ScoreSeries
from evoad.errors import (
    DivergedTraining,
    InvalidGenome,
    LengthMismatch,
    SeriesTooShort,
    ShapeMismatch,
    SubspaceMismatch,
)
from evoad.genome import (
    DENSE_CONN,
    GRAPH,
    LSTM as LSTM_KIND,
    SKIP,
    Genome,
    Limits,
    Subspace,
    mirror_decoder,
    validate,
)
from evoad.nn.layers import LINEAR, TANH, Attention, Layer, make_layer
from evoad.nn.optim import make_optimizer

# structural checks only; search-space bounds are the evolution's business
_PERMISSIVE = Limits(
    w_min=1,
    w_max=10**6,
    L_max=10**6,
    c_max=10**9,
    graph_w_min=1,
    graph_L_max=10**6,
    graph_dim_min=1,
    graph_dim_max=10**9,
)

CHUNK = 2048


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


class TrainedModel:
    """An instantiated genome with one flat, addressable weight vector."""

    def __init__(self, genome: Genome, subspace: Subspace, encoder, attention, decoder):
        self.genome = genome
        self.subspace = subspace
        self.encoder: list[Layer] = encoder
        self.attention: dict[int, Attention] = attention
        self.decoder: list[Layer] = decoder
        self.window = genome.window
        self.width = len(subspace)
        self.is_graph = genome.family == GRAPH
        self.repeat_latent = (not self.is_graph) and decoder[0].kind == LSTM_KIND
        self.train_log: list[float] = []

        layers = self.layers
        total = sum(layer.n_params for layer in layers)
        self.flat_weights = np.zeros(total)
        self.flat_grads = np.zeros(total)
        self.segments: list[tuple[int, int]] = []
        off = 0
        for layer in layers:
            n = layer.n_params
            layer.bind(self.flat_weights[off : off + n], self.flat_grads[off : off + n])
            self.segments.append((off, off + n))
            off += n

    @property
    def layers(self) -> list[Layer]:
        """Encoder layers (attention after its host) followed by decoder layers."""
        out = []
        for level, layer in enumerate(self.encoder):
            out.append(layer)
            if level in self.attention:
                out.append(self.attention[level])
        return out + list(self.decoder)

    @property
    def connections(self) -> list[tuple[int, int, str]]:
        n = len(self.encoder)
        return [(c.encoder_level, n - 1 - c.encoder_level, c.kind) for c in self.genome.connections]

    @property
    def n_weights(self) -> int:
        return self.flat_weights.size

    # -- forward / backward ------------------------------------------------
    def _forward(self, x: np.ndarray) -> np.ndarray:
        h = np.transpose(x, (0, 2, 1)) if self.is_graph else x
        enc_out = []
        for level, layer in enumerate(self.encoder):
            h = layer.forward(h)
            if level in self.attention:
                h = self.attention[level].forward(h)
            enc_out.append(h)
        n = len(self.encoder)
        self._dense_split = {}
        for i, layer in enumerate(self.decoder):
            conn = self.genome.connection_at(n - 1 - i)
            if conn is not None and conn.kind == SKIP:
                h = h + enc_out[n - 1 - i]
            elif conn is not None and conn.kind == DENSE_CONN:
                e = enc_out[n - 1 - i]
                self._dense_split[i] = e.shape[-1]
                h = np.concatenate([e, h], axis=-1)
            if i == 0 and self.repeat_latent:
                h = np.repeat(h[:, -1:, :], h.shape[1], axis=1)
            h = layer.forward(h)
        return np.transpose(h, (0, 2, 1)) if self.is_graph else h

    def _backward(self, dy: np.ndarray) -> np.ndarray:
        d = np.transpose(dy, (0, 2, 1)) if self.is_graph else dy
        n = len(self.encoder)
        d_enc: list[Optional[np.ndarray]] = [None] * n

        def add(level, g):
            d_enc[level] = g if d_enc[level] is None else d_enc[level] + g

        for i in range(n - 1, -1, -1):
            d = self.decoder[i].backward(d)
            if i == 0 and self.repeat_latent:
                last = d.sum(axis=1)
                d = np.zeros_like(d)
                d[:, -1, :] = last
            conn = self.genome.connection_at(n - 1 - i)
            if conn is not None and conn.kind == SKIP:
                add(n - 1 - i, d)
            elif conn is not None and conn.kind == DENSE_CONN:
                k = self._dense_split[i]
                add(n - 1 - i, d[..., :k])
                d = d[..., k:]
        for level in range(n - 1, -1, -1):
            if d_enc[level] is not None:
                d = d + d_enc[level]
            if level in self.attention:
                d = self.attention[level].backward(d)
            d = self.encoder[level].backward(d)
        return np.transpose(d, (0, 2, 1)) if self.is_graph else d

    def forward(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=float)
        if batch.ndim != 3 or batch.shape[1:] != (self.window, self.width):
            raise ShapeMismatch(
                f"expected (n, {self.window}, {self.width}), got {tuple(batch.shape)}"
            )
        if len(batch) <= CHUNK:
            return self._forward(batch)
        return np.concatenate([self._forward(batch[i : i + CHUNK]) for i in range(0, len(batch), CHUNK)])

    __call__ = forward

    # -- weights -----------------------------------------------------------
    def get_weights(self) -> np.ndarray:
        return self.flat_weights.copy()

    def set_weights(self, vector) -> "TrainedModel":
        vector = np.asarray(vector, dtype=float)
        if vector.shape != self.flat_weights.shape:
            raise LengthMismatch(f"expected {self.flat_weights.size} weights, got {vector.size}")
        self.flat_weights[:] = vector
        return self

    def layer_weights(self) -> list[np.ndarray]:
        return [self.flat_weights[a:b] for a, b in self.segments]

    def clone(self) -> "TrainedModel":
        twin = build_model(self.genome, self.subspace, seed=0)
        twin.set_weights(self.flat_weights)
        twin.train_log = list(self.train_log)
        return twin

    def __repr__(self):
        return f"TrainedModel({self.genome.family}, layers={self.layers}, weights={self.n_weights})"


def build_model(genome: Genome, subspace: Subspace, seed: int = 0) -> TrainedModel:
    problems = validate(genome, _PERMISSIVE)
    if problems:
        raise InvalidGenome(problems)
    if len(subspace) == 0:
        raise SubspaceMismatch("subspace is empty")
    width = len(subspace)
    dec_specs = mirror_decoder(genome)
    n = genome.n_layers
    encoder, decoder, attention = [], [], {}
    if genome.family == GRAPH:
        for level, g in enumerate(genome.encoder_genes):
            act = LINEAR if level == n - 1 else TANH
            encoder.append(make_layer("graph", g.in_channels, g.out_channels, act, n_nodes=width))
        for i, spec in enumerate(dec_specs):
            act = LINEAR if i == n - 1 else TANH
            decoder.append(make_layer("graph", spec.in_channels, spec.out_channels, act, n_nodes=width))
    else:
        if genome.input_width != width:
            raise SubspaceMismatch(
                f"genome input width {genome.input_width} != subspace size {width}"
            )
        for level, g in enumerate(genome.encoder_genes):
            act = LINEAR if level == n - 1 else TANH
            encoder.append(make_layer(g.kind, g.in_channels, g.out_channels, act, kernel=g.kernel))
            if level in genome.attention_sites:
                attention[level] = Attention(g.out_channels)
        for i, spec in enumerate(dec_specs):
            act = LINEAR if i == n - 1 else TANH
            decoder.append(make_layer(spec.kind, spec.in_channels, spec.out_channels, act, kernel=spec.kernel))
    model = TrainedModel(genome, subspace, encoder, attention, decoder)
    rng = np.random.default_rng(seed)
    for layer in model.layers:
        layer.init(rng)
    return model


def forward(model: TrainedModel, batch: np.ndarray) -> np.ndarray:
    return model.forward(batch)


def get_weights(model: TrainedModel) -> np.ndarray:
    return model.get_weights()


def set_weights(model: TrainedModel, vector) -> TrainedModel:
    return model.set_weights(vector)


def reconstruction_loss(model: TrainedModel, windows: np.ndarray) -> float:
    """Mean squared reconstruction error over all window elements."""
    recon = model.forward(windows)
    return float(np.mean((recon - windows) ** 2))


def train(model: TrainedModel, windows: np.ndarray, cfg: TrainConfig) -> TrainedModel:
    """Minibatch reconstruction training; appends one mean loss per epoch."""
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 3 or len(windows) == 0:
        raise ValueError("train needs a non-empty (n, window, width) tensor")
    if not np.all(np.isfinite(windows)):
        raise ValueError("training windows contain non-finite values")
    if windows.shape[1:] != (model.window, model.width):
        raise ShapeMismatch(f"expected (n, {model.window}, {model.width}), got {windows.shape}")
    opt = make_optimizer(cfg.optimizer, model.flat_weights, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    n = len(windows)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            xb = windows[perm[start : start + cfg.batch_size]]
            model.flat_grads[:] = 0.0
            diff = model._forward(xb) - xb
            total += float(np.sum(diff * diff)) / diff[0].size
            model._backward(2.0 * diff / diff.size)
            opt.step(model.flat_grads)
        loss = total / n
        if not np.isfinite(loss) or not np.all(np.isfinite(model.flat_weights)):
            raise DivergedTraining(epoch, loss)
        model.train_log.append(loss)
    return model


def _windows(series: np.ndarray, w: int) -> np.ndarray:
    return np.transpose(sliding_window_view(series, w, axis=0), (0, 2, 1))


def reconstruction_errors(model: TrainedModel, series: np.ndarray) -> ScoreSeries:
    """Per-time-point L2 error; time t is scored by the window ending at t.

    The first ``window-1`` positions have no window ending there and repeat
    the first computed score.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 2 or series.shape[1] != model.width:
        raise ShapeMismatch(f"expected (T, {model.width}) series, got {series.shape}")
    w = model.window
    if len(series) < w:
        raise SeriesTooShort(f"series of length {len(series)} shorter than window {w}")
    recon_last = model.forward(_windows(series, w))[:, -1, :]
    err = np.linalg.norm(series[w - 1 :] - recon_last, axis=1)
    scores = np.concatenate([np.full(w - 1, err[0]), err])
    return ScoreSeries(scores, w)
