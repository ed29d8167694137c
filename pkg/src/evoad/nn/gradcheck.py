"""Central finite-difference checks of the hand-written backward passes."""

from __future__ import annotations

import numpy as np

from evoad.nn.layers import TANH, Layer, make_layer

EPS = 1e-6


def _rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _loss(y):
    return 0.5 * float(np.sum(y * y))


def layer_gradients(layer: Layer, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Analytic (dL/dweights, dL/dx) for L = 0.5 * ||layer(x)||^2."""
    layer.grads[:] = 0.0
    y = layer.forward(x)
    dx = layer.backward(y)
    return layer.grads.copy(), dx


def numeric_weight_gradient(layer: Layer, x: np.ndarray, eps: float = EPS) -> np.ndarray:
    w = layer.weights
    out = np.empty_like(w)
    for i in range(w.size):
        old = w[i]
        w[i] = old + eps
        up = _loss(layer.forward(x))
        w[i] = old - eps
        down = _loss(layer.forward(x))
        w[i] = old
        out[i] = (up - down) / (2 * eps)
    return out


def numeric_input_gradient(fn, x: np.ndarray, eps: float = EPS) -> np.ndarray:
    x = x.copy()
    out = np.empty_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = _loss(fn(x))
        flat[i] = old - eps
        down = _loss(fn(x))
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return out


def make_checked_layer(kind: str, shape: dict, rng: np.random.Generator) -> tuple[Layer, np.ndarray]:
    """Random layer plus a random input batch of the matching shape."""
    cin, cout = shape.get("in_channels", 3), shape.get("out_channels", 4)
    batch, steps = shape.get("batch", 2), shape.get("steps", 4)
    if kind == "attention":
        layer = make_layer("attention", cout, cout)
        x_shape = (batch, steps, cout)
    elif kind == "graph":
        nodes = shape.get("nodes", 3)
        layer = make_layer("graph", cin, cout, TANH, n_nodes=nodes)
        x_shape = (batch, nodes, cin)
    else:
        layer = make_layer(kind, cin, cout, TANH, kernel=shape.get("kernel", 3))
        x_shape = (batch, steps, cin)
    n = layer.n_params
    layer.bind(np.zeros(n), np.zeros(n))
    layer.weights[:] = rng.normal(0.0, 0.5, size=n)
    x = rng.normal(0.0, 1.0, size=x_shape)
    return layer, x


def finite_diff_check(layer_kind: str, shape_sample: dict | None = None, tolerance: float = 1e-3, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Covers every weight and every input element of one randomly initialized
    layer under ``L = 0.5 * ||y||^2``. ``tolerance`` only has to be positive;
    the measurement is returned either way.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be > 0")
    rng = np.random.default_rng(seed)
    layer, x = make_checked_layer(layer_kind, shape_sample or {}, rng)
    gw, gx = layer_gradients(layer, x)
    nw = numeric_weight_gradient(layer, x)
    nx = numeric_input_gradient(layer.forward, x)
    return max(_rel_error(gw, nw), _rel_error(gx, nx))
