"""Layers with explicit forward/backward passes.

Each layer owns views into the model's flat weight and gradient buffers, so
the optimizer, the fine-tuner and checkpointing all see one contiguous
vector. ``forward`` caches what ``backward`` needs; ``backward`` adds into
the gradient views and returns the gradient with respect to its input.

Sequence layers take ``(batch, steps, channels)``. Graph layers take
``(batch, nodes, features)``.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from evoad import kernels

TANH = "tanh"
LINEAR = "linear"


class Layer:
    kind = ""

    def __init__(self, in_channels: int, out_channels: int, activation: str = LINEAR):
        if in_channels < 1 or out_channels < 1:
            raise ValueError("channels must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.activation = activation
        self.aux: dict = {}
        self._shapes = self.param_shapes()
        self._cache = None

    # -- parameter plumbing ---------------------------------------------
    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self._shapes.values())

    def bind(self, weights: np.ndarray, grads: np.ndarray) -> None:
        self.weights = weights
        self.grads = grads
        self.p, self.g = {}, {}
        off = 0
        for name, shape in self._shapes.items():
            size = int(np.prod(shape))
            self.p[name] = weights[off : off + size].reshape(shape)
            self.g[name] = grads[off : off + size].reshape(shape)
            off += size

    def init(self, rng: np.random.Generator) -> None:
        """Uniform fan-in init for matrices, zero biases."""
        for name, arr in self.p.items():
            if name.startswith("b"):
                arr[...] = 0.0
            else:
                fan_in = arr.shape[-2] if arr.ndim >= 2 else max(1, arr.shape[0])
                bound = 1.0 / np.sqrt(fan_in)
                arr[...] = rng.uniform(-bound, bound, size=arr.shape)

    # -- activations -----------------------------------------------------
    def _act(self, z):
        return np.tanh(z) if self.activation == TANH else z

    def _act_back(self, dy, y):
        return dy * (1.0 - y * y) if self.activation == TANH else dy

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.in_channels}->{self.out_channels}, {self.activation})"


class Dense(Layer):
    """Time-distributed affine map."""

    kind = "dense"

    def param_shapes(self):
        return {"W": (self.in_channels, self.out_channels), "b": (self.out_channels,)}

    def forward(self, x):
        y = self._act(x @ self.p["W"] + self.p["b"])
        self._cache = (x, y)
        return y

    def backward(self, dy):
        x, y = self._cache
        dz = self._act_back(dy, y)
        self.g["W"] += x.reshape(-1, self.in_channels).T @ dz.reshape(-1, self.out_channels)
        self.g["b"] += dz.reshape(-1, self.out_channels).sum(axis=0)
        return dz @ self.p["W"].T


class Conv1D(Layer):
    """'Same'-padded 1-D convolution along the time axis."""

    kind = "conv1d"

    def __init__(self, in_channels, out_channels, kernel=3, activation=LINEAR):
        if kernel < 1 or kernel % 2 == 0:
            raise ValueError("kernel must be odd and >= 1")
        self.kernel = kernel
        super().__init__(in_channels, out_channels, activation)
        self.aux = {"kernel": kernel}

    def param_shapes(self):
        return {"W": (self.kernel, self.in_channels, self.out_channels), "b": (self.out_channels,)}

    def init(self, rng):
        bound = 1.0 / np.sqrt(self.kernel * self.in_channels)
        self.p["W"][...] = rng.uniform(-bound, bound, size=self.p["W"].shape)
        self.p["b"][...] = 0.0

    def forward(self, x):
        pad = self.kernel // 2
        xt = np.transpose(x, (1, 0, 2))
        xp = np.zeros((xt.shape[0] + 2 * pad, xt.shape[1], xt.shape[2]))
        xp[pad : pad + xt.shape[0]] = xt
        z = kernels.active.conv1d_forward(xp, np.ascontiguousarray(self.p["W"]), self.p["b"])
        y = self._act(np.transpose(z, (1, 0, 2)))
        self._cache = (xp, y)
        return y

    def backward(self, dy):
        xp, y = self._cache
        pad = self.kernel // 2
        dz = np.ascontiguousarray(np.transpose(self._act_back(dy, y), (1, 0, 2)))
        dxp, dw, db = kernels.active.conv1d_backward(dz, xp, np.ascontiguousarray(self.p["W"]))
        self.g["W"] += dw
        self.g["b"] += db
        steps = dz.shape[0]
        return np.transpose(dxp[pad : pad + steps], (1, 0, 2))


class LSTM(Layer):
    """Sequence-to-sequence LSTM; gate order (input, forget, cell, output).

    The activation argument is ignored: the cell output is already bounded.
    """

    kind = "lstm"

    def param_shapes(self):
        h = self.out_channels
        return {"Wx": (self.in_channels, 4 * h), "Wh": (h, 4 * h), "b": (4 * h,)}

    def init(self, rng):
        super().init(rng)
        h = self.out_channels
        self.p["b"][h : 2 * h] = 1.0  # forget-gate bias

    def forward(self, x):
        xt = np.ascontiguousarray(np.transpose(x, (1, 0, 2)))
        hs, cs, gates = kernels.active.lstm_forward(
            xt, np.ascontiguousarray(self.p["Wx"]), np.ascontiguousarray(self.p["Wh"]), self.p["b"]
        )
        self._cache = (xt, hs, cs, gates)
        return np.transpose(hs[1:], (1, 0, 2))

    def backward(self, dy):
        xt, hs, cs, gates = self._cache
        dh = np.ascontiguousarray(np.transpose(dy, (1, 0, 2)))
        dx, dwx, dwh, db = kernels.active.lstm_backward(
            dh, xt, np.ascontiguousarray(self.p["Wx"]), np.ascontiguousarray(self.p["Wh"]), hs, cs, gates
        )
        self.g["Wx"] += dwx
        self.g["Wh"] += dwh
        self.g["b"] += db
        return np.transpose(dx, (1, 0, 2))


def attention_heads(width: int, max_heads: int = 4) -> int:
    """Largest head count <= max_heads that divides the width."""
    for h in range(min(max_heads, width), 0, -1):
        if width % h == 0:
            return h
    return 1


class Attention(Layer):
    """Residual multi-head self-attention over the time axis: ``y = x + MHA(x)``."""

    kind = "attention"

    def __init__(self, width: int, heads: int = 4):
        self.heads = attention_heads(width, heads)
        super().__init__(width, width, LINEAR)
        self.aux = {"heads": self.heads}

    def param_shapes(self):
        d = self.in_channels
        shapes = {}
        for m in ("q", "k", "v", "o"):
            shapes["W" + m] = (d, d)
            shapes["b" + m] = (d,)
        return shapes

    def _split(self, t):
        n, s, d = t.shape
        return t.reshape(n, s, self.heads, d // self.heads).transpose(0, 2, 1, 3)

    def _merge(self, t):
        n, h, s, dh = t.shape
        return t.transpose(0, 2, 1, 3).reshape(n, s, h * dh)

    def forward(self, x):
        p = self.p
        q = self._split(x @ p["Wq"] + p["bq"])
        k = self._split(x @ p["Wk"] + p["bk"])
        v = self._split(x @ p["Wv"] + p["bv"])
        scale = 1.0 / np.sqrt(q.shape[-1])
        s = (q @ k.transpose(0, 1, 3, 2)) * scale
        s = s - s.max(axis=-1, keepdims=True)
        a = np.exp(s)
        a /= a.sum(axis=-1, keepdims=True)
        ctx = self._merge(a @ v)
        self._cache = (x, q, k, v, a, ctx, scale)
        return x + ctx @ p["Wo"] + p["bo"]

    def backward(self, dy):
        x, q, k, v, a, ctx, scale = self._cache
        p, g = self.p, self.g
        d = self.in_channels
        dy2 = dy.reshape(-1, d)
        g["Wo"] += ctx.reshape(-1, d).T @ dy2
        g["bo"] += dy2.sum(axis=0)
        dctx = self._split(dy @ p["Wo"].T)
        da = dctx @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ dctx
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dx = dy.copy()
        x2 = x.reshape(-1, d)
        for m, dt in (("q", dq), ("k", dk), ("v", dv)):
            dm = self._merge(dt)
            g["W" + m] += x2.T @ dm.reshape(-1, d)
            g["b" + m] += dm.reshape(-1, d).sum(axis=0)
            dx += dm @ p["W" + m].T
        return dx


def full_neighbors(n_nodes: int) -> tuple[tuple[int, int], ...]:
    """Every ordered pair (j, k) with j != k: node j receives from node k."""
    return tuple((j, k) for j in range(n_nodes) for k in range(n_nodes) if j != k)


class GraphNode(Layer):
    """Per-node layer with neighbor messages.

    Node j's output is ``act(f_j(x_j) + sum_k a_jk * m(x_k))`` where ``f_j`` is
    an affine map owned by node j, ``m`` is a shared affine message map and
    ``a_jk`` a learned scalar per edge in ``neighbors``.
    """

    kind = "graph"

    def __init__(self, in_channels, out_channels, n_nodes, neighbors=None, activation=LINEAR):
        self.n_nodes = n_nodes
        self.neighbors = tuple(full_neighbors(n_nodes) if neighbors is None else neighbors)
        super().__init__(in_channels, out_channels, activation)
        self.aux = {"n_nodes": n_nodes, "neighbors": self.neighbors}
        if self.neighbors:
            self._rows = np.array([j for j, _ in self.neighbors])
            self._cols = np.array([k for _, k in self.neighbors])

    def param_shapes(self):
        n, di, do = self.n_nodes, self.in_channels, self.out_channels
        return {"Wf": (n, di, do), "bf": (n, do), "Wm": (di, do), "a": (len(self.neighbors),)}

    def init(self, rng):
        bound = 1.0 / np.sqrt(self.in_channels)
        self.p["Wf"][...] = rng.uniform(-bound, bound, size=self.p["Wf"].shape)
        self.p["Wm"][...] = rng.uniform(-bound, bound, size=self.p["Wm"].shape)
        self.p["bf"][...] = 0.0
        if self.neighbors:
            deg = max(1, len(self.neighbors) // self.n_nodes)
            self.p["a"][...] = rng.uniform(0.0, 1.0 / deg, size=self.p["a"].shape)

    def _adjacency(self):
        adj = np.zeros((self.n_nodes, self.n_nodes))
        if self.neighbors:
            adj[self._rows, self._cols] = self.p["a"]
        return adj

    def forward(self, x):
        p = self.p
        own = np.einsum("nji,jio->njo", x, p["Wf"]) + p["bf"]
        if self.neighbors:
            msg = x @ p["Wm"]
            adj = self._adjacency()
            z = own + np.einsum("jk,nko->njo", adj, msg)
        else:
            msg = adj = None
            z = own
        y = self._act(z)
        self._cache = (x, msg, adj, y)
        return y

    def backward(self, dy):
        x, msg, adj, y = self._cache
        p, g = self.p, self.g
        dz = self._act_back(dy, y)
        g["Wf"] += np.einsum("nji,njo->jio", x, dz)
        g["bf"] += dz.sum(axis=0)
        dx = np.einsum("njo,jio->nji", dz, p["Wf"])
        if self.neighbors:
            dadj = np.einsum("njo,nko->jk", dz, msg)
            g["a"] += dadj[self._rows, self._cols]
            dmsg = np.einsum("jk,njo->nko", adj, dz)
            g["Wm"] += x.reshape(-1, self.in_channels).T @ dmsg.reshape(-1, self.out_channels)
            dx += dmsg @ p["Wm"].T
        return dx


def make_layer(
    kind: str,
    in_channels: int,
    out_channels: int,
    activation: str = LINEAR,
    kernel: int = 3,
    n_nodes: Optional[int] = None,
    neighbors=None,
) -> Layer:
    if kind == "dense":
        return Dense(in_channels, out_channels, activation)
    if kind == "conv1d":
        return Conv1D(in_channels, out_channels, kernel, activation)
    if kind == "lstm":
        return LSTM(in_channels, out_channels, activation)
    if kind == "attention":
        return Attention(in_channels)
    if kind == "graph":
        return GraphNode(in_channels, out_channels, n_nodes or 1, neighbors, activation)
    raise ValueError(f"unknown layer kind {kind!r}")
