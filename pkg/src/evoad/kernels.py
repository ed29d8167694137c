"""Hot loops of the runtime: LSTM recurrence and 1-D convolution.

Every kernel works on time-major, C-contiguous float64 arrays of shape
``(steps, batch, channels)``. Two implementations exist side by side:

* ``numpy_kernels`` - vectorized numpy, always available.
* ``numba_kernels`` - explicit loops compiled with ``numba.njit``.

``active`` is the set the layers call. It is the numba set unless numba is
missing or ``EVOAD_NUMBA=0`` is exported before import.
"""

from types import SimpleNamespace

import numpy as np

from evoad._accel import HAVE_NUMBA, USE_NUMBA, njit

# ---------------------------------------------------------------- numpy path


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def lstm_forward_np(x, wx, wh, b):
    steps, n, _ = x.shape
    h = wh.shape[0]
    hs = np.zeros((steps + 1, n, h))
    cs = np.zeros((steps + 1, n, h))
    gates = np.empty((steps, n, 4 * h))
    xw = (x.reshape(steps * n, -1) @ wx).reshape(steps, n, 4 * h)
    for t in range(steps):
        z = xw[t] + hs[t] @ wh + b
        gates[t, :, : 2 * h] = _sigmoid(z[:, : 2 * h])
        gates[t, :, 2 * h : 3 * h] = np.tanh(z[:, 2 * h : 3 * h])
        gates[t, :, 3 * h :] = _sigmoid(z[:, 3 * h :])
        i = gates[t, :, :h]
        f = gates[t, :, h : 2 * h]
        g = gates[t, :, 2 * h : 3 * h]
        o = gates[t, :, 3 * h :]
        cs[t + 1] = f * cs[t] + i * g
        hs[t + 1] = o * np.tanh(cs[t + 1])
    return hs, cs, gates


def lstm_backward_np(dhs, x, wx, wh, hs, cs, gates):
    steps, n, cin = x.shape
    h = wh.shape[0]
    dz = np.empty((steps, n, 4 * h))
    dh_next = np.zeros((n, h))
    dc_next = np.zeros((n, h))
    for t in range(steps - 1, -1, -1):
        i = gates[t, :, :h]
        f = gates[t, :, h : 2 * h]
        g = gates[t, :, 2 * h : 3 * h]
        o = gates[t, :, 3 * h :]
        tc = np.tanh(cs[t + 1])
        dh = dhs[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz[t, :, :h] = dc * g * i * (1.0 - i)
        dz[t, :, h : 2 * h] = dc * cs[t] * f * (1.0 - f)
        dz[t, :, 2 * h : 3 * h] = dc * i * (1.0 - g * g)
        dz[t, :, 3 * h :] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz[t] @ wh.T
    flat = dz.reshape(steps * n, 4 * h)
    dwx = x.reshape(steps * n, cin).T @ flat
    dwh = hs[:-1].reshape(steps * n, h).T @ flat
    db = flat.sum(axis=0)
    dx = (flat @ wx.T).reshape(steps, n, cin)
    return dx, dwx, dwh, db


def conv1d_forward_np(xp, w, b):
    k = w.shape[0]
    steps = xp.shape[0] - k + 1
    y = np.broadcast_to(b, (steps, xp.shape[1], w.shape[2])).copy()
    for j in range(k):
        y += xp[j : j + steps] @ w[j]
    return y


def conv1d_backward_np(dy, xp, w):
    k, cin, cout = w.shape
    steps, n, _ = dy.shape
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    flat_dy = dy.reshape(steps * n, cout)
    for j in range(k):
        dxp[j : j + steps] += dy @ w[j].T
        dw[j] = xp[j : j + steps].reshape(steps * n, cin).T @ flat_dy
    db = flat_dy.sum(axis=0)
    return dxp, dw, db


numpy_kernels = SimpleNamespace(
    name="numpy",
    lstm_forward=lstm_forward_np,
    lstm_backward=lstm_backward_np,
    conv1d_forward=conv1d_forward_np,
    conv1d_backward=conv1d_backward_np,
)

# ---------------------------------------------------------------- numba path


@njit
def lstm_forward_nb(x, wx, wh, b):
    steps, n, _ = x.shape
    h = wh.shape[0]
    hs = np.zeros((steps + 1, n, h))
    cs = np.zeros((steps + 1, n, h))
    gates = np.empty((steps, n, 4 * h))
    xw = np.dot(np.ascontiguousarray(x).reshape(steps * n, x.shape[2]), wx).reshape(steps, n, 4 * h)
    for t in range(steps):
        z = xw[t] + np.dot(hs[t], wh)
        for r in range(n):
            for c in range(h):
                zi = z[r, c] + b[c]
                zf = z[r, h + c] + b[h + c]
                zg = z[r, 2 * h + c] + b[2 * h + c]
                zo = z[r, 3 * h + c] + b[3 * h + c]
                i = 1.0 / (1.0 + np.exp(-zi))
                f = 1.0 / (1.0 + np.exp(-zf))
                g = np.tanh(zg)
                o = 1.0 / (1.0 + np.exp(-zo))
                gates[t, r, c] = i
                gates[t, r, h + c] = f
                gates[t, r, 2 * h + c] = g
                gates[t, r, 3 * h + c] = o
                cnew = f * cs[t, r, c] + i * g
                cs[t + 1, r, c] = cnew
                hs[t + 1, r, c] = o * np.tanh(cnew)
    return hs, cs, gates


@njit
def lstm_backward_nb(dhs, x, wx, wh, hs, cs, gates):
    steps, n, cin = x.shape
    h = wh.shape[0]
    dx = np.empty((steps, n, cin))
    dwx = np.zeros((cin, 4 * h))
    dwh = np.zeros((h, 4 * h))
    db = np.zeros(4 * h)
    dz = np.empty((n, 4 * h))
    dh_next = np.zeros((n, h))
    dc_next = np.zeros((n, h))
    wxt = np.ascontiguousarray(wx.T)
    wht = np.ascontiguousarray(wh.T)
    for t in range(steps - 1, -1, -1):
        for r in range(n):
            for c in range(h):
                i = gates[t, r, c]
                f = gates[t, r, h + c]
                g = gates[t, r, 2 * h + c]
                o = gates[t, r, 3 * h + c]
                tc = np.tanh(cs[t + 1, r, c])
                dh = dhs[t, r, c] + dh_next[r, c]
                dc = dh * o * (1.0 - tc * tc) + dc_next[r, c]
                dz[r, c] = dc * g * i * (1.0 - i)
                dz[r, h + c] = dc * cs[t, r, c] * f * (1.0 - f)
                dz[r, 2 * h + c] = dc * i * (1.0 - g * g)
                dz[r, 3 * h + c] = dh * tc * o * (1.0 - o)
                dc_next[r, c] = dc * f
        dh_next = np.dot(dz, wht)
        dx[t] = np.dot(dz, wxt)
        dwx += np.dot(np.ascontiguousarray(x[t].T), dz)
        dwh += np.dot(np.ascontiguousarray(hs[t].T), dz)
        for r in range(n):
            for c in range(4 * h):
                db[c] += dz[r, c]
    return dx, dwx, dwh, db


@njit
def conv1d_forward_nb(xp, w, b):
    k, _, cout = w.shape
    steps = xp.shape[0] - k + 1
    n = xp.shape[1]
    y = np.empty((steps, n, cout))
    for t in range(steps):
        acc = np.dot(xp[t], w[0])
        for j in range(1, k):
            acc += np.dot(xp[t + j], w[j])
        for r in range(n):
            for c in range(cout):
                y[t, r, c] = acc[r, c] + b[c]
    return y


@njit
def conv1d_backward_nb(dy, xp, w):
    k, cin, cout = w.shape
    steps, n, _ = dy.shape
    dxp = np.zeros(xp.shape)
    dw = np.zeros(w.shape)
    db = np.zeros(cout)
    for j in range(k):
        wjt = np.ascontiguousarray(w[j].T)
        for t in range(steps):
            dxp[t + j] += np.dot(dy[t], wjt)
            dw[j] += np.dot(np.ascontiguousarray(xp[t + j].T), dy[t])
    for t in range(steps):
        for r in range(n):
            for c in range(cout):
                db[c] += dy[t, r, c]
    return dxp, dw, db


numba_kernels = (
    SimpleNamespace(
        name="numba",
        lstm_forward=lstm_forward_nb,
        lstm_backward=lstm_backward_nb,
        conv1d_forward=conv1d_forward_nb,
        conv1d_backward=conv1d_backward_nb,
    )
    if HAVE_NUMBA
    else None
)

active = numba_kernels if USE_NUMBA else numpy_kernels
