"""Time the numba and numpy kernel sets on identical inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel and shape with the best-of-N time of each
implementation and the speedup of numba over numpy. Outputs are compared
first so a fast wrong kernel cannot look good.
"""

import argparse
import time

import numpy as np

from evoad import kernels

SHAPES = [
    # (steps, batch, cin, hidden)
    (5, 64, 4, 8),
    (7, 64, 16, 16),
    (7, 64, 64, 64),
]
CONV_KERNEL = 3


def _best(fn, args, repeat):
    fn(*args)  # warm-up, includes compilation
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(rng):
    for steps, batch, cin, hid in SHAPES:
        x = rng.normal(size=(steps, batch, cin))
        wx = rng.normal(scale=0.3, size=(cin, 4 * hid))
        wh = rng.normal(scale=0.3, size=(hid, 4 * hid))
        b = rng.normal(size=4 * hid)
        hs, cs, gates = kernels.lstm_forward_np(x, wx, wh, b)
        dhs = rng.normal(size=(steps, batch, hid))
        tag = f"steps={steps} batch={batch} in={cin} out={hid}"
        yield "lstm_forward", tag, (x, wx, wh, b)
        yield "lstm_backward", tag, (dhs, x, wx, wh, hs, cs, gates)

        pad = CONV_KERNEL // 2
        xp = np.ascontiguousarray(np.pad(x, ((pad, pad), (0, 0), (0, 0))))
        w = rng.normal(scale=0.3, size=(CONV_KERNEL, cin, hid))
        cb = rng.normal(size=hid)
        dy = rng.normal(size=(steps, batch, hid))
        yield "conv1d_forward", tag, (xp, w, cb)
        yield "conv1d_backward", tag, (dy, xp, w)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        print("numba is not installed; only the numpy path exists")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16} {'shape':<36} {'numpy ms':>9} {'numba ms':>9} {'speedup':>8}")
    for name, tag, inputs in _cases(rng):
        f_np = getattr(kernels.numpy_kernels, name)
        f_nb = getattr(kernels.numba_kernels, name)
        out_np, out_nb = f_np(*inputs), f_nb(*inputs)
        if not isinstance(out_np, tuple):
            out_np, out_nb = (out_np,), (out_nb,)
        for a, c in zip(out_np, out_nb):
            np.testing.assert_allclose(a, c, rtol=1e-10, atol=1e-12)
        t_np = _best(f_np, inputs, args.repeat)
        t_nb = _best(f_nb, inputs, args.repeat)
        print(f"{name:<16} {tag:<36} {t_np * 1e3:9.3f} {t_nb * 1e3:9.3f} {t_np / t_nb:7.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
