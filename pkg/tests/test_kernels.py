import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evoad import kernels

pytestmark = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")

dims = st.tuples(
    st.integers(1, 6),  # steps
    st.integers(1, 5),  # batch
    st.integers(1, 6),  # in
    st.integers(1, 6),  # hidden / out
    st.integers(0, 2**31 - 1),
)


def _close(a, b):
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)


@given(dims)
def test_lstm_kernels_agree(d):
    steps, n, cin, h, seed = d
    r = np.random.default_rng(seed)
    x = r.normal(size=(steps, n, cin))
    wx, wh, b = r.normal(size=(cin, 4 * h)), r.normal(size=(h, 4 * h)), r.normal(size=4 * h)
    fwd_np = kernels.lstm_forward_np(x, wx, wh, b)
    fwd_nb = kernels.lstm_forward_nb(x, wx, wh, b)
    _close(fwd_np, fwd_nb)
    dhs = r.normal(size=(steps, n, h))
    _close(
        kernels.lstm_backward_np(dhs, x, wx, wh, *fwd_np),
        kernels.lstm_backward_nb(dhs, x, wx, wh, *fwd_np),
    )


@given(dims, st.sampled_from([1, 3, 5]))
def test_conv1d_kernels_agree(d, k):
    steps, n, cin, cout, seed = d
    r = np.random.default_rng(seed)
    xp = r.normal(size=(steps + k - 1, n, cin))
    w, b = r.normal(size=(k, cin, cout)), r.normal(size=cout)
    _close([kernels.conv1d_forward_np(xp, w, b)], [kernels.conv1d_forward_nb(xp, w, b)])
    dy = r.normal(size=(steps, n, cout))
    _close(kernels.conv1d_backward_np(dy, xp, w), kernels.conv1d_backward_nb(dy, xp, w))


def test_conv1d_forward_hand_case():
    # single channel, kernel [1, 2, 3], input 0..4 padded by one zero on each side
    xp = np.array([0, 0, 1, 2, 3, 4, 0], dtype=float).reshape(-1, 1, 1)
    w = np.array([1.0, 2.0, 3.0]).reshape(3, 1, 1)
    expected = [3, 8, 14, 20, 11]  # 0*1+0*2+1*3, 0+2+6, 1+4+9, 2+6+12, 3+8+0
    for impl in (kernels.numpy_kernels, kernels.numba_kernels):
        y = impl.conv1d_forward(xp, w, np.zeros(1))
        assert y.ravel().tolist() == expected


def _active_name(flag):
    env = dict(os.environ, EVOAD_NUMBA=flag)
    out = subprocess.run(
        [sys.executable, "-c", "from evoad import kernels; print(kernels.active.name)"],
        env=env, capture_output=True, text=True, check=True,
    )
    return out.stdout.strip()


def test_env_flag_selects_implementation():
    assert _active_name("0") == "numpy"
    assert _active_name("off") == "numpy"
    assert _active_name("1") == "numba"
