"""Hot numeric kernels: compiled core with a pure-numpy fallback.

The backend is selected once at import time.  The Cython extension
(`hearken.kernels._core`) is preferred when built; setting ``HEARKEN_NO_EXT=1``
in the environment forces the numpy fallback.  Both backends implement the
same operations with identical tie-breaking and index arithmetic, so results
agree to floating-point accumulation order.

Gradient of a 3x3 valid convolution w.r.t. its input is expressed through the
forward kernel (full correlation with flipped, transposed weights), so each
backend only provides forward + weight-gradient primitives.
"""

import os

import numpy as np

from hearken.kernels import _numpy

_impl = _numpy
BACKEND = "numpy"
if os.environ.get("HEARKEN_NO_EXT", "0") != "1":
    try:
        from hearken.kernels import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass


def _as4d(a, dtype):
    return np.ascontiguousarray(a, dtype=dtype)


def conv3x3_forward(x, w, b, impl=None):
    """Valid 3x3 convolution, stride 1: (N,C,H,W) -> (N,O,H-2,W-2)."""
    impl = impl or _impl
    dt = x.dtype
    return impl.conv3x3_forward(_as4d(x, dt), _as4d(w, dt), np.ascontiguousarray(b, dt))


def conv3x3_backward(x, w, dy, impl=None):
    """Gradients (dx, dw, db) of the valid 3x3 convolution."""
    impl = impl or _impl
    dt = x.dtype
    x = _as4d(x, dt)
    w = _as4d(w, dt)
    dy = _as4d(dy, dt)
    dw, db = impl.conv3x3_grad_weights(x, dy)
    # dx = full-correlation of dy with flipped kernels, swapping in/out channels
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dy_pad = np.pad(dy, ((0, 0), (0, 0), (2, 2), (2, 2)))
    dx = impl.conv3x3_forward(_as4d(dy_pad, dt), wt, np.zeros(wt.shape[0], dt))
    return dx, dw, db


def maxpool_forward(x, th, tw, impl=None):
    """Max pooling with stride == pool size; trailing rows/cols are dropped.

    Returns (y, idx) where idx holds the in-block argmax (ky*tw+kx), first
    maximum on ties.
    """
    impl = impl or _impl
    return impl.maxpool_forward(_as4d(x, x.dtype), int(th), int(tw))


def maxpool_backward(dy, idx, x_shape, th, tw, impl=None):
    impl = impl or _impl
    return impl.maxpool_backward(
        np.ascontiguousarray(dy), np.ascontiguousarray(idx), tuple(x_shape), int(th), int(tw)
    )


def biquad(x, coeffs, impl=None):
    """Run one biquad section (b0,b1,b2,a1,a2), DF2T, zero initial state."""
    impl = impl or _impl
    x = np.ascontiguousarray(x, dtype=np.float64)
    b0, b1, b2, a1, a2 = (float(v) for v in coeffs)
    return impl.biquad(x, b0, b1, b2, a1, a2)


_TABLE_CACHE: dict = {}
_TABLE_RESOLUTION = 8192


def sinc_table(taps: int, beta: float, cutoff: float, resolution: int = _TABLE_RESOLUTION):
    """Polyphase windowed-sinc interpolation table, rows normalized to unit sum.

    Row p holds the taps for fractional offset p/resolution; tap j sits at
    signal offset j - taps//2 + 1 relative to the integer part of the output
    position.  Built once in numpy so both backends share identical weights.
    """
    key = (taps, round(beta, 12), round(cutoff, 12), resolution)
    tab = _TABLE_CACHE.get(key)
    if tab is None:
        half = taps // 2
        frac = np.arange(resolution)[:, None] / resolution
        u = np.arange(taps)[None, :] - (half - 1) - frac
        win = np.zeros_like(u)
        inside = np.abs(u) <= half
        win[inside] = np.i0(beta * np.sqrt(1.0 - (u[inside] / half) ** 2)) / np.i0(beta)
        tab = cutoff * np.sinc(cutoff * u) * win
        tab /= tab.sum(axis=1, keepdims=True)
        _TABLE_CACHE[key] = tab
    return tab


def resample(x, in_rate: int, out_rate: int, taps: int = 32, beta: float = 8.0, impl=None):
    """Windowed-sinc rate conversion of a float64 signal."""
    impl = impl or _impl
    x = np.ascontiguousarray(x, dtype=np.float64)
    n_out = int(round(len(x) * out_rate / in_rate))
    step = in_rate / out_rate
    cutoff = min(1.0, out_rate / in_rate)
    table = sinc_table(taps, beta, cutoff)
    return impl.resample_apply(x, n_out, step, table)
