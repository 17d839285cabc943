"""Pure-numpy kernel implementations (fallback when the compiled core is absent).

Convolutions are lowered to one GEMM per batch via an im2col view; the maxpool
argmax keeps the first maximum in row-major block order so tie-breaking matches
the compiled core.
"""

import numpy as np
import scipy.signal
from numpy.lib.stride_tricks import as_strided


def _im2col3x3(x):
    # (N,C,H,W) -> (N, C*9, Ho*Wo) patch matrix, (c,ky,kx)-major rows
    n, c, h, w = x.shape
    ho, wo = h - 2, w - 2
    sn, sc, sh, sw = x.strides
    cols = as_strided(x, (n, c, 3, 3, ho, wo), (sn, sc, sh, sw, sh, sw))
    return np.ascontiguousarray(cols).reshape(n, c * 9, ho * wo)


def conv3x3_forward(x, w, b):
    n, c, h, wd = x.shape
    o = w.shape[0]
    ho, wo = h - 2, wd - 2
    cols = _im2col3x3(x)
    y = np.matmul(w.reshape(o, c * 9), cols)  # (N,O,Ho*Wo) via broadcast
    y += b.reshape(1, o, 1)
    return np.ascontiguousarray(y.reshape(n, o, ho, wo))


def conv3x3_grad_weights(x, dy):
    n, c, h, wd = x.shape
    o = dy.shape[1]
    ho, wo = h - 2, wd - 2
    cols = _im2col3x3(x)                                   # (N, C9, P)
    colsT = cols.transpose(0, 2, 1).reshape(n * ho * wo, c * 9)
    dyT = dy.reshape(n, o, ho * wo).transpose(1, 0, 2).reshape(o, n * ho * wo)
    dw = (dyT @ colsT).reshape(o, c, 3, 3)
    db = dy.sum(axis=(0, 2, 3))
    return dw, db


def maxpool_forward(x, th, tw):
    n, c, h, w = x.shape
    ho, wo = h // th, w // tw
    xc = x[:, :, : ho * th, : wo * tw]
    blocks = xc.reshape(n, c, ho, th, wo, tw).transpose(0, 1, 2, 4, 3, 5)
    blocks = np.ascontiguousarray(blocks).reshape(n, c, ho, wo, th * tw)
    idx = blocks.argmax(axis=-1).astype(np.int32)  # first max wins ties
    y = np.take_along_axis(blocks, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool_backward(dy, idx, x_shape, th, tw):
    n, c, h, w = x_shape
    ho, wo = h // th, w // tw
    dx = np.zeros(x_shape, dtype=dy.dtype)
    ni, ci, hi, wi = np.indices((n, c, ho, wo), sparse=False)
    ky = idx // tw
    kx = idx % tw
    # distinct blocks: no index collisions, plain assignment is safe
    dx[ni, ci, hi * th + ky, wi * tw + kx] = dy
    return dx


def biquad(x, b0, b1, b2, a1, a2):
    # direct-form II transposed, zero initial state
    return scipy.signal.lfilter([b0, b1, b2], [1.0, a1, a2], x)


def resample_apply(x, n_out, step, table):
    res, taps = table.shape
    half = taps // 2
    i = np.arange(n_out)
    t = i * step
    k = np.floor(t).astype(np.int64)
    frac = t - k
    phase = (frac * res + 0.5).astype(np.int64)
    wrap = phase >= res
    phase[wrap] = 0
    k[wrap] += 1
    xp = np.concatenate([np.zeros(half, x.dtype), x, np.zeros(half + 1, x.dtype)])
    idx = k[:, None] + np.arange(taps)[None, :] + 1  # +half pad, -(half-1) window start
    return np.einsum("ij,ij->i", table[phase], xp[idx])
