"""Convolution primitives implemented with NumPy.

Three primitives cover the forward and backward passes of both plain and
transposed convolution:

``gather``
    Strided patch dot-products. Used by the convolution forward pass and
    by the transposed-convolution input gradient.
``scatter``
    The adjoint of ``gather``: accumulate weighted output gradients back
    onto a padded input buffer. Used by the convolution input gradient
    and by the transposed-convolution forward pass.
``patch_outer``
    Outer products between input patches and output positions, summed over
    the batch. Produces the weight gradient of both convolution kinds.

Arrays are float64 and laid out NHWC; weights are (kh, kw, c_in, c_out).
All functions take pre-padded inputs, padding is the caller's business.
"""

import numpy as np


def _im2col(xpad, kh, kw, sh, sw, ho, wo):
    """Stack the (kh, kw) patch lattice into a (n, ho, wo, kh*kw*c) array."""
    n = xpad.shape[0]
    c = xpad.shape[3]
    cols = np.empty((n, ho, wo, kh * kw * c), dtype=np.float64)
    k = 0
    for u in range(kh):
        for v in range(kw):
            cols[:, :, :, k:k + c] = xpad[:, u:u + ho * sh:sh, v:v + wo * sw:sw, :]
            k += c
    return cols


def gather(xpad, w, sh, sw):
    """y[n,i,j,o] = sum over (u,v,c) of xpad[n, i*sh+u, j*sw+v, c] * w[u,v,c,o]."""
    kh, kw, ci, co = w.shape
    n, hp, wp, _ = xpad.shape
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    cols = _im2col(xpad, kh, kw, sh, sw, ho, wo)
    y = cols.reshape(n * ho * wo, kh * kw * ci) @ w.reshape(kh * kw * ci, co)
    return y.reshape(n, ho, wo, co)


def scatter(dy, w, sh, sw, hp, wp):
    """out[n, i*sh+u, j*sw+v, c] += sum over o of dy[n,i,j,o] * w[u,v,c,o]."""
    kh, kw, ci, co = w.shape
    n, ho, wo, _ = dy.shape
    dcols = dy.reshape(n * ho * wo, co) @ w.reshape(kh * kw * ci, co).T
    dcols = dcols.reshape(n, ho, wo, kh * kw * ci)
    out = np.zeros((n, hp, wp, ci), dtype=np.float64)
    k = 0
    for u in range(kh):
        for v in range(kw):
            out[:, u:u + ho * sh:sh, v:v + wo * sw:sw, :] += dcols[:, :, :, k:k + ci]
            k += ci
    return out


def patch_outer(xpad, dy, sh, sw, kh, kw):
    """dw[u,v,c,o] = sum over (n,i,j) of xpad[n, i*sh+u, j*sw+v, c] * dy[n,i,j,o]."""
    n, ho, wo, co = dy.shape
    ci = xpad.shape[3]
    cols = _im2col(xpad, kh, kw, sh, sw, ho, wo)
    dw = cols.reshape(n * ho * wo, kh * kw * ci).T @ dy.reshape(n * ho * wo, co)
    return dw.reshape(kh, kw, ci, co)
