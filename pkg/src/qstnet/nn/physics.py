"""Differentiable density-matrix layers and the Husimi expectation layer.

Complex matrices travel as ``(real, imag)`` pairs of tensors with a leading
batch axis, shape ``(B, N, N)``.
"""
from __future__ import annotations

import numpy as np

from ..measurement import sensing_real_parts
from . import autodiff as ad


def _masks(dim):
    lower = np.tril(np.ones((dim, dim)))
    strict_lower = np.tril(np.ones((dim, dim)), -1)
    strict_upper = np.triu(np.ones((dim, dim)), 1)
    return lower, strict_lower, strict_upper


def _gram(xr, xi):
    """Real and imaginary parts of ``X X^dag`` for ``X = xr + i xi``."""
    xrt, xit = ad.transpose(xr), ad.transpose(xi)
    re = ad.add(ad.matmul(xr, xrt), ad.matmul(xi, xit))
    im = ad.sub(ad.matmul(xi, xrt), ad.matmul(xr, xit))
    return re, im


def _trace(re):
    dim = re.shape[-1]
    return ad.sum_(ad.mul(re, np.eye(dim)), axis=(-2, -1), keepdims=True)


def cholesky_density(tr_, ti_):
    """``L L^dag / tr`` with ``L`` the lower triangle of ``tr_ + i ti_`` (real diagonal)."""
    dim = tr_.shape[-1]
    lower, strict_lower, _ = _masks(dim)
    lr = ad.mul(tr_, lower)
    li = ad.mul(ti_, strict_lower)
    re, im = _gram(lr, li)
    t = _trace(re)
    return ad.div(re, t), ad.div(im, t)


def split_density(tr_, ti_, min_trace=None):
    """``(L L^dag - U U^dag) / tr`` from one complex matrix.

    ``L`` takes the lower triangle with the real diagonal, ``U`` the strict
    upper triangle.  The result is Hermitian with unit trace but may be
    indefinite.  With ``min_trace`` set, traces smaller in magnitude are pushed
    out to ``+-min_trace`` (training-time guard against blow-ups).
    """
    dim = tr_.shape[-1]
    lower, strict_lower, strict_upper = _masks(dim)
    lr = ad.mul(tr_, lower)
    li = ad.mul(ti_, strict_lower)
    ur = ad.mul(tr_, strict_upper)
    ui = ad.mul(ti_, strict_upper)
    lre, lim = _gram(lr, li)
    ure, uim = _gram(ur, ui)
    re = ad.sub(lre, ure)
    im = ad.sub(lim, uim)
    t = _trace(re)
    if min_trace is not None:
        small = np.abs(t.data) < min_trace
        if np.any(small):
            sign = np.where(t.data >= 0, 1.0, -1.0)
            t = ad.add(t, np.where(small, sign * min_trace - t.data, 0.0))
    return ad.div(re, t), ad.div(im, t)


def husimi_layer(re, im, geom):
    """Expectation layer: Husimi Q of a batch of density matrices, ``(B, side**2)``."""
    bsz, dim = re.shape[0], re.shape[-1]
    a_re, a_im = sensing_real_parts(geom, dim)
    vr = ad.reshape(re, (bsz, dim * dim))
    vi = ad.reshape(im, (bsz, dim * dim))
    return ad.add(ad.matmul(vr, a_re), ad.matmul(vi, a_im))


def to_complex(re, im):
    return np.asarray(re.data if isinstance(re, ad.Tensor) else re) + 1j * np.asarray(
        im.data if isinstance(im, ad.Tensor) else im
    )
