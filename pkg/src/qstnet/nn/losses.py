from __future__ import annotations

import numpy as np

from . import autodiff as ad


def split_features(features):
    """``(B, 6)`` regression output -> ``(B, 3)`` complex array."""
    f = features.data if isinstance(features, ad.Tensor) else np.asarray(features)
    return f[:, :3] + 1j * f[:, 3:]


def pack_features(features):
    """``(B, 3)`` complex -> ``(B, 6)`` real, real parts first."""
    f = np.asarray(features, dtype=complex).reshape(-1, 3)
    return np.concatenate([f.real, f.imag], axis=1)


def rfb_loss(logits, labels, features, true_features):
    """Cross-entropy on the label plus MAE on real and imaginary feature parts."""
    logits = ad.as_tensor(logits)
    features = ad.as_tensor(features)
    if logits.ndim == 1:
        logits = ad.reshape(logits, (1, -1))
    if features.ndim == 1:
        features = ad.reshape(features, (1, -1))
    target = pack_features(true_features)
    ce = ad.softmax_cross_entropy(logits, np.atleast_1d(labels))
    re = ad.mean_abs_error(ad.select(features, (slice(None), slice(0, 3))), target[:, :3])
    im = ad.mean_abs_error(ad.select(features, (slice(None), slice(3, 6))), target[:, 3:])
    return ad.add(ce, ad.add(re, im))


def msnn_loss(m_in, m_pred, d_true, d_pred, alpha=100.0):
    """Measurement MAE plus ``alpha`` times the density-matrix MAE (real + imaginary).

    ``d_pred`` is a ``(real, imag)`` pair of tensors; ``d_true`` a complex array.
    """
    d_true = np.asarray(d_true)
    pred_re, pred_im = d_pred
    meas = ad.mean_abs_error(m_pred, np.asarray(m_in, dtype=float).reshape(ad.as_tensor(m_pred).shape))
    dens = ad.add(
        ad.mean_abs_error(pred_re, d_true.real.reshape(ad.as_tensor(pred_re).shape)),
        ad.mean_abs_error(pred_im, d_true.imag.reshape(ad.as_tensor(pred_im).shape)),
    )
    return ad.add(meas, ad.mul(dens, float(alpha)))
