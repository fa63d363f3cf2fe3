"""Mini-batch training and evaluation loops for both networks."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .. import hilbert
from ..exceptions import DivergenceError, NearSingularError, ProjectionError
from ..measurement import GridGeometry, normalize_batch
from ..recon import density_from_split, project_to_physical
from . import autodiff as ad
from .losses import msnn_loss, rfb_loss, split_features
from .models import N_CLASSES, MsModel, RfbModel
from .optim import SCHEDULES, Adam, OptimConfig
from .physics import husimi_layer, split_density, to_complex
from .reconstructor import reconstructor

log = logging.getLogger(__name__)

MSNN_ALPHA = 100.0
MSNN_MIN_TRACE = 1e-3


@dataclass
class TrainData:
    """Column-oriented training set.

    ``grids`` holds raw Husimi values ``(n, side**2)``; the networks see the
    peak-normalised version.
    """

    grids: np.ndarray
    labels: np.ndarray
    features: np.ndarray
    rhos: np.ndarray
    geometry: GridGeometry

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return TrainData(self.grids[idx], self.labels[idx], self.features[idx], self.rhos[idx], self.geometry)


def one_hot(labels):
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, N_CLASSES))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _rfb_step_loss(model, data, idx, rng):
    x = normalize_batch(data.grids[idx])
    logits, feats = model.forward(x, training=True, rng=rng)
    return rfb_loss(logits, data.labels[idx], feats, data.features[idx])


def msnn_forward_density(model, x, onehot, training=False, min_trace=MSNN_MIN_TRACE):
    out = model.forward(x, onehot, training=training)
    re = ad.select(out, (slice(None), 0))
    im = ad.select(out, (slice(None), 1))
    return split_density(re, im, min_trace=min_trace)


def _msnn_step_loss(model, data, idx, rng):
    x = normalize_batch(data.grids[idx])
    d_re, d_im = msnn_forward_density(model, x, one_hot(data.labels[idx]), training=True)
    m_pred = husimi_layer(d_re, d_im, data.geometry)
    return msnn_loss(data.grids[idx], m_pred, data.rhos[idx], (d_re, d_im), MSNN_ALPHA)


def train(model, data, config, mode=None, val_data=None, eval_every=0, on_epoch=None, schedule="none"):
    """Train ``model`` in place; returns the per-epoch history.

    Each history entry has ``epoch`` (1-based), ``loss`` (sample-weighted
    mean of the batch losses) and ``lr``.  Every ``eval_every`` epochs (and
    never when it is 0) validation metrics from :func:`evaluate` are merged
    in.  ``schedule`` names a per-epoch learning-rate schedule from
    :data:`qstnet.nn.optim.SCHEDULES`.
    """
    mode = mode or model.mode
    if len(data) == 0:
        raise ValueError("training set is empty")
    step_loss = {"rfb": _rfb_step_loss, "msnn": _msnn_step_loss}[mode]
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = Adam(params, config)
    sched = SCHEDULES[schedule]
    history = []
    for epoch in range(1, config.iterations + 1):
        if sched is not None:
            opt.config = replace(config, learning_rate=sched(config.learning_rate, epoch - 1, config.iterations))
        total = 0.0
        for idx in _batches(len(data), config.batch_size, rng):
            with ad.Tape() as tape:
                loss = step_loss(model, data, idx, rng)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite training loss in epoch {epoch}", step=epoch)
            grads = ad.backward(tape, loss, params)
            opt.step(grads)
            total += value * len(idx)
        entry = {"epoch": epoch, "loss": total / len(data), "lr": opt.config.learning_rate}
        if val_data is not None and eval_every and epoch % eval_every == 0:
            entry.update(evaluate(model, val_data, mode))
        history.append(entry)
        log.info("epoch %d: %s", epoch, entry)
        if on_epoch is not None:
            on_epoch(entry, model)
    return history


def evaluation_loss(model, data, mode=None, batch_size=256):
    """Mean loss with stochastic layers off and no parameter update."""
    mode = mode or model.mode
    total = 0.0
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        x = normalize_batch(data.grids[idx])
        if mode == "rfb":
            logits, feats = model.forward(x, training=False)
            loss = rfb_loss(logits, data.labels[idx], feats, data.features[idx])
        else:
            d_re, d_im = msnn_forward_density(model, x, one_hot(data.labels[idx]))
            m_pred = husimi_layer(d_re, d_im, data.geometry)
            loss = msnn_loss(data.grids[idx], m_pred, data.rhos[idx], (d_re, d_im), MSNN_ALPHA)
        total += loss.item() * len(idx)
    return total / len(data)


def rfb_predict(model, grids, batch_size=256):
    """Predicted labels ``(n,)`` and complex features ``(n, 3)``."""
    labels, feats = [], []
    grids = np.asarray(grids, dtype=float)
    for start in range(0, len(grids), batch_size):
        x = normalize_batch(grids[start : start + batch_size])
        logits, f = model.forward(x, training=False)
        labels.append(np.argmax(logits.data, axis=1))
        feats.append(split_features(f))
    return np.concatenate(labels), np.concatenate(feats)


def msnn_predict_raw(model, grids, labels, batch_size=256):
    """Raw complex network output ``T`` for each record, ``(n, dim, dim)``."""
    out = []
    grids = np.asarray(grids, dtype=float)
    labels = np.asarray(labels, dtype=int)
    for start in range(0, len(grids), batch_size):
        sl = slice(start, start + batch_size)
        t = model.forward(normalize_batch(grids[sl]), one_hot(labels[sl]), training=False)
        out.append(to_complex(t.data[:, 0], t.data[:, 1]))
    return np.concatenate(out)


def msnn_states(raw):
    """Split-layer density (Hermitian, unit trace) and its physical projection.

    Returns ``None`` pairs for records whose split trace is near zero.
    """
    results = []
    for t in raw:
        try:
            h = density_from_split(t)
            results.append((h, project_to_physical(h)))
        except (NearSingularError, ProjectionError):
            results.append((None, None))
    return results


def evaluate(model, data, mode=None):
    """Validation metrics: RFB accuracy and reconstructor fidelity, or MS-NN fidelity."""
    mode = mode or model.mode
    fids = []
    if mode == "rfb":
        labels, feats = rfb_predict(model, data.grids)
        dim = data.rhos.shape[-1]
        for lab, f, rho in zip(labels, feats, data.rhos):
            fids.append(hilbert.fidelity(rho, reconstructor(lab, f, dim)))
        return {
            "val_accuracy": float(np.mean(labels == data.labels)),
            "val_fidelity": float(np.mean(fids)),
        }
    raw = msnn_predict_raw(model, data.grids, data.labels)
    failures = 0
    for (_, phys), rho in zip(msnn_states(raw), data.rhos):
        if phys is None:
            failures += 1
            fids.append(0.0)
        else:
            fids.append(hilbert.fidelity(rho, phys))
    return {"val_fidelity": float(np.mean(fids)), "val_failures": failures}


def make_model(mode, seed=0, **overrides):
    if mode == "rfb":
        from .models import RfbConfig

        return RfbModel(RfbConfig(seed=seed, **overrides))
    from .models import MsConfig

    return MsModel(MsConfig(seed=seed, **overrides))


__all__ = [
    "OptimConfig",
    "TrainData",
    "evaluate",
    "evaluation_loss",
    "make_model",
    "msnn_predict_raw",
    "msnn_states",
    "one_hot",
    "rfb_predict",
    "train",
]
