"""Method dispatch and the two benchmark tables.

Report schemas (JSON):

``qstnet.bench-noise/1``
    ``{"schema", "noise_kind", "levels": [...], "records": n,
    "rows": [{"method", "fidelity": [...], "failures": [...]}]}``;
    one fidelity cell per level, the mean over the evaluation records.

``qstnet.bench-compare/1``
    ``{"schema", "records": n, "rows": [{"method", "fidelity", "failures",
    "per_class": {name: fidelity}}], "timing": {method: seconds}}``.
    Timing is kept out of the rows so that reruns compare equal.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import hilbert, noise, recon
from .exceptions import CheckpointError, DivergenceError, InvalidParameterError, NearSingularError, QSTError
from .measurement import husimi_values, sensing_matrix
from .nn import train as nn_train
from .nn.reconstructor import reconstructor
from .states import Family

log = logging.getLogger(__name__)

METHODS = ("linear", "mle", "gd-cholesky", "gd-split", "rfb", "msnn")
NEURAL = ("rfb", "msnn")
FAILURE_LIMIT = 0.1
SCHEMA_NOISE = "qstnet.bench-noise/1"
SCHEMA_COMPARE = "qstnet.bench-compare/1"


class BenchmarkFailure(QSTError, RuntimeError):
    """A method failed on more than :data:`FAILURE_LIMIT` of the records."""


@dataclass
class MethodSettings:
    """Knobs shared by every method; ``iters=None`` means the method default."""

    iters: int | None = None
    lr: float | None = None
    seed: int = 0
    models: dict = field(default_factory=dict)


def check_methods(methods, models):
    for m in methods:
        if m not in METHODS:
            raise InvalidParameterError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if m in NEURAL and m not in models:
            raise CheckpointError(f"method {m} needs a trained checkpoint")


def run_method(method, values, geometry, label, settings, dim=32, truth=None):
    """Reconstruct one grid; returns ``(rho_hat, info)``.

    ``label`` is only used by ``msnn``, which is conditioned on the class.
    """
    info = {}
    if method == "linear":
        rho = recon.linear_inversion(values, sensing_matrix(geometry, dim))
    elif method == "mle":
        iters = 200 if settings.iters is None else settings.iters
        res = recon.mle_iterative(values, geometry, iters=iters, dim=dim)
        rho = res.rho_hat
        info.update(iterations=iters, final_loss=res.final_loss)
    elif method in ("gd-cholesky", "gd-split"):
        overrides = {"seed": settings.seed}
        if settings.iters is not None:
            overrides["iterations"] = settings.iters
        if settings.lr is not None:
            overrides["learning_rate"] = settings.lr
        kind = method.split("-")[1]
        res = recon.gd_reconstruct(values, geometry, kind, recon.gd_config(**overrides), dim)
        rho = res.rho_hat
        info.update(iterations=res.iterations, final_loss=res.final_loss)
    elif method == "rfb":
        labels, feats = nn_train.rfb_predict(settings.models["rfb"], values[None])
        rho = reconstructor(int(labels[0]), feats[0], dim)
        info.update(predicted_label=Family(int(labels[0])).pretty, features=[str(f) for f in feats[0]])
    elif method == "msnn":
        raw = nn_train.msnn_predict_raw(settings.models["msnn"], values[None], [label])
        _, rho = nn_train.msnn_states(raw)[0]
        if rho is None:
            raise NearSingularError("split layer trace vanished for this record")
    else:
        raise InvalidParameterError(f"unknown method {method!r}")
    if truth is not None:
        info["fidelity"] = hilbert.fidelity(truth, rho)
    return rho, info


def _noisy_record(records, i, spec, seed, geometry):
    """Apply ``spec`` to clean record ``i`` at evaluation time; returns ``(grid, truth)``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(i), 7]))
    rho = records.rhos[i]
    if spec is None:
        return records.husimi[i], rho
    if spec.acts_on_state:
        noisy = noise.apply_state_noise(rho, spec, rng)
        return husimi_values(noisy, geometry), noisy
    return noise.pepper(records.husimi[i], spec.level, rng), rho


def _evaluate(method, records, indices, geometry, settings, spec=None):
    fids, failures = [], 0
    for i in indices:
        grid, truth = _noisy_record(records, i, spec, settings.seed, geometry)
        try:
            _, info = run_method(method, grid, geometry, int(records.labels[i]), settings,
                                 records.rhos.shape[-1], truth)
        except DivergenceError:
            raise
        except QSTError as exc:
            log.warning("%s failed on record %d: %s", method, i, exc)
            failures += 1
            fids.append(0.0)
            continue
        fids.append(info["fidelity"])
    return np.array(fids), failures


def _check_failures(method, failures, n):
    if failures > FAILURE_LIMIT * n:
        raise BenchmarkFailure(f"{method} failed on {failures}/{n} records")


def bench_noise(records, geometry, methods, kind, levels, settings, indices=None):
    check_methods(methods, settings.models)
    indices = np.arange(len(records)) if indices is None else np.asarray(indices)
    rows = []
    for method in methods:
        cells, fails = [], []
        for level in levels:
            spec = noise.NoiseSpec(kind, float(level), settings.seed)
            fids, failures = _evaluate(method, records, indices, geometry, settings, spec)
            _check_failures(method, failures, len(indices))
            cells.append(float(fids.mean()))
            fails.append(failures)
        rows.append({"method": method, "fidelity": cells, "failures": fails})
    return {"schema": SCHEMA_NOISE, "noise_kind": kind, "levels": [float(v) for v in levels],
            "records": int(len(indices)), "rows": rows}


def bench_compare(records, geometry, methods, settings, indices=None):
    check_methods(methods, settings.models)
    indices = np.arange(len(records)) if indices is None else np.asarray(indices)
    rows, timing = [], {}
    labels = records.labels[indices]
    for method in methods:
        t0 = time.perf_counter()
        fids, failures = _evaluate(method, records, indices, geometry, settings)
        timing[method] = time.perf_counter() - t0
        _check_failures(method, failures, len(indices))
        per_class = {Family(c).pretty: float(fids[labels == c].mean()) for c in np.unique(labels)}
        rows.append({"method": method, "fidelity": float(fids.mean()), "failures": failures,
                     "per_class": per_class})
    return {"schema": SCHEMA_COMPARE, "records": int(len(indices)), "rows": rows, "timing": timing}


def validate_noise_table(table):
    """Check a parsed bench-noise report against its schema; raises ``ValueError``."""
    if table.get("schema") != SCHEMA_NOISE:
        raise ValueError("not a bench-noise table")
    n = len(table["levels"])
    for row in table["rows"]:
        if row["method"] not in METHODS or len(row["fidelity"]) != n or len(row["failures"]) != n:
            raise ValueError(f"malformed row {row!r}")
    return table
