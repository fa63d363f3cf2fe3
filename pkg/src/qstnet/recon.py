"""Classical and direct-gradient reconstruction of density matrices."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import hilbert
from .exceptions import (
    DegenerateStateError,
    DivergenceError,
    IllConditionedError,
    InvalidParameterError,
    LikelihoodUnderflowError,
    NearSingularError,
    ProjectionError,
    ShapeError,
)
from .measurement import HusimiGrid, coherent_rows, sensing_matrix
from .nn import autodiff as ad
from .nn import physics
from .nn.optim import SCHEDULES, Adam, OptimConfig

SPLIT_TRACE_TOL = 1e-9
MAX_CONDITION = 1e14
JITTER = 1e-3


class ParamKind(str, enum.Enum):
    CHOLESKY = "cholesky"
    SPLIT = "split"


@dataclass
class ReconResult:
    rho_hat: np.ndarray
    iterations: int
    final_loss: float
    loss_history: list = field(default_factory=list)
    fidelity_vs_truth: float | None = None
    raw: np.ndarray | None = None

    def summary(self):
        out = {"iterations": self.iterations, "final_loss": self.final_loss}
        if self.fidelity_vs_truth is not None:
            out["fidelity"] = self.fidelity_vs_truth
        return out


# --------------------------------------------------------------------------
# parameterisations


def cholesky_factor(params):
    """Lower triangle of ``params`` with the diagonal made real."""
    lower = np.tril(np.asarray(params, dtype=complex))
    lower[np.diag_indices_from(lower)] = lower.diagonal().real
    return lower


def density_from_cholesky(params):
    """``L L^dag / tr(L L^dag)``; always a physical density matrix."""
    lower = cholesky_factor(params)
    rho = lower @ lower.conj().T
    tr = np.trace(rho).real
    if tr <= 1e-30:
        raise DegenerateStateError("Cholesky factor has zero trace")
    rho = rho / tr
    return 0.5 * (rho + rho.conj().T)


def split_factors(params):
    t = np.asarray(params, dtype=complex)
    return cholesky_factor(t), np.triu(t, 1)


def density_from_split(params):
    """``(L L^dag - U U^dag) / tr``: Hermitian, unit trace, possibly indefinite.

    ``L`` is the lower triangle of ``params`` (real diagonal) and ``U`` the
    strict upper triangle.
    """
    lower, upper = split_factors(params)
    diff = lower @ lower.conj().T - upper @ upper.conj().T
    tr = np.trace(diff).real
    if abs(tr) <= SPLIT_TRACE_TOL:
        raise NearSingularError(f"split-layer trace {tr:.3g} too close to zero")
    out = diff / tr
    return 0.5 * (out + out.conj().T)


def project_to_physical(h):
    """Clip negative eigenvalues to zero and renormalise the trace."""
    h = np.asarray(h, dtype=complex)
    w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        raise ProjectionError("no positive eigenvalue to project onto")
    rho = (v * (w / w.sum())) @ v.conj().T
    return 0.5 * (rho + rho.conj().T)


# --------------------------------------------------------------------------
# classical estimators


def _grid_values(d):
    return d.values if isinstance(d, HusimiGrid) else np.asarray(d, dtype=float).reshape(-1)


_NORMAL_CACHE = {}


def _normal_eig(A, ridge):
    """Spectrum of ``A^dag A + ridge I``, cached per sensing matrix."""
    key = (id(A), A.shape, float(ridge))
    hit = _NORMAL_CACHE.get(key)
    if hit is not None and hit[0] is A:
        return hit[1]
    normal = A.conj().T @ A
    w, v = np.linalg.eigh(0.5 * (normal + normal.conj().T))
    w = w + ridge
    if len(_NORMAL_CACHE) >= 4:
        _NORMAL_CACHE.clear()
    # keep A alive so its id cannot be reused by another array
    _NORMAL_CACHE[key] = (A, (w, v))
    return w, v


def linear_inversion(d, A, ridge=1e-10):
    """Ridge least squares ``min |A x - d|^2 + ridge |x|^2`` followed by projection."""
    values = _grid_values(d)
    A = np.asarray(A)
    if A.shape[0] != values.size:
        raise ShapeError(f"sensing matrix has {A.shape[0]} rows but data has {values.size}")
    dim = int(round(np.sqrt(A.shape[1])))
    w, v = _normal_eig(A, ridge)
    cond = w[-1] / w[0] if w[0] > 0 else np.inf
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise IllConditionedError(
            f"normal equations have condition number {cond:.3g}; increase the ridge"
        )
    x = v @ ((v.conj().T @ (A.conj().T @ values)) / w)
    h = x.reshape(dim, dim)
    h = 0.5 * (h + h.conj().T)
    tr = np.trace(h).real
    if tr > 0:
        h = h / tr
    return project_to_physical(h)


def log_likelihood(d, p):
    return float(np.sum(d * np.log(p)))


def mle_iterative(d, geom, iters=200, damping=0.2, dim=32, truth=None):
    """Damped ``R rho R`` iteration over the coherent-state POVM of the grid.

    ``R = sum_i (d_i / p_i) |a_i><a_i| / pi`` with ``p_i = Q_rho(a_i)``.
    Update: ``rho <- N[(I + eps R) rho (I + eps R)]``.  At the maximum ``R``
    is roughly the identity over the cell area, so ``eps`` is a step size in
    units of that area.
    """
    values = _grid_values(d)
    if np.any(values < 0):
        raise InvalidParameterError("MLE needs non-negative data")
    if iters < 0:
        raise InvalidParameterError("iters must be >= 0")
    c = coherent_rows(geom, dim)
    w_pi = 1.0 / np.pi
    rho = np.eye(dim, dtype=complex) / dim
    eye = np.eye(dim)

    def probs(r):
        p = np.einsum("ij,jk,ik->i", c.conj(), r, c).real / np.pi
        if np.any(p < 1e-300):
            raise LikelihoodUnderflowError("predicted Q underflowed; likelihood undefined")
        return p

    p = probs(rho)
    history = [log_likelihood(values, p)]
    for _ in range(iters):
        weights = values / p * w_pi
        R = (c.T * weights) @ c.conj()
        step = eye + damping * R
        rho = step @ rho @ step.conj().T
        rho = 0.5 * (rho + rho.conj().T)
        rho /= np.trace(rho).real
        p = probs(rho)
        history.append(log_likelihood(values, p))
    result = ReconResult(rho, iters, -history[-1], history)
    if truth is not None:
        result.fidelity_vs_truth = hilbert.fidelity(truth, rho)
    return result


# --------------------------------------------------------------------------
# gradient-based reconstruction


def estimate_mean_photon(d, geom):
    """``n = int Q |a|^2 d^2a - 1`` evaluated as a grid sum (anti-normal ordering)."""
    values = _grid_values(d)
    return float(np.sum(values * np.abs(geom.points) ** 2) * geom.cell_area - 1.0)


def init_params(kind, dim, seed, jitter=None, n_bar=None):
    """Starting factor: diagonal plus Gaussian jitter on real and imaginary parts.

    The diagonal is ``1/sqrt(dim)`` by default; with ``n_bar`` it is the square
    root of a thermal distribution of that mean photon number, which keeps
    initial weight off Fock levels the data barely constrains.
    """
    rng = np.random.default_rng(seed)
    jitter = JITTER if jitter is None else jitter
    if n_bar is None:
        diag = np.full(dim, 1 / np.sqrt(dim))
    else:
        n_bar = max(float(n_bar), 1e-3)
        diag = np.sqrt(np.exp(np.arange(dim) * np.log(n_bar / (n_bar + 1))) / (n_bar + 1))
    re = np.diag(diag) + jitter * rng.standard_normal((dim, dim))
    im = jitter * rng.standard_normal((dim, dim))
    if ParamKind(kind) is ParamKind.CHOLESKY:
        re, im = np.tril(re), np.tril(im, -1)
    return re, im


def gd_density(kind, re, im, min_trace=None):
    if ParamKind(kind) is ParamKind.CHOLESKY:
        return physics.cholesky_density(re, im)
    return physics.split_density(re, im, min_trace=min_trace)


def gd_config(**overrides):
    """Optimiser settings tuned for direct reconstruction.

    A faster second-moment decay than the network default lets small but
    consistent gradients (e.g. the last mixed component of a cat state) keep
    moving late in the run, while the larger epsilon damps drift along
    directions the Husimi data barely constrain.
    """
    base = dict(learning_rate=0.01, beta2=0.99, epsilon=3e-4, iterations=2000)
    base.update(overrides)
    return OptimConfig(**base)


def gd_reconstruct(
    d_target, geom, param_kind="cholesky", config=None, dim=32, truth=None, schedule="tail", init="thermal"
):
    """Fit a parameterised density matrix to a Husimi grid with Adam on the MAE.

    Returns the iterate with the lowest loss.  ``loss_history[t]`` is the loss
    of the parameters after ``t`` updates.  ``init="thermal"`` starts from a
    thermal diagonal matched to the grid's mean photon number, ``"uniform"``
    from ``1/sqrt(dim)``.
    """
    kind = ParamKind(param_kind)
    if schedule not in SCHEDULES:
        raise InvalidParameterError(f"unknown schedule {schedule!r}; choose from {sorted(SCHEDULES)}")
    if init not in ("thermal", "uniform"):
        raise InvalidParameterError(f"init must be 'thermal' or 'uniform', got {init!r}")
    sched = SCHEDULES[schedule]
    config = config or gd_config()
    target = _grid_values(d_target)[None, :]
    n_bar = estimate_mean_photon(d_target, geom) if init == "thermal" else None
    re0, im0 = init_params(kind, dim, config.seed, n_bar=n_bar)
    re = ad.Tensor(re0[None], requires_grad=True, name="re")
    im = ad.Tensor(im0[None], requires_grad=True, name="im")
    opt = Adam([re, im], config)
    history = []
    best = (np.inf, re0[None], im0[None])
    for step in range(config.iterations + 1):
        with ad.Tape() as tape:
            rho_re, rho_im = gd_density(kind, re, im, min_trace=SPLIT_TRACE_TOL)
            q = physics.husimi_layer(rho_re, rho_im, geom)
            loss = ad.mean_abs_error(q, target)
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(f"loss became non-finite at iteration {step}", step=step)
        history.append(value)
        if value < best[0]:
            best = (value, re.data.copy(), im.data.copy())
        if step == config.iterations:
            break
        grads = ad.backward(tape, loss, [re, im])
        if sched is not None:
            opt.config = replace(config, learning_rate=sched(config.learning_rate, step, config.iterations))
        opt.step(grads)
    params = (best[1] + 1j * best[2])[0]
    if kind is ParamKind.CHOLESKY:
        raw = density_from_cholesky(params)
        rho = raw
    else:
        raw = density_from_split(params)
        rho = project_to_physical(raw)
    result = ReconResult(rho, config.iterations, best[0], history, raw=raw)
    if truth is not None:
        result.fidelity_vs_truth = hilbert.fidelity(truth, rho)
    return result
