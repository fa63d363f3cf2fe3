"""Corruption channels: random mixing, photon loss and pepper noise."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import hilbert
from .exceptions import InvalidParameterError
from .measurement import HusimiGrid

MAX_STEP = 0.01
TRACE_DRIFT_TOL = 1e-8

KINDS = ("mixed", "loss", "pepper")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    level: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        lo, hi = {"mixed": (0.0, 0.5), "loss": (0.0, math.inf), "pepper": (0.0, 1.0)}[self.kind]
        if not lo <= self.level <= hi:
            raise InvalidParameterError(f"{self.kind} noise level {self.level} outside [{lo}, {hi}]")

    @property
    def acts_on_state(self):
        return self.kind != "pepper"

    @classmethod
    def parse(cls, text, seed=0):
        """Parse ``kind:level`` (e.g. ``mixed:0.2``)."""
        kind, _, level = text.partition(":")
        try:
            return cls(kind, float(level), seed)
        except ValueError:
            raise InvalidParameterError(f"bad noise spec {text!r}; expected kind:level") from None

    def __str__(self):
        return f"{self.kind}:{self.level:g}"


def random_density(dim, rng):
    """Hilbert-Schmidt random state ``G G^dag / tr``."""
    if dim < 2:
        raise InvalidParameterError("dim must be >= 2")
    g = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / math.sqrt(2)
    rho = g @ g.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def mix_with_random(rho, zeta, rng):
    if not 0.0 <= zeta <= 0.5:
        raise InvalidParameterError(f"zeta must lie in [0, 0.5], got {zeta}")
    rho = np.asarray(rho, dtype=complex)
    if zeta == 0:
        return rho + 0.0
    return (1 - zeta) * rho + zeta * random_density(rho.shape[0], rng)


def _dissipator(rho, a, ad, n):
    return a @ rho @ ad - 0.5 * (n @ rho + rho @ n)


def photon_loss(rho, gamma_tau):
    """Evolve under ``d rho/dt = gamma L[a] rho`` for a total ``gamma * tau``.

    Integrates in the frame co-rotating with the free Hamiltonian, so only the
    dissipator remains.  Fixed-step RK4 with ``gamma dt <= 0.01``.
    """
    if gamma_tau < 0:
        raise InvalidParameterError(f"gamma_tau must be >= 0, got {gamma_tau}")
    rho = np.asarray(rho, dtype=complex)
    if gamma_tau == 0:
        return rho.copy()
    dim = rho.shape[0]
    a = hilbert.annihilation_op(dim)
    ad = a.conj().T
    n = ad @ a
    steps = max(1, math.ceil(gamma_tau / MAX_STEP - 1e-12))
    h = gamma_tau / steps
    tr0 = np.trace(rho).real
    for _ in range(steps):
        k1 = _dissipator(rho, a, ad, n)
        k2 = _dissipator(rho + 0.5 * h * k1, a, ad, n)
        k3 = _dissipator(rho + 0.5 * h * k2, a, ad, n)
        k4 = _dissipator(rho + h * k3, a, ad, n)
        rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    drift = abs(np.trace(rho).real - tr0)
    if drift > TRACE_DRIFT_TOL:
        raise FloatingPointError(f"trace drifted by {drift:.3g} during photon-loss integration")
    rho = 0.5 * (rho + rho.conj().T)
    # RK4 lets zero eigenvalues of low-rank inputs dip to about -1e-9; clip them
    w, v = np.linalg.eigh(rho)
    if w[0] < 0:
        rho = (v * np.clip(w, 0.0, None)) @ v.conj().T
        rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def pepper_count(fraction, size):
    return int(math.floor(fraction * size + 0.5))


def pepper(grid, fraction, rng):
    """Zero ``round(fraction * N)`` distinct, uniformly chosen grid points."""
    if not 0.0 <= fraction <= 1.0:
        raise InvalidParameterError(f"pepper fraction must lie in [0, 1], got {fraction}")
    values = grid.values if isinstance(grid, HusimiGrid) else np.asarray(grid, dtype=float)
    out = values.copy()
    k = pepper_count(fraction, out.size)
    if k:
        out[rng.choice(out.size, size=k, replace=False)] = 0.0
    return HusimiGrid(grid.geometry, out) if isinstance(grid, HusimiGrid) else out


def apply_state_noise(rho, spec, rng):
    """Apply a state-level channel; pepper specs pass the state through."""
    if spec is None or spec.kind == "pepper":
        return rho
    if spec.kind == "mixed":
        return mix_with_random(rho, spec.level, rng)
    return photon_loss(rho, spec.level)
