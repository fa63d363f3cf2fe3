"""Operator algebra on a truncated single-mode Fock space.

Matrices are plain ``numpy`` complex arrays of shape ``(dim, dim)``; kets are
1-d complex arrays of length ``dim``.  A *density matrix* is any such array
that is Hermitian, has unit trace and is positive semi-definite; use
:func:`check_density` to assert those invariants.
"""
from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .exceptions import InvalidDimensionError, NotPSDError, ShapeError

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-10
PSD_TOL = 1e-9
# eigenvalues above -NEG_EIG_ERROR are clipped to zero, below it we refuse
NEG_EIG_ERROR = 1e-6


def _check_dim(dim):
    if int(dim) != dim or dim < 2:
        raise InvalidDimensionError(f"dimension must be an integer >= 2, got {dim!r}")
    return int(dim)


def annihilation_op(dim):
    """Lowering operator ``a`` with ``a[n-1, n] = sqrt(n)``."""
    dim = _check_dim(dim)
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)


def creation_op(dim):
    return annihilation_op(dim).conj().T


def number_op(dim):
    dim = _check_dim(dim)
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def expm_antihermitian(generator):
    """``exp(G)`` for anti-Hermitian ``G`` via the spectrum of ``-iG``."""
    h = -1j * generator
    h = 0.5 * (h + h.conj().T)
    w, v = np.linalg.eigh(h)
    return (v * np.exp(1j * w)) @ v.conj().T


def displacement_op(alpha, dim):
    """Truncated displacement ``D(alpha) = exp(alpha a^dag - alpha^* a)``."""
    a = annihilation_op(dim)
    alpha = complex(alpha)
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    return expm_antihermitian(alpha * a.conj().T - np.conj(alpha) * a)


def coherent_amplitudes(alpha, dim):
    """Exact Fock amplitudes ``exp(-|a|^2/2) a^n / sqrt(n!)`` for ``n < dim``.

    ``alpha`` may be a scalar or an array; the last axis of the result runs over
    Fock levels.  The vector is *not* renormalised after truncation, so
    ``<alpha|rho|alpha>`` is exact for any ``rho`` living in the truncated space.
    """
    dim = _check_dim(dim)
    alpha = np.asarray(alpha, dtype=complex)
    n = np.arange(dim)
    r = np.abs(alpha)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        logmag = -0.5 * r**2 + n * np.log(r) - 0.5 * gammaln(n + 1)
    # 0 * log(0) -> vacuum component
    logmag[..., 0] = -0.5 * r[..., 0] ** 2
    return np.exp(logmag) * np.exp(1j * np.angle(alpha)[..., None] * n)


def displaced_vacuum(alpha, dim):
    """``D(alpha)|0>`` computed with the truncated displacement operator."""
    return displacement_op(alpha, dim)[:, 0]


def basis_ket(n, dim):
    ket = np.zeros(dim, dtype=complex)
    ket[n] = 1.0
    return ket


def ket_to_dm(ket):
    ket = np.asarray(ket, dtype=complex)
    return np.outer(ket, ket.conj())


def normalize_ket(ket):
    ket = np.asarray(ket, dtype=complex)
    return ket / np.linalg.norm(ket)


def trace(m):
    return complex(np.trace(m))


def hermitian_deviation(m):
    m = np.asarray(m)
    return float(np.max(np.abs(m - m.conj().T)))


def min_eigenvalue(m):
    return float(np.linalg.eigvalsh(np.asarray(m))[0])


def expect(op, rho):
    return complex(np.trace(op @ rho))


def check_density(rho, *, hermitian_tol=HERMITIAN_TOL, trace_tol=TRACE_TOL, psd_tol=PSD_TOL):
    """Raise ``ValueError`` unless ``rho`` is a physical density matrix."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or rho.shape[0] < 2:
        raise ShapeError(f"expected a square matrix of size >= 2, got {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise ValueError("density matrix has non-finite entries")
    dev = hermitian_deviation(rho)
    if dev > hermitian_tol:
        raise ValueError(f"not Hermitian (deviation {dev:.3g})")
    tr = trace(rho)
    if abs(tr - 1) > trace_tol:
        raise ValueError(f"trace {tr} is not 1")
    lam = min_eigenvalue(rho)
    if lam < -psd_tol:
        raise NotPSDError(f"minimum eigenvalue {lam:.3g} below -{psd_tol}")
    return rho


def _clipped_spectrum(m):
    m = np.asarray(m, dtype=complex)
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    if w[0] < -NEG_EIG_ERROR * max(1.0, float(w[-1])):
        raise NotPSDError(f"eigenvalue {w[0]:.3g} is too negative for a PSD square root")
    return np.clip(w, 0.0, None), v


def psd_sqrt(rho):
    """Hermitian PSD square root; small negative eigenvalues are zeroed."""
    w, v = _clipped_spectrum(rho)
    return (v * np.sqrt(w)) @ v.conj().T


def fidelity(rho, sigma):
    """Uhlmann fidelity ``(tr sqrt(sqrt(rho) sigma sqrt(rho)))**2`` clamped to [0, 1]."""
    rho = np.asarray(rho, dtype=complex)
    sigma = np.asarray(sigma, dtype=complex)
    if rho.shape != sigma.shape:
        raise ShapeError(f"dimension mismatch: {rho.shape} vs {sigma.shape}")
    s = psd_sqrt(rho)
    inner = s @ sigma @ s
    try:
        w = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise FloatingPointError("eigendecomposition failed in fidelity") from exc
    f = float(np.sum(np.sqrt(np.clip(w, 0.0, None))) ** 2)
    return min(max(f, 0.0), 1.0)
