"""Husimi-Q phase-space measurements and the matching sensing matrix."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import hilbert
from .exceptions import DegenerateStateError, InvalidParameterError, ShapeError

DEFAULT_SIDE = 32
DEFAULT_EXTENT = 5.0
Q_FLOOR = -1e-12


@dataclass(frozen=True)
class GridGeometry:
    """Square grid over ``[-extent, extent]`` on both quadratures.

    Points are stored row-major with the real part varying fastest, i.e.
    ``points[row * side + col] = x[col] + 1j * x[row]``.
    """

    side: int = DEFAULT_SIDE
    extent: float = DEFAULT_EXTENT

    def __post_init__(self):
        if int(self.side) != self.side or self.side < 2:
            raise InvalidParameterError(f"grid side must be an integer >= 2, got {self.side}")
        if not self.extent > 0:
            raise InvalidParameterError(f"grid extent must be positive, got {self.extent}")
        object.__setattr__(self, "side", int(self.side))
        object.__setattr__(self, "extent", float(self.extent))

    @property
    def axis(self):
        return np.linspace(-self.extent, self.extent, self.side)

    @property
    def spacing(self):
        return 2 * self.extent / (self.side - 1)

    @property
    def cell_area(self):
        return self.spacing**2

    @property
    def size(self):
        return self.side * self.side

    @property
    def points(self):
        x = self.axis
        return (x[None, :] + 1j * x[:, None]).ravel()


def make_geometry(side=DEFAULT_SIDE, extent=DEFAULT_EXTENT):
    return GridGeometry(side, extent)


@dataclass
class HusimiGrid:
    geometry: GridGeometry
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size != self.geometry.size:
            raise ShapeError(
                f"grid of side {self.geometry.side} needs {self.geometry.size} values, "
                f"got {self.values.size}"
            )

    def image(self):
        return self.values.reshape(self.geometry.side, self.geometry.side)


@lru_cache(maxsize=16)
def _coherent_rows(geom, dim):
    rows = hilbert.coherent_amplitudes(geom.points, dim)
    rows.setflags(write=False)
    return rows


def coherent_rows(geom, dim):
    """``(side**2, dim)`` array whose row ``i`` is the truncated ket ``|alpha_i>``."""
    return _coherent_rows(geom, int(dim))


def husimi_values(rho, geom):
    rho = np.asarray(rho, dtype=complex)
    c = coherent_rows(geom, rho.shape[0])
    q = np.einsum("ij,jk,ik->i", c.conj(), rho, c).real / np.pi
    return np.maximum(q, Q_FLOOR)


def husimi_at(rho, alphas):
    """Q function at arbitrary phase-space points."""
    rho = np.asarray(rho, dtype=complex)
    c = hilbert.coherent_amplitudes(np.atleast_1d(alphas), rho.shape[0])
    q = np.einsum("ij,jk,ik->i", c.conj(), rho, c).real / np.pi
    return np.maximum(q, Q_FLOOR)


def husimi_q(rho, geom):
    """``Q(alpha_i) = <alpha_i|rho|alpha_i> / pi`` on every grid point."""
    return HusimiGrid(geom, husimi_values(rho, geom))


@lru_cache(maxsize=8)
def _sensing(geom, dim):
    c = coherent_rows(geom, dim)
    a = (c.conj()[:, :, None] * c[:, None, :]).reshape(geom.size, dim * dim) / np.pi
    a.setflags(write=False)
    return a


def sensing_matrix(geom, dim):
    """Complex ``(side**2, dim**2)`` matrix with ``A @ rho.ravel() == Q``."""
    return _sensing(geom, int(dim))


@lru_cache(maxsize=8)
def _sensing_real(geom, dim):
    a = _sensing(geom, dim)
    # Q = Re(A) vec(Re rho) - Im(A) vec(Im rho); stored transposed for x @ A.T
    re = np.ascontiguousarray(a.real.T)
    im = np.ascontiguousarray(-a.imag.T)
    re.setflags(write=False)
    im.setflags(write=False)
    return re, im


def sensing_real_parts(geom, dim):
    """Real matrices ``(R, I)`` with ``Q = vec(Re rho) @ R + vec(Im rho) @ I``."""
    return _sensing_real(geom, int(dim))


def expectation(ops, rho):
    out = []
    for op in ops:
        op = np.asarray(op)
        if hilbert.hermitian_deviation(op) > 1e-9:
            raise InvalidParameterError("expectation() needs Hermitian observables")
        val = np.trace(op @ rho)
        if abs(val.imag) > 1e-9:
            raise FloatingPointError(f"expectation has imaginary residue {val.imag:.3g}")
        out.append(float(val.real))
    return out


def normalize_for_net(grid):
    """Peak-normalise a grid so its maximum is 1."""
    values = grid.values if isinstance(grid, HusimiGrid) else np.asarray(grid, dtype=float)
    peak = values.max(initial=0.0)
    if not peak > 0:
        raise DegenerateStateError("cannot peak-normalise a grid with no positive value")
    scaled = values / peak
    return HusimiGrid(grid.geometry, scaled) if isinstance(grid, HusimiGrid) else scaled


def normalize_batch(values):
    """Row-wise peak normalisation; all-zero rows are left at zero."""
    values = np.asarray(values, dtype=float)
    peak = values.max(axis=-1, keepdims=True)
    return np.divide(values, peak, out=np.zeros_like(values), where=peak > 0)
