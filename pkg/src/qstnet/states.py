"""Generators for the seven bosonic state families used in the dataset.

Every family is described by a :class:`StateSpec` carrying three complex
"feature" slots.  The slot layout per family is

========  ===============  ====  ====
family    f1               f2    f3
========  ===============  ====  ====
Fock      n                0     0
Coherent  alpha            0     0
Thermal   n_th             0     0
Cat       alpha            S     r
Num       n_bar            0     0
Binomial  S                N     mu
GKP       mu               delta 0
========  ===============  ====  ====

Integer-valued slots hold exact integers in their real part.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import comb

from . import hilbert
from .exceptions import (
    CutoffError,
    DegenerateStateError,
    InvalidParameterError,
    MissingCoefficientError,
    SamplingError,
)

DEFAULT_DIM = 32
MAX_MEAN_PHOTON = 16.0
MAX_REJECTIONS = 100
NUM_NBARS = (1.56, 2.67, 2.77, 4.15, 4.34)
GKP_LATTICE_RANGE = 20
GKP_WEIGHT_CUTOFF = 1e-12


class Family(enum.IntEnum):
    FOCK = 0
    COHERENT = 1
    THERMAL = 2
    CAT = 3
    NUM = 4
    BINOMIAL = 5
    GKP = 6

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            if isinstance(value, (int, np.integer)):
                return cls(int(value))
            return cls[str(value).upper()]
        except (KeyError, ValueError):
            raise InvalidParameterError(f"unknown state family {value!r}") from None

    @property
    def pretty(self):
        return "GKP" if self is Family.GKP else self.name.capitalize()


CLASS_NAMES = tuple(f.pretty for f in Family)


@dataclass(frozen=True)
class StateSpec:
    family: Family
    features: tuple
    dim: int = DEFAULT_DIM

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        feats = tuple(complex(f) for f in self.features)
        if len(feats) != 3:
            raise InvalidParameterError("a StateSpec needs exactly three feature slots")
        object.__setattr__(self, "features", feats)

    @property
    def label(self):
        return int(self.family)

    def feature_array(self):
        return np.array(self.features, dtype=complex)


# --------------------------------------------------------------------------
# Num-state coefficient tables


class CoefficientTable:
    """Mapping ``n_bar -> ket`` loaded from a coefficient document.

    The document is a JSON list of ``{"n_bar": x, "amplitudes": [[n, re, im], ...]}``
    records.  Keys are matched after rounding to 1e-6.
    """

    def __init__(self, entries=None, *, authoritative=True, source=None):
        self._entries = {}
        self.authoritative = authoritative
        self.source = source
        for n_bar, amps in (entries or {}).items():
            self.add(n_bar, amps)

    @staticmethod
    def _key(n_bar):
        return round(float(n_bar), 6)

    def add(self, n_bar, amplitudes):
        self._entries[self._key(n_bar)] = [(int(n), complex(c)) for n, c in amplitudes]

    def __contains__(self, n_bar):
        return self._key(n_bar) in self._entries

    def __len__(self):
        return len(self._entries)

    def keys(self):
        return sorted(self._entries)

    def amplitudes(self, n_bar):
        try:
            return self._entries[self._key(n_bar)]
        except KeyError:
            raise MissingCoefficientError(f"no Num-state coefficients for n_bar={n_bar}") from None

    def nearest(self, n_bar):
        if not self._entries:
            raise MissingCoefficientError("coefficient table is empty")
        return min(self.keys(), key=lambda k: (abs(k - float(n_bar)), k))

    @classmethod
    def from_records(cls, records, **kwargs):
        table = cls(**kwargs)
        for rec in records:
            table.add(rec["n_bar"], [(n, complex(re, im)) for n, re, im in rec["amplitudes"]])
        return table

    @classmethod
    def load(cls, path):
        text = Path(path).read_text(encoding="utf-8")
        doc = json.loads(text)
        if isinstance(doc, dict):
            return cls.from_records(
                doc["records"], authoritative=bool(doc.get("authoritative", True)), source=str(path)
            )
        return cls.from_records(doc, source=str(path))

    def to_records(self):
        return [
            {"n_bar": k, "amplitudes": [[n, c.real, c.imag] for n, c in self._entries[k]]}
            for k in self.keys()
        ]


_default_table = None


def default_num_table():
    """Bundled *placeholder* table (not the published code words).

    Each entry is a two-level superposition ``|0>, |m>`` whose mean photon
    number equals the key.  Load real coefficients with
    :meth:`CoefficientTable.load` when they are available.
    """
    global _default_table
    if _default_table is None:
        path = resources.files("qstnet.data").joinpath("num_placeholder.json")
        doc = json.loads(path.read_text(encoding="utf-8"))
        _default_table = CoefficientTable.from_records(
            doc["records"], authoritative=bool(doc.get("authoritative", False)), source="placeholder"
        )
    return _default_table


# --------------------------------------------------------------------------
# family generators


def _check_level(n, dim):
    if n < 0:
        raise InvalidParameterError(f"Fock level must be >= 0, got {n}")
    if n >= dim:
        raise CutoffError(f"Fock level {n} does not fit below cutoff {dim}")


def fock_state(n, dim=DEFAULT_DIM):
    n = int(n)
    _check_level(n, dim)
    rho = np.zeros((dim, dim), dtype=complex)
    rho[n, n] = 1.0
    return rho


def coherent_ket(alpha, dim=DEFAULT_DIM):
    return hilbert.displaced_vacuum(alpha, dim)


def coherent_state(alpha, dim=DEFAULT_DIM):
    return hilbert.ket_to_dm(coherent_ket(alpha, dim))


def thermal_state(n_th, dim=DEFAULT_DIM):
    n_th = float(n_th)
    if n_th < 0:
        raise InvalidParameterError(f"thermal occupation must be >= 0, got {n_th}")
    p = np.zeros(dim)
    if n_th == 0:
        p[0] = 1.0
    else:
        n = np.arange(dim)
        p = np.exp(n * math.log(n_th / (n_th + 1.0))) / (n_th + 1.0)
    p /= p.sum()
    return np.diag(p).astype(complex)


def cat_ket(alpha, S, r, dim=DEFAULT_DIM):
    """``Pi_r |alpha>`` written as a phase-weighted sum of rotated coherent kets.

    With ``w = exp(i pi / (S+1))`` the projector onto ``n = r mod 2(S+1)`` acts
    on ``|alpha>`` as ``sum_k w^(-k r) |alpha w^k>`` up to a constant.
    """
    S, r = int(S), int(r)
    if S < 0:
        raise InvalidParameterError(f"S must be >= 0, got {S}")
    period = 2 * (S + 1)
    if not 0 <= r < period:
        raise InvalidParameterError(f"r must lie in [0, {period - 1}], got {r}")
    ket = np.zeros(dim, dtype=complex)
    for k in range(period):
        phase = np.exp(1j * np.pi * k / (S + 1))
        ket += phase ** (-r) * coherent_ket(alpha * phase, dim)
    ket[np.arange(dim) % period != r] = 0.0
    norm = np.linalg.norm(ket)
    if norm < 1e-12:
        raise DegenerateStateError(f"cat projection r={r} of alpha={alpha} vanishes")
    return ket / norm


def cat_state(alpha, S, r, dim=DEFAULT_DIM):
    return hilbert.ket_to_dm(cat_ket(alpha, S, r, dim))


def num_state(n_bar, dim=DEFAULT_DIM, table=None):
    table = default_num_table() if table is None else table
    ket = np.zeros(dim, dtype=complex)
    for n, c in table.amplitudes(n_bar):
        _check_level(n, dim)
        ket[n] += c
    norm = np.linalg.norm(ket)
    if norm < 1e-12:
        raise DegenerateStateError(f"Num-state coefficients for n_bar={n_bar} are all zero")
    return hilbert.ket_to_dm(ket / norm)


def binomial_ket(S, N, mu, dim=DEFAULT_DIM):
    S, N, mu = int(S), int(N), int(mu)
    if S < 0 or N < 0 or mu not in (0, 1):
        raise InvalidParameterError(f"invalid binomial parameters S={S}, N={N}, mu={mu}")
    _check_level((S + 1) * (N + 1), dim)
    ket = np.zeros(dim, dtype=complex)
    for m in range(N + 2):
        ket[(S + 1) * m] = (-1) ** (mu * m) * math.sqrt(comb(N + 1, m, exact=True) / 2 ** (N + 1))
    return ket


def binomial_state(S, N, mu, dim=DEFAULT_DIM):
    return hilbert.ket_to_dm(binomial_ket(S, N, mu, dim))


def gkp_ket(mu, delta, dim=DEFAULT_DIM):
    mu = int(mu)
    if mu not in (0, 1):
        raise InvalidParameterError(f"mu must be 0 or 1, got {mu}")
    delta = float(delta)
    if delta <= 0:
        raise InvalidParameterError(f"delta must be positive, got {delta}")
    span = np.arange(-GKP_LATTICE_RANGE, GKP_LATTICE_RANGE + 1)
    n1, n2 = np.meshgrid(span, span, indexing="ij")
    unit = math.sqrt(math.pi / 2)
    alphas = (unit * (2 * n1 + mu) + 1j * unit * n2).ravel()
    weights = np.exp(-(delta**2) * np.abs(alphas) ** 2)
    keep = weights >= GKP_WEIGHT_CUTOFF
    alphas, weights = alphas[keep], weights[keep]
    coeffs = weights * np.exp(-1j * alphas.real * alphas.imag)
    ket = coeffs @ hilbert.coherent_amplitudes(alphas, dim)
    norm = np.linalg.norm(ket)
    if norm < 1e-12:
        raise DegenerateStateError(f"GKP state mu={mu}, delta={delta} has vanishing norm")
    return ket / norm


def gkp_state(mu, delta, dim=DEFAULT_DIM):
    return hilbert.ket_to_dm(gkp_ket(mu, delta, dim))


def mean_photon(rho):
    return float(np.real(np.sum(np.arange(rho.shape[0]) * np.diag(rho))))


def displace(rho, beta):
    d = hilbert.displacement_op(beta, rho.shape[0])
    out = d @ rho @ d.conj().T
    return out / np.trace(out).real


# --------------------------------------------------------------------------
# dispatch and sampling


def _int_slot(value):
    v = complex(value)
    if v.imag != 0 or v.real != int(v.real):
        raise InvalidParameterError(f"slot value {value!r} must be an exact integer")
    return int(v.real)


def build_state(spec, table=None):
    """Density matrix for ``spec``; dispatches on the family tag."""
    f1, f2, f3 = spec.features
    dim = spec.dim
    fam = spec.family
    if fam is Family.FOCK:
        return fock_state(_int_slot(f1), dim)
    if fam is Family.COHERENT:
        return coherent_state(f1, dim)
    if fam is Family.THERMAL:
        return thermal_state(f1.real, dim)
    if fam is Family.CAT:
        return cat_state(f1, _int_slot(f2), _int_slot(f3), dim)
    if fam is Family.NUM:
        return num_state(f1.real, dim, table)
    if fam is Family.BINOMIAL:
        return binomial_state(_int_slot(f1), _int_slot(f2), _int_slot(f3), dim)
    if fam is Family.GKP:
        return gkp_state(_int_slot(f1), f2.real, dim)
    raise InvalidParameterError(f"unknown family {fam!r}")  # pragma: no cover


def binomial_n_max(S, dim=DEFAULT_DIM):
    """Upper bound on N from the constraint table, ``N_c/(S+1) - 1``."""
    return dim // (S + 1) - 1


def _draw_features(family, rng, dim):
    if family is Family.FOCK:
        return (int(rng.integers(1, 17)), 0, 0)
    if family is Family.COHERENT:
        mod2 = rng.uniform(1e-6, 3.0)
        return (math.sqrt(mod2) * np.exp(1j * rng.uniform(0, 2 * np.pi)), 0, 0)
    if family is Family.THERMAL:
        return (int(rng.integers(1, 17)), 0, 0)
    if family is Family.CAT:
        mod2 = rng.uniform(1.0, 9.0)
        alpha = math.sqrt(mod2) * np.exp(1j * rng.uniform(0, 2 * np.pi))
        S = int(rng.integers(0, 3))
        r = int(rng.integers(0, 2 * S + 2))
        return (alpha, S, r)
    if family is Family.NUM:
        return (NUM_NBARS[int(rng.integers(0, len(NUM_NBARS)))], 0, 0)
    if family is Family.BINOMIAL:
        S = int(rng.integers(0, 3))
        N = int(rng.integers(2, binomial_n_max(S, dim) + 1))
        return (S, N, int(rng.integers(0, 2)))
    if family is Family.GKP:
        return (int(rng.integers(0, 2)), rng.uniform(0.2, 0.5), 0)
    raise InvalidParameterError(f"unknown family {family!r}")  # pragma: no cover


def sample_spec(family, rng, dim=DEFAULT_DIM, table=None, return_state=False):
    """Draw a spec uniformly from the family's constraint region.

    Draws whose state has mean photon number above 16 (or that violate the
    cutoff) are rejected and redrawn.
    """
    family = Family.parse(family)
    for _ in range(MAX_REJECTIONS):
        spec = StateSpec(family, _draw_features(family, rng, dim), dim)
        try:
            rho = build_state(spec, table)
        except (CutoffError, DegenerateStateError):
            continue
        if mean_photon(rho) <= MAX_MEAN_PHOTON:
            return (spec, rho) if return_state else spec
    raise SamplingError(f"{MAX_REJECTIONS} consecutive rejections sampling {family.pretty}")


def random_displacement(rho, rng, max_amplitude=0.5):
    """Optional augmentation: displace by a small random ``beta``.

    Returns ``None`` when the displaced state exceeds the photon budget.
    """
    beta = max_amplitude * math.sqrt(rng.uniform()) * np.exp(1j * rng.uniform(0, 2 * np.pi))
    out = displace(rho, beta)
    return None if mean_photon(out) > MAX_MEAN_PHOTON else out
