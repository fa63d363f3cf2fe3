"""Turn a predicted (label, 3 features) pair back into a density matrix."""
from __future__ import annotations

import math

import numpy as np

from ..states import (
    DEFAULT_DIM,
    Family,
    StateSpec,
    binomial_n_max,
    build_state,
    default_num_table,
)


def _round(x):
    return int(math.floor(float(np.real(x)) + 0.5))


def _clip(v, lo, hi):
    return max(lo, min(hi, v))


def _clip_modulus(alpha, lo, hi):
    r = abs(alpha)
    if r == 0:
        return complex(lo)
    return alpha * _clip(r, lo, hi) / r


def snap_features(label, features, dim=DEFAULT_DIM, table=None):
    """Round integer slots half-up and clamp every slot into its allowed range."""
    fam = Family.parse(int(label))
    f1, f2, f3 = (complex(f) for f in features)
    if fam is Family.FOCK:
        return StateSpec(fam, (_clip(_round(f1), 1, min(16, dim - 1)), 0, 0), dim)
    if fam is Family.COHERENT:
        return StateSpec(fam, (_clip_modulus(f1, 1e-3, math.sqrt(3)), 0, 0), dim)
    if fam is Family.THERMAL:
        return StateSpec(fam, (_clip(f1.real, 1.0, 16.0), 0, 0), dim)
    if fam is Family.CAT:
        S = _clip(_round(f2), 0, 2)
        r = _clip(_round(f3), 0, 2 * S + 1)
        return StateSpec(fam, (_clip_modulus(f1, 1.0, 3.0), S, r), dim)
    if fam is Family.NUM:
        table = default_num_table() if table is None else table
        return StateSpec(fam, (table.nearest(f1.real), 0, 0), dim)
    if fam is Family.BINOMIAL:
        S = _clip(_round(f1), 0, 2)
        # keep the top level (S+1)(N+1) inside the cutoff
        n_hi = min(binomial_n_max(S, dim), (dim - 1) // (S + 1) - 1)
        return StateSpec(fam, (S, _clip(_round(f2), 2, n_hi), _clip(_round(f3), 0, 1)), dim)
    mu = _clip(_round(f1), 0, 1)
    return StateSpec(fam, (mu, _clip(f2.real, 0.2, 0.5), 0), dim)


def reconstructor(label, features, dim=DEFAULT_DIM, table=None):
    return build_state(snap_features(label, features, dim, table), table)
