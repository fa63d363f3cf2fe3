"""Labelled Husimi-Q corpus: generation, binary shards and a JSON manifest.

A dataset directory holds ``manifest.json`` and one or more shard files.
Each shard is ``b"QSTDS1"`` followed by fixed-stride little-endian records:

=========  =====================================================
u8         class label
6 x f64    features, interleaved ``re, im`` for the three slots
2048 x f64 density matrix, interleaved ``re, im``, row-major
1024 x f64 Husimi grid, row-major (real axis fastest)
u8         noise tag (0 none, 1 mixed, 2 loss, 3 pepper)
2 x f64    noise level and noise seed
=========  =====================================================

Records are seeded individually from ``(seed, index)`` so any one of them
can be regenerated without replaying its predecessors.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import measurement, noise, states
from .exceptions import (
    DatasetConsistencyError,
    DatasetCorruptionError,
    InvalidParameterError,
    SamplingError,
    StratificationError,
    UnsupportedFormatError,
)
from .measurement import GridGeometry
from .states import CLASS_NAMES, Family

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"QSTDS1"
SHARD_SIZE = 1000
MANIFEST_NAME = "manifest.json"
NOISE_TAGS = {None: 0, "mixed": 1, "loss": 2, "pepper": 3}
_TAG_KINDS = {v: k for k, v in NOISE_TAGS.items()}


def record_dtype(dim=states.DEFAULT_DIM, side=measurement.DEFAULT_SIDE):
    return np.dtype(
        [
            ("label", "u1"),
            ("features", "<f8", (6,)),
            ("rho", "<f8", (2 * dim * dim,)),
            ("husimi", "<f8", (side * side,)),
            ("noise_tag", "u1"),
            ("noise_params", "<f8", (2,)),
        ]
    )


@dataclass
class DatasetRecord:
    label: int
    features: np.ndarray
    rho: np.ndarray
    husimi: np.ndarray
    noise_applied: noise.NoiseSpec | None = None

    @property
    def family(self):
        return Family(self.label)


class Records:
    """Column-oriented record store; indexing yields :class:`DatasetRecord`."""

    def __init__(self, labels, features, rhos, husimi, noise_tags=None, noise_params=None):
        self.labels = np.asarray(labels, dtype=np.int64)
        self.features = np.asarray(features, dtype=complex).reshape(-1, 3)
        self.rhos = np.asarray(rhos, dtype=complex)
        self.husimi = np.asarray(husimi, dtype=float)
        n = len(self.labels)
        self.noise_tags = np.zeros(n, dtype=np.uint8) if noise_tags is None else np.asarray(noise_tags, np.uint8)
        self.noise_params = np.zeros((n, 2)) if noise_params is None else np.asarray(noise_params, float)
        sizes = {len(a) for a in (self.features, self.rhos, self.husimi, self.noise_tags, self.noise_params)}
        if sizes != {n}:
            raise DatasetConsistencyError("record columns have different lengths")

    @classmethod
    def from_list(cls, records):
        records = list(records)
        if not records:
            raise DatasetConsistencyError("no records")
        tags, params = [], []
        for r in records:
            spec = r.noise_applied
            tags.append(NOISE_TAGS[spec.kind if spec else None])
            params.append((spec.level, spec.seed) if spec else (0.0, 0.0))
        return cls(
            [r.label for r in records],
            np.stack([r.features for r in records]),
            np.stack([r.rho for r in records]),
            np.stack([r.husimi for r in records]),
            tags,
            params,
        )

    @classmethod
    def from_array(cls, arr, dim):
        feats = arr["features"].reshape(-1, 3, 2)
        rho = arr["rho"].reshape(-1, dim, dim, 2)
        return cls(
            arr["label"],
            feats[..., 0] + 1j * feats[..., 1],
            rho[..., 0] + 1j * rho[..., 1],
            arr["husimi"].copy(),
            arr["noise_tag"],
            arr["noise_params"].copy(),
        )

    def to_array(self):
        n = len(self)
        dim = self.rhos.shape[-1]
        side = int(round(math.sqrt(self.husimi.shape[1])))
        arr = np.zeros(n, dtype=record_dtype(dim, side))
        arr["label"] = self.labels
        arr["features"] = self.features.view(np.float64).reshape(n, 6)
        arr["rho"] = np.ascontiguousarray(self.rhos).view(np.float64).reshape(n, -1)
        arr["husimi"] = self.husimi
        arr["noise_tag"] = self.noise_tags
        arr["noise_params"] = self.noise_params
        return arr

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        tag = int(self.noise_tags[i])
        spec = None
        if tag:
            level, seed = self.noise_params[i]
            spec = noise.NoiseSpec(_TAG_KINDS[tag], float(level), int(seed))
        return DatasetRecord(int(self.labels[i]), self.features[i], self.rhos[i], self.husimi[i], spec)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return Records(
            self.labels[idx], self.features[idx], self.rhos[idx], self.husimi[idx],
            self.noise_tags[idx], self.noise_params[idx],
        )


@dataclass
class Manifest:
    count: int
    seed: int
    classes: list
    per_class_counts: dict
    dim: int = states.DEFAULT_DIM
    side: int = measurement.DEFAULT_SIDE
    extent: float = measurement.DEFAULT_EXTENT
    noise: str | None = None
    num_table: str | None = None
    shards: list = field(default_factory=list)
    format_version: int = FORMAT_VERSION

    @property
    def geometry(self):
        return GridGeometry(self.side, self.extent)

    @property
    def labels(self):
        """Labels implied by round-robin assignment over ``classes``."""
        codes = [int(Family.parse(c)) for c in self.classes]
        return np.array([codes[i % len(codes)] for i in range(self.count)], dtype=np.int64)

    def noise_spec(self):
        return None if self.noise is None else noise.NoiseSpec.parse(self.noise, seed=self.seed)

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data):
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise UnsupportedFormatError(f"dataset format_version {version!r}; this reader supports {FORMAT_VERSION}")
        known = set(cls.__dataclass_fields__)
        try:
            return cls(**{k: v for k, v in data.items() if k in known})
        except TypeError as exc:
            raise DatasetCorruptionError(f"manifest is missing fields: {exc}") from exc


# --------------------------------------------------------------------------
# generation


def canonical_classes(classes=None):
    """Class names sorted in canonical family order, without duplicates."""
    if classes is None:
        return list(CLASS_NAMES)
    fams = sorted({Family.parse(c) for c in classes})
    if not fams:
        raise InvalidParameterError("at least one class is required")
    return [f.pretty for f in fams]


def record_rngs(seed, index):
    """Independent generators for sampling and for noise of record ``index``."""
    ss = np.random.SeedSequence([int(seed), int(index)])
    sample_ss, noise_ss = ss.spawn(2)
    return np.random.default_rng(sample_ss), np.random.default_rng(noise_ss)


def make_record(index, seed, classes, noise_spec=None, dim=states.DEFAULT_DIM, geometry=None, table=None):
    geometry = geometry or measurement.make_geometry()
    family = Family.parse(classes[index % len(classes)])
    rng, noise_rng = record_rngs(seed, index)
    try:
        spec, rho = states.sample_spec(family, rng, dim, table, return_state=True)
    except SamplingError as exc:
        raise SamplingError(f"record {index}: {exc}") from exc
    applied = None
    if noise_spec is not None:
        applied = noise.NoiseSpec(noise_spec.kind, noise_spec.level, int(seed))
        rho = noise.apply_state_noise(rho, applied, noise_rng)
    q = measurement.husimi_values(rho, geometry)
    if applied is not None and applied.kind == "pepper":
        q = noise.pepper(q, applied.level, noise_rng)
    return DatasetRecord(spec.label, spec.feature_array(), rho, q, applied)


def generate_records(count, seed, classes=None, noise_spec=None, dim=states.DEFAULT_DIM, geometry=None, table=None):
    classes = canonical_classes(classes)
    if count < len(classes):
        raise InvalidParameterError(f"count {count} is smaller than the number of classes ({len(classes)})")
    return Records.from_list(
        make_record(i, seed, classes, noise_spec, dim, geometry, table) for i in range(count)
    )


def _per_class(labels, classes):
    return {name: int(np.sum(labels == int(Family.parse(name)))) for name in classes}


def generate(count, seed, classes=None, noise_spec=None, out_path=None, dim=states.DEFAULT_DIM,
             geometry=None, table=None, table_path=None, shard_size=SHARD_SIZE):
    """Generate ``count`` records; write them when ``out_path`` is given.

    Returns ``(records, manifest)``.  Labels cycle through ``classes`` in
    canonical order, so the first ``count % len(classes)`` classes get one
    extra record.
    """
    geometry = geometry or measurement.make_geometry()
    classes = canonical_classes(classes)
    if isinstance(noise_spec, str):
        noise_spec = noise.NoiseSpec.parse(noise_spec, seed=seed)
    records = generate_records(count, seed, classes, noise_spec, dim, geometry, table)
    manifest = Manifest(
        count=count,
        seed=int(seed),
        classes=classes,
        per_class_counts=_per_class(records.labels, classes),
        dim=dim,
        side=geometry.side,
        extent=geometry.extent,
        noise=None if noise_spec is None else str(noise_spec),
        num_table=None if table_path is None else str(table_path),
    )
    if out_path is not None:
        manifest = save(records, manifest, out_path, shard_size=shard_size)
    return records, manifest


def regenerate(manifest, index, table=None):
    """Rebuild record ``index`` of a dataset from its manifest alone."""
    if not 0 <= index < manifest.count:
        raise IndexError(f"record {index} outside dataset of {manifest.count}")
    if table is None and manifest.num_table:
        table = states.CoefficientTable.load(manifest.num_table)
    return make_record(index, manifest.seed, manifest.classes, manifest.noise_spec(),
                       manifest.dim, manifest.geometry, table)


# --------------------------------------------------------------------------
# storage


def _sha256(data):
    return hashlib.sha256(data).hexdigest()


def save(records, manifest, path, shard_size=SHARD_SIZE):
    """Write shards plus manifest under directory ``path``; returns the final manifest."""
    if not isinstance(records, Records):
        records = Records.from_list(records)
    if len(records) != manifest.count:
        raise DatasetConsistencyError(f"manifest says {manifest.count} records, got {len(records)}")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arr = records.to_array()
    shards = []
    for k, start in enumerate(range(0, len(arr), shard_size)):
        chunk = arr[start : start + shard_size]
        data = MAGIC + chunk.tobytes()
        name = f"shard-{k:05d}.bin"
        (path / name).write_bytes(data)
        shards.append({"file": name, "count": len(chunk), "sha256": _sha256(data)})
    manifest.shards = shards
    (path / MANIFEST_NAME).write_text(manifest.dumps(), encoding="utf-8")
    log.info("wrote %d records in %d shards to %s", len(arr), len(shards), path)
    return manifest


def load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetCorruptionError(f"unreadable manifest {path}: {exc}") from exc
    return Manifest.from_dict(data)


def _read_shard(path, entry, dtype):
    data = (path / entry["file"]).read_bytes()
    if _sha256(data) != entry["sha256"]:
        raise DatasetCorruptionError(f"checksum mismatch in {entry['file']}")
    if not data.startswith(MAGIC) or (len(data) - len(MAGIC)) % dtype.itemsize:
        raise DatasetCorruptionError(f"{entry['file']} is not a whole number of records")
    arr = np.frombuffer(data, dtype=dtype, offset=len(MAGIC))
    if len(arr) != entry["count"]:
        raise DatasetConsistencyError(f"{entry['file']}: manifest says {entry['count']} records, found {len(arr)}")
    return arr


def load(path):
    """Read a dataset directory; returns ``(records, manifest)``."""
    path = Path(path)
    manifest = load_manifest(path)
    dtype = record_dtype(manifest.dim, manifest.side)
    chunks = [_read_shard(path, entry, dtype) for entry in manifest.shards]
    arr = np.concatenate(chunks) if chunks else np.zeros(0, dtype=dtype)
    if len(arr) != manifest.count:
        raise DatasetConsistencyError(f"manifest count {manifest.count} but {len(arr)} records present")
    records = Records.from_array(arr, manifest.dim)
    if _per_class(records.labels, manifest.classes) != manifest.per_class_counts:
        raise DatasetConsistencyError("per-class counts disagree with the stored labels")
    return records, manifest


# --------------------------------------------------------------------------
# splitting


def split(labels, fractions=(0.9, 0.1), seed=0):
    """Stratified, disjoint ``(train, val)`` index arrays.

    ``labels`` may be a label array or a :class:`Manifest`.  Each class
    contributes ``floor(f * n_c)`` records to each part (at least one).
    """
    if isinstance(labels, Manifest):
        labels = labels.labels
    labels = np.asarray(labels, dtype=int)
    f_train, f_val = (float(f) for f in fractions)
    if f_train <= 0 or f_val <= 0 or f_train + f_val > 1 + 1e-12:
        raise InvalidParameterError(f"fractions must be positive and sum to <= 1, got {fractions}")
    rng = np.random.default_rng(seed)
    train, val = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < 2:
            raise StratificationError(f"class {Family(c).pretty} has {len(idx)} record(s); need at least 2")
        idx = rng.permutation(idx)
        n_tr = max(1, math.floor(f_train * len(idx) + 1e-9))
        n_va = max(1, math.floor(f_val * len(idx) + 1e-9))
        if n_tr + n_va > len(idx):
            n_tr = len(idx) - n_va
        train.append(idx[:n_tr])
        val.append(idx[n_tr : n_tr + n_va])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def to_train_data(records, geometry):
    """Adapter to the training loop's column layout."""
    from .nn.train import TrainData

    return TrainData(records.husimi, records.labels, records.features, records.rhos, geometry)
