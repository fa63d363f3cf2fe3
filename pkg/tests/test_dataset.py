import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qstnet import dataset, hilbert
from qstnet.exceptions import (
    DatasetConsistencyError,
    DatasetCorruptionError,
    InvalidParameterError,
    StratificationError,
    UnsupportedFormatError,
)


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds") / "d"
    records, manifest = dataset.generate(14, 5, out_path=out, shard_size=5)
    return out, records, manifest


def test_record_layout():
    dt = dataset.record_dtype(32, 32)
    assert dt.itemsize == 1 + 8 * (6 + 2048 + 1024) + 1 + 16


def test_generate_round_robin(small):
    _, records, manifest = small
    assert manifest.per_class_counts == {name: 2 for name in manifest.classes}
    assert list(records.labels[:7]) == list(range(7))
    for r in records:
        hilbert.check_density(r.rho)


def test_shards_and_load_roundtrip(small):
    out, records, manifest = small
    assert [s["count"] for s in manifest.shards] == [5, 5, 4]
    loaded, m2 = dataset.load(out)
    assert m2.to_dict() == manifest.to_dict()
    for name in ("labels", "features", "rhos", "husimi", "noise_tags", "noise_params"):
        assert np.array_equal(getattr(loaded, name), getattr(records, name))


def test_regenerate_matches_shard(small):
    out, records, manifest = small
    for i in (0, 6, 13):
        rec = dataset.regenerate(dataset.load_manifest(out), i)
        assert np.array_equal(rec.husimi, records.husimi[i])
        assert np.array_equal(rec.rho, records.rhos[i])
    with pytest.raises(IndexError):
        dataset.regenerate(manifest, 14)


def test_corrupted_shard_detected(small, tmp_path):
    out, _, _ = small
    copy = tmp_path / "c"
    copy.mkdir()
    for f in out.iterdir():
        (copy / f.name).write_bytes(f.read_bytes())
    data = bytearray((copy / "shard-00001.bin").read_bytes())
    data[100] ^= 0xFF
    (copy / "shard-00001.bin").write_bytes(bytes(data))
    with pytest.raises(DatasetCorruptionError):
        dataset.load(copy)


def test_manifest_version_and_counts(small, tmp_path):
    out, _, _ = small
    doc = json.loads((out / dataset.MANIFEST_NAME).read_text())
    bad = tmp_path / "v"
    bad.mkdir()
    for f in out.iterdir():
        (bad / f.name).write_bytes(f.read_bytes())
    doc["format_version"] = 99
    (bad / dataset.MANIFEST_NAME).write_text(json.dumps(doc))
    with pytest.raises(UnsupportedFormatError):
        dataset.load(bad)
    doc["format_version"] = dataset.FORMAT_VERSION
    doc["count"] = 15
    (bad / dataset.MANIFEST_NAME).write_text(json.dumps(doc))
    with pytest.raises(DatasetConsistencyError):
        dataset.load(bad)


def test_noise_is_recorded():
    records, manifest = dataset.generate(2, 0, ["coherent"], "pepper:0.5")
    assert manifest.noise == "pepper:0.5"
    assert records[0].noise_applied.kind == "pepper"
    assert np.count_nonzero(records.husimi[0] == 0) >= 512


def test_class_validation():
    assert dataset.canonical_classes(["thermal", "Fock", 0]) == ["Fock", "Thermal"]
    with pytest.raises(InvalidParameterError):
        dataset.canonical_classes([])
    with pytest.raises(InvalidParameterError):
        dataset.generate(2, 0, ["fock", "coherent", "thermal"])


def test_split_70():
    labels = np.arange(70) % 7
    train, val = dataset.split(labels, (0.8, 0.2), seed=1)
    assert len(train) == 56 and len(val) == 14
    assert not set(train) & set(val)
    with pytest.raises(StratificationError):
        dataset.split(np.array([0, 1, 1]), (0.5, 0.5))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=2, max_size=80), st.floats(0.1, 0.9), st.integers(0, 99))
def test_split_disjoint_and_stratified(labels, f, seed):
    labels = np.array(labels)
    if np.any(np.bincount(labels)[np.unique(labels)] < 2):
        with pytest.raises(StratificationError):
            dataset.split(labels, (f, 1 - f), seed)
        return
    train, val = dataset.split(labels, (f, 1 - f), seed)
    assert not set(train) & set(val)
    assert set(np.unique(labels[train])) == set(np.unique(labels)) == set(np.unique(labels[val]))
