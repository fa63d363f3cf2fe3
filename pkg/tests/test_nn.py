import numpy as np
import pytest
from conftest import check_grads

from qstnet import hilbert, states
from qstnet.exceptions import CheckpointError, DivergenceError, ShapeError
from qstnet.measurement import GridGeometry, husimi_values
from qstnet.nn import autodiff as ad
from qstnet.nn import checkpoint
from qstnet.nn import train as T
from qstnet.nn.losses import msnn_loss, pack_features, rfb_loss, split_features
from qstnet.nn.models import MsConfig, MsModel, RfbConfig, RfbModel, build_model
from qstnet.nn.optim import OptimConfig, cosine_lr, tail_lr
from qstnet.nn.physics import husimi_layer
from qstnet.nn.reconstructor import reconstructor, snap_features
from qstnet.states import Family

TINY_RFB = dict(side=8, channels=(2, 2, 2, 2, 2, 2), hidden=4)
TINY_MS = dict(side=4, dim=4, channels=(2, 2), mix_hidden=3)


def _tiny_data(n=6, dim=4, side=4, seed=0):
    rng = np.random.default_rng(seed)
    geom = GridGeometry(side, 2.0)
    rhos, labels, feats = [], [], []
    for i in range(n):
        alpha = 0.5 * rng.standard_normal() + 0.5j * rng.standard_normal()
        rhos.append(states.coherent_state(alpha, dim))
        labels.append(i % 3)
        feats.append([alpha, 0, 0])
    rhos = np.array(rhos)
    grids = np.array([husimi_values(r, geom) for r in rhos])
    return T.TrainData(grids, np.array(labels), np.array(feats, complex), rhos, geom)


def test_rfb_forward_shapes():
    model = RfbModel(RfbConfig(**TINY_RFB))
    logits, feats = model.forward(np.random.default_rng(0).random((3, 64)))
    assert logits.shape == (3, 7) and feats.shape == (3, 6)
    with pytest.raises(ShapeError):
        model.forward(np.zeros((2, 10)))


def test_msnn_forward_shapes_and_label_check():
    model = MsModel(MsConfig(**TINY_MS))
    out = model.forward(np.zeros((2, 16)), T.one_hot([0, 4]))
    assert out.shape == (2, 2, 4, 4)
    with pytest.raises(ShapeError):
        model.forward(np.zeros((2, 16)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        MsConfig(side=4, dim=5)


def test_full_rfb_loss_gradient():
    cfg = RfbConfig(**TINY_RFB, noise_sigma=0.05, dropout=0.2)
    model = RfbModel(cfg)
    rng = np.random.default_rng(1)
    x = rng.random((3, 64))
    labels = np.array([0, 2, 5])
    true = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))

    def build():
        logits, feats = model.forward(x, training=True, rng=np.random.default_rng(7))
        return rfb_loss(logits, labels, feats, true)

    check_grads(build, model.parameters())


def test_full_msnn_loss_gradient():
    model = MsModel(MsConfig(**TINY_MS))
    data = _tiny_data(3)
    x = data.grids / data.grids.max(axis=1, keepdims=True)

    def build():
        d_re, d_im = T.msnn_forward_density(model, x, T.one_hot(data.labels), training=True)
        q = husimi_layer(d_re, d_im, data.geometry)
        return msnn_loss(data.grids, q, data.rhos, (d_re, d_im), 100.0)

    check_grads(build, model.parameters())


def test_feature_packing_roundtrip():
    f = np.array([[1 + 2j, 3, -1j]])
    assert np.array_equal(split_features(pack_features(f)), f)


@pytest.mark.parametrize(
    "family,features",
    [
        (Family.FOCK, (3, 0, 0)),
        (Family.COHERENT, (1 + 0.5j, 0, 0)),
        (Family.THERMAL, (2, 0, 0)),
        (Family.CAT, (2, 0, 1)),
        (Family.BINOMIAL, (1, 3, 1)),
        (Family.GKP, (1, 0.3, 0)),
    ],
)
def test_reconstructor_inverts_exact_features(family, features):
    truth = states.build_state(states.StateSpec(family, features))
    assert hilbert.fidelity(truth, reconstructor(int(family), features)) == pytest.approx(1.0, abs=1e-9)


def test_snap_features_clamps_and_rounds():
    spec = snap_features(Family.FOCK, (2.5 + 0.3j, 9, 9))
    assert spec.features == (3, 0, 0)
    assert snap_features(Family.FOCK, (-4, 0, 0)).features[0] == 1
    assert abs(snap_features(Family.COHERENT, (10, 0, 0)).features[0]) == pytest.approx(np.sqrt(3))
    cat = snap_features(Family.CAT, (0.1, 7.4, -3))
    assert cat.features[1:] == (2, 0) and abs(cat.features[0]) == pytest.approx(1.0)
    assert snap_features(Family.NUM, (2.7, 0, 0)).features[0] == pytest.approx(2.67)


def test_schedules():
    assert cosine_lr(1.0, 0, 10) == 1.0
    assert cosine_lr(1.0, 9, 10) < cosine_lr(1.0, 5, 10)
    assert tail_lr(1.0, 7, 10) == 1.0
    assert tail_lr(1.0, 9, 10) < 1.0


def test_train_zero_lr_flat_and_deterministic():
    data = _tiny_data(8)
    # RFB has no batch statistics, so mini-batch order does not matter
    rfb = RfbModel(RfbConfig(side=4, channels=(2, 2, 2, 2, 2, 2), hidden=4))
    hist = T.train(rfb, data, OptimConfig(learning_rate=0.0, iterations=3, batch_size=3), "rfb")
    assert np.allclose([h["loss"] for h in hist], hist[0]["loss"], rtol=1e-12)
    # MS-NN batch norm sees the whole set in one batch
    hist = T.train(MsModel(MsConfig(**TINY_MS)), data, OptimConfig(learning_rate=0.0, iterations=3, batch_size=8))
    assert np.allclose([h["loss"] for h in hist], hist[0]["loss"], rtol=1e-12)

    def run():
        m = MsModel(MsConfig(**TINY_MS))
        return T.train(m, data, OptimConfig(learning_rate=1e-3, iterations=3, batch_size=4), schedule="cosine")

    assert run() == run()


def test_train_eval_stride():
    data = _tiny_data(6)
    model = RfbModel(RfbConfig(side=4, channels=(2, 2, 2, 2, 2, 2), hidden=4))
    hist = T.train(model, data, OptimConfig(learning_rate=1e-3, iterations=4, batch_size=3), "rfb", data, eval_every=2)
    assert ["val_fidelity" in h for h in hist] == [False, True, False, True]
    assert 0.0 <= hist[1]["val_accuracy"] <= 1.0


def test_train_divergence():
    data = _tiny_data(4)
    data.grids[0, 0] = np.nan
    model = MsModel(MsConfig(**TINY_MS))
    with pytest.raises(DivergenceError):
        T.train(model, data, OptimConfig(learning_rate=1e-3, iterations=1, batch_size=4))


def test_msnn_states_flag_singular_outputs():
    raw = np.zeros((2, 3, 3), complex)
    raw[0] = np.eye(3)
    out = T.msnn_states(raw)
    assert out[1] == (None, None)
    assert np.allclose(out[0][1], np.eye(3) / 3)


def test_checkpoint_roundtrip(tmp_path):
    model = MsModel(MsConfig(**TINY_MS, seed=3))
    model.buffers["bn0.mean"] = np.array([0.5, -0.5])
    path = tmp_path / "m.ckpt"
    checkpoint.save(model, path, meta={"epoch": 2})
    loaded, meta = checkpoint.load(path, expect_mode="msnn")
    assert meta == {"epoch": 2}
    for (k, a), (k2, b) in zip(model.state_arrays().items(), loaded.state_arrays().items()):
        assert k == k2 and np.array_equal(a, b)
    assert checkpoint.dumps(loaded, {"epoch": 2}) == path.read_bytes()


def test_checkpoint_errors(tmp_path):
    blob = checkpoint.dumps(RfbModel(RfbConfig(**TINY_RFB)))
    with pytest.raises(CheckpointError):
        checkpoint.loads(blob, expect_mode="msnn")
    with pytest.raises(CheckpointError):
        checkpoint.loads(blob[:-5])
    with pytest.raises(CheckpointError):
        checkpoint.loads(b"NOTQST" + blob[6:])
    with pytest.raises(CheckpointError):
        checkpoint.loads(blob + b"\0")
    with pytest.raises(ValueError):
        build_model("gan", {})
