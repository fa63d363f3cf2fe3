import numpy as np
import pytest
from sklearn.base import clone

from qstnet import dataset, states
from qstnet.estimators import MSNN, GradientTomography, LinearInversionTomography, MLETomography, RFBNet
from qstnet.exceptions import ShapeError
from qstnet.measurement import husimi_values, make_geometry


@pytest.fixture(scope="module")
def coherent_batch():
    geom = make_geometry()
    rhos = np.array([states.coherent_state(a) for a in (0.5, -0.4j)])
    return np.array([husimi_values(r, geom) for r in rhos]), rhos


def test_params_and_clone():
    est = GradientTomography(iterations=10, seed=3)
    assert est.get_params()["seed"] == 3
    assert clone(est).get_params() == est.get_params()
    est.set_params(param_kind="split")
    assert est.param_kind == "split"


def test_linear_and_mle(coherent_batch):
    X, rhos = coherent_batch
    lin = LinearInversionTomography().fit(X)
    assert lin.transform(X).shape == (2, 32, 32)
    assert lin.score(X, rhos) > 0.99
    mle = MLETomography(iters=30).fit()
    assert mle.score(X.reshape(2, 32, 32), rhos) > 0.9


def test_gradient_tomography(coherent_batch):
    X, rhos = coherent_batch
    est = GradientTomography(iterations=300).fit(X)
    assert est.score(X, rhos) > 0.99
    assert len(est.reconstruct(X[:1])[0].loss_history) == 301


def test_input_validation(coherent_batch):
    X, rhos = coherent_batch
    est = LinearInversionTomography().fit()
    with pytest.raises(ShapeError):
        est.predict(np.zeros((1, 10)))
    with pytest.raises(ValueError):
        est.predict(np.full((1, 1024), np.nan))
    with pytest.raises(ShapeError):
        est.score(X, rhos[:, :4, :4])


def test_not_fitted():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        MLETomography().predict(np.zeros((1, 1024)))


@pytest.fixture(scope="module")
def tiny_set():
    records, manifest = dataset.generate(6, 0, ["fock", "coherent"])
    return records


def test_rfbnet_fit_predict(tiny_set):
    r = tiny_set
    net = RFBNet(epochs=2, batch_size=3).fit(r.husimi, r.labels, r.features)
    assert set(net.predict(r.husimi)) <= set(range(7))
    assert net.predict_features(r.husimi).shape == (6, 3)
    assert net.predict_states(r.husimi).shape == (6, 32, 32)
    assert 0.0 <= net.fidelity_score(r.husimi, r.rhos) <= 1.0
    assert 0.0 <= net.score(r.husimi, r.labels) <= 1.0
    assert len(net.history_) == 2


def test_msnn_fit_predict(tiny_set):
    r = tiny_set
    net = MSNN(epochs=1, batch_size=3).fit(r.husimi, r.labels, r.rhos)
    pred = net.predict(r.husimi, r.labels)
    assert pred.shape == (6, 32, 32)
    assert 0.0 <= net.score(r.husimi, r.labels, r.rhos) <= 1.0
    split = net.predict_split(r.husimi, r.labels)
    ok = ~np.isnan(split).any(axis=(1, 2))
    assert np.allclose(np.trace(split[ok], axis1=1, axis2=2), 1.0)
