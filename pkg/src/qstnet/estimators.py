"""scikit-learn style wrappers around the reconstruction engines and networks.

Every estimator takes Husimi data ``X`` of shape ``(n, side*side)`` (or
``(n, side, side)``) sampled on the default grid geometry.  The tomography
estimators return density matrices from :meth:`predict`, and :meth:`score`
is the mean Uhlmann fidelity against reference states.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import hilbert, recon
from ._validation import check_densities, check_features, check_grids, check_labels
from .measurement import GridGeometry, sensing_matrix
from .nn import train as nn_train
from .nn.models import MsConfig, MsModel, RfbConfig, RfbModel
from .nn.optim import OptimConfig
from .nn.reconstructor import reconstructor


def mean_fidelity(truth, estimates):
    return float(np.mean([hilbert.fidelity(t, e) for t, e in zip(truth, estimates)]))


class _Tomography(BaseEstimator):
    """Shared plumbing: geometry handling, ``transform`` alias and fidelity score."""

    def _geometry(self):
        return GridGeometry(self.side, self.extent)

    def fit(self, X=None, y=None):
        """Classical estimators have nothing to learn; ``fit`` only records the geometry."""
        self.geometry_ = self._geometry()
        if X is not None:
            self.n_features_in_ = check_grids(X, self.side).shape[1]
        return self

    def transform(self, X):
        return self.predict(X)

    def score(self, X, rhos):
        X = check_grids(X, self.side)
        return mean_fidelity(check_densities(rhos, self.dim, len(X)), self.predict(X))


class LinearInversionTomography(_Tomography):
    def __init__(self, dim=32, side=32, extent=5.0, ridge=1e-10):
        self.dim = dim
        self.side = side
        self.extent = extent
        self.ridge = ridge

    def fit(self, X=None, y=None):
        super().fit(X, y)
        self.sensing_matrix_ = sensing_matrix(self.geometry_, self.dim)
        return self

    def predict(self, X):
        check_is_fitted(self, "sensing_matrix_")
        X = check_grids(X, self.side)
        return np.stack([recon.linear_inversion(x, self.sensing_matrix_, self.ridge) for x in X])


class MLETomography(_Tomography):
    def __init__(self, dim=32, side=32, extent=5.0, iters=200, damping=0.2):
        self.dim = dim
        self.side = side
        self.extent = extent
        self.iters = iters
        self.damping = damping

    def predict(self, X):
        check_is_fitted(self, "geometry_")
        X = check_grids(X, self.side)
        return np.stack(
            [recon.mle_iterative(x, self.geometry_, self.iters, self.damping, self.dim).rho_hat for x in X]
        )


class GradientTomography(_Tomography):
    """Direct fit of a Cholesky or split parameterisation by Adam on the Husimi MAE."""

    def __init__(self, param_kind="cholesky", dim=32, side=32, extent=5.0, learning_rate=0.01,
                 iterations=2000, seed=0, schedule="tail"):
        self.param_kind = param_kind
        self.dim = dim
        self.side = side
        self.extent = extent
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.seed = seed
        self.schedule = schedule

    def reconstruct(self, X):
        """Full :class:`~qstnet.recon.ReconResult` objects, one per sample."""
        check_is_fitted(self, "geometry_")
        X = check_grids(X, self.side)
        config = recon.gd_config(learning_rate=self.learning_rate, iterations=self.iterations, seed=self.seed)
        return [
            recon.gd_reconstruct(x, self.geometry_, self.param_kind, config, self.dim, schedule=self.schedule)
            for x in X
        ]

    def predict(self, X):
        return np.stack([r.rho_hat for r in self.reconstruct(X)])


def _train_data(X, y, features, rhos, geometry):
    return nn_train.TrainData(X, y, features, rhos, geometry)


class RFBNet(ClassifierMixin, BaseEstimator):
    """Classifier plus feature regressor; states come from the formula reconstructor.

    ``score`` is classification accuracy (the sklearn classifier contract);
    use :meth:`fidelity_score` for reconstruction quality.
    """

    def __init__(self, epochs=30, learning_rate=1e-3, batch_size=32, seed=0, hidden=64,
                 dropout=RfbConfig.dropout, noise_sigma=RfbConfig.noise_sigma, schedule="cosine",
                 side=32, extent=5.0):
        self.epochs = epochs
        self.schedule = schedule
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed
        self.hidden = hidden
        self.dropout = dropout
        self.noise_sigma = noise_sigma
        self.side = side
        self.extent = extent

    def fit(self, X, y, features):
        X = check_grids(X, self.side)
        y = check_labels(y, len(X))
        features = check_features(features, len(X))
        config = RfbConfig(side=self.side, hidden=self.hidden, dropout=self.dropout,
                           noise_sigma=self.noise_sigma, seed=self.seed)
        self.model_ = RfbModel(config)
        optim = OptimConfig(learning_rate=self.learning_rate, iterations=self.epochs,
                            seed=self.seed, batch_size=self.batch_size)
        dim = 32
        data = _train_data(X, y, features, np.zeros((len(X), dim, dim), complex), GridGeometry(self.side, self.extent))
        self.history_ = nn_train.train(self.model_, data, optim, "rfb", schedule=self.schedule)
        self.classes_ = np.arange(7)
        self.n_features_in_ = X.shape[1]
        return self

    def _raw(self, X):
        check_is_fitted(self, "model_")
        return nn_train.rfb_predict(self.model_, check_grids(X, self.side))

    def predict(self, X):
        return self._raw(X)[0]

    def predict_features(self, X):
        return self._raw(X)[1]

    def predict_states(self, X, dim=32):
        labels, feats = self._raw(X)
        return np.stack([reconstructor(l, f, dim) for l, f in zip(labels, feats)])

    def fidelity_score(self, X, rhos):
        X = check_grids(X, self.side)
        return mean_fidelity(check_densities(rhos, 32, len(X)), self.predict_states(X))


class MSNN(BaseEstimator):
    """Label-conditioned generator with the split density layer.

    ``predict`` needs the class labels because the network is conditioned on
    them; records whose split trace vanishes come back as ``NaN`` matrices.
    """

    def __init__(self, epochs=20, learning_rate=1e-3, batch_size=16, seed=0, schedule="cosine",
                 side=32, extent=5.0):
        self.epochs = epochs
        self.schedule = schedule
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed
        self.side = side
        self.extent = extent

    def fit(self, X, y, rhos):
        X = check_grids(X, self.side)
        y = check_labels(y, len(X))
        rhos = check_densities(rhos, self.side, len(X))
        self.model_ = MsModel(MsConfig(side=self.side, dim=self.side, seed=self.seed))
        optim = OptimConfig(learning_rate=self.learning_rate, iterations=self.epochs,
                            seed=self.seed, batch_size=self.batch_size)
        data = _train_data(X, y, np.zeros((len(X), 3), complex), rhos, GridGeometry(self.side, self.extent))
        self.history_ = nn_train.train(self.model_, data, optim, "msnn", schedule=self.schedule)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, y):
        """Physical (projected) density matrices."""
        return np.stack([phys for _, phys in self._states(X, y)])

    def predict_split(self, X, y):
        """Raw split-layer outputs: Hermitian, unit trace, possibly indefinite."""
        return np.stack([h for h, _ in self._states(X, y)])

    def _states(self, X, y):
        check_is_fitted(self, "model_")
        X = check_grids(X, self.side)
        y = check_labels(y, len(X))
        nan = np.full((self.side, self.side), np.nan, complex)
        out = nn_train.msnn_states(nn_train.msnn_predict_raw(self.model_, X, y))
        return [(nan, nan) if h is None else (h, p) for h, p in out]

    def score(self, X, y, rhos):
        pred = self.predict(X, y)
        rhos = check_densities(rhos, self.side, len(pred))
        return float(np.mean([0.0 if np.isnan(p).any() else hilbert.fidelity(t, p) for t, p in zip(rhos, pred)]))
