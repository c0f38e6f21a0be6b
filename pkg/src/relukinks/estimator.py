"""scikit-learn style regressor wrapping full-batch GD on the two-layer network."""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_random_state, check_X_y

from . import engine
from .certify import kinks
from .data import Dataset, regression_summary
from .errors import ConfigError
from .network import (Distribution, Hyperparams, InitSpec, Weights, WeightsND, forward, forward_nd,
                      gd_step_nd, init_weights)
from .reduced import reference_operator


class TwoLayerReLURegressor(RegressorMixin, BaseEstimator):
    """Zero-bias initialised two-layer (Leaky)ReLU network trained by plain GD.

    learning_rate="auto" uses 1/lambda_max of the symmetrised reference operator
    (scalar inputs only). After fitting, ``kinks_`` holds -b_i/a_i and
    ``affine_on_data_`` tells whether every kink stayed strictly inside the gap
    around zero that contains no training input.
    """

    def __init__(self, n_neurons=16, alpha=0.0, learning_rate="auto", max_iter=10_000,
                 init_a="normal:2", init_w="normal:2", random_state=None):
        self.n_neurons = n_neurons
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.init_a = init_a
        self.init_w = init_w
        self.random_state = random_state

    def _seed(self):
        return int(check_random_state(self.random_state).randint(0, 2 ** 31 - 1))

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True, dtype=float)
        self.n_features_in_ = X.shape[1]
        spec = InitSpec(Distribution.parse(self.init_a), Distribution.parse(self.init_w), self._seed())
        base = Hyperparams(self.n_neurons, 1.0, self.alpha)
        if self.n_features_in_ == 1:
            D = Dataset(X[:, 0], y).for_training()
            W0 = init_weights(spec, base)
            if self.learning_rate == "auto":
                h = reference_operator(W0, regression_summary(D), self.alpha).h_auto
            else:
                h = float(self.learning_rate)
            a, b, w = W0.a.copy(), W0.b.copy(), W0.w.copy()
            st = np.array([0.0, 0.0])
            engine.full_gd_run(a, b, w, st, D.x, D.y, float(self.alpha), h, math.inf, int(self.max_iter))
            self.weights_ = Weights(a, b, float(st[0]), w)
            report = kinks(self.weights_, D.x_underbar)
            self.kinks_ = report.positions
            self.affine_on_data_ = not report.crossed
        else:
            if self.learning_rate == "auto":
                raise ConfigError("learning_rate='auto' needs scalar inputs; pass a float")
            h = float(self.learning_rate)
            rng = np.random.default_rng(spec.seed)
            m, d = self.n_neurons, self.n_features_in_
            A = np.column_stack([spec.dist_a.draw(rng, m) for _ in range(d)])
            W = WeightsND(A, np.zeros(m), 0.0, spec.dist_w.draw(rng, m) / math.sqrt(m))
            params = Hyperparams(m, h, self.alpha)
            for _ in range(int(self.max_iter)):
                W = gd_step_nd(W, params, X, y)
            self.weights_ = W
        self.learning_rate_ = h
        self.n_iter_ = int(self.max_iter)
        return self

    def predict(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        params = Hyperparams(self.n_neurons, 1.0, self.alpha)
        if self.n_features_in_ == 1:
            return np.asarray(forward(self.weights_, params, X[:, 0]), dtype=float)
        return forward_nd(self.weights_, params, X)
