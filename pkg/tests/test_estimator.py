import numpy as np
import pytest
from sklearn.base import clone

from relukinks.data import example_dataset
from relukinks.errors import ConfigError
from relukinks.estimator import TwoLayerReLURegressor


def test_fit_predict_scalar():
    D = example_dataset()
    X = D.x[:, None]
    est = TwoLayerReLURegressor(n_neurons=16, max_iter=3000, random_state=0).fit(X, D.y)
    assert est.predict(X).shape == (6,)
    assert est.learning_rate_ > 0 and est.kinks_.shape == (16,)
    # the best fit among functions affine on each half-line is zero here
    if est.affine_on_data_:
        assert np.max(np.abs(est.predict(X))) < 0.05


def test_params_and_clone():
    est = TwoLayerReLURegressor(n_neurons=4, alpha=0.1)
    assert est.get_params()["alpha"] == 0.1
    assert clone(est).set_params(max_iter=5).max_iter == 5


def test_multidimensional_input():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 3))
    y = X @ np.array([1.0, -1.0, 0.5])
    est = TwoLayerReLURegressor(n_neurons=32, learning_rate=0.05, max_iter=2000, random_state=1).fit(X, y)
    assert est.score(X, y) > 0.9
    with pytest.raises(ConfigError):
        TwoLayerReLURegressor().fit(X, y)
    with pytest.raises(ValueError):
        est.predict(X[:, :2])


def test_unfitted_and_validation():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        TwoLayerReLURegressor().predict([[1.0]])
    with pytest.raises(ValueError):
        TwoLayerReLURegressor().fit([[1.0], [np.nan]], [0.0, 1.0])
