import numpy as np
import pytest
from sklearn.base import clone

from uavlpm.estimators import LosMapClassifier
from uavlpm.exceptions import InvalidInputError
from uavlpm.lpm import build_prior, update_with_measurements, maps_equal

BS = np.array([0.0, 0.0, 25.0])


def data(rng, n=200):
    X = np.column_stack([rng.uniform(-5, 145, n), rng.uniform(-45, 45, n), rng.uniform(1, 99, n)])
    y = rng.integers(0, 2, n)
    return X, y


def test_fit_matches_functional_api(one_building_city, rng):
    X, y = data(rng)
    clf = LosMapClassifier(one_building_city, BS).fit(X, y)
    ref = update_with_measurements(build_prior(one_building_city, BS), zip(X, y == 1))
    assert maps_equal(clf.lpm_, ref)
    assert list(clf.classes_) == [0, 1] and clf.n_features_in_ == 3


def test_predict_proba_rows_sum_to_one(one_building_city, rng):
    X, y = data(rng)
    P = LosMapClassifier(one_building_city, BS).fit(X, y).predict_proba(X)
    assert P.shape == (len(X), 2)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert np.all((P >= 0) & (P <= 1))


def test_shadow_prediction(one_building_city):
    clf = LosMapClassifier(one_building_city, BS).fit([[0, 40, 90]], [1])
    # behind the tower at low height vs high above it
    assert clf.predict([[100, 0, 5], [100, 0, 95]]).tolist() == [0, 1]


def test_partial_fit_equals_fit(one_building_city, rng):
    X, y = data(rng)
    full = LosMapClassifier(one_building_city, BS).fit(X, y)
    inc = LosMapClassifier(one_building_city, BS).partial_fit(X[:80], y[:80]).partial_fit(
        X[80:], y[80:])
    assert maps_equal(full.lpm_, inc.lpm_)


def test_score_and_clone(one_building_city, rng):
    X, y = data(rng)
    clf = LosMapClassifier(one_building_city, BS, height_sigma=1.0)
    c2 = clone(clf)
    assert c2.get_params()["height_sigma"] == 1.0
    assert 0.0 <= c2.fit(X, y).score(X, y) <= 1.0


def test_unfitted(one_building_city):
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        LosMapClassifier(one_building_city, BS).predict([[1, 2, 3]])


@pytest.mark.parametrize("X,y", [([[1, 2]], [1]), ([[1, 2, 3]], [2])])
def test_bad_inputs(one_building_city, X, y):
    with pytest.raises(InvalidInputError):
        LosMapClassifier(one_building_city, BS).fit(X, y)


def test_missing_city():
    with pytest.raises(InvalidInputError):
        LosMapClassifier().fit([[1, 2, 3]], [1])
