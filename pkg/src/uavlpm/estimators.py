"""scikit-learn view of the LoS probability map.

:class:`LosMapClassifier` treats the map as a probabilistic classifier of the
BS link state at a receiver position: ``fit`` builds the geometric prior and
adds the labelled observations as Beta counts, ``predict_proba`` reads the
containing cell.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import InvalidInputError
from .lpm import (DEFAULT_HEIGHT_SIGMA, DEFAULT_PRIOR_STRENGTH, build_prior, query,
                  update_with_measurements)


class LosMapClassifier(ClassifierMixin, BaseEstimator):
    """LoS (1) / NLoS (0) classifier backed by a per-cell Beta belief.

    Parameters
    ----------
    city : CityMap
        Building map; its region fixes the grid.
    bs_position : array-like of shape (3,)
        Base-station antenna position.
    height_sigma : float
        Roof-height standard deviation of the prior, in meters.
    prior_strength : float
        Total pseudo-count given to the geometric prior in each cell.

    Attributes
    ----------
    lpm_ : LosProbabilityMap
    classes_ : ndarray, ``[0, 1]``
    n_features_in_ : int, always 3
    """

    def __init__(self, city=None, bs_position=None, height_sigma=DEFAULT_HEIGHT_SIGMA,
                 prior_strength=DEFAULT_PRIOR_STRENGTH):
        self.city = city
        self.bs_position = bs_position
        self.height_sigma = height_sigma
        self.prior_strength = prior_strength

    def _validate_xy(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        if X.shape[1] != 3:
            raise InvalidInputError(f"X must have 3 columns (x, y, z), got {X.shape[1]}")
        if not set(np.unique(y)) <= {0, 1}:
            raise InvalidInputError("y must be 0 (NLoS) or 1 (LoS)")
        return X, y.astype(int)

    def fit(self, X, y):
        """Build the prior and refine it with the labelled positions."""
        if self.city is None or self.bs_position is None:
            raise InvalidInputError("city and bs_position are required")
        X, y = self._validate_xy(X, y)
        prior = build_prior(self.city, self.bs_position, self.height_sigma,
                            self.prior_strength)
        self.lpm_ = update_with_measurements(prior, zip(X, y == 1))
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = 3
        return self

    def partial_fit(self, X, y):
        """Add observations to an existing map (fitting the prior first if needed)."""
        if not hasattr(self, "lpm_"):
            return self.fit(X, y)
        X, y = self._validate_xy(X, y)
        self.lpm_ = update_with_measurements(self.lpm_, zip(X, y == 1))
        return self

    def predict_proba(self, X):
        """Columns ``[P(NLoS), P(LoS)]`` of the cell containing each row."""
        check_is_fitted(self, "lpm_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 3:
            raise InvalidInputError(f"X must have 3 columns (x, y, z), got {X.shape[1]}")
        p = np.array([query(self.lpm_, q).p_los for q in X])
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        p_los = self.predict_proba(X)[:, 1]
        return self.classes_[(p_los >= 0.5).astype(int)]
