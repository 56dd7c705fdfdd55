"""scikit-learn style wrappers around the coordinate-update builders."""
from __future__ import annotations

import numpy as np
from scipy.optimize import nnls
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .apps import (build_group_lasso, build_logistic_l1, build_nmf, build_svm_biased_3s, build_svm_biased_pd,
                   build_svm_unbiased, gaussian_kernel, svm_gram)
from .execution import IndexRule, Stop, run_sequential


def _solve(inst, rule, epochs, tol, seed, eta=1.0):
    op = inst.operator
    res = run_sequential(op, IndexRule(rule, op.m, seed=seed), eta, Stop(epochs, tol), inst.x0)
    return res, inst.solution(res.x)


def _binary_labels(y):
    classes = unique_labels(y)
    if len(classes) != 2:
        raise ValueError(f"expected two classes, got {len(classes)}")
    return classes, np.where(y == classes[1], 1.0, -1.0)


class _CoordinateMixin:
    def _record(self, res):
        self.n_epochs_ = res.epochs
        self.converged_ = res.converged
        self.trace_ = res.trace


class LogisticL1Classifier(_CoordinateMixin, ClassifierMixin, BaseEstimator):
    """Sparse logistic regression, ``lam ||w||_1 + mean log(1 + exp(-y x^T w))``.

    With ``fit_intercept`` a constant feature is appended; its weight is
    penalized like the others.
    """

    def __init__(self, lam=1e-4, block_size=50, rule="random", max_epochs=200, tol=1e-8, fit_intercept=True,
                 random_state=0):
        self.lam = lam
        self.block_size = block_size
        self.rule = rule
        self.max_epochs = max_epochs
        self.tol = tol
        self.fit_intercept = fit_intercept
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, yy = _binary_labels(y)
        Xa = np.column_stack([X, np.ones(len(X))]) if self.fit_intercept else X
        inst = build_logistic_l1(Xa, yy, self.lam, min(self.block_size, Xa.shape[1]))
        res, w = _solve(inst, self.rule, self.max_epochs, self.tol, self.random_state)
        self.coef_ = w[:X.shape[1]]
        self.intercept_ = float(w[-1]) if self.fit_intercept else 0.0
        self._record(res)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        return check_array(X) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        p = 1.0 / (1.0 + np.exp(-self.decision_function(X)))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return np.where(self.decision_function(X) > 0, self.classes_[1], self.classes_[0])


class DualCoordinateSVC(_CoordinateMixin, ClassifierMixin, BaseEstimator):
    """Kernel SVM solved in the dual.

    ``bias`` selects the formulation: ``"none"`` (box only, forward-backward),
    ``"pd"`` (primal-dual on the equality constraint) or ``"3s"`` (three-operator).
    """

    def __init__(self, C=1.0, kernel="rbf", sigma=1.0, bias="none", rule="cyclic", max_epochs=500,
                 tol=1e-8, random_state=0):
        self.C = C
        self.kernel = kernel
        self.sigma = sigma
        self.bias = bias
        self.rule = rule
        self.max_epochs = max_epochs
        self.tol = tol
        self.random_state = random_state

    def _kernel(self, X, Y):
        if self.kernel == "linear":
            return X @ Y.T
        if self.kernel == "rbf":
            d2 = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
            return np.exp(-np.maximum(d2, 0.0) / (2.0 * self.sigma ** 2))
        raise ValueError(f"unknown kernel {self.kernel!r}")

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, beta = _binary_labels(y)
        K = gaussian_kernel(X, self.sigma) if self.kernel == "rbf" else self._kernel(X, X)
        Q = svm_gram(K, beta)
        if self.bias == "none":
            inst = build_svm_unbiased(Q, self.C)
        elif self.bias == "pd":
            inst = build_svm_biased_pd(Q, beta, self.C)
        elif self.bias == "3s":
            inst = build_svm_biased_3s(Q, beta, self.C)
        else:
            raise ValueError(f"bias must be 'none', 'pd' or '3s', got {self.bias!r}")
        res, s = _solve(inst, self.rule, self.max_epochs, self.tol, self.random_state)
        self._record(res)
        self.dual_coef_ = s * beta
        self.X_fit_ = X
        self.intercept_ = 0.0
        if self.bias != "none":
            free = (s > 1e-8) & (s < self.C - 1e-8)
            sel = free if free.any() else s > 1e-8
            if sel.any():
                self.intercept_ = float(np.mean(beta[sel] - K[sel] @ self.dual_coef_))
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "dual_coef_")
        X = check_array(X)
        return self._kernel(X, self.X_fit_) @ self.dual_coef_ + self.intercept_

    def predict(self, X):
        return np.where(self.decision_function(X) > 0, self.classes_[1], self.classes_[0])


class GroupLassoRegressor(_CoordinateMixin, RegressorMixin, BaseEstimator):
    """``1/2 ||X w - y||^2 + lam sum_g ||w_g||``; overlapping groups use the primal-dual form."""

    def __init__(self, groups=None, lam=1.0, rule="cyclic", max_epochs=1000, tol=1e-10, random_state=0):
        self.groups = groups
        self.lam = lam
        self.rule = rule
        self.max_epochs = max_epochs
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        groups = self.groups if self.groups is not None else [[j] for j in range(X.shape[1])]
        seen = [j for g in groups for j in g]
        overlapping = len(seen) != len(set(seen))
        inst = build_group_lasso(X, y.astype(float), groups, self.lam, overlapping)
        res, self.coef_ = _solve(inst, self.rule, self.max_epochs, self.tol, self.random_state)
        self._record(res)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return check_array(X) @ self.coef_


class CoordinateNMF(_CoordinateMixin, TransformerMixin, BaseEstimator):
    """``X ~ W H`` with column-wise projected-gradient updates.

    ``transform`` solves a nonnegative least-squares problem per row against
    the fitted ``components_``.
    """

    def __init__(self, n_components=2, unit_norm=True, rule="cyclic", max_epochs=500, tol=1e-8, random_state=0):
        self.n_components = n_components
        self.unit_norm = unit_norm
        self.rule = rule
        self.max_epochs = max_epochs
        self.tol = tol
        self.random_state = random_state

    def fit_transform(self, X, y=None):
        X = check_array(X)
        if np.any(X < 0):
            raise ValueError("X must be nonnegative")
        inst = build_nmf(X, self.n_components, self.unit_norm, self.random_state)
        res, z = _solve(inst, self.rule, self.max_epochs, self.tol, self.random_state)
        self._record(res)
        W, H = inst.operator.factors(z)
        self.components_ = H.T.copy()
        self.reconstruction_err_ = float(np.linalg.norm(X - W @ H.T))
        self.n_features_in_ = X.shape[1]
        return W.copy()

    def fit(self, X, y=None):
        self.fit_transform(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X)
        return np.array([nnls(self.components_.T, row)[0] for row in X])

    def inverse_transform(self, W):
        check_is_fitted(self, "components_")
        return np.asarray(W) @ self.components_
