"""Scikit-learn style transformers over a fixed space.

Rows of ``X`` are fields on the space (one column per point). ``fit`` only
validates the space and caches its decomposition; nothing is learned from
the data.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import InvalidParameter
from .gradients import gamma2, gamma_p_definitional, nabla, tilde_nabla, tilde_nabla_star
from .semigroup import decompose, heat, poisson
from .space import Space
from .squarefn import g_function, g_tilde, h_nabla, h_p, h_tilde


class _SpaceTransformer(TransformerMixin, BaseEstimator):
    def fit(self, X=None, y=None):
        if not isinstance(self.space, Space):
            raise InvalidParameter("space must be a Space instance")
        self._check_params()
        self.decomposition_ = decompose(self.space)
        self.n_features_in_ = self.space.n
        if X is not None:
            self._validate(X)
        return self

    def _check_params(self):
        pass

    def _validate(self, X) -> np.ndarray:
        X = check_array(X, dtype=float)
        if X.shape[1] != self.space.n:
            raise InvalidParameter(f"X has {X.shape[1]} columns, the space has {self.space.n} points")
        return X

    def transform(self, X):
        check_is_fitted(self, "decomposition_")
        return self._apply(self._validate(X))


class SemigroupTransformer(_SpaceTransformer):
    """Maps each field to ``P_t f`` (``kind="heat"``) or ``Q_t f`` (``"poisson"``)."""

    def __init__(self, space=None, t: float = 1.0, kind: str = "heat"):
        self.space = space
        self.t = t
        self.kind = kind

    def _check_params(self):
        if self.kind not in ("heat", "poisson"):
            raise InvalidParameter(f"unknown semigroup {self.kind!r}")
        if not self.t >= 0:
            raise InvalidParameter(f"t must be nonnegative, got {self.t}")

    def _apply(self, X):
        op = heat if self.kind == "heat" else poisson
        return op(self.space, self.decomposition_, X, self.t)


class GradientTransformer(_SpaceTransformer):
    def __init__(self, space=None, kind: str = "nabla", p: float = 2.0):
        self.space = space
        self.kind = kind
        self.p = p

    _KINDS = ("nabla", "tilde", "tilde_star", "gamma2", "gamma_p")

    def _check_params(self):
        if self.kind not in self._KINDS:
            raise InvalidParameter(f"unknown gradient {self.kind!r}")

    def _apply(self, X):
        if self.kind == "nabla":
            return nabla(self.space, X)
        if self.kind == "tilde":
            return tilde_nabla(self.space, X)
        if self.kind == "tilde_star":
            return tilde_nabla_star(self.space, X)
        if self.kind == "gamma2":
            return gamma2(self.space, X)
        return gamma_p_definitional(self.space, self.decomposition_, X, self.p)


class SquareFunctionTransformer(_SpaceTransformer):
    """Pointwise square-function values, one output row per input field."""

    def __init__(self, space=None, kind: str = "H_nabla", p: float = 2.0, tol: float = 1e-8):
        self.space = space
        self.kind = kind
        self.p = p
        self.tol = tol

    _KINDS = ("H_nabla", "H_tilde", "H_p", "G_tilde", "G")

    def _check_params(self):
        if self.kind not in self._KINDS:
            raise InvalidParameter(f"unknown square function {self.kind!r}")
        if not self.tol > 0:
            raise InvalidParameter(f"tol must be positive, got {self.tol}")

    def _apply(self, X):
        sp, dec = self.space, self.decomposition_
        if self.kind == "H_nabla":
            res = h_nabla(sp, dec, X)
        elif self.kind == "H_tilde":
            res = h_tilde(sp, dec, X, tol=self.tol)
        elif self.kind == "H_p":
            res = h_p(sp, dec, X, self.p, tol=self.tol)
        elif self.kind == "G_tilde":
            res = g_tilde(sp, dec, X, tol=self.tol)
        else:
            res = g_function(sp, dec, X, tol=self.tol)
        self.quadrature_report_ = res.quadrature_report
        return res.values
