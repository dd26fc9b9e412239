"""scikit-learn style facade over the modulation and experiment layers.

Two estimators are provided:

``ModulationFeatures``
    Transformer mapping phase states, stored as rows ``[u, u_t]`` of length
    ``2N``, to the features ``(lam, mu_S, d_S, K, Sigma)``.
``OutcomeClassifier``
    Classifier on seed coefficients ``(a, b)``.  ``fit`` calibrates which
    sign of the growing-mode amplitude leads to blow-up from labelled
    forward outcomes; ``predict`` applies the calibrated sign rule and
    ``simulate`` runs the flow itself.

They follow the estimator protocol (constructor stores parameters only,
learned state ends in ``_``, ``get_params``/``set_params`` work) but carry
heavy grid objects as fitted state and are not meant for pipelines that
clone and refit at scale.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .evolution import EvolveConfig, evolve
from .experiments import SeedSpec, mu_pm, seed_state
from .functionals import virial
from .ground_state import make_W
from .modulation import (
    DistanceParams,
    DistanceUndefined,
    ModulationUndefined,
    SigmaUndefined,
    distance_report,
    sign_Sigma,
)
from .radial import Grid, PhaseState, RadialField
from .spectral import ground_eigenpair

FEATURES = ("lam", "mu_S", "d_S", "K", "Sigma")
BLOW, SCATTER = "BlowsUpForward", "ScattersForward"


class _GridMixin:
    def _build(self):
        self.grid_ = Grid(self.d, self.N, self.R_max)
        self.family_ = make_W(self.grid_)
        self.pair_ = ground_eigenpair(self.family_)
        self.params_ = DistanceParams.defaults(self.family_, **(self.distance or {}))


class ModulationFeatures(_GridMixin, TransformerMixin, BaseEstimator):
    """Modulation features of phase states.

    Parameters
    ----------
    d : int
        Dimension, 3 or 5.
    N : int
        Grid size.
    R_max : float, optional
        Outer radius; the grid default when omitted.
    distance : dict, optional
        Overrides of the distance parameters.

    Notes
    -----
    Undefined entries (no modulation, ``Sigma`` outside its region) are NaN.
    """

    def __init__(self, d: int = 3, N: int = 2048, R_max: float | None = None,
                 distance: dict | None = None):
        self.d = d
        self.N = N
        self.R_max = R_max
        self.distance = distance

    def fit(self, X=None, y=None):
        self._build()
        self.n_features_in_ = 2 * self.N
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "pair_")
        X = check_array(X, dtype=float, ensure_all_finite=True)
        if X.shape[1] != 2 * self.N:
            raise ValueError(f"expected rows of length {2 * self.N}, got {X.shape[1]}")
        return np.array([self._one(row) for row in X])

    def _one(self, row: np.ndarray) -> list[float]:
        g = self.grid_
        s = PhaseState(RadialField(g, row[: self.N]), RadialField(g, row[self.N:]))
        out = [math.nan, math.nan, math.nan, virial(s.u), math.nan]
        try:
            rep = distance_report(s, self.params_, self.family_, self.pair_)
        except (DistanceUndefined, ModulationUndefined):
            return out
        out[2] = rep.d_S
        if rep.decomposition is not None:
            out[0] = rep.decomposition.lam
            out[1] = rep.decomposition.mu
        try:
            out[4] = float(sign_Sigma(s, self.params_, self.family_, self.pair_, report=rep).value)
        except SigmaUndefined:
            pass
        return out

    def get_feature_names_out(self, input_features=None):
        return np.array(FEATURES, dtype=object)


def states_to_array(states) -> np.ndarray:
    """Stack phase states into rows ``[u, u_t]``."""
    return np.array([np.concatenate([s.u.values, s.udot.values]) for s in states])


class OutcomeClassifier(_GridMixin, ClassifierMixin, BaseEstimator):
    """Forward outcome of seeds ``u = W + a rho``, ``u_t = b rho``.

    Parameters
    ----------
    d, N, R_max, distance
        Grid and distance settings as in :class:`ModulationFeatures`.
    T : float
        Horizon used by :meth:`simulate`.
    cfl : float
        Courant number used by :meth:`simulate`.

    Attributes
    ----------
    direction_ : int
        ``-1`` when a positive growing-mode amplitude leads to blow-up.
    classes_ : ndarray
        The two forward outcomes.
    """

    def __init__(self, d: int = 3, N: int = 2048, R_max: float | None = None,
                 distance: dict | None = None, T: float = 40.0, cfl: float = 0.5):
        self.d = d
        self.N = N
        self.R_max = R_max
        self.distance = distance
        self.T = T
        self.cfl = cfl

    def _mu_plus(self, X: np.ndarray) -> np.ndarray:
        return np.array([mu_pm(a, b, self.pair_.k)[0] for a, b in X])

    def fit(self, X, y):
        """Choose the sign rule agreeing with most labelled outcomes.

        Rows with ``mu_plus = 0`` or labels other than the two forward
        outcomes are ignored.
        """
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError("X must have columns (a, b)")
        y = np.asarray(y, dtype=object)
        if len(y) != len(X):
            raise ValueError("X and y differ in length")
        self._build()
        mp = self._mu_plus(X)
        use = (mp != 0) & np.isin(y, [BLOW, SCATTER])
        if not np.any(use):
            raise ValueError("no informative labelled seeds")
        agree = np.sum((mp[use] > 0) == (y[use] == BLOW))
        self.direction_ = -1 if 2 * agree >= use.sum() else 1
        self.classes_ = np.array([BLOW, SCATTER], dtype=object)
        self.n_features_in_ = 2
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "direction_")
        X = check_array(X, dtype=float)
        mp = self._mu_plus(X)
        blow = (mp > 0) == (self.direction_ < 0)
        return np.where(blow, BLOW, SCATTER).astype(object)

    def simulate(self, X) -> np.ndarray:
        """Forward outcomes obtained by evolving each seed."""
        check_is_fitted(self, "pair_")
        X = check_array(X, dtype=float)
        cfg = EvolveConfig(T=self.T, cfl=self.cfl)
        out = []
        for a, b in X:
            s = seed_state(SeedSpec(float(a), float(b)), self.family_, self.pair_)
            out.append(evolve(s, cfg, self.family_, self.pair_, self.params_).outcome)
        return np.array(out, dtype=object)
