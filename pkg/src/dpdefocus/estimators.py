"""Scikit-learn style estimator API over the functional core.

Two estimators cover the pipeline: :class:`CocEstimator` (stateless
transform of a DP pair into a signed COC map) and
:class:`MultiBranchDeblurrer` (fit learns the defocus-mask thresholds and
per-branch regularization on annotated scenes, predict deblurs a pair).
Both inherit ``get_params``/``set_params`` from ``BaseEstimator`` so they
clone and grid-search like any other estimator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .branches import BranchSet, deblur, default_branch_set
from .cocest import EstimationConfig, estimate_coc
from .dppsf import MAX_RADIUS, DpPair
from .maskgen import (
    THETA_GRID,
    Scene,
    load_model,
    save_model,
    search_thresholds,
    uniform_thresholds,
)


def as_dp_pair(X) -> DpPair:
    """Coerce a DpPair or a (left, right) pair of arrays into a DpPair."""
    if isinstance(X, DpPair):
        return X
    if isinstance(X, (tuple, list)) and len(X) == 2:
        return DpPair(np.asarray(X[0]), np.asarray(X[1]))
    raise ValueError("expected a DpPair or a (left, right) tuple of arrays")


class CocEstimator(BaseEstimator):
    """Signed circle-of-confusion estimation from a dual-pixel pair.

    Parameters
    ----------
    lam : float
        Weight of the quadratic neighborhood smoothing against the
        per-pixel residual cost.
    residual_smooth_sigma : float
        Gaussian sigma applied to each residual slice before the search.
    max_radius : int
        Candidate radii are every integer in [-max_radius, max_radius].
    smoothing_iters : int
        Rounds of cost-balanced neighborhood smoothing.
    confidence_floor : float
        Pixels below this confidence are treated as unreliable by callers.
    """

    def __init__(self, lam=10.0, residual_smooth_sigma=2.0, max_radius=MAX_RADIUS,
                 smoothing_iters=20, confidence_floor=0.1):
        self.lam = lam
        self.residual_smooth_sigma = residual_smooth_sigma
        self.max_radius = max_radius
        self.smoothing_iters = smoothing_iters
        self.confidence_floor = confidence_floor

    def _config(self) -> EstimationConfig:
        radius = int(self.max_radius)
        if radius < 0 or radius > MAX_RADIUS:
            raise ValueError(f"max_radius must be in [0, {MAX_RADIUS}]")
        return EstimationConfig(
            lam=self.lam,
            residual_smooth_sigma=self.residual_smooth_sigma,
            candidates=tuple(range(-radius, radius + 1)),
            smoothing_iters=int(self.smoothing_iters),
            confidence_floor=self.confidence_floor,
        )

    def fit(self, X=None, y=None):
        """Stateless: validates the parameters and returns self."""
        self._config()
        return self

    def estimate(self, X):
        """Signed COC map and confidence map for one DP pair."""
        return estimate_coc(as_dp_pair(X), self._config())

    def predict(self, X):
        """Signed COC map for one DP pair."""
        coc, _ = self.estimate(X)
        return coc

    def transform(self, X):
        return self.predict(X)


class MultiBranchDeblurrer(BaseEstimator):
    """Blur-aware multi-branch defocus deblurring.

    Parameters
    ----------
    n_branches : int
        Number of branches M; branch 1 is the passthrough.
    feather_sigma : float
        Gaussian feathering of the defocus masks at prediction time
        (0 for hard masks).
    max_outer : int
        Cap on outer threshold-update iterations during fit.
    theta_grid : sequence of float, optional
        Regularization strengths searched by the inner fit.
    coc_estimator : CocEstimator, optional
        Estimator used when predict is called without a COC map.

    Attributes
    ----------
    thresholds_ : maskgen.ThresholdSet
        Learned interval boundaries.
    branches_ : branches.BranchSet
        Fitted branch operators.
    history_ : list of maskgen.HistoryRow
        Outer-loop validation cost trace.
    converged_ : bool
        Whether the thresholds stopped changing before ``max_outer``.
    """

    def __init__(self, n_branches=4, feather_sigma=2.0, max_outer=10,
                 theta_grid=None, coc_estimator=None):
        self.n_branches = n_branches
        self.feather_sigma = feather_sigma
        self.max_outer = max_outer
        self.theta_grid = theta_grid
        self.coc_estimator = coc_estimator

    def fit(self, scenes, y=None, val_scenes=None):
        """Learn thresholds and branch parameters from annotated scenes.

        Parameters
        ----------
        scenes : list of maskgen.Scene
            Training samples (DP pair, sharp target, ground-truth COC map).
        val_scenes : list of maskgen.Scene, optional
            Validation samples for the outer loop; defaults to ``scenes``.
        """
        scenes = [Scene(*s) for s in scenes]
        val_scenes = scenes if val_scenes is None else [Scene(*s) for s in val_scenes]
        init = default_branch_set(uniform_thresholds(int(self.n_branches)))
        grid = THETA_GRID if self.theta_grid is None else tuple(self.theta_grid)
        result = search_thresholds(scenes, val_scenes, init,
                                   max_outer=int(self.max_outer), theta_grid=grid)
        self.thresholds_ = result.thresholds
        self.branches_ = result.branches
        self.history_ = result.history
        self.converged_ = result.converged
        return self

    def predict(self, X, coc=None, subset=None):
        """Deblur one DP pair.

        ``coc`` may supply a precomputed signed COC map; otherwise it is
        estimated with ``coc_estimator`` (a default CocEstimator if None).
        ``subset`` restricts the run to the given 1-based branch indices.
        """
        check_is_fitted(self, "branches_")
        pair = as_dp_pair(X)
        if coc is None:
            estimator = self.coc_estimator or CocEstimator()
            coc = estimator.predict(pair)
        return deblur(pair, coc, self.branches_, self.feather_sigma, subset=subset)

    def save(self, path):
        """Persist the fitted model as a plain key=value file."""
        check_is_fitted(self, "branches_")
        save_model(self.branches_, path)
        return self

    @classmethod
    def from_file(cls, path, **params) -> "MultiBranchDeblurrer":
        """Load a fitted model written by :meth:`save`."""
        model: BranchSet = load_model(path)
        est = cls(n_branches=model.n_branches, **params)
        est.thresholds_ = model.thresholds
        est.branches_ = model
        est.history_ = []
        est.converged_ = True
        return est
