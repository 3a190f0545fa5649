"""Demographic-parity repair by transport to the group barycenter.

Features of every protected group are pushed onto the equal-weight
barycenter of the groups; the target label is never consulted. Fairness is
scored by DP-gamma, the largest gap between the score distributions of the
two groups (the maximal vertical distance of the group-membership ROC curve
from the diagonal), and prediction quality by ROC AUC.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .bures import BarycenterConfig
from .core import BarycenterModel, LbwModel, barycenter, learn, transport_to_barycenter
from .errors import DimensionMismatch, InsufficientData, SingleClass, SingleGroup
from .gmm import GmmConfig

__all__ = [
    "LabeledDataset",
    "FairnessReport",
    "repair",
    "dp_gamma",
    "auc",
    "LinearScorer",
    "linear_scorer",
    "evaluate",
]


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.features, dtype=float))
        y, z = np.asarray(self.y), np.asarray(self.z)
        if not (x.shape[0] == y.shape[0] == z.shape[0]):
            raise DimensionMismatch(f"row counts differ: features {x.shape[0]}, y {y.shape[0]}, z {z.shape[0]}")
        if np.unique(z).size < 2:
            raise SingleGroup("the protected attribute takes a single value")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @property
    def groups(self) -> np.ndarray:
        return np.unique(self.z)


@dataclass(frozen=True)
class FairnessReport:
    dp_gamma: float
    auc: float
    n_thresholds: int
    target_tolerance: float | None = None


def repair(
    data: LabeledDataset,
    k: int,
    cfg: GmmConfig = GmmConfig(),
    bary_cfg: BarycenterConfig = BarycenterConfig(),
    weights=None,
) -> tuple[np.ndarray, LbwModel, BarycenterModel]:
    """Transport every row to the barycenter of the protected groups.

    Parameters
    ----------
    data : LabeledDataset
    k : int
        Mixture components per group.
    cfg, bary_cfg
        EM and barycenter settings.
    weights : array-like, optional
        Barycenter weights over the sorted group labels; uniform by default.

    Returns
    -------
    repaired : ndarray (n, p)
        Transported features in the original row order.
    model : LbwModel
    bary : BarycenterModel
    """
    labels = data.groups
    for g in labels:
        if np.count_nonzero(data.z == g) < k:
            raise InsufficientData(f"group {g!r} has fewer than k={k} rows")
    model = learn([(str(g), data.features[data.z == g]) for g in labels], k, cfg)
    if weights is None:
        weights = np.full(labels.size, 1.0 / labels.size)
    bary = barycenter(model, weights, bary_cfg)
    repaired = np.empty_like(data.features)
    for g in labels:
        rows = data.z == g
        repaired[rows] = transport_to_barycenter(model, bary, str(g), data.features[rows])
    return repaired, model, bary


def _two_groups(z):
    z = np.asarray(z)
    labels = np.unique(z)
    if labels.size < 2:
        raise SingleGroup("need both groups to be present")
    if labels.size > 2:
        raise ValueError(f"expected two groups, got {labels.size}")
    return z == labels[1]


def dp_gamma(scores, z, normalize: bool = False) -> float:
    """Maximum ``|TPR - FPR|`` over all thresholds when predicting ``z`` from ``scores``.

    This is the two-sample Kolmogorov-Smirnov statistic between the score
    distributions of the two groups. ``normalize=True`` divides by ``sqrt(2)``
    to give the Euclidean distance of the ROC curve from the diagonal.
    """
    scores = np.asarray(scores, dtype=float).reshape(-1)
    pos = _two_groups(z)
    if pos.shape[0] != scores.shape[0]:
        raise DimensionMismatch("scores and z differ in length")
    s1, s0 = np.sort(scores[pos]), np.sort(scores[~pos])
    grid = np.unique(scores)
    cdf1 = np.searchsorted(s1, grid, side="right") / s1.size
    cdf0 = np.searchsorted(s0, grid, side="right") / s0.size
    gap = float(np.max(np.abs(cdf1 - cdf0)))
    return gap / np.sqrt(2.0) if normalize else gap


def auc(scores, y) -> float:
    """ROC AUC via the rank statistic, ties counted one half."""
    scores = np.asarray(scores, dtype=float).reshape(-1)
    y = np.asarray(y)
    labels = np.unique(y)
    if labels.size < 2:
        raise SingleClass("need both classes to be present")
    pos = y == labels[-1]
    if pos.shape[0] != scores.shape[0]:
        raise DimensionMismatch("scores and y differ in length")
    n1, n0 = int(pos.sum()), int((~pos).sum())
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


@dataclass(frozen=True, eq=False)
class LinearScorer:
    coef: np.ndarray
    intercept: float
    center: np.ndarray
    scale: np.ndarray

    def decision_function(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return ((x - self.center) / self.scale) @ self.coef + self.intercept

    def __call__(self, x) -> np.ndarray:
        return expit(self.decision_function(x))


def linear_scorer(features, y, l2: float = 1e-2, n_iter: int = 500, lr: float = 0.5, seed: int = 0) -> LinearScorer:
    """Ridge-penalized logistic regression by full-batch gradient descent.

    Features are standardized internally; constant columns are left at zero.
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(y)
    labels = np.unique(y)
    if labels.size < 2:
        raise SingleClass("need both classes to be present")
    t = (y == labels[-1]).astype(float)
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    xs = (x - center) / scale
    n, p = xs.shape
    rng = np.random.default_rng(seed)
    w = 0.01 * rng.standard_normal(p)
    b = 0.0
    for _ in range(n_iter):
        r = expit(xs @ w + b) - t
        w -= lr * (xs.T @ r / n + l2 * w)
        b -= lr * r.mean()
    return LinearScorer(w, float(b), center, scale)


def evaluate(features, y, z, l2: float = 1e-2, seed: int = 0, target_tolerance: float | None = None) -> FairnessReport:
    """Train the linear scorer on ``(features, y)`` and score DP-gamma and AUC."""
    scores = linear_scorer(features, y, l2=l2, seed=seed)(features)
    return FairnessReport(
        dp_gamma=dp_gamma(scores, z),
        auc=auc(scores, y),
        n_thresholds=int(np.unique(scores).size + 1),
        target_tolerance=target_tolerance,
    )
