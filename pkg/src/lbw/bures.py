"""Closed-form optimal transport between Gaussian measures.

The squared 2-Wasserstein (Bures-Wasserstein) distance, the affine Monge
map between two Gaussians and the fixed-point barycenter of covariance
matrices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .spd import SpdMatrix, as_spd, spd_inv_sqrt, spd_sqrt, symmetrize

__all__ = [
    "GaussianParams",
    "AffineMap",
    "BarycenterConfig",
    "BarycenterSolveReport",
    "bw_distance_sq",
    "monge_map",
    "apply_map",
    "bw_barycenter",
    "fixed_point_defect",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GaussianParams:
    mean: np.ndarray
    cov: SpdMatrix

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        mean.flags.writeable = False
        cov = as_spd(self.cov)
        if mean.shape[0] != cov.dim:
            raise DimensionMismatch(f"mean has length {mean.shape[0]} but covariance is {cov.dim}x{cov.dim}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``x -> offset_target + linear @ (x - offset_source)``."""

    linear: np.ndarray
    offset_source: np.ndarray
    offset_target: np.ndarray

    @property
    def dim(self) -> int:
        return self.offset_source.shape[0]

    def __call__(self, x):
        return apply_map(self, x)


@dataclass(frozen=True)
class BarycenterConfig:
    max_iter: int = 200
    tol: float = 1e-9
    init: str = "euclidean"  # or "identity"
    floor: float = 1e-12


@dataclass
class BarycenterSolveReport:
    iterations: int
    residual: float
    converged: bool
    history: list[float] = field(default_factory=list, repr=False)


def _check_dims(a: GaussianParams, b: GaussianParams) -> None:
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimension {a.dim} != {b.dim}")


def _cross_root(root_a: SpdMatrix, b: SpdMatrix) -> SpdMatrix:
    """``(A^{1/2} B A^{1/2})^{1/2}`` given ``A^{1/2}``."""
    r = root_a.entries
    return spd_sqrt(SpdMatrix._trusted(symmetrize(r @ b.entries @ r)))


def bw_distance_sq(a: GaussianParams, b: GaussianParams) -> float:
    r"""Squared Bures-Wasserstein distance between two Gaussians.

    .. math::
        \|m_a - m_b\|^2 + \mathrm{Tr}(\Sigma_a + \Sigma_b)
        - 2\,\mathrm{Tr}\big[(\Sigma_a^{1/2}\Sigma_b\Sigma_a^{1/2})^{1/2}\big]

    The result is clamped at zero to absorb round-off.
    """
    _check_dims(a, b)
    diff = a.mean - b.mean
    cross = _cross_root(spd_sqrt(a.cov), b.cov)
    # trace of the root is the sum of its (clamped) eigenvalues
    d = float(diff @ diff) + a.cov.trace + b.cov.trace - 2.0 * float(np.sum(cross.eig[0]))
    return max(d, 0.0)


def monge_map(a: GaussianParams, b: GaussianParams, floor: float = 1e-12) -> AffineMap:
    r"""Optimal transport map pushing ``N(m_a, Sigma_a)`` onto ``N(m_b, Sigma_b)``.

    Parameters
    ----------
    a, b : GaussianParams
        Source and target Gaussians of equal dimension.
    floor : float
        Eigenvalue floor applied when inverting ``Sigma_a^{1/2}``.

    Returns
    -------
    AffineMap
        With symmetric linear part
        ``Sigma_a^{-1/2} (Sigma_a^{1/2} Sigma_b Sigma_a^{1/2})^{1/2} Sigma_a^{-1/2}``.

    Raises
    ------
    DegenerateMatrix
        If ``Sigma_a`` collapses under the floor.
    """
    _check_dims(a, b)
    inv_root = spd_inv_sqrt(a.cov, floor).entries
    cross = _cross_root(spd_sqrt(a.cov), b.cov).entries
    linear = symmetrize(inv_root @ cross @ inv_root)
    linear.flags.writeable = False
    return AffineMap(linear, a.mean, b.mean)


def apply_map(t: AffineMap, x) -> np.ndarray:
    """Evaluate ``t`` at a point of shape ``(p,)`` or a batch ``(n, p)``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != t.dim or x.ndim > 2:
        raise DimensionMismatch(f"expected points of dimension {t.dim}, got shape {x.shape}")
    d = x - t.offset_source
    # elementwise accumulation in a fixed order: each row's result does not
    # depend on how many rows are mapped together (BLAS blocking can differ by an ulp)
    out = d[..., 0, None] * t.linear[:, 0]
    for j in range(1, t.dim):
        out += d[..., j, None] * t.linear[:, j]
    return t.offset_target + out


def _root_average(cov: SpdMatrix, covs: list[SpdMatrix], weights) -> np.ndarray:
    """``sum_i w_i (S^{1/2} S_i S^{1/2})^{1/2}``."""
    root = spd_sqrt(cov)
    return sum(w * _cross_root(root, c).entries for w, c in zip(weights, covs))


def fixed_point_defect(cov, covs, weights) -> float:
    """Frobenius norm of ``S - sum_i w_i (S^{1/2} S_i S^{1/2})^{1/2}``."""
    cov = as_spd(cov)
    covs = [as_spd(c) for c in covs]
    return float(np.linalg.norm(cov.entries - _root_average(cov, covs, weights)))


def _check_simplex(weights: np.ndarray, n: int) -> None:
    if weights.shape != (n,):
        raise DimensionMismatch(f"expected {n} weights, got shape {weights.shape}")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("weights must lie on the probability simplex")


def bw_barycenter(inputs: list[GaussianParams], weights, cfg: BarycenterConfig = BarycenterConfig()):
    """Wasserstein barycenter of Gaussians.

    The mean is the weighted average of the input means. The covariance is
    found by the fixed-point iteration ``S <- T S T`` with
    ``T = sum_i w_i T_{S -> S_i}``, the average of the Monge maps from the
    current iterate to each input covariance.

    Parameters
    ----------
    inputs : list of GaussianParams
    weights : array-like (l,)
        Point of the probability simplex.
    cfg : BarycenterConfig
        ``tol`` bounds the relative iterate change and the relative
        fixed-point defect; iteration stops at whichever is reached first,
        or after ``max_iter`` steps.

    Returns
    -------
    barycenter : GaussianParams
    report : BarycenterSolveReport
        ``residual`` is the relative fixed-point defect
        ``||S - sum_i w_i (S^{1/2} S_i S^{1/2})^{1/2}||_F / ||S||_F``.
    """
    if len(inputs) == 0:
        raise ValueError("need at least one Gaussian")
    p = inputs[0].dim
    for g in inputs[1:]:
        _check_dims(inputs[0], g)
    weights = np.asarray(weights, dtype=float)
    _check_simplex(weights, len(inputs))

    mean = np.zeros(p)
    for w, g in zip(weights, inputs):
        mean = mean + w * g.mean
    covs = [g.cov for g in inputs]

    if len(inputs) == 1:
        return GaussianParams(mean, covs[0]), BarycenterSolveReport(0, 0.0, True)

    for c in covs:
        spd_inv_sqrt(c, cfg.floor)  # raises DegenerateMatrix on a collapsed input

    if cfg.init == "euclidean":
        cov = SpdMatrix._trusted(symmetrize(sum(w * c.entries for w, c in zip(weights, covs))))
    elif cfg.init == "identity":
        cov = SpdMatrix.identity(p)
    else:
        raise ValueError(f"unknown init {cfg.init!r}")

    mix = _root_average(cov, covs, weights)
    residual = float(np.linalg.norm(cov.entries - mix) / np.linalg.norm(cov.entries))
    history = [residual]
    iterations = 0
    while residual > cfg.tol and iterations < cfg.max_iter:
        inv_root = spd_inv_sqrt(cov, cfg.floor).entries
        t = symmetrize(inv_root @ mix @ inv_root)
        new = symmetrize(t @ cov.entries @ t)
        change = np.linalg.norm(new - cov.entries) / np.linalg.norm(cov.entries)
        cov = SpdMatrix._trusted(new)
        iterations += 1
        mix = _root_average(cov, covs, weights)
        residual = float(np.linalg.norm(cov.entries - mix) / np.linalg.norm(cov.entries))
        history.append(residual)
        if change <= cfg.tol:
            break

    report = BarycenterSolveReport(iterations, residual, residual <= cfg.tol, history)
    _monitor(report)
    return GaussianParams(mean, cov), report


def _monitor(report: BarycenterSolveReport) -> None:
    tail = np.asarray(report.history[-11:])
    # ignore wiggles at the round-off floor
    rising = np.diff(tail) > 1e-13 + 1e-6 * tail[:-1]
    if np.any(rising):
        logger.warning("barycenter residual increased during the final iterations: %s", tail.tolist())
    if not report.converged:
        logger.warning(
            "barycenter fixed point not reached after %d iterations (residual %.3e)",
            report.iterations,
            report.residual,
        )
