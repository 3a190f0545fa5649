"""Full-covariance Gaussian mixtures fitted by expectation-maximization."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import logsumexp

from .bures import GaussianParams
from .errors import DegenerateMatrix, DimensionMismatch, EmptyComponent, InsufficientData, NonFiniteInput
from .spd import SpdMatrix, symmetrize

__all__ = [
    "GmmConfig",
    "GaussianComponent",
    "GmmModel",
    "fit_em",
    "responsibilities",
    "hard_assign",
    "n_parameters",
    "aic",
    "select_k",
]

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)
MAX_RESEEDS = 3
LL_SLACK = 1e-10


@dataclass(frozen=True)
class GmmConfig:
    reg: float = 1e-6
    max_iter: int = 300
    ll_tol: float = 1e-7
    seed: int = 0
    n_init: int = 4
    # training log-density percentile below which a query point is flagged
    outlier_percentile: float = 1.0


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    weight: float
    params: GaussianParams

    @property
    def mean(self) -> np.ndarray:
        return self.params.mean

    @property
    def cov(self) -> SpdMatrix:
        return self.params.cov


@dataclass(frozen=True, eq=False)
class GmmModel:
    """A fitted k-component mixture.

    ``ll_history`` holds the training log-likelihood after every E-step and
    ``reseed_steps`` the history indices at which a starving component was
    re-seeded (EM monotonicity does not hold across those steps).
    """

    components: tuple[GaussianComponent, ...]
    reg: float = 1e-6
    seed: int = 0
    final_log_likelihood: float = float("nan")
    n_iter: int = 0
    converged: bool = True
    ll_history: tuple[float, ...] = field(default=(), repr=False)
    reseed_steps: tuple[int, ...] = field(default=(), repr=False)
    density_floor: float | None = None

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a mixture needs at least one component")
        dims = {c.params.dim for c in comps}
        if len(dims) != 1:
            raise DimensionMismatch(f"components disagree on dimension: {sorted(dims)}")
        w = np.array([c.weight for c in comps])
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must lie on the simplex")
        object.__setattr__(self, "components", comps)

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].params.dim

    @cached_property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @cached_property
    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    @cached_property
    def covariances(self) -> np.ndarray:
        return np.stack([c.cov.entries for c in self.components])

    @cached_property
    def _cholesky(self) -> list[np.ndarray]:
        return [_chol(c) for c in self.covariances]

    def weighted_log_density(self, x) -> np.ndarray:
        """``log pi_j + log phi(x; m_j, S_j)`` as an ``(n, k)`` array."""
        x = _as_points(x, self.dim)
        return np.log(self.weights) + _component_log_pdf(x, self.means, self._cholesky)

    def score_samples(self, x) -> np.ndarray:
        """Mixture log-density at each row of ``x``."""
        return logsumexp(self.weighted_log_density(x), axis=1)

    def log_likelihood(self, x) -> float:
        return float(np.sum(self.score_samples(x)))

    def low_density(self, x) -> np.ndarray:
        """Flag points whose log-density falls below the training percentile."""
        if self.density_floor is None:
            return np.zeros(_as_points(x, self.dim).shape[0], dtype=bool)
        return self.score_samples(x) < self.density_floor

    def responsibilities(self, x):
        return responsibilities(self, x)

    def hard_assign(self, x):
        return hard_assign(self, x)


def _as_points(x, dim: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :] if dim is not None and x.shape[0] == dim else x[:, None]
    if x.ndim != 2:
        raise DimensionMismatch(f"expected a point or an (n, p) batch, got shape {x.shape}")
    if dim is not None and x.shape[1] != dim:
        raise DimensionMismatch(f"expected dimension {dim}, got {x.shape[1]}")
    return x


def _chol(cov: np.ndarray) -> np.ndarray:
    try:
        return cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise DegenerateMatrix(f"covariance is not positive definite: {exc}") from exc


def _component_log_pdf(x: np.ndarray, means: np.ndarray, chols: list[np.ndarray]) -> np.ndarray:
    n, p = x.shape
    out = np.empty((n, len(chols)))
    for j, (m, l) in enumerate(zip(means, chols)):
        z = solve_triangular(l, (x - m).T, lower=True)
        log_det = 2.0 * np.sum(np.log(np.diag(l)))
        out[:, j] = -0.5 * (p * _LOG_2PI + log_det + np.sum(z * z, axis=0))
    return out


def responsibilities(model: GmmModel, x) -> np.ndarray:
    """Posterior component probabilities, shape ``(k,)`` for one point or ``(n, k)``."""
    single = np.ndim(x) == 1
    lw = model.weighted_log_density(x)
    r = np.exp(lw - logsumexp(lw, axis=1, keepdims=True))
    return r[0] if single else r


def hard_assign(model: GmmModel, x):
    """Index of the most responsible component; ties go to the lowest index."""
    single = np.ndim(x) == 1
    idx = np.argmax(model.weighted_log_density(x), axis=1)
    return int(idx[0]) if single else idx


def n_parameters(k: int, p: int) -> int:
    return k * (p + p * (p + 1) // 2) + (k - 1)


def aic(model: GmmModel, data) -> float:
    """Akaike information criterion ``2 n_params - 2 log L``."""
    data = _as_points(data, model.dim)
    return 2.0 * n_parameters(model.k, model.dim) - 2.0 * model.log_likelihood(data)


def select_k(data, k_grid, cfg: GmmConfig = GmmConfig()):
    """Fit one mixture per ``k`` and return ``(best_k, [(k, aic), ...])``.

    Ties go to the first ``k`` of the grid.
    """
    k_grid = list(k_grid)
    if not k_grid:
        raise ValueError("k_grid is empty")
    data = _as_points(data)
    sweep = [(k, aic(fit_em(data, k, cfg), data)) for k in k_grid]
    best_k = min(sweep, key=lambda kv: kv[1])[0]
    return best_k, sweep


def _kmeanspp(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    centers = [data[rng.integers(n)]]
    d2 = np.sum((data - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(data[idx])
        d2 = np.minimum(d2, np.sum((data - data[idx]) ** 2, axis=1))
    return np.stack(centers)


@dataclass
class _EmRun:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    history: list[float]
    reseeds: list[int]
    n_iter: int
    converged: bool


def _e_step(data, weights, means, covs):
    chols = [_chol(c) for c in covs]
    lw = np.log(weights) + _component_log_pdf(data, means, chols)
    log_norm = logsumexp(lw, axis=1)
    return lw - log_norm[:, None], log_norm


def _run_em(data: np.ndarray, k: int, cfg: GmmConfig, rng: np.random.Generator) -> _EmRun:
    n, p = data.shape
    reg_eye = cfg.reg * np.eye(p)
    centered = data - data.mean(axis=0)
    global_cov = symmetrize(centered.T @ centered / n) + reg_eye

    weights = np.full(k, 1.0 / k)
    means = _kmeanspp(data, k, rng)
    covs = np.repeat(global_cov[None], k, axis=0)

    log_resp, log_norm = _e_step(data, weights, means, covs)
    ll = float(np.sum(log_norm))
    history, reseeds = [ll], []
    converged = False
    it = 0
    while it < cfg.max_iter:
        it += 1
        resp = np.exp(log_resp)
        nk = resp.sum(axis=0)
        starving = np.flatnonzero(nk < 1e-10 * n)
        if starving.size:
            if len(reseeds) >= MAX_RESEEDS:
                raise EmptyComponent(f"component(s) {starving.tolist()} starved after {MAX_RESEEDS} re-seeds")
            # one worst-explained point per starving component
            worst = np.argsort(log_norm, kind="stable")
            for j, idx in zip(starving, worst):
                resp[:, j] = 0.0
                resp[idx, :] = 0.0
                resp[idx, j] = 1.0
            nk = resp.sum(axis=0)
            logger.debug("re-seeded components %s at EM step %d", starving.tolist(), it)
        new_weights = nk / n
        new_means = (resp.T @ data) / nk[:, None]
        new_covs = np.empty_like(covs)
        for j in range(k):
            if j in starving:
                new_covs[j] = global_cov
                continue
            diff = data - new_means[j]
            new_covs[j] = symmetrize((resp[:, j] * diff.T) @ diff / nk[j]) + reg_eye
        new_log_resp, new_log_norm = _e_step(data, new_weights, new_means, new_covs)
        new_ll = float(np.sum(new_log_norm))
        if new_ll < ll - LL_SLACK and not starving.size:
            # the reg shift can undo a sub-round-off ascent step; stop at the previous iterate
            logger.debug("EM step %d lowered the log-likelihood by %.3e; stopping", it, ll - new_ll)
            converged = True
            break
        if starving.size:
            reseeds.append(len(history))
        weights, means, covs = new_weights, new_means, new_covs
        log_resp, log_norm = new_log_resp, new_log_norm
        history.append(new_ll)
        change = abs(new_ll - ll)
        ll = new_ll
        if change <= cfg.ll_tol * abs(ll) and not starving.size:
            converged = True
            break
    return _EmRun(weights, means, covs, history, reseeds, it, converged)


def fit_em(data, k: int, cfg: GmmConfig = GmmConfig()) -> GmmModel:
    """Fit a full-covariance Gaussian mixture by EM.

    Means are seeded k-means++ style from the data, covariances start at the
    global covariance and weights start uniform. ``cfg.reg * I`` is added to
    every covariance after each M-step. A component whose responsibility
    mass drops below ``1e-10 * n`` is re-seeded at the lowest-density point;
    after three re-seeds ``EmptyComponent`` is raised. The best of
    ``cfg.n_init`` restarts by final log-likelihood is returned, ties going
    to the earliest restart.

    Parameters
    ----------
    data : array-like (n, p)
    k : int
        Number of components, ``1 <= k <= n``.
    cfg : GmmConfig

    Returns
    -------
    GmmModel
    """
    data = _as_points(data)
    n, p = data.shape
    if not np.all(np.isfinite(data)):
        raise NonFiniteInput("data contains non-finite values")
    if k < 1:
        raise ValueError("k must be positive")
    if n < k:
        raise InsufficientData(f"{n} samples cannot support {k} components")

    best = None
    for child in np.random.SeedSequence(cfg.seed).spawn(max(cfg.n_init, 1)):
        run = _run_em(data, k, cfg, np.random.default_rng(child))
        if best is None or run.history[-1] > best.history[-1]:
            best = run
    if not best.converged:
        logger.info("EM stopped at max_iter=%d before reaching ll_tol", cfg.max_iter)

    components = tuple(
        GaussianComponent(float(w), GaussianParams(m, SpdMatrix._trusted(c.copy())))
        for w, m, c in zip(best.weights, best.means, best.covs)
    )
    model = GmmModel(
        components,
        reg=cfg.reg,
        seed=cfg.seed,
        final_log_likelihood=best.history[-1],
        n_iter=best.n_iter,
        converged=best.converged,
        ll_history=tuple(best.history),
        reseed_steps=tuple(best.reseeds),
    )
    floor = float(np.percentile(model.score_samples(data), cfg.outlier_percentile))
    return replace(model, density_floor=floor)
