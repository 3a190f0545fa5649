"""Support-recovery benchmark on binary silhouettes.

Point clouds are sampled inside silhouettes, split 70/30, and the held-out
points of every shape are moved onto the L-BW barycenter for each weight
vector of a simplex grid. The union of the transported clouds is splatted
onto the pixel grid, binarized with Otsu's method and compared with a
reference mask by intersection-over-union.

Coordinates are ``(x, y) = (column, row)`` in pixel units; pixel ``(r, c)``
covers ``[c, c + 1) x [r, r + 1)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .bures import BarycenterConfig
from .core import SimplexWeights, barycenter, learn, transport_to_barycenter
from .errors import BothEmpty, DimensionMismatch, EmptyMask
from .gmm import GmmConfig

__all__ = [
    "Silhouette",
    "BenchRecord",
    "sample_silhouette",
    "rasterize",
    "otsu_level",
    "otsu_threshold",
    "support_agreement",
    "pixel_accuracy",
    "run_simplex_sweep",
    "ellipse_silhouette",
]


@dataclass(frozen=True, eq=False)
class Silhouette:
    """Binary shape on a ``height x width`` pixel grid."""

    mask: np.ndarray

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise DimensionMismatch(f"mask must be 2-D, got shape {mask.shape}")
        if not mask.any():
            raise EmptyMask("silhouette has no foreground pixel")
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]


@dataclass(frozen=True)
class BenchRecord:
    k: int
    weights: SimplexWeights
    seed: int
    agreement: float
    pixel_accuracy: float
    train_seconds: float
    transport_seconds: float


def ellipse_silhouette(width: int, height: int, blobs) -> Silhouette:
    """Union of axis-aligned filled ellipses.

    Parameters
    ----------
    width, height : int
    blobs : iterable of (cx, cy, rx, ry)
        Centers and semi-axes in pixel units.
    """
    yy, xx = np.mgrid[0:height, 0:width] + 0.5
    mask = np.zeros((height, width), dtype=bool)
    for cx, cy, rx, ry in blobs:
        mask |= ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    return Silhouette(mask)


def sample_silhouette(s: Silhouette, n: int, seed=None) -> np.ndarray:
    """Draw ``n`` points uniformly inside the foreground.

    A foreground pixel is chosen uniformly and the point is jittered
    uniformly inside it.

    Returns
    -------
    ndarray (n, 2)
        ``(x, y)`` coordinates.
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    rows, cols = np.nonzero(s.mask)
    if rows.size == 0:
        raise EmptyMask("silhouette has no foreground pixel")
    rng = np.random.default_rng(seed)
    pick = rng.integers(0, rows.size, n)
    jitter = rng.random((n, 2))
    return np.column_stack([cols[pick] + jitter[:, 0], rows[pick] + jitter[:, 1]])


def rasterize(points, width: int, height: int, bandwidth: float = 1.5) -> np.ndarray:
    """Gaussian splat of a point cloud onto a ``height x width`` grid.

    Every point adds ``exp(-d^2 / (2 bandwidth^2))`` to each pixel whose
    center lies within ``3 * bandwidth``; the grid is then scaled to a
    maximum of one. Points far outside the grid contribute nothing.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != 2:
        raise DimensionMismatch(f"expected (n, 2) points, got shape {pts.shape}")
    if pts.shape[0] == 0:
        raise ValueError("need at least one point")
    grid = np.zeros((height, width))
    reach = 3.0 * bandwidth
    r = int(np.ceil(reach)) + 1
    offsets = np.arange(-r, r + 1)
    # pixel indices around the pixel containing each point
    base_c = np.floor(pts[:, 0]).astype(int)
    base_r = np.floor(pts[:, 1]).astype(int)
    for dr in offsets:
        rr = base_r + dr
        dy = rr + 0.5 - pts[:, 1]
        for dc in offsets:
            cc = base_c + dc
            dx = cc + 0.5 - pts[:, 0]
            d2 = dx * dx + dy * dy
            keep = (d2 <= reach * reach) & (rr >= 0) & (rr < height) & (cc >= 0) & (cc < width)
            if np.any(keep):
                np.add.at(grid, (rr[keep], cc[keep]), np.exp(-d2[keep] / (2.0 * bandwidth**2)))
    top = grid.max()
    return grid / top if top > 0 else grid


def _otsu_bin(grid: np.ndarray):
    """Histogram bin index of the Otsu split, or None for a constant grid."""
    g = np.asarray(grid, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("grid has non-finite values")
    lo, hi = float(g.min()), float(g.max())
    if hi <= lo:
        return None, lo, hi
    counts, _ = np.histogram(g, bins=256, range=(lo, hi))
    centers = lo + (np.arange(256) + 0.5) * (hi - lo) / 256
    w0 = np.cumsum(counts)[:-1].astype(float)
    w1 = g.size - w0
    s0 = np.cumsum(counts * centers)[:-1]
    s1 = float(np.sum(counts * centers)) - s0
    with np.errstate(invalid="ignore", divide="ignore"):
        between = w0 * w1 * (s0 / w0 - s1 / w1) ** 2
    between = np.where((w0 > 0) & (w1 > 0), between, -np.inf)
    best = between.max()
    # lowest split among (numerically) equal maxima
    t = int(np.flatnonzero(between >= best - 1e-12 * abs(best))[0])
    return t, lo, hi


def otsu_level(grid) -> float:
    """Otsu threshold value: pixels strictly above it are foreground.

    A constant grid has no split and returns ``-inf``.
    """
    t, lo, hi = _otsu_bin(grid)
    if t is None:
        return -np.inf
    return lo + (t + 1) * (hi - lo) / 256


def otsu_threshold(grid) -> np.ndarray:
    """Binarize by maximal between-class variance over a 256-bin histogram.

    Ties between splits go to the lower one; a constant grid is entirely
    foreground.
    """
    g = np.asarray(grid, dtype=float)
    t, lo, hi = _otsu_bin(g)
    if t is None:
        return np.ones(g.shape, dtype=bool)
    # the same binning numpy.histogram uses, with the top edge closed
    idx = np.clip(((g - lo) / (hi - lo) * 256).astype(int), 0, 255)
    return idx > t


def _check_pair(pred, truth):
    pred, truth = np.asarray(pred, dtype=bool), np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    return pred, truth


def support_agreement(pred, truth) -> float:
    """Intersection-over-union of the foregrounds of two masks."""
    pred, truth = _check_pair(pred, truth)
    union = np.count_nonzero(pred | truth)
    if union == 0:
        raise BothEmpty("both masks are empty")
    return np.count_nonzero(pred & truth) / union


def pixel_accuracy(pred, truth) -> float:
    """Fraction of pixels on which the masks agree."""
    pred, truth = _check_pair(pred, truth)
    return float(np.mean(pred == truth))


def _lambda_key(lam) -> tuple:
    return tuple(float(v) for v in np.asarray(lam, dtype=float))


def run_simplex_sweep(
    silhouettes,
    k_grid,
    lambda_grid,
    n_points: int,
    seeds,
    truths=None,
    cfg: GmmConfig = GmmConfig(),
    bary_cfg: BarycenterConfig = BarycenterConfig(),
    bandwidth: float = 1.5,
    train_fraction: float = 0.7,
) -> list[BenchRecord]:
    """Support-recovery sweep over mixture sizes, barycenter weights and seeds.

    Parameters
    ----------
    silhouettes : list of Silhouette
        At least two shapes on grids of equal size.
    k_grid : iterable of int
    lambda_grid : iterable of array-like or SimplexWeights
        Barycenter weights, one entry per silhouette.
    n_points : int
        Points sampled per silhouette before the train/test split.
    seeds : iterable of int
        One sampling, split and EM seed per repetition.
    truths : mapping, optional
        Reference masks for interior weights, keyed by the weight tuple.
        Weights on a vertex are scored against that silhouette; others
        without a reference get ``nan`` agreement.
    cfg : GmmConfig
        EM settings; the seed field is replaced by each sweep seed.
    bandwidth : float
        Splat bandwidth in pixels.

    Returns
    -------
    list of BenchRecord
        Ordered by ``(k, lambda, seed)`` as given.
    """
    shapes = list(silhouettes)
    if len(shapes) < 2:
        raise ValueError("need at least two silhouettes")
    height, width = shapes[0].mask.shape
    if any(s.mask.shape != (height, width) for s in shapes):
        raise DimensionMismatch("silhouettes must share the grid size")
    lambdas = [lam if isinstance(lam, SimplexWeights) else SimplexWeights(lam) for lam in lambda_grid]
    for lam in lambdas:
        if len(lam) != len(shapes):
            raise DimensionMismatch(f"weights {lam.values.tolist()} do not match {len(shapes)} silhouettes")
    seeds = [int(s) for s in seeds]
    truths = {_lambda_key(key): np.asarray(getattr(m, "mask", m), dtype=bool) for key, m in (truths or {}).items()}
    labels = [f"shape{i}" for i in range(len(shapes))]

    splits = {}
    for seed in seeds:
        rngs = np.random.SeedSequence(seed).spawn(len(shapes) + 1)
        perm_rng = np.random.default_rng(rngs[-1])
        train, test = [], []
        for s, ss in zip(shapes, rngs[:-1]):
            pts = sample_silhouette(s, n_points, np.random.default_rng(ss))
            order = perm_rng.permutation(n_points)
            cut = int(round(train_fraction * n_points))
            train.append(pts[order[:cut]])
            test.append(pts[order[cut:]])
        splits[seed] = (train, test)

    records = []
    for k in k_grid:
        models = {}
        for lam in lambdas:
            vertex = lam.one_hot_index()
            truth = shapes[vertex].mask if vertex is not None else truths.get(_lambda_key(lam.values))
            for seed in seeds:
                train, test = splits[seed]
                if seed not in models:
                    t0 = time.perf_counter()
                    model = learn(list(zip(labels, train)), k, replace(cfg, seed=seed))
                    models[seed] = (model, time.perf_counter() - t0)
                model, learn_seconds = models[seed]
                t0 = time.perf_counter()
                bary = barycenter(model, lam, bary_cfg)
                train_seconds = learn_seconds + time.perf_counter() - t0
                t0 = time.perf_counter()
                moved = np.vstack([transport_to_barycenter(model, bary, g, x) for g, x in zip(labels, test)])
                transport_seconds = time.perf_counter() - t0
                if truth is None:
                    agree = acc = float("nan")
                else:
                    pred = otsu_threshold(rasterize(moved, width, height, bandwidth))
                    agree, acc = support_agreement(pred, truth), pixel_accuracy(pred, truth)
                records.append(BenchRecord(int(k), lam, seed, float(agree), float(acc), train_seconds, transport_seconds))
    return records
