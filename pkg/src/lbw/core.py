"""Local Bures-Wasserstein (L-BW) transport between point-cloud distributions.

Each group is summarized by a k-component Gaussian mixture. Components of
every group are matched to those of a reference group by linear assignment
on their means, and a sample is moved by the closed-form Gaussian map of the
matched pair containing its most responsible component. Barycenters are
built pairwise (tuple-wise for more than two groups) from the matched
components.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .assignment import MatchMatrix, hungarian, mean_cost_matrix
from .bures import AffineMap, BarycenterConfig, BarycenterSolveReport, GaussianParams, bw_barycenter, monge_map
from .errors import DimensionMismatch, ProvenanceMismatch, UnknownGroup
from .gmm import GaussianComponent, GmmConfig, GmmModel, fit_em

__all__ = [
    "SimplexWeights",
    "LbwModel",
    "BarycenterModel",
    "learn",
    "transport",
    "barycenter",
    "barycenter_weights",
    "transport_to_barycenter",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SimplexWeights:
    values: np.ndarray

    def __post_init__(self):
        lam = np.array(self.values, dtype=float).reshape(-1)
        if lam.size == 0 or np.any(lam < 0) or abs(lam.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights {lam.tolist()} are not on the probability simplex")
        lam.flags.writeable = False
        object.__setattr__(self, "values", lam)

    def __len__(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def one_hot_index(self) -> int | None:
        """Index of the vertex this point sits on, if any."""
        nz = np.flatnonzero(self.values)
        return int(nz[0]) if nz.size == 1 else None


def _as_weights(weights, s: int) -> SimplexWeights:
    lam = weights if isinstance(weights, SimplexWeights) else SimplexWeights(weights)
    if len(lam) != s:
        raise DimensionMismatch(f"expected {s} barycenter weights, got {len(lam)}")
    return lam


@dataclass(frozen=True, eq=False)
class LbwModel:
    """Per-group mixtures plus matchings against the reference group (index 0).

    ``matchings[g].pairs`` maps reference components to components of group
    ``g``; ``matchings[0]`` is the identity.
    """

    groups: tuple[str, ...]
    gmms: tuple[GmmModel, ...]
    matchings: tuple[MatchMatrix, ...]
    gmm_config: GmmConfig | None = None
    _maps: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        groups = tuple(str(g) for g in self.groups)
        gmms, matchings = tuple(self.gmms), tuple(self.matchings)
        if len(set(groups)) != len(groups):
            raise ValueError(f"duplicate group labels in {groups}")
        if not (len(groups) == len(gmms) == len(matchings)) or len(groups) < 1:
            raise ValueError("groups, mixtures and matchings must have equal, nonzero length")
        if len({m.k for m in gmms}) != 1 or len({m.dim for m in gmms}) != 1:
            raise DimensionMismatch("all group mixtures must share k and dimension")
        k = gmms[0].k
        if any(m.k != k for m in matchings):
            raise DimensionMismatch("matchings must have size k")
        if matchings[0].pairs != MatchMatrix.identity(k).pairs:
            raise ValueError("the reference matching must be the identity")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "gmms", gmms)
        object.__setattr__(self, "matchings", matchings)

    @property
    def k(self) -> int:
        return self.gmms[0].k

    @property
    def dim(self) -> int:
        return self.gmms[0].dim

    def index(self, group) -> int:
        try:
            return self.groups.index(str(group))
        except ValueError:
            raise UnknownGroup(f"unknown group {group!r}; known groups are {list(self.groups)}") from None

    def partner(self, src: int, dst: int, i: int) -> int:
        """Component of group ``dst`` matched to component ``i`` of group ``src``."""
        ref = self.matchings[src].backward[i]
        return int(self.matchings[dst].forward[ref])

    def tuples(self) -> list[tuple[int, ...]]:
        """Matched component indices, one tuple per reference component."""
        fwd = [m.forward for m in self.matchings]
        return [tuple(int(f[h]) for f in fwd) for h in range(self.k)]

    @cached_property
    def digest(self) -> str:
        """Fingerprint of every fitted parameter and matching."""
        h = hashlib.sha256()
        for label, gmm, match in zip(self.groups, self.gmms, self.matchings):
            h.update(label.encode())
            for arr in (gmm.weights, gmm.means, gmm.covariances):
                h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            h.update(np.asarray(match.forward, dtype="<i8").tobytes())
        return h.hexdigest()

    def pair_map(self, src: int, dst: int, i: int, floor: float = 1e-12) -> AffineMap:
        key = (src, dst, i, floor)
        if key not in self._maps:
            j = self.partner(src, dst, i)
            self._maps[key] = monge_map(self.gmms[src].components[i].params, self.gmms[dst].components[j].params, floor)
        return self._maps[key]


@dataclass(frozen=True, eq=False)
class BarycenterModel:
    """Mixture approximating the Wasserstein barycenter of the groups.

    ``provenance[h]`` lists ``(group, component)`` for every group, in group
    order; ``source_digest`` ties the barycenter to the model it came from.
    """

    groups: tuple[str, ...]
    weights: SimplexWeights
    components: tuple[GaussianComponent, ...]
    provenance: tuple[tuple[tuple[str, int], ...], ...]
    solve_reports: tuple[BarycenterSolveReport, ...]
    source_digest: str

    def __post_init__(self):
        pi = np.array([c.weight for c in self.components])
        if abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError("barycenter mixture weights must sum to one")
        for h, prov in enumerate(self.provenance):
            if tuple(g for g, _ in prov) != tuple(self.groups):
                raise ValueError(f"provenance of component {h} does not cover every group once")

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    @property
    def covariances(self) -> np.ndarray:
        return np.stack([c.cov.entries for c in self.components])

    @property
    def mixture_weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    def component_for(self, group_index: int, i: int) -> int:
        for h, prov in enumerate(self.provenance):
            if prov[group_index][1] == i:
                return h
        raise ProvenanceMismatch(f"no barycenter component built from component {i} of group {group_index}")


def _fit_one(args):
    data, k, cfg = args
    return fit_em(data, k, cfg)


def learn(datasets, k: int, cfg: GmmConfig = GmmConfig(), reference=None, n_jobs: int = 1) -> LbwModel:
    """Fit per-group mixtures and match every group to the reference group.

    Parameters
    ----------
    datasets : sequence of (label, array (n_g, p)) or mapping label -> array
        At least two groups of equal dimension.
    k : int
        Components per group.
    cfg : GmmConfig
        EM settings, shared by every group (same seed).
    reference : label, optional
        Reference group; defaults to the first dataset. It is moved to
        index 0 of the model.
    n_jobs : int
        Worker threads for the per-group fits. Results do not depend on it.

    Returns
    -------
    LbwModel
    """
    items = list(datasets.items()) if hasattr(datasets, "items") else list(datasets)
    if len(items) < 2:
        raise ValueError(f"need at least two groups, got {len(items)}")
    labels = [str(label) for label, _ in items]
    arrays = [np.atleast_2d(np.asarray(x, dtype=float)) for _, x in items]
    if len({a.shape[1] for a in arrays}) != 1:
        raise DimensionMismatch("all groups must share the feature dimension")
    if reference is not None:
        if str(reference) not in labels:
            raise UnknownGroup(f"unknown reference group {reference!r}")
        r = labels.index(str(reference))
        labels.insert(0, labels.pop(r))
        arrays.insert(0, arrays.pop(r))

    jobs = [(a, k, cfg) for a in arrays]
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            gmms = list(pool.map(_fit_one, jobs))
    else:
        gmms = [_fit_one(j) for j in jobs]

    ref_means = gmms[0].means
    matchings = [MatchMatrix.identity(k)]
    for g in gmms[1:]:
        matchings.append(hungarian(mean_cost_matrix(ref_means, g.means)))
    return LbwModel(tuple(labels), tuple(gmms), tuple(matchings), cfg)


def _points(x, dim: int):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.ndim != 2 or x2.shape[1] != dim:
        raise DimensionMismatch(f"expected points of dimension {dim}, got shape {x.shape}")
    return x2, single


def transport(model: LbwModel, from_group, to_group, x, floor: float = 1e-12, return_flags: bool = False):
    """Approximate transport map between two groups.

    Each point is assigned to its most responsible component ``i`` of the
    source mixture and moved by the Gaussian Monge map from that component
    to its matched partner in the target group. Between two non-reference
    groups the partner is found through the reference matching.

    Parameters
    ----------
    model : LbwModel
    from_group, to_group : group labels
    x : array-like (p,) or (n, p)
    floor : float
        Eigenvalue floor for the source covariance inversion.
    return_flags : bool
        Also return a boolean array marking points whose log-density under
        the source mixture is below its training percentile.
    """
    src, dst = model.index(from_group), model.index(to_group)
    pts, single = _points(x, model.dim)
    assign = model.gmms[src].hard_assign(pts)
    out = np.empty_like(pts)
    for i in np.unique(assign):
        rows = assign == i
        out[rows] = model.pair_map(src, dst, int(i), floor)(pts[rows])
    result = out[0] if single else out
    if return_flags:
        flags = model.gmms[src].low_density(pts)
        return result, (bool(flags[0]) if single else flags)
    return result


def barycenter_weights(model: LbwModel, weights) -> np.ndarray:
    """Mixture weights of the barycenter: lambda-average of matched weights, renormalized."""
    lam = _as_weights(weights, len(model.groups)).values
    pi = np.array([sum(lam[g] * model.gmms[g].weights[c] for g, c in enumerate(t)) for t in model.tuples()])
    return pi / pi.sum()


def barycenter(model: LbwModel, weights, cfg: BarycenterConfig = BarycenterConfig()) -> BarycenterModel:
    """Approximate Wasserstein barycenter of the groups.

    For every matched tuple (one component per group) the barycenter
    component has mean ``sum_g lambda_g m_g`` and the Bures-Wasserstein
    barycenter of the tuple's covariances.

    Returns
    -------
    BarycenterModel
        k components, their provenance and one solve report per component.
    """
    lam = _as_weights(weights, len(model.groups))
    pi = barycenter_weights(model, lam)
    components, provenance, reports = [], [], []
    for h, t in enumerate(model.tuples()):
        inputs = [model.gmms[g].components[c].params for g, c in enumerate(t)]
        params, report = bw_barycenter(inputs, lam.values, cfg)
        components.append(GaussianComponent(float(pi[h]), params))
        provenance.append(tuple((model.groups[g], c) for g, c in enumerate(t)))
        reports.append(report)
    return BarycenterModel(model.groups, lam, tuple(components), tuple(provenance), tuple(reports), model.digest)


def check_provenance(model: LbwModel, bary: BarycenterModel) -> None:
    if bary.groups != model.groups or bary.source_digest != model.digest:
        raise ProvenanceMismatch("barycenter was not built from this model")
    expected = [tuple((model.groups[g], c) for g, c in enumerate(t)) for t in model.tuples()]
    if [tuple(p) for p in bary.provenance] != expected:
        raise ProvenanceMismatch("barycenter provenance disagrees with the model matchings")


def transport_to_barycenter(model: LbwModel, bary: BarycenterModel, group, x, floor: float = 1e-12):
    """Move samples of ``group`` onto the barycenter mixture.

    A point assigned to component ``i`` of its group is mapped by the Gaussian
    Monge map from that component to the barycenter component built from it.

    Raises
    ------
    ProvenanceMismatch
        If ``bary`` was not produced from ``model``.
    """
    check_provenance(model, bary)
    g = model.index(group)
    pts, single = _points(x, model.dim)
    assign = model.gmms[g].hard_assign(pts)
    out = np.empty_like(pts)
    for i in np.unique(assign):
        i = int(i)
        h = bary.component_for(g, i)
        t = monge_map(model.gmms[g].components[i].params, bary.components[h].params, floor)
        rows = assign == i
        out[rows] = t(pts[rows])
    return out[0] if single else out
