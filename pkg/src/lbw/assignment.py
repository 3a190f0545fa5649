"""Linear assignment between mixture components.

``hungarian`` is the shortest-augmenting-path form of the Hungarian
algorithm with row/column potentials, O(k^3), vectorized over columns.
Among optimal assignments it returns the lexicographically smallest one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CountMismatch, DimensionMismatch, NonFiniteCost

__all__ = ["MatchMatrix", "mean_cost_matrix", "hungarian", "assignment_cost"]


@dataclass(frozen=True)
class MatchMatrix:
    """A perfect matching ``pairs[i] = (i, j)`` between two k-sets."""

    k: int
    pairs: tuple[tuple[int, int], ...]
    total_cost: float

    def __post_init__(self):
        pairs = tuple((int(i), int(j)) for i, j in self.pairs)
        rows = sorted(i for i, _ in pairs)
        cols = sorted(j for _, j in pairs)
        if rows != list(range(self.k)) or cols != list(range(self.k)):
            raise ValueError(f"pairs {pairs} are not a permutation of size {self.k}")
        object.__setattr__(self, "pairs", tuple(sorted(pairs)))

    @classmethod
    def identity(cls, k: int) -> "MatchMatrix":
        return cls(k, tuple((i, i) for i in range(k)), 0.0)

    @property
    def forward(self) -> np.ndarray:
        """``forward[i]`` is the column matched to row ``i``."""
        return np.array([j for _, j in self.pairs], dtype=int)

    @property
    def backward(self) -> np.ndarray:
        """``backward[j]`` is the row matched to column ``j``."""
        out = np.empty(self.k, dtype=int)
        out[self.forward] = np.arange(self.k)
        return out

    def as_matrix(self) -> np.ndarray:
        a = np.zeros((self.k, self.k))
        a[np.arange(self.k), self.forward] = 1.0
        return a


def mean_cost_matrix(means_a, means_b) -> np.ndarray:
    """Squared Euclidean distances ``C[i, j] = ||a_i - b_j||^2``."""
    a = np.atleast_2d(np.asarray(means_a, dtype=float))
    b = np.atleast_2d(np.asarray(means_b, dtype=float))
    if a.shape[0] != b.shape[0]:
        raise CountMismatch(f"{a.shape[0]} means vs {b.shape[0]} means")
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"dimension {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def assignment_cost(cost: np.ndarray, cols) -> float:
    """Exactly rounded total cost of the assignment ``row i -> cols[i]``."""
    return math.fsum(cost[i, j] for i, j in enumerate(cols))


def _solve(cost: np.ndarray):
    """Shortest augmenting path with potentials (1-based sentinel column 0)."""
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[j]: row assigned to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=int)
    c = np.zeros((n + 1, n + 1))
    c[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = c[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    cols = np.empty(n, dtype=int)
    cols[p[1:] - 1] = np.arange(n)
    return cols, u[1:], v[1:]


def _lex_smallest(cost: np.ndarray, cols: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Walk rows in order, moving each to the smallest column that keeps the optimum."""
    n = cost.shape[0]
    scale = max(1.0, float(np.max(np.abs(cost))))
    tight = np.abs(cost - u[:, None] - v[None, :]) <= 1e-9 * scale * n
    best = assignment_cost(cost, cols)
    cols = cols.copy()
    for i in range(n):
        for j in np.flatnonzero(tight[i]):
            if j >= cols[i]:
                break
            trial = _reroute(tight, cols, i, j)
            if trial is not None and assignment_cost(cost, trial) <= best:
                cols = trial
                best = assignment_cost(cost, cols)
                break
    return cols


def _reroute(tight: np.ndarray, cols: np.ndarray, i: int, j: int):
    """Give column ``j`` to row ``i`` by an alternating path over rows > i."""
    n = len(cols)
    owner = np.empty(n, dtype=int)
    owner[cols] = np.arange(n)
    start = owner[j]
    if start < i:
        return None
    target = cols[i]
    # BFS from the displaced row; parent[r] = (row taking r's old column, that column)
    parent = {start: None}
    queue = [start]
    while queue:
        r = queue.pop(0)
        for col in np.flatnonzero(tight[r]):
            if col == j:
                continue
            if col == target:
                trial = cols.copy()
                trial[i] = j
                row, new_col = r, col
                while row is not None:
                    trial[row] = new_col
                    link = parent[row]
                    if link is None:
                        break
                    row, new_col = link
                return trial
            nxt = owner[col]
            if nxt > i and nxt not in parent:
                parent[nxt] = (r, col)
                queue.append(nxt)
    return None


def hungarian(cost) -> "MatchMatrix":
    """Minimum-cost perfect matching of a square cost matrix.

    Parameters
    ----------
    cost : array-like (k, k)
        Finite costs.

    Returns
    -------
    MatchMatrix
        Optimal pairs; among equal-cost optima the lexicographically smallest
        pair list. ``total_cost`` is the exactly rounded sum of matched costs.

    Raises
    ------
    NonFiniteCost
        If any entry is NaN or infinite.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1] or cost.shape[0] == 0:
        raise DimensionMismatch(f"expected a non-empty square cost matrix, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise NonFiniteCost("cost matrix has non-finite entries")
    k = cost.shape[0]
    cols, u, v = _solve(cost)
    cols = _lex_smallest(cost, cols, u, v)
    return MatchMatrix(k, tuple(zip(range(k), cols.tolist())), assignment_cost(cost, cols))
