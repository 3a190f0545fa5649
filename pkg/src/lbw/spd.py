"""Dense symmetric positive (semi)definite matrix kernel.

Every matrix function here goes through a symmetric eigendecomposition,
which is exact enough for the small covariance matrices (p up to a few
dozen) that mixture components carry.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DegenerateMatrix, DimensionMismatch, NonConvergence, NotPositiveSemidefinite

__all__ = [
    "SpdTolerances",
    "DEFAULT_TOLERANCES",
    "SpdMatrix",
    "as_spd",
    "symmetrize",
    "sym_eig",
    "spd_sqrt",
    "spd_inv_sqrt",
    "random_spd",
]


@dataclass(frozen=True)
class SpdTolerances:
    """Relative tolerances for the SPD invariants.

    ``sym_rel`` scales with the largest absolute entry, ``psd_rel`` with the
    largest eigenvalue magnitude.
    """

    sym_rel: float = 1e-9
    psd_rel: float = 1e-8


DEFAULT_TOLERANCES = SpdTolerances()


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


class SpdMatrix:
    """Symmetric positive semidefinite matrix with a cached eigendecomposition.

    Parameters
    ----------
    entries : array-like (p, p)
        Matrix entries. Copied and made read-only.
    tol : SpdTolerances, optional
        Tolerances used by the symmetry and semidefiniteness checks.

    Raises
    ------
    NotPositiveSemidefinite
        If the matrix is not symmetric within ``tol.sym_rel`` or has an
        eigenvalue below ``-tol.psd_rel * max|eigenvalue|``.
    """

    def __init__(self, entries, tol: SpdTolerances = DEFAULT_TOLERANCES):
        a = np.array(entries, dtype=float)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise DimensionMismatch(f"expected a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NotPositiveSemidefinite("matrix has non-finite entries")
        scale = np.max(np.abs(a))
        if np.max(np.abs(a - a.T)) > tol.sym_rel * scale:
            raise NotPositiveSemidefinite("matrix is not symmetric")
        a.flags.writeable = False
        self.entries = a
        self._eig = None
        w, _ = self.eig
        if w[0] < -tol.psd_rel * max(np.max(np.abs(w)), np.finfo(float).tiny):
            raise NotPositiveSemidefinite(f"minimum eigenvalue {w[0]:.3e} is below the tolerance")

    @classmethod
    def _trusted(cls, entries: np.ndarray, eig=None) -> "SpdMatrix":
        # Outputs of this module are symmetric PSD by construction.
        obj = cls.__new__(cls)
        entries = np.asarray(entries, dtype=float)
        entries.flags.writeable = False
        obj.entries = entries
        obj._eig = eig
        return obj

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def eig(self) -> tuple[np.ndarray, np.ndarray]:
        """Ascending eigenvalues and orthonormal eigenvectors (columns)."""
        if self._eig is None:
            try:
                w, v = np.linalg.eigh(self.entries)
            except np.linalg.LinAlgError as exc:
                raise NonConvergence(f"eigendecomposition failed: {exc}") from exc
            w.flags.writeable = False
            v.flags.writeable = False
            self._eig = (w, v)
        return self._eig

    @cached_property
    def trace(self) -> float:
        return float(np.trace(self.entries))

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.entries if not copy else self.entries.copy()
        return self.entries.astype(dtype)

    def __repr__(self) -> str:
        return f"SpdMatrix({self.entries.tolist()!r})"

    @classmethod
    def identity(cls, p: int) -> "SpdMatrix":
        return cls._trusted(np.eye(p), (np.ones(p), np.eye(p)))


def as_spd(m, tol: SpdTolerances = DEFAULT_TOLERANCES) -> SpdMatrix:
    return m if isinstance(m, SpdMatrix) else SpdMatrix(m, tol)


def sym_eig(m) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(w, V)`` with ``w`` ascending and ``V diag(w) V^T = m``."""
    return as_spd(m).eig


def _from_spectrum(w: np.ndarray, v: np.ndarray) -> SpdMatrix:
    out = symmetrize((v * w) @ v.T)
    return SpdMatrix._trusted(out, (w, v))


def spd_sqrt(m) -> SpdMatrix:
    """Principal square root of an SPD matrix.

    Eigenvalues that are negative within the PSD tolerance are clamped to
    zero before taking roots.
    """
    w, v = sym_eig(m)
    return _from_spectrum(np.sqrt(np.clip(w, 0.0, None)), v)


def spd_inv_sqrt(m, floor: float = 1e-12) -> SpdMatrix:
    """Inverse principal square root with eigenvalue flooring.

    Parameters
    ----------
    m : SpdMatrix or array-like (p, p)
    floor : float
        Eigenvalues below ``floor`` are raised to ``floor`` before inversion.

    Raises
    ------
    DegenerateMatrix
        If every eigenvalue lies below ``floor``.
    """
    if not floor > 0:
        raise ValueError("floor must be positive")
    w, v = sym_eig(m)
    if np.all(w < floor):
        raise DegenerateMatrix(f"all eigenvalues are below the floor {floor:g}")
    w_inv = 1.0 / np.sqrt(np.maximum(w, floor))
    # keep the cached spectrum ascending
    order = np.argsort(w_inv, kind="stable")
    return _from_spectrum(w_inv[order], v[:, order])


def random_spd(p: int, rng: np.random.Generator, eps: float = 0.1) -> np.ndarray:
    """Random SPD matrix ``G G^T + eps I`` with standard normal ``G``."""
    g = rng.standard_normal((p, p))
    return symmetrize(g @ g.T + eps * np.eye(p))
