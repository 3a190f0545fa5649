"""File formats: CSV point tables, JSON model files and binary masks.

Floats are written with Python's shortest round-trip ``repr`` (at most 17
significant digits), so every 64-bit value reads back bit for bit. All
writers replace their target atomically.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .assignment import MatchMatrix
from .bures import BarycenterSolveReport, GaussianParams
from .core import BarycenterModel, LbwModel, SimplexWeights, check_provenance
from .errors import DimensionMismatch, LbwError, NonFiniteInput, ProvenanceMismatch
from .gmm import GaussianComponent, GmmConfig, GmmModel
from .shapes import Silhouette
from .spd import SpdMatrix

__all__ = [
    "SCHEMA_VERSION",
    "FormatError",
    "atomic_writer",
    "read_table",
    "read_points",
    "iter_point_chunks",
    "write_points",
    "csv_line",
    "format_float",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
    "load_mask",
    "save_mask",
    "parse_k_grid",
    "parse_weights",
    "parse_weight_grid",
]

SCHEMA_VERSION = "lbw-1"


class FormatError(LbwError, ValueError):
    """A file does not follow the expected layout."""


class atomic_writer:
    """Context manager writing text to a temporary file renamed on success."""

    def __init__(self, path, newline: str | None = None):
        self.path = Path(path)
        self.newline = newline

    def __enter__(self):
        fd, self._tmp = tempfile.mkstemp(dir=self.path.parent or ".", prefix=f".{self.path.name}.", suffix=".tmp")
        self._fh = os.fdopen(fd, "w", encoding="utf-8", newline=self.newline)
        return self._fh

    def __exit__(self, exc_type, exc, tb):
        self._fh.close()
        if exc_type is None:
            os.replace(self._tmp, self.path)
        else:
            os.unlink(self._tmp)
        return False


def format_float(x) -> str:
    return repr(float(x))


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise FormatError(f"row {row}, column {col!r}: {text!r} is not a decimal number") from None
    if not math.isfinite(v):
        raise NonFiniteInput(f"row {row}, column {col!r}: non-finite value {text!r}")
    return v


def read_table(path) -> tuple[list[str], list[list[str]]]:
    """Header and string rows of a CSV file with a header line."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, a header row is required") from None
        rows = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}: row {line} has {len(row)} fields, header has {len(header)}")
            rows.append(row)
    return header, rows


def _select(header: list[str], columns, path) -> list[int]:
    idx = []
    for c in columns:
        if c not in header:
            raise FormatError(f"{path}: no column {c!r}; columns are {header}")
        idx.append(header.index(c))
    return idx


def _numeric(rows, idx, header, first_line: int = 2) -> np.ndarray:
    out = np.empty((len(rows), len(idx)))
    for r, row in enumerate(rows):
        for c, j in enumerate(idx):
            out[r, c] = _parse_float(row[j], r + first_line, header[j])
    return out


def read_points(path, columns=None) -> tuple[list[str], np.ndarray]:
    """Numeric columns of a CSV file, by default all of them."""
    header, rows = read_table(path)
    columns = list(header) if columns is None else list(columns)
    return columns, _numeric(rows, _select(header, columns, path), header)


def iter_point_chunks(path, columns, chunk_size: int = 4096):
    """Stream ``columns`` of a CSV file as float arrays of at most ``chunk_size`` rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, a header row is required") from None
        idx = _select(header, columns, path)
        buf = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}: row {line} has {len(row)} fields, header has {len(header)}")
            buf.append([_parse_float(row[j], line, header[j]) for j in idx])
            if len(buf) >= chunk_size:
                yield np.array(buf, dtype=float).reshape(-1, len(idx))
                buf = []
        if buf:
            yield np.array(buf, dtype=float).reshape(-1, len(idx))


def csv_line(values) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(values)
    return buf.getvalue()


def write_points(path, header, points) -> None:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size and pts.shape[1] != len(header):
        raise DimensionMismatch(f"{len(header)} column names for {pts.shape[1]} columns")
    with atomic_writer(path, newline="") as fh:
        fh.write(csv_line(header))
        for row in pts:
            fh.write(",".join(format_float(v) for v in row) + "\n")


# ---- model files ----


def _gmm_to_dict(m: GmmModel) -> dict:
    return {
        "weights": m.weights.tolist(),
        "means": m.means.tolist(),
        "covariances": m.covariances.tolist(),
        "final_ll": m.final_log_likelihood,
        "seed": m.seed,
        "reg": m.reg,
        "n_iter": m.n_iter,
        "converged": m.converged,
        "density_floor": m.density_floor,
        "ll_history": list(m.ll_history),
        "reseed_steps": list(m.reseed_steps),
    }


def _components(weights, means, covs) -> tuple[GaussianComponent, ...]:
    return tuple(
        GaussianComponent(float(w), GaussianParams(np.array(m, dtype=float), SpdMatrix(np.array(c, dtype=float))))
        for w, m, c in zip(weights, means, covs)
    )


def _gmm_from_dict(d: dict) -> GmmModel:
    return GmmModel(
        _components(d["weights"], d["means"], d["covariances"]),
        reg=float(d["reg"]),
        seed=int(d["seed"]),
        final_log_likelihood=float(d["final_ll"]),
        n_iter=int(d.get("n_iter", 0)),
        converged=bool(d.get("converged", True)),
        ll_history=tuple(float(v) for v in d.get("ll_history", ())),
        reseed_steps=tuple(int(v) for v in d.get("reseed_steps", ())),
        density_floor=None if d.get("density_floor") is None else float(d["density_floor"]),
    )


def _bary_to_dict(b: BarycenterModel) -> dict:
    return {
        "lambda": b.weights.values.tolist(),
        "weights": b.mixture_weights.tolist(),
        "means": b.means.tolist(),
        "covariances": b.covariances.tolist(),
        "provenance": [[[g, c] for g, c in prov] for prov in b.provenance],
        "solve_reports": [
            {"iterations": r.iterations, "residual": r.residual, "converged": r.converged} for r in b.solve_reports
        ],
        "digest": b.source_digest,
    }


def _bary_from_dict(d: dict, groups) -> BarycenterModel:
    return BarycenterModel(
        tuple(groups),
        SimplexWeights(d["lambda"]),
        _components(d["weights"], d["means"], d["covariances"]),
        tuple(tuple((str(g), int(c)) for g, c in prov) for prov in d["provenance"]),
        tuple(BarycenterSolveReport(int(r["iterations"]), float(r["residual"]), bool(r["converged"])) for r in d["solve_reports"]),
        str(d["digest"]),
    )


def model_to_dict(model: LbwModel, bary: BarycenterModel | None = None, features=None, k_sweep=None) -> dict:
    d = {
        "schema_version": SCHEMA_VERSION,
        "groups": list(model.groups),
        "features": list(features) if features is not None else [f"x{i}" for i in range(model.dim)],
        "k": model.k,
        "gmm_config": asdict(model.gmm_config) if model.gmm_config is not None else None,
        "gmms": [_gmm_to_dict(g) for g in model.gmms],
        "matchings": [[list(p) for p in m.pairs] for m in model.matchings],
        "matching_costs": [m.total_cost for m in model.matchings],
    }
    if k_sweep is not None:
        d["k_sweep"] = [[int(k), float(a)] for k, a in k_sweep]
    if bary is not None:
        check_provenance(model, bary)
        d["barycenter"] = _bary_to_dict(bary)
    return d


def model_from_dict(d: dict):
    """Inverse of ``model_to_dict``; returns ``(model, barycenter or None, features, k_sweep or None)``."""
    if d.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"unsupported schema_version {d.get('schema_version')!r}, expected {SCHEMA_VERSION!r}")
    try:
        k = int(d["k"])
        cfg = GmmConfig(**d["gmm_config"]) if d.get("gmm_config") else None
        costs = d.get("matching_costs", [0.0] * len(d["matchings"]))
        matchings = tuple(MatchMatrix(k, tuple(tuple(p) for p in pairs), float(c)) for pairs, c in zip(d["matchings"], costs))
        model = LbwModel(tuple(d["groups"]), tuple(_gmm_from_dict(g) for g in d["gmms"]), matchings, cfg)
        bary = _bary_from_dict(d["barycenter"], model.groups) if d.get("barycenter") else None
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed model file: {exc!r}") from exc
    if bary is not None and bary.source_digest != model.digest:
        raise ProvenanceMismatch("stored barycenter digest does not match the stored model parameters")
    sweep = [(int(k), float(a)) for k, a in d["k_sweep"]] if d.get("k_sweep") else None
    return model, bary, list(d["features"]), sweep


def save_model(path, model: LbwModel, bary: BarycenterModel | None = None, features=None, k_sweep=None) -> None:
    text = json.dumps(model_to_dict(model, bary, features, k_sweep), indent=1, allow_nan=False)
    with atomic_writer(path) as fh:
        fh.write(text + "\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not a JSON model file ({exc})") from exc
    return model_from_dict(d)


# ---- masks ----


def load_mask(path) -> Silhouette:
    """Binary silhouette from a PGM image (value >= 128 is foreground) or a headerless 0/1 CSV grid."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
        try:
            grid = np.array([[int(v) for v in r] for r in rows])
        except ValueError as exc:
            raise FormatError(f"{path}: mask cells must be 0 or 1 ({exc})") from None
        if grid.ndim != 2 or not np.isin(grid, (0, 1)).all():
            raise FormatError(f"{path}: mask must be a rectangular grid of 0/1")
        return Silhouette(grid.astype(bool))
    from PIL import Image

    with Image.open(path) as img:
        if img.mode not in ("L", "1", "P", "I"):
            img = img.convert("L")
        grid = np.asarray(img)
    return Silhouette(grid >= 128)


def save_mask(path, mask) -> None:
    """Write a mask as binary PGM (P5, 0/255)."""
    mask = np.asarray(getattr(mask, "mask", mask), dtype=bool)
    h, w = mask.shape
    data = f"P5\n{w} {h}\n255\n".encode() + (mask.astype(np.uint8) * 255).tobytes()
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# ---- command-line value syntax ----


def parse_k_grid(text: str) -> list[int]:
    """``"2..5"`` (inclusive) or ``"2,3,5"``."""
    text = text.strip()
    try:
        if ".." in text:
            a, b = text.split("..")
            grid = list(range(int(a), int(b) + 1))
        else:
            grid = [int(t) for t in text.split(",")]
    except ValueError:
        raise FormatError(f"bad k grid {text!r}; use a..b or a comma list") from None
    if not grid or min(grid) < 1:
        raise FormatError(f"k grid {text!r} must contain positive integers")
    return grid


def parse_weights(text: str) -> SimplexWeights:
    try:
        return SimplexWeights([float(t) for t in text.split(",")])
    except ValueError as exc:
        raise FormatError(f"bad weights {text!r}: {exc}") from None


def parse_weight_grid(text: str) -> list[tuple[str, SimplexWeights]]:
    """``"1,0;0.5,0.5"`` into ``(token, weights)`` pairs; tokens name truth files."""
    return [(tok.strip(), parse_weights(tok)) for tok in text.split(";") if tok.strip()]
