"""``lbw`` command-line interface.

Exit status is 0 on success, 2 on a usage error and 1 on a runtime error.
Logs go to standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bures import BarycenterConfig, bw_distance_sq
from .core import barycenter, learn, transport, transport_to_barycenter
from .errors import LbwError
from .fairness import LabeledDataset, evaluate, repair
from .gmm import GmmConfig, aic
from .io import (
    FormatError,
    csv_line,
    format_float,
    atomic_writer,
    iter_point_chunks,
    load_mask,
    load_model,
    parse_k_grid,
    parse_weight_grid,
    parse_weights,
    read_points,
    read_table,
    save_model,
)
from .shapes import run_simplex_sweep

logger = logging.getLogger("lbw")


class UsageError(Exception):
    """Command-line arguments are inconsistent."""


def _gmm_config(args) -> GmmConfig:
    return GmmConfig(reg=args.reg, seed=args.seed, n_init=args.n_init)


def _load_groups(args):
    if args.inputs_are_groups:
        labels = [Path(p).stem for p in args.input]
        if len(set(labels)) != len(labels):
            raise UsageError(f"input file names must be distinct group labels, got {labels}")
        features = args.features.split(",") if args.features else None
        groups = []
        for label, path in zip(labels, args.input):
            cols, x = read_points(path, features)
            if features is None:
                features = cols
            groups.append((label, x))
        return features, groups
    if len(args.input) != 1:
        raise UsageError("--group-col takes exactly one --input file")
    header, rows = read_table(args.input[0])
    if args.group_col not in header:
        raise UsageError(f"no column {args.group_col!r} in {args.input[0]}")
    features = args.features.split(",") if args.features else [c for c in header if c != args.group_col]
    _, x = read_points(args.input[0], features)
    gcol = header.index(args.group_col)
    z = np.array([r[gcol] for r in rows])
    return features, [(str(g), x[z == g]) for g in np.unique(z)]


def cmd_fit(args) -> int:
    features, groups = _load_groups(args)
    if len(groups) < 2:
        raise UsageError(f"fit needs at least two groups, found {len(groups)}")
    cfg = _gmm_config(args)
    data = dict(groups)
    sweep = None
    if args.k_grid:
        best = None
        sweep = []
        for k in parse_k_grid(args.k_grid):
            model = learn(groups, k, cfg, reference=args.reference)
            total = math.fsum(aic(g, data[label]) for label, g in zip(model.groups, model.gmms))
            sweep.append((k, total))
            logger.info("k=%d summed AIC %.6g", k, total)
            if best is None or total < best[1]:
                best = (model, total)
        model = best[0]
    else:
        model = learn(groups, args.k, cfg, reference=args.reference)
    save_model(args.out, model, features=features, k_sweep=sweep)
    logger.info("fitted k=%d for groups %s", model.k, list(model.groups))
    return 0


def cmd_barycenter(args) -> int:
    model, _, features, sweep = load_model(args.model)
    lam = parse_weights(args.weights)
    cfg = BarycenterConfig(max_iter=args.max_iter, tol=args.tol)
    bary = barycenter(model, lam, cfg)
    save_model(args.out or args.model, model, bary, features, sweep)
    return 0


def cmd_transport(args) -> int:
    model, bary, features, _ = load_model(args.model)
    if args.to_barycenter:
        if bary is None:
            raise UsageError("the model file has no barycenter; run `lbw barycenter` first")
        move = lambda x: transport_to_barycenter(model, bary, args.src, x)  # noqa: E731
        model.index(args.src)
    else:
        model.index(args.src), model.index(args.dst)
        move = lambda x: transport(model, args.src, args.dst, x)  # noqa: E731

    def emit(fh):
        fh.write(csv_line(features))
        for chunk in iter_point_chunks(args.input, features, args.chunk_size):
            for row in move(chunk):
                fh.write(",".join(format_float(v) for v in row) + "\n")

    if args.out == "-":
        emit(sys.stdout)
    else:
        with atomic_writer(args.out, newline="") as fh:
            emit(fh)
    return 0


def cmd_repair(args) -> int:
    header, rows = read_table(args.input)
    for col in (args.target_col, args.protected_col):
        if col not in header:
            raise UsageError(f"no column {col!r} in {args.input}")
    if args.features:
        features = args.features.split(",")
    else:
        features = [c for c in header if c not in (args.target_col, args.protected_col)]
    _, x = read_points(args.input, features)
    y = np.array([r[header.index(args.target_col)] for r in rows])
    z = np.array([r[header.index(args.protected_col)] for r in rows])
    data = LabeledDataset(x, y, z)
    cfg = GmmConfig(reg=args.reg, seed=args.seed, n_init=args.n_init)
    repaired, model, bary = repair(data, args.k, cfg)

    fidx = [header.index(c) for c in features]
    with atomic_writer(args.out, newline="") as fh:
        fh.write(csv_line(header))
        for r, row in enumerate(rows):
            out = list(row)
            for c, j in enumerate(fidx):
                out[j] = format_float(repaired[r, c])
            fh.write(csv_line(out))

    report = {"k": args.k, "groups": list(model.groups), "n": int(x.shape[0]), "dp_gamma_convention": "max |TPR - FPR|"}
    if data.groups.size == 2:
        before, after = evaluate(x, y, z, seed=args.seed), evaluate(repaired, y, z, seed=args.seed)
        report["before"] = {"dp_gamma": before.dp_gamma, "auc": before.auc}
        report["after"] = {"dp_gamma": after.dp_gamma, "auc": after.auc}
    else:
        logger.warning("DP-gamma is defined for two groups; skipping scores for %d groups", data.groups.size)
    if args.report:
        with atomic_writer(args.report) as fh:
            fh.write(json.dumps(report, indent=1, allow_nan=False) + "\n")
    return 0


def _find_truth(truth_dir, token: str):
    if truth_dir is None:
        return None
    stem = "lambda_" + token.replace(",", "_")
    for suffix in (".pgm", ".csv"):
        path = Path(truth_dir) / (stem + suffix)
        if path.exists():
            return load_mask(path)
    return None


def cmd_bench_shapes(args) -> int:
    shapes = [load_mask(p) for p in args.silhouette]
    if len(shapes) < 2:
        raise UsageError("need at least two silhouettes")
    grid = parse_weight_grid(args.lambda_grid)
    truths = {}
    for token, lam in grid:
        mask = _find_truth(args.truth_dir, token)
        if mask is not None:
            truths[tuple(lam.values.tolist())] = mask
    cfg = GmmConfig(reg=args.reg, n_init=args.n_init)
    records = run_simplex_sweep(
        shapes,
        parse_k_grid(args.k_grid),
        [lam for _, lam in grid],
        args.n,
        range(args.seeds),
        truths=truths,
        cfg=cfg,
        bandwidth=args.bandwidth,
    )
    s = len(shapes)
    header = ["k", *[f"lambda_{i}" for i in range(s)], "seed", "agreement", "pixel_accuracy", "train_seconds", "transport_seconds"]
    with atomic_writer(args.out, newline="") as fh:
        fh.write(csv_line(header))
        for r in records:
            vals = [str(r.k), *[format_float(v) for v in r.weights.values], str(r.seed)]
            vals += [format_float(r.agreement), format_float(r.pixel_accuracy), format_float(r.train_seconds), format_float(r.transport_seconds)]
            fh.write(csv_line(vals))
    return 0


def cmd_dist(args) -> int:
    model, _, _, _ = load_model(args.model)
    pair = args.pair.split(",")
    if len(pair) != 2:
        raise UsageError(f"--pair expects two comma-separated groups, got {args.pair!r}")
    a, b = model.index(pair[0]), model.index(pair[1])
    out = [csv_line(["component_a", "component_b", "bw_distance_sq"])]
    dists = []
    for i in range(model.k):
        j = model.partner(a, b, i)
        d = bw_distance_sq(model.gmms[a].components[i].params, model.gmms[b].components[j].params)
        dists.append(d)
        out.append(csv_line([str(i), str(j), format_float(d)]))
    out.append(csv_line(["total", "", format_float(math.fsum(dists))]))
    sys.stdout.write("".join(out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lbw", description="Local Bures-Wasserstein transport between point clouds.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def em_options(p, seed=True):
        p.add_argument("--reg", type=float, default=1e-6, help="covariance regularization")
        if seed:
            p.add_argument("--seed", type=int, default=0)
        p.add_argument("--n-init", type=int, default=4, help="EM restarts")

    p = sub.add_parser("fit", parents=[common], help="fit per-group mixtures and matchings")
    p.add_argument("--input", nargs="+", required=True, metavar="CSV")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--group-col")
    g.add_argument("--inputs-are-groups", action="store_true", help="one CSV per group, labelled by file stem")
    kg = p.add_mutually_exclusive_group(required=True)
    kg.add_argument("--k", type=int)
    kg.add_argument("--k-grid", help="a..b or comma list; k chosen by summed AIC")
    p.add_argument("--features", help="comma-separated feature columns")
    p.add_argument("--reference", help="reference group label")
    em_options(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("barycenter", parents=[common], help="add a barycenter block to a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--lambda", dest="weights", required=True, help="w1,w2[,...]")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--out", help="defaults to overwriting --model")
    p.set_defaults(func=cmd_barycenter)

    p = sub.add_parser("transport", parents=[common], help="move points between groups")
    p.add_argument("--model", required=True)
    p.add_argument("--from", dest="src", required=True)
    t = p.add_mutually_exclusive_group(required=True)
    t.add_argument("--to", dest="dst")
    t.add_argument("--to-barycenter", action="store_true")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="CSV path or - for stdout")
    p.add_argument("--chunk-size", type=int, default=4096)
    p.set_defaults(func=cmd_transport)

    p = sub.add_parser("repair", parents=[common], help="demographic-parity repair of a labelled dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--target-col", required=True)
    p.add_argument("--protected-col", required=True)
    p.add_argument("--features")
    p.add_argument("--k", type=int, required=True)
    em_options(p)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("bench", parents=[common], help="benchmarks")
    bsub = p.add_subparsers(dest="bench", required=True)
    b = bsub.add_parser("shapes", parents=[common], help="support-recovery sweep on silhouettes")
    b.add_argument("--silhouette", nargs="+", required=True, metavar="MASK")
    b.add_argument("--truth-dir")
    b.add_argument("--k-grid", required=True)
    b.add_argument("--lambda-grid", required=True, help='e.g. "1,0;0.5,0.5;0,1"')
    b.add_argument("--n", type=int, default=10000)
    b.add_argument("--seeds", type=int, default=10)
    b.add_argument("--bandwidth", type=float, default=1.5)
    em_options(b, seed=False)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench_shapes)

    p = sub.add_parser("dist", parents=[common], help="Bures-Wasserstein distances of matched components")
    p.add_argument("--model", required=True)
    p.add_argument("--pair", required=True, help="g1,g2")
    p.set_defaults(func=cmd_dist)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(getattr(args, "verbose", 0), 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        logger.error("%s", exc)
        return 2
    except (LbwError, FormatError, ValueError, KeyError, OSError, ArithmeticError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
