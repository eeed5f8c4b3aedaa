"""Command-line front end: train / path / extract / bench.

Every command writes its primary output plus a ``<output>.manifest.json``
recording the resolved parameters, seeds, input digests, tool version and
wall time, so a run can be reproduced bit-identically from the manifest.

Exit codes: 0 success, 2 invalid input, 3 infeasible request, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time

import numpy as np

from . import __version__
from . import extract as ex
from . import mapping as mp
from . import solver as sv
from .ensemble import Dataset, load_dataset_csv, load_ensemble, save_ensemble, train_bagged_ensemble
from .errors import (
    BudgetInfeasibleError,
    InvalidConfigError,
    InvalidInputError,
    NumericError,
    ParseError,
)
from .penalties import PenaltyConfig

EXIT_OK = 0
EXIT_INVALID_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fp:
        for chunk in iter(lambda: fp.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(doc, path) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(doc, fp, indent=2)
        fp.write("\n")


def _write_manifest(command: str, params: dict, inputs: dict, output_path, wall_time: float) -> None:
    manifest = {
        "command": command,
        "params": params,
        "seed": params.get("seed"),
        "input_digests": {name: _digest(p) for name, p in inputs.items()},
        "version": __version__,
        "wall_time_seconds": wall_time,
    }
    _write_json(manifest, f"{output_path}.manifest.json")


def _split_train_valid(data: Dataset, valid_frac: float, seed: int) -> tuple[Dataset, Dataset]:
    n = data.n_rows
    n_valid = max(1, int(round(valid_frac * n)))
    if n_valid >= n:
        raise InvalidInputError(f"validation fraction {valid_frac} leaves no training rows")
    perm = np.random.default_rng(seed).permutation(n)
    valid_rows, train_rows = perm[:n_valid], perm[n_valid:]
    make = lambda rows: Dataset(data.features[rows], data.target[rows], data.feature_names)
    return make(train_rows), make(valid_rows)


def _path_to_doc(path: sv.PathResult) -> list[dict]:
    doc = []
    for p in path.points:
        nz = np.nonzero(np.abs(p.weights) > ex.ZERO_TOLERANCE)[0]
        doc.append(
            {
                "lambda_s": p.lambda_s,
                "lambda_f": p.lambda_f,
                "n_nonzero": p.n_nonzero,
                "train_objective": p.train_objective,
                "validation_mse": p.validation_mse,
                "weights": {str(int(j)): float(p.weights[j]) for j in nz},
            }
        )
    return doc


def _weights_from_point(point: dict, n_columns: int) -> np.ndarray:
    w = np.zeros(n_columns)
    for key, value in point["weights"].items():
        j = int(key)
        if not 0 <= j < n_columns:
            raise ParseError(f"weight column {j} out of range for {n_columns} leaves")
        w[j] = float(value)
    return w


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    start = time.perf_counter()
    data = load_dataset_csv(args.data, args.target)
    ensemble = train_bagged_ensemble(
        data,
        n_trees=args.trees,
        max_depth=args.depth,
        min_leaf=args.min_leaf,
        feature_subsample=args.feature_frac,
        rng_seed=args.seed,
    )
    save_ensemble(ensemble, args.output)
    params = {
        "data": str(args.data),
        "target": args.target,
        "trees": args.trees,
        "depth": args.depth,
        "min_leaf": args.min_leaf,
        "feature_frac": args.feature_frac,
        "seed": args.seed,
        "output": str(args.output),
    }
    _write_manifest("train", params, {"data": args.data}, args.output, time.perf_counter() - start)
    print(f"trained {ensemble.n_trees} trees with {ensemble.n_rules} leaves -> {args.output}")
    return EXIT_OK


def cmd_path(args) -> int:
    start = time.perf_counter()
    ensemble = load_ensemble(args.ensemble)
    data = load_dataset_csv(args.data, args.target)
    if data.n_features != ensemble.n_features:
        raise InvalidInputError(
            f"data has {data.n_features} features but the ensemble expects {ensemble.n_features}"
        )
    if args.valid_data:
        train, valid = data, load_dataset_csv(args.valid_data, args.target)
        if valid.n_features != ensemble.n_features:
            raise InvalidInputError("validation data feature count does not match the ensemble")
    else:
        train, valid = _split_train_valid(data, args.valid_frac, args.seed)

    intercept = float(train.target.mean())
    M = mp.build_matrix(ensemble, train)
    M_valid = mp.build_matrix(ensemble, valid)
    path_cfg = sv.PathConfig(
        n_grid=args.grid,
        lambda_min_ratio=args.min_ratio,
        lambda_f_ratio=args.lambda_f_ratio,
        gamma=args.gamma,
        kind=args.penalty,
    )
    solver_cfg = sv.SolverConfig(selection=args.selection, rng_seed=args.seed)
    path = sv.path_solve(
        M,
        train.target - intercept,
        path_cfg,
        solver_cfg,
        validation=(M_valid, valid.target - intercept),
    )
    _write_json(_path_to_doc(path), args.output)
    params = {
        "ensemble": str(args.ensemble),
        "data": str(args.data),
        "target": args.target,
        "valid_frac": args.valid_frac,
        "valid_data": str(args.valid_data) if args.valid_data else None,
        "penalty": args.penalty,
        "gamma": args.gamma,
        "lambda_f_ratio": args.lambda_f_ratio,
        "grid": args.grid,
        "min_ratio": args.min_ratio,
        "selection": args.selection,
        "seed": args.seed,
        "output": str(args.output),
        "intercept": intercept,
        "lambda_max": path.lambda_max,
    }
    inputs = {"ensemble": args.ensemble, "data": args.data}
    if args.valid_data:
        inputs["valid_data"] = args.valid_data
    _write_manifest("path", params, inputs, args.output, time.perf_counter() - start)
    print(f"path with {len(path)} points (lambda_max {path.lambda_max:.6g}) -> {args.output}")
    return EXIT_OK


def cmd_extract(args) -> int:
    start = time.perf_counter()
    ensemble = load_ensemble(args.ensemble)
    with open(args.path, "r", encoding="utf-8") as fp:
        path_doc = json.load(fp)
    try:
        with open(f"{args.path}.manifest.json", "r", encoding="utf-8") as fp:
            intercept = float(json.load(fp)["params"]["intercept"])
    except FileNotFoundError:
        intercept = 0.0

    points = []
    n_columns = ensemble.n_rules
    for raw in path_doc:
        points.append(
            sv.PathPoint(
                lambda_s=raw["lambda_s"],
                lambda_f=raw["lambda_f"],
                weights=_weights_from_point(raw, n_columns),
                n_nonzero=raw["n_nonzero"],
                train_objective=raw["train_objective"],
                validation_mse=raw["validation_mse"],
            )
        )
    path = sv.PathResult(points=points, lambda_max=points[0].lambda_s if points else 0.0)
    index = sv.select_model(path, args.max_rules)
    chosen = path.points[index]

    rule_set = ex.extract_rules(ensemble, chosen.weights, intercept)
    ex.export(rule_set, "json", args.output)
    ex.export(rule_set, "text", f"{args.output}.txt")

    test_data = load_dataset_csv(args.test_data, args.target) if args.test_data else None
    model_stats = ex.stats(ensemble, chosen.weights, test_data, intercept)
    stats_doc = model_stats.to_dict()
    stats_doc["grid_index"] = index
    stats_doc["lambda_s"] = chosen.lambda_s
    stats_doc["lambda_f"] = chosen.lambda_f
    stats_doc["validation_mse"] = chosen.validation_mse
    _write_json(stats_doc, f"{args.output}.stats.json")

    params = {
        "ensemble": str(args.ensemble),
        "path": str(args.path),
        "max_rules": args.max_rules,
        "test_data": str(args.test_data) if args.test_data else None,
        "target": args.target,
        "output": str(args.output),
        "grid_index": index,
        "seed": None,
    }
    inputs = {"ensemble": args.ensemble, "path": args.path}
    if args.test_data:
        inputs["test_data"] = args.test_data
    _write_manifest("extract", params, inputs, args.output, time.perf_counter() - start)
    print(
        f"selected grid point {index} with {model_stats.n_rules} rules "
        f"({model_stats.n_antecedents} antecedents) -> {args.output}"
    )
    return EXIT_OK


def cmd_bench(args) -> int:
    start = time.perf_counter()
    ensemble = load_ensemble(args.ensemble)
    data = load_dataset_csv(args.data, args.target)
    if data.n_features != ensemble.n_features:
        raise InvalidInputError(
            f"data has {data.n_features} features but the ensemble expects {ensemble.n_features}"
        )
    intercept = float(data.target.mean())
    M = mp.build_matrix(ensemble, data)
    y = data.target - intercept
    cfg = PenaltyConfig(
        kind=args.penalty, lambda_s=args.lambda_s, gamma=args.gamma, lambda_f=args.lambda_f
    )

    runs = {}
    for mode in ("greedy", "cyclic"):
        solver_cfg = sv.SolverConfig(selection=mode, rng_seed=args.seed)
        runs[mode] = sv.gbcd_solve(M, y, cfg, solver_cfg)

    best_final = min(r.final_objective for r in runs.values())
    target = best_final * 1.01 if best_final > 0 else best_final
    report = {"penalty": args.penalty, "lambda_s": args.lambda_s, "lambda_f": args.lambda_f,
              "gamma": args.gamma, "target_objective": target}
    for mode, result in runs.items():
        reached = next(
            (k for k, obj in result.objective_trace if obj <= target),
            result.n_block_updates,
        )
        report[mode] = {
            "final_objective": result.final_objective,
            "n_block_updates": result.n_block_updates,
            "updates_to_within_1pct": int(reached),
            "wall_time_seconds": result.wall_time,
            "converged": result.converged,
        }
    g, c = report["greedy"]["updates_to_within_1pct"], report["cyclic"]["updates_to_within_1pct"]
    report["cyclic_to_greedy_update_ratio"] = c / g if g else None
    _write_json(report, args.output)

    with open(f"{args.output}.traces.csv", "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["mode", "block_updates", "objective"])
        for mode, result in runs.items():
            for k, obj in result.objective_trace:
                writer.writerow([mode, k, repr(obj)])

    params = {
        "ensemble": str(args.ensemble),
        "data": str(args.data),
        "target": args.target,
        "penalty": args.penalty,
        "lambda_s": args.lambda_s,
        "lambda_f": args.lambda_f,
        "gamma": args.gamma,
        "seed": args.seed,
        "output": str(args.output),
    }
    _write_manifest(
        "bench", params, {"ensemble": args.ensemble, "data": args.data}, args.output,
        time.perf_counter() - start,
    )
    ratio = report["cyclic_to_greedy_update_ratio"]
    print(
        f"greedy {g} vs cyclic {c} block updates to the 1% target "
        f"(ratio {ratio if ratio is None else round(ratio, 2)}) -> {args.output}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rulefuse", description="Sparse fused rule extraction from tree ensembles"
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a bagged ensemble of regression trees")
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--trees", type=int, default=500)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--min-leaf", type=int, default=1)
    p.add_argument("--feature-frac", type=float, default=1.0 / 3.0)
    p.add_argument("--seed", type=int, default=0,
                   help="negative values disable bootstrap resampling")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("path", help="compute a warm-started regularization path")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--valid-frac", type=float, default=0.2)
    p.add_argument("--valid-data", default=None)
    p.add_argument("--penalty", choices=["l1", "mcp"], default="mcp")
    p.add_argument("--gamma", type=float, default=1.1)
    p.add_argument("--lambda-f-ratio", type=float, default=0.5)
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--min-ratio", type=float, default=1e-3)
    p.add_argument("--selection", choices=list(sv.SELECTION_MODES), default="greedy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("extract", help="select a model from a path and export its rules")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--path", required=True)
    p.add_argument("--max-rules", type=int, default=15)
    p.add_argument("--test-data", default=None)
    p.add_argument("--target", default=None, help="required with --test-data")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("bench", help="compare greedy vs cyclic block selection")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--penalty", choices=["l1", "mcp"], default="mcp")
    p.add_argument("--lambda-s", type=float, default=1.0)
    p.add_argument("--lambda-f", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=1.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "extract" and args.test_data and not args.target:
        parser.error("--target is required with --test-data")
    try:
        return args.func(args)
    except (InvalidInputError, InvalidConfigError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except BudgetInfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
