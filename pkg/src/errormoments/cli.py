"""Command line front end.

Subcommands cover the whole pipeline: ``stats`` computes pairwise difference
statistics from a predictions CSV, ``estimate`` and ``bias`` run moment and
bias recovery, ``fuse`` produces a precision-weighted combination, ``simulate``
generates a scored synthetic dataset on disk, and ``image-demo`` runs the
three-regressor noisy image reconstruction end to end on a PPM file.

All commands are deterministic given their inputs, seed, and config. Exit
codes: 0 success, 2 argument or parse error, 3 solver failure. JSON reports
carry a top-level ``schema_version``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings

import numpy as np

from .core import PairIndexMap, PredictionMatrix
from .fusion import covariance_weights, evaluate_fusion, fuse, inverse_variance_weights
from .pairwise import PairwiseStats, compute_pairwise_stats
from .ppm import from_unit, read_ppm, to_unit, write_ppm
from .recovery import (
    MODE_DIAGONAL,
    MODE_FULL,
    L1SolverConfig,
    RecoveryReport,
    SolverInfo,
    recover_bias,
    recover_moments_diagonal,
    recover_moments_full,
)
from .synth import NoiseSpec, bundle_from_deltas, generate, score

__all__ = [
    "SCHEMA_VERSION",
    "EXIT_OK",
    "EXIT_USAGE",
    "EXIT_SOLVER",
    "CommandError",
    "load_prediction_csv",
    "report_to_dict",
    "report_from_dict",
    "stats_to_dict",
    "build_parser",
    "main",
]

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SOLVER = 3

DEFAULT_CHANNEL_SCALES = (
    (0.35, 0.03, 0.03),
    (0.03, 0.15, 0.03),
    (0.03, 0.03, 0.08),
)


class CommandError(Exception):
    """A failure that should end the command with a specific exit code."""

    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _fmt(value) -> str:
    """One CSV/table cell. Floats use repr so parsing them back is exact."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_prediction_csv(path: str) -> PredictionMatrix:
    """Read a predictions CSV, auto-detecting an optional header row.

    The first row counts as a header when any of its cells fails to parse
    as a number. Parse errors elsewhere name the 1-based row and column.
    """
    try:
        with open(path, newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
    except OSError as exc:
        raise CommandError(f"cannot read {path}: {exc.strerror or exc}")
    if not rows:
        raise CommandError(f"{path}: file contains no data rows")

    names = None
    start = 0
    try:
        [float(cell) for cell in rows[0]]
    except ValueError:
        names = tuple(cell.strip() for cell in rows[0])
        start = 1
    data_rows = rows[start:]
    if not data_rows:
        raise CommandError(f"{path}: header only, no data rows")

    width = len(data_rows[0])
    matrix = np.empty((len(data_rows), width))
    for i, row in enumerate(data_rows):
        if len(row) != width:
            raise CommandError(
                f"{path}: row {start + i + 1} has {len(row)} cells, expected {width}"
            )
        for j, cell in enumerate(row):
            try:
                matrix[i, j] = float(cell)
            except ValueError:
                raise CommandError(
                    f"{path}: row {start + i + 1}, column {j + 1}: "
                    f"cannot parse {cell!r} as a number"
                ) from None
    if names is not None and len(names) != width:
        raise CommandError(
            f"{path}: header has {len(names)} names but rows have {width} cells"
        )
    try:
        return PredictionMatrix(data=matrix, names=names)
    except ValueError as exc:
        raise CommandError(f"{path}: {exc}") from exc


def _regressor_names(n: int, names: tuple[str, ...] | None) -> list[str]:
    if names is not None:
        return list(names)
    return [f"r{i}" for i in range(n)]


def _dump_json(payload: dict) -> str:
    return json.dumps(payload, indent=2) + "\n"


def _render(fmt: str, payload: dict, header: list[str], rows: list[list]) -> str:
    if fmt == "json":
        return _dump_json(payload)
    if fmt == "csv":
        lines = [",".join(header)]
        lines += [",".join(_fmt(cell) for cell in row) for row in rows]
        return "\n".join(lines) + "\n"
    cells = [header] + [[_fmt(cell) for cell in row] for row in rows]
    widths = [max(len(row[c]) for row in cells) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in cells]
    return "\n".join(lines) + "\n"


def _write_output(text: str, output: str | None) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        with open(output, "w", newline="") as fh:
            fh.write(text)


def solver_info_to_dict(info: SolverInfo) -> dict:
    return {
        "iterations": info.iterations,
        "primal_residual": info.primal_residual,
        "dual_residual": info.dual_residual,
        "constraint_gap": info.constraint_gap,
        "tolerance": info.tolerance,
        "noise_budget": info.noise_budget,
        "rho": info.rho,
        "converged": info.converged,
        "polished": info.polished,
    }


def report_to_dict(report: RecoveryReport) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "recovery_report",
        "mode": report.mode,
        "n_regressors": report.n_regressors,
        "values": [float(v) for v in report.values],
        "residual_norm": report.residual_norm,
        "clamped": list(report.clamped),
        "solver": solver_info_to_dict(report.solver) if report.solver else None,
        "null_space_dim": report.null_space_dim,
        "notes": list(report.notes),
    }


def report_from_dict(payload: dict) -> RecoveryReport:
    try:
        if payload["schema_version"] != SCHEMA_VERSION:
            raise CommandError(
                f"unsupported schema_version {payload['schema_version']!r}; "
                f"expected {SCHEMA_VERSION}"
            )
        if payload["kind"] != "recovery_report":
            raise CommandError(f"expected a recovery_report, got {payload['kind']!r}")
        solver = SolverInfo(**payload["solver"]) if payload.get("solver") else None
        null_dim = payload.get("null_space_dim")
        return RecoveryReport(
            mode=payload["mode"],
            values=np.array(payload["values"], dtype=np.float64),
            n_regressors=int(payload["n_regressors"]),
            residual_norm=float(payload["residual_norm"]),
            clamped=tuple(int(c) for c in payload.get("clamped", [])),
            solver=solver,
            null_space_dim=None if null_dim is None else int(null_dim),
            notes=tuple(payload.get("notes", [])),
        )
    except (KeyError, TypeError) as exc:
        raise CommandError(f"malformed recovery report: {exc}") from exc


def stats_to_dict(stats: PairwiseStats) -> dict:
    names = _regressor_names(stats.n_regressors, stats.names)
    pairs = []
    for k, (i, j) in enumerate(stats.pairs()):
        pairs.append(
            {
                "first": i,
                "second": j,
                "label": f"{names[i]}-{names[j]}",
                "delta": float(stats.delta[k]),
                "delta_sq": float(stats.delta_sq[k]),
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "pairwise_stats",
        "n_regressors": stats.n_regressors,
        "n_items": stats.n_items,
        "names": names,
        "pairs": pairs,
    }


def _report_rows(report: RecoveryReport, names: list[str]) -> tuple[list[str], list[list]]:
    if report.mode == MODE_FULL:
        pm = PairIndexMap(report.n_regressors)
        header = ["first", "second", "label", "value"]
        rows = [
            [i, j, f"{names[i]}-{names[j]}", float(report.values[k])]
            for k, (i, j) in enumerate(pm.pairs("diagonal"))
        ]
        return header, rows
    header = ["regressor", "label", "value"]
    rows = [[r, names[r], float(v)] for r, v in enumerate(report.values)]
    return header, rows


def _solver_config(args: argparse.Namespace) -> L1SolverConfig:
    return L1SolverConfig(
        tolerance=args.tolerance,
        max_iter=args.max_iter,
        noise_budget=args.noise_budget,
    )


def _run_moment_recovery(stats: PairwiseStats, args: argparse.Namespace) -> RecoveryReport:
    if args.mode == "diagonal":
        return recover_moments_diagonal(stats)
    config = _solver_config(args)
    try:
        report = recover_moments_full(stats, config)
    except ValueError as exc:
        raise CommandError(f"solver failed: {exc}", EXIT_SOLVER) from exc
    info = report.solver
    if info is not None and not info.converged:
        raise CommandError(
            f"solver did not converge within {info.iterations} iterations "
            f"(primal residual {info.primal_residual:g}, tolerance {info.tolerance:g})",
            EXIT_SOLVER,
        )
    return report


def _recover_bias_quiet(stats: PairwiseStats) -> tuple[RecoveryReport, list[str]]:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = recover_bias(stats)
    return report, [str(w.message) for w in caught]


def cmd_stats(args: argparse.Namespace) -> int:
    stats = compute_pairwise_stats(load_prediction_csv(args.input))
    payload = stats_to_dict(stats)
    header = ["first", "second", "label", "delta", "delta_sq"]
    rows = [[p["first"], p["second"], p["label"], p["delta"], p["delta_sq"]] for p in payload["pairs"]]
    _write_output(_render(args.format, payload, header, rows), args.output)
    return EXIT_OK


def cmd_estimate(args: argparse.Namespace) -> int:
    m = load_prediction_csv(args.input)
    stats = compute_pairwise_stats(m)
    report = _run_moment_recovery(stats, args)
    names = _regressor_names(report.n_regressors, stats.names)
    header, rows = _report_rows(report, names)
    _write_output(_render(args.format, report_to_dict(report), header, rows), args.output)
    return EXIT_OK


def cmd_bias(args: argparse.Namespace) -> int:
    m = load_prediction_csv(args.input)
    stats = compute_pairwise_stats(m)
    report, warning_lines = _recover_bias_quiet(stats)
    for line in warning_lines:
        print(f"warning: {line}", file=sys.stderr)
    names = _regressor_names(report.n_regressors, stats.names)
    header, rows = _report_rows(report, names)
    _write_output(_render(args.format, report_to_dict(report), header, rows), args.output)
    return EXIT_OK


def cmd_fuse(args: argparse.Namespace) -> int:
    m = load_prediction_csv(args.input)
    if args.moments is not None:
        payload = _load_json(args.moments)
        report = report_from_dict(payload)
        if report.mode not in (MODE_DIAGONAL, MODE_FULL):
            raise CommandError(
                f"moments file carries mode {report.mode!r}, which has no moments to fuse with"
            )
        if report.n_regressors != m.n_regressors:
            raise CommandError(
                f"moments file is for {report.n_regressors} regressors but "
                f"CSV has {m.n_regressors}"
            )
    else:
        stats = compute_pairwise_stats(m)
        report = _run_moment_recovery(stats, args)
    moments = report.moment_vector()
    if args.weighting == "covariance":
        weights = covariance_weights(moments)
    else:
        weights = inverse_variance_weights(moments)
    fused = fuse(m, weights)

    fused_lines = ["fused"] + [repr(float(v)) for v in fused]
    with open(args.output, "w", newline="") as fh:
        fh.write("\n".join(fused_lines) + "\n")

    names = _regressor_names(m.n_regressors, m.names)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "fusion_report",
        "weighting": args.weighting,
        "mode": report.mode,
        "n_items": m.n_items,
        "weights": [float(w) for w in weights.weights],
        "fused_output": args.output,
    }
    header = ["regressor", "label", "weight"]
    rows = [[r, names[r], float(w)] for r, w in enumerate(weights.weights)]
    sys.stdout.write(_render(args.format, payload, header, rows))
    return EXIT_OK


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise CommandError(f"cannot read {path}: {exc.strerror or exc}")
    except json.JSONDecodeError as exc:
        raise CommandError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}")


def _write_csv_matrix(path: str, header: list[str] | None, data: np.ndarray) -> None:
    lines = []
    if header is not None:
        lines.append(",".join(header))
    body = np.atleast_2d(data)
    for row in body:
        lines.append(",".join(repr(float(v)) for v in np.atleast_1d(row)))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_plot_csv(path: str, values: np.ndarray) -> None:
    """Two columns, component index and value, no header."""
    lines = [f"{k},{repr(float(v))}" for k, v in enumerate(values)]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _load_json(args.config)
    try:
        spec = NoiseSpec.from_dict(config)
    except ValueError as exc:
        raise CommandError(f"{args.config}: {exc}") from exc
    truth_source = config.get("truth", "constant")
    n_items = args.n_items if args.n_items is not None else config.get("n_items")
    if n_items is None:
        raise CommandError(
            f"{args.config}: config has no \"n_items\" and --n-items was not given"
        )
    n_items = int(n_items)

    matrix, bundle = generate(truth_source, spec, n_items=n_items, seed=args.seed)
    stats = compute_pairwise_stats(matrix)
    report = _run_moment_recovery(stats, args)
    record = score(report, bundle)

    weights = inverse_variance_weights(report.moment_vector())
    fused = fuse(matrix, weights)
    evaluation = evaluate_fusion(fused, bundle)

    os.makedirs(args.output, exist_ok=True)
    names = _regressor_names(matrix.n_regressors, None)
    _write_csv_matrix(os.path.join(args.output, "predictions.csv"), names, matrix.data)
    _write_csv_matrix(os.path.join(args.output, "truth.csv"), ["truth"], bundle.truth[:, None])
    _write_csv_matrix(os.path.join(args.output, "deltas.csv"), names, bundle.deltas)

    true_payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "true_moments",
        "n_regressors": bundle.n_regressors,
        "n_items": bundle.n_items,
        "moments": [float(v) for v in bundle.true_moments.values],
        "biases": [float(v) for v in bundle.true_biases.values],
    }
    with open(os.path.join(args.output, "true_moments.json"), "w", newline="") as fh:
        fh.write(_dump_json(true_payload))
    with open(os.path.join(args.output, "report.json"), "w", newline="") as fh:
        fh.write(_dump_json(report_to_dict(report)))

    score_payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "simulation_score",
        "seed": args.seed,
        "mode": report.mode,
        "score": record.to_dict(),
        "fusion": evaluation.to_dict(),
    }
    with open(os.path.join(args.output, "score.json"), "w", newline="") as fh:
        fh.write(_dump_json(score_payload))

    if report.mode == MODE_FULL:
        true_for_plot = bundle.true_moments.values
    else:
        true_for_plot = bundle.true_moments.diagonal()
    _write_plot_csv(os.path.join(args.output, "moments_recovered.csv"), report.values)
    _write_plot_csv(os.path.join(args.output, "moments_true.csv"), true_for_plot)

    sys.stdout.write(_dump_json(score_payload))
    return EXIT_OK


def _image_demo_config(args: argparse.Namespace) -> tuple[np.ndarray, str]:
    if args.config is None:
        return np.array(DEFAULT_CHANNEL_SCALES), "gaussian"
    config = _load_json(args.config)
    try:
        scales = np.array(config["channel_scales"], dtype=np.float64)
    except (KeyError, ValueError) as exc:
        raise CommandError(f"{args.config}: bad channel_scales: {exc}") from exc
    distribution = config.get("distribution", "gaussian")
    if scales.ndim != 2 or scales.shape[1] != 3:
        raise CommandError(
            f"{args.config}: channel_scales must be one row of 3 scales per "
            f"regressor, got shape {scales.shape}"
        )
    if len(scales) < 2:
        raise CommandError(f"{args.config}: need at least 2 regressors, got {len(scales)}")
    if np.any(scales < 0) or not np.all(np.isfinite(scales)):
        raise CommandError(f"{args.config}: channel scales must be finite and nonnegative")
    if distribution not in ("gaussian", "uniform"):
        raise CommandError(f"{args.config}: unknown distribution {distribution!r}")
    return scales, distribution


def _channel_noise(
    shape: tuple[int, int], distribution: str, scale: float, seed: int, stream: int
) -> np.ndarray:
    key = np.array([seed, stream], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    if distribution == "uniform":
        return rng.uniform(-scale, scale, shape)
    return rng.normal(0.0, scale, shape)


def cmd_image_demo(args: argparse.Namespace) -> int:
    try:
        image = read_ppm(args.image)
    except OSError as exc:
        raise CommandError(f"cannot read {args.image}: {exc.strerror or exc}")
    except ValueError as exc:
        raise CommandError(str(exc))
    scales, distribution = _image_demo_config(args)
    n_regressors = len(scales)
    unit = to_unit(image)
    height, width = unit.shape[:2]

    truth = unit.ravel()
    predictions = np.empty((truth.size, n_regressors))
    noisy_units = []
    for r in range(n_regressors):
        noisy = unit.copy()
        for c in range(3):
            noisy[:, :, c] += _channel_noise(
                (height, width), distribution, float(scales[r, c]), args.seed, r * 3 + c
            )
        noisy_units.append(noisy)
        predictions[:, r] = noisy.ravel()
    matrix = PredictionMatrix(data=predictions)
    bundle = bundle_from_deltas(truth, predictions - truth[:, None])

    stats = compute_pairwise_stats(matrix)
    report = _run_moment_recovery(stats, args)
    weights = inverse_variance_weights(report.moment_vector())
    fused = fuse(matrix, weights)
    evaluation = evaluate_fusion(fused, bundle)
    per_regressor_mse = [float(v) for v in bundle.true_moments.diagonal()]

    os.makedirs(args.output, exist_ok=True)
    for r, noisy in enumerate(noisy_units):
        write_ppm(os.path.join(args.output, f"noisy_{r}.ppm"), from_unit(noisy))
    write_ppm(
        os.path.join(args.output, "fused.ppm"),
        from_unit(fused.reshape(height, width, 3)),
    )
    average = predictions.mean(axis=1)
    write_ppm(
        os.path.join(args.output, "average.ppm"),
        from_unit(average.reshape(height, width, 3)),
    )

    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "image_demo_report",
        "image": args.image,
        "seed": args.seed,
        "distribution": distribution,
        "channel_scales": [[float(s) for s in row] for row in scales],
        "mode": report.mode,
        "weights": [float(w) for w in weights.weights],
        "recovery": report_to_dict(report),
        "mse": {
            "regressors": per_regressor_mse,
            "fused": evaluation.fused_mse,
            "average": evaluation.average_mse,
        },
        "improvement": evaluation.improvement,
    }
    with open(os.path.join(args.output, "report.json"), "w", newline="") as fh:
        fh.write(_dump_json(payload))

    header = ["source", "mse"]
    rows = [[f"regressor_{r}", mse] for r, mse in enumerate(per_regressor_mse)]
    rows.append(["average", evaluation.average_mse])
    rows.append(["fused", evaluation.fused_mse])
    sys.stdout.write(_render(args.format, payload, header, rows))
    return EXIT_OK


def _add_output_arguments(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--output", "-o", help="write the report here instead of stdout")
    sp.add_argument(
        "--format",
        choices=("json", "csv", "table"),
        default="json",
        help="report format (default: json)",
    )


def _add_solver_arguments(sp: argparse.ArgumentParser, modes: tuple[str, ...]) -> None:
    sp.add_argument(
        "--mode",
        choices=modes,
        default="diagonal",
        help="recovery mode (default: diagonal)",
    )
    sp.add_argument(
        "--tolerance",
        type=float,
        default=1e-8,
        help="solver convergence tolerance (full mode, default: 1e-8)",
    )
    sp.add_argument(
        "--max-iter",
        type=int,
        default=50000,
        help="solver iteration cap (full mode, default: 50000)",
    )
    sp.add_argument(
        "--noise-budget",
        type=float,
        default=None,
        help="residual budget for full mode; 0 forces exact equality, "
        "omit for a data-driven default",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="errormoments",
        description="Recover regressor error moments from pairwise prediction "
        "differences, and use them to fuse ensembles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("stats", help="pairwise difference statistics from a predictions CSV")
    sp.add_argument("input", help="predictions CSV, one column per regressor")
    _add_output_arguments(sp)
    sp.set_defaults(handler=cmd_stats)

    sp = sub.add_parser("estimate", help="recover squared-error moments from a predictions CSV")
    sp.add_argument("input", help="predictions CSV, one column per regressor")
    _add_solver_arguments(sp, ("diagonal", "full"))
    _add_output_arguments(sp)
    sp.set_defaults(handler=cmd_estimate)

    sp = sub.add_parser("bias", help="recover relative biases from a predictions CSV")
    sp.add_argument("input", help="predictions CSV, one column per regressor")
    _add_output_arguments(sp)
    sp.set_defaults(handler=cmd_bias)

    sp = sub.add_parser("fuse", help="precision-weighted fusion of a predictions CSV")
    sp.add_argument("input", help="predictions CSV, one column per regressor")
    sp.add_argument(
        "--moments",
        help="recovery report JSON to take moments from (default: estimate on the fly)",
    )
    sp.add_argument(
        "--weighting",
        choices=("inverse-variance", "covariance"),
        default="inverse-variance",
        help="weight rule (default: inverse-variance)",
    )
    _add_solver_arguments(sp, ("diagonal", "full"))
    sp.add_argument(
        "--output",
        "-o",
        default="fused.csv",
        help="path for the fused column CSV (default: fused.csv)",
    )
    sp.add_argument(
        "--format",
        choices=("json", "csv", "table"),
        default="json",
        help="weight report format on stdout (default: json)",
    )
    sp.set_defaults(handler=cmd_fuse)

    sp = sub.add_parser("simulate", help="generate, recover, and score a synthetic ensemble")
    sp.add_argument("--config", required=True, help="noise spec JSON")
    sp.add_argument("--seed", type=int, default=0, help="generator seed (default: 0)")
    sp.add_argument("--n-items", type=int, default=None, help="override the config item count")
    _add_solver_arguments(sp, ("diagonal", "full"))
    sp.add_argument("--output", "-o", required=True, help="directory for the generated files")
    sp.set_defaults(handler=cmd_simulate)

    sp = sub.add_parser(
        "image-demo",
        help="per-channel noisy regressors on a PPM image, recovered and fused",
    )
    sp.add_argument("image", help="input image, binary PPM (P6), 8-bit")
    sp.add_argument("--config", help="JSON with channel_scales (and optional distribution)")
    sp.add_argument("--seed", type=int, default=0, help="noise seed (default: 0)")
    _add_solver_arguments(sp, ("diagonal", "full"))
    sp.add_argument("--output", "-o", required=True, help="directory for the output images")
    sp.add_argument(
        "--format",
        choices=("json", "csv", "table"),
        default="table",
        help="MSE report format on stdout (default: table)",
    )
    sp.set_defaults(handler=cmd_image_demo)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
