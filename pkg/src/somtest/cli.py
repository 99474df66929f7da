"""Command-line interface: ``somtest test``, ``somtest power`` and ``somtest export``.

Exit status is 0 whenever the computation succeeds, whether or not the
null hypothesis is rejected; 1 signals an operational failure and 2 a
usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import som
from .bench import FAMILIES, GeneratorSpec, PowerReport, power_run
from .exceptions import PowerRunError, SomTestError
from .exports import (
    codebook_planes_document,
    count_grid_document,
    load_csv,
    relative_difference_document,
    result_document,
    write_json,
)
from .som import MapGeometry, TrainSchedule, project_counts
from .two_sample import METHODS, run_test

log = logging.getLogger("somtest")

ALIASES = {
    "som": "som_chi2",
    "knn": "knn_coincidence",
    "nn": "c2st_nn",
    "mmd": "mmd_b",
}


def _method(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in METHODS:
        choices = ", ".join(sorted(set(METHODS) | set(ALIASES)))
        raise argparse.ArgumentTypeError(f"unknown method {name!r} (choose from {choices})")
    return name


def _alpha(text: str) -> float:
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {value}")
    return value


def _add_som_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("SOM")
    g.add_argument("--width", type=int, default=10)
    g.add_argument("--height", type=int, default=10)
    g.add_argument("--epochs", type=int, default=10)
    g.add_argument("--mode", choices=("batch", "online"), default="batch")
    g.add_argument("--init", choices=("pca", "random"), default="pca")
    g.add_argument("--learning-rate", type=float, default=0.1, dest="alpha0",
                   help="online learning factor")
    g.add_argument("--radius", type=float, default=None, help="initial neighborhood radius")
    g.add_argument("--final-radius", type=float, default=None)


def _add_test_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("baselines")
    g.add_argument("--k", type=int, default=5, help="neighbors for knn_coincidence / c2st_knn")
    g.add_argument("--n-perm", type=int, default=1000, help="permutations for knn_coincidence")
    g.add_argument("--test-fraction", type=float, default=0.5)
    g.add_argument("--block-size", type=int, default=None)
    g.add_argument("--bandwidth", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="somtest", description="Self-organizing map two-sample tests and power studies.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="run a two-sample test on two CSV files")
    t.add_argument("first", type=Path)
    t.add_argument("second", type=Path)
    t.add_argument("--method", type=_method, default="som_chi2")
    t.add_argument("--alpha", type=_alpha, default=0.1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", type=Path, default=Path("somtest-out"), help="output directory")
    _add_som_flags(t)
    _add_test_flags(t)

    pw = sub.add_parser("power", help="Monte-Carlo type I / type II error rates")
    pw.add_argument("--method", type=_method, nargs="+", default=["som_chi2"])
    pw.add_argument("--family", choices=FAMILIES, default="gauss_location")
    pw.add_argument("--dim", type=int, default=1)
    pw.add_argument("--n", type=int, default=500)
    pw.add_argument("--m", type=int, default=None, help="second sample size (default: --n)")
    pw.add_argument("--shift", type=float, default=1.0)
    pw.add_argument("--wishart-dof", type=int, default=None)
    pw.add_argument("--reps", type=int, default=200)
    pw.add_argument("--alpha", type=_alpha, default=0.1)
    pw.add_argument("--seed", type=int, default=0)
    pw.add_argument("--workers", type=int, default=1)
    pw.add_argument("--out", type=Path, default=None, help="CSV file (default: stdout)")
    _add_som_flags(pw)
    _add_test_flags(pw)

    e = sub.add_parser("export", help="re-emit grids from a saved model and two CSV files")
    e.add_argument("model", type=Path)
    e.add_argument("first", type=Path)
    e.add_argument("second", type=Path)
    e.add_argument("--out", type=Path, default=Path("somtest-out"), help="output directory")
    return parser


def _geometry(args) -> MapGeometry:
    return MapGeometry(args.width, args.height)


def _schedule(args) -> TrainSchedule:
    return TrainSchedule(
        epochs=args.epochs, mode=args.mode, alpha0=args.alpha0, delta0=args.radius,
        delta_final=args.final_radius, init=args.init, seed=args.seed,
    )


def _options(method: str, args) -> dict:
    if method == "knn_coincidence":
        return {"k": args.k, "n_perm": args.n_perm}
    if method == "c2st_knn":
        return {"k": args.k, "test_fraction": args.test_fraction}
    if method == "c2st_nn":
        return {"test_fraction": args.test_fraction}
    if method == "mmd_b":
        return {"block_size": args.block_size, "bandwidth": args.bandwidth}
    return {}


def _write_grids(out: Path, model, grid, columns) -> None:
    write_json(out / "counts.json", count_grid_document(grid, model.geometry))
    write_json(out / "relative_difference.json", relative_difference_document(grid, model.geometry))
    write_json(out / "codebook_planes.json", codebook_planes_document(model, grid, columns))


def cmd_test(args) -> int:
    first, second = load_csv(args.first), load_csv(args.second)
    if first.dim != second.dim:
        raise SomTestError(f"{args.first} has {first.dim} features but {args.second} has {second.dim}")
    args.out.mkdir(parents=True, exist_ok=True)
    method = args.method
    if method == "som_chi2":
        result = run_test(method, first.values, second.values, seed=args.seed,
                          geometry=_geometry(args), schedule=_schedule(args))
    else:
        result = run_test(method, first.values, second.values, seed=args.seed,
                          **_options(method, args))
    model_path = None
    if result.model is not None:
        model_path = "model.json"
        (args.out / model_path).write_bytes(som.serialize(result.model) + b"\n")
        _write_grids(args.out, result.model, result.counts, first.columns)
    write_json(args.out / "result.json", result_document(result, args.alpha, model_path))
    verdict = "reject" if result.reject(args.alpha) else "do not reject"
    print(f"{method}: statistic={result.statistic:.6g} p_value={result.p_value:.6g} ({verdict} H0 at alpha={args.alpha})")
    return 0


def cmd_power(args) -> int:
    spec = GeneratorSpec(args.family, args.dim, args.shift, args.wishart_dof)
    m = args.m if args.m is not None else args.n
    rows = []
    for method in args.method:
        options = _options(method, args)
        if method == "som_chi2":
            options = {"geometry": _geometry(args), "schedule": _schedule(args)}
        log.info("power run: %s on %s (dim=%d, n=%d, m=%d)", method, args.family, args.dim, args.n, m)
        report = power_run(method, spec, args.n, m, args.alpha, args.reps, args.seed,
                           workers=args.workers, **options)
        rows.append(report)
    if args.out is None:
        _write_reports(sys.stdout, rows)
    else:
        with args.out.open("w", newline="") as fh:
            _write_reports(fh, rows)
    return 0


def _write_reports(fh, reports) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(PowerReport.columns())
    for report in reports:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in report.row()])


def read_power_reports(path) -> list[PowerReport]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PowerReport.columns():
            raise SomTestError(f"{path}: unexpected columns {reader.fieldnames}")
        return [
            PowerReport(
                method=r["method"], alpha=float(r["alpha"]), n_reps=int(r["n_reps"]),
                sample_size=int(r["sample_size"]), dim=int(r["dim"]),
                type1_rate=float(r["type1_rate"]), type2_rate=float(r["type2_rate"]),
                mean_runtime=float(r["mean_runtime"]),
            )
            for r in reader
        ]


def cmd_export(args) -> int:
    model = som.deserialize(args.model.read_bytes())
    first, second = load_csv(args.first), load_csv(args.second)
    for path, data in ((args.first, first), (args.second, second)):
        if data.dim != model.dim:
            raise SomTestError(f"{path} has {data.dim} features, model expects {model.dim}")
    args.out.mkdir(parents=True, exist_ok=True)
    grid = project_counts(model, first.values, second.values)
    _write_grids(args.out, model, grid, first.columns)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handler = {"test": cmd_test, "power": cmd_power, "export": cmd_export}[args.command]
    try:
        return handler(args)
    except (SomTestError, PowerRunError, OSError, ValueError) as exc:
        print(f"somtest: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
