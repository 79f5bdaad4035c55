"""Command-line entry point: ``shapespace {synth,augment,experiment,sweep,report}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .augment import fold_violations, policy_presets
from .datasets import PSYCH, load_manifest
from .errors import ConfigError, ShapespaceError
from .experiment import (DETAIL_COLUMNS, MAX_DIM, REFERENCE_DIM, RESULT_COLUMNS, SILHOUETTE_COLUMNS, Experiment,
                         ExperimentSpec, augment_directory, load_data, load_spec, selected_value, sweep_specs,
                         synthesize)
from .metrics import TABLE2_COLUMNS, write_table
from .plots import line_chart
from .synthetic import SyntheticConfig

logger = logging.getLogger("shapespace")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def parse_dims(text: str) -> List[int]:
    dims = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-")
            dims.extend(range(int(lo), int(hi) + 1))
        elif part:
            dims.append(int(part))
    if not dims:
        raise ConfigError("no target-space dimensions given")
    return dims


def parse_grid(text: str) -> List[float]:
    values = [float(v) for v in text.split(",") if v.strip()]
    if not values:
        raise ConfigError("the beta/lambda grid is empty")
    return values


# -- synth / augment -----------------------------------------------------

def cmd_synth(args) -> int:
    config = SyntheticConfig()
    if args.synth_config:
        with open(args.synth_config, encoding="utf-8") as fh:
            overrides = json.load(fh)
        names = {f.name for f in fields(SyntheticConfig)}
        unknown = set(overrides) - names
        if unknown:
            raise ConfigError(f"unknown synthetic-corpus fields {sorted(unknown)}")
        config = replace(config, **{k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()})
    try:
        Path(args.out).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {args.out}: {exc}") from exc
    records = synthesize(args.out, seed=args.seed, config=config)
    counts = {}
    for r in records:
        counts[r.source] = counts.get(r.source, 0) + 1
    print(f"wrote {len(records)} records to {args.out}: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def cmd_augment(args) -> int:
    data = Path(args.data)
    factors = None if args.factors is None else [int(f) for f in args.factors.split(",")]
    policy_presets(args.scale, factors)
    out = Path(args.out) if args.out else data / "augmented"
    instances = augment_directory(data, seed=args.seed, scale=args.scale, factors=factors, out_dir=out)
    records = load_manifest(data / "manifest.jsonl")
    violations = fold_violations(instances, records)
    counts = {}
    for inst in instances:
        counts[inst.source] = counts.get(inst.source, 0) + 1
    geometric = sum(1 for i in instances if i.source == PSYCH and (i.transform_log.flipped or i.transform_log.rotation
                                                                   or i.transform_log.shear))
    print(f"wrote {len(instances)} augmented instances to {out}: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    print(f"fold isolation: {len(violations)} violations")
    print(f"geometric transforms on psychological stimuli: {geometric}")
    if violations:
        print("first violating instance: " + violations[0], file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


# -- experiment ----------------------------------------------------------

def spec_from_args(args) -> ExperimentSpec:
    base = load_spec(args.spec) if args.spec else ExperimentSpec()
    updates = {}
    if args.config:
        updates["config"] = args.config
    if args.tasks:
        updates["tasks"] = tuple(t.strip() for t in args.tasks.split(",") if t.strip())
    if args.grid is not None:
        updates["grid"] = tuple(parse_grid(args.grid))
    if args.dims:
        updates["dims"] = tuple(parse_dims(args.dims))
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.scale:
        updates["scale"] = args.scale
    if args.epochs is not None:
        updates["epochs"] = args.epochs
    if args.learning_rate is not None:
        updates["learning_rate"] = args.learning_rate
    if args.distance:
        updates["distance"] = args.distance
    spec = replace(base, **updates)
    spec.validate()
    return spec


def run_and_write(spec: ExperimentSpec, data_dir, out_dir, workers: int = 1) -> Experiment:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "spec.json", "w", encoding="utf-8") as fh:
        json.dump(spec.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    exp = Experiment(spec, load_data(data_dir, spec.dims), out, workers=workers)
    exp.run()
    write_table(out / "results.csv", exp.rows, RESULT_COLUMNS)
    write_table(out / "details.csv", exp.details, DETAIL_COLUMNS)
    write_table(out / "silhouette.csv", exp.silhouettes, SILHOUETTE_COLUMNS)
    return exp


def cmd_experiment(args) -> int:
    spec = spec_from_args(args)
    exp = run_and_write(spec, args.data, args.out, args.workers)
    print(f"spec {exp.hash}: {len(exp.rows)} result rows written to {Path(args.out) / 'results.csv'}")
    return EXIT_OK if exp.ok else EXIT_FAILED


# -- sweep ---------------------------------------------------------------

def read_rows(path) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _mean_rows(rows):
    return [r for r in rows if r.get("fold") == "mean" and r.get("status") == "ok"]


def cmd_sweep(args) -> int:
    spec = spec_from_args(args)
    dims = parse_dims(args.dims) if args.dims else list(range(1, MAX_DIM + 1))
    out = Path(args.out)
    reference = replace(spec, dims=(REFERENCE_DIM,))
    ref_exp = run_and_write(reference, args.data, out / "reference", args.workers)
    regressors = ["network"] if spec.multitask else ["linear", "lasso"]
    chosen = {r: selected_value(ref_exp.rows, r, REFERENCE_DIM) for r in regressors}
    value = chosen["network"] if spec.multitask else chosen["lasso"]
    if value is None:
        print("reference run produced no selectable setting", file=sys.stderr)
        return EXIT_FAILED
    swept = run_and_write(sweep_specs(spec, value, dims), args.data, out / "sweep", args.workers)
    rows = [r for r in swept.rows if r.get("fold") == "mean" and r.get("status") == "ok"]
    write_table(out / "sweep.csv", sorted(rows, key=lambda r: (r["regressor"], r["dim"])), RESULT_COLUMNS)
    for metric, label in (("mse", "MSE"), ("relative_med", "relative MED"), ("r2", "R²")):
        series = {}
        for r in rows:
            name = "zero baseline" if r["regressor"] == "zero" else f"{spec.config} {r['regressor']}"
            series.setdefault(name, []).append((float(r["dim"]), float(r[metric])))
        line_chart(out / f"{metric}.svg", series, title=f"{label} by target-space dimension",
                   x_label="dimensions", y_label=label)
    print(f"sweep over dims {dims} with beta/lambda {value:g}: results in {out}")
    return EXIT_OK if (ref_exp.ok and swept.ok) else EXIT_FAILED


# -- report --------------------------------------------------------------

def collect_results(root) -> List[Dict[str, str]]:
    """Mean rows from every result CSV below ``root``, deduplicated by spec hash."""
    rows, seen = [], set()
    for path in sorted(Path(root).rglob("*.csv")):
        try:
            file_rows = read_rows(path)
        except (OSError, csv.Error, UnicodeDecodeError):
            continue
        if not file_rows or "spec_hash" not in file_rows[0] or "regressor" not in file_rows[0]:
            continue
        for r in _mean_rows(file_rows):
            key = (r["spec_hash"], r["regressor"], r["beta_lambda"], r["dim"], r["task"])
            if key not in seen:
                seen.add(key)
                rows.append(r)
    return rows


def format_report(rows: Sequence[Dict[str, str]]) -> str:
    headers = {"configuration": "Configuration", "task": "Task", "regressor": "Regressor",
               "beta_lambda": "β/λ", "tau": "τ", "mse": "MSE", "med": "MED", "r2": "R²"}
    lines = []
    for dim in sorted({int(r["dim"]) for r in rows}):
        subset = [r for r in rows if int(r["dim"]) == dim]
        subset.sort(key=lambda r: (r["regressor"] != "zero", r["configuration"], r["task"], r["regressor"],
                                   float(r["beta_lambda"] or 0)))
        best = {}
        for r in subset:
            if r["regressor"] == "zero":
                continue
            cfg = r["configuration"]
            if cfg not in best or float(r["mse"]) < float(best[cfg]["mse"]):
                best[cfg] = r
        lines.append(f"### {dim}-dimensional target space\n")
        lines.append("| " + " | ".join(headers[c] for c in TABLE2_COLUMNS) + " |")
        lines.append("|" + "---|" * len(TABLE2_COLUMNS))
        for r in subset:
            cells = []
            for c in TABLE2_COLUMNS:
                v = r.get(c, "")
                if c in ("tau", "mse", "med", "r2") and v:
                    v = f"{float(v):.4f}"
                if c == "configuration" and r["regressor"] == "zero":
                    v = "Zero Baseline"
                if c in ("task", "regressor") and r["regressor"] == "zero":
                    v = "-"
                if best.get(r["configuration"]) is r and c in ("mse", "med", "r2"):
                    v = f"**{v}**"
                cells.append(v or "-")
            lines.append("| " + " | ".join(cells) + " |")
        lines.append("")
    return "\n".join(lines)


def cmd_report(args) -> int:
    rows = collect_results(args.results)
    if not rows:
        print(f"no results found in {args.results}")
        return EXIT_OK
    # one zero-baseline row per dimension suffices
    out, zero_seen = [], set()
    for r in rows:
        if r["regressor"] == "zero":
            if r["dim"] in zero_seen:
                continue
            zero_seen.add(r["dim"])
        out.append(r)
    print(format_report(out))
    return EXIT_OK


# -- parser --------------------------------------------------------------

def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", help="experiment spec JSON; flags override its fields")
    p.add_argument("--data", required=True, help="corpus directory written by synth and augment")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="named configuration, e.g. C_default")
    p.add_argument("--tasks", help="comma-separated tasks: classify, reconstruct, map")
    p.add_argument("--grid", help="comma-separated beta (transfer) or lambda (multi-task) values")
    p.add_argument("--dims", help="target-space dimensions, e.g. 4 or 1-10")
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", choices=("desk", "paper"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--distance", choices=("euclidean", "cosine"), help="feature distance for tau")
    p.add_argument("--workers", type=int, default=1, help="processes for cross-validation rotations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapespace", description="Map line drawings into similarity spaces.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic corpus with dissimilarities and target spaces")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--synth-config", dest="synth_config", help="JSON overrides for the synthetic corpus")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", help="augment every original of a corpus directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="defaults to DATA/augmented")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.add_argument("--factors", help="copies per original for psych,extra,tuberlin,sketchy")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("experiment", help="run a transfer or multi-task experiment under 5-fold CV")
    _experiment_flags(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep", help="retrain on several target-space dimensions and plot the results")
    _experiment_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarise result CSVs as markdown tables")
    p.add_argument("results", help="directory searched recursively for results.csv files")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ShapespaceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
