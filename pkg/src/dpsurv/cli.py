"""Command-line front end.

Subcommands: km, median, logrank, hazard, cuminc, bench, datasets. Exit
codes are stable: 0 success, 1 data or estimation error, 2 usage error.
Adding --epsilon makes any analysis private; the consumed budget is printed
to standard error and a provenance header precedes the payload on standard
output. json and csv outputs are stable machine interfaces; table is
human-oriented.
"""

import argparse
import csv
import json
import os
import secrets
import sys
from dataclasses import dataclass, replace
from typing import Optional

from . import dp_mechanism, estimators, harness
from .dataset import (
    FIXTURES, DatasetError, SchemaConfig, build_event_table, list_fixtures,
    load_fixture, parse_dataset, split_by_group, fixture_path,
)
from .estimators import EstimationError
from .harness import ExperimentConfig, HarnessError, format_epsilon


class UsageError(Exception):
    """Bad invocation; maps to exit code 2."""


@dataclass
class CommandPlan:
    """Validated invocation: everything execute() needs, nothing implicit."""

    subcommand: str
    input_path: Optional[str] = None
    fixture: Optional[str] = None
    schema: Optional[SchemaConfig] = None
    # set when --input names a bundled fixture file and no status/time flags
    # were given; _load then adopts that fixture's schema if the header fits
    infer_fixture: Optional[str] = None
    epsilon: Optional[float] = None
    seed: Optional[int] = None
    seed_was_defaulted: bool = False
    alpha: Optional[float] = None
    output_format: str = "table"
    event_type: Optional[int] = None
    time_scale: Optional[float] = None
    # bench
    bench_datasets: tuple = ()
    bench_epsilons: tuple = ()
    bench_runs: int = 10
    bench_analyses: tuple = ("km", "median", "logrank")
    bench_threads: int = 1
    bench_timings: bool = False
    export_curves_dir: Optional[str] = None
    # datasets
    datasets_action: Optional[str] = None
    datasets_name: Optional[str] = None
    datasets_out: Optional[str] = None


def _parse_seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise UsageError(f"seed must be decimal or 0x-hex, got {text!r}") from None
    if not 0 <= value < (1 << 64):
        raise UsageError("seed must fit in 64 unsigned bits")
    return value


def _parse_status_map(text: str) -> dict:
    mapping = {}
    for part in text.split(","):
        if "=" not in part:
            raise UsageError(f"bad status-map entry {part!r}; expected raw=code")
        raw, _, code = part.partition("=")
        try:
            mapping[raw.strip()] = int(code)
        except ValueError:
            raise UsageError(f"bad status code in {part!r}") from None
    return mapping


def _analysis_parser(sub, name, help_text, group_needed=False):
    p = sub.add_parser(name, help=help_text)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="CSV file path")
    src.add_argument("--dataset", help="bundled fixture name")
    p.add_argument("--time-col", help="time column (default: time, or the fixture's)")
    p.add_argument("--status-col", help="status column (default: status, or the fixture's)")
    p.add_argument("--group-col", help="group column for two-group analyses")
    p.add_argument("--event-types", type=int, default=None,
                   help="number of competing event types (default 1)")
    p.add_argument("--status-map", help="status mapping, e.g. 'dead=1,censored=0'")
    p.add_argument("--epsilon", type=float, help="privacy budget; enables the private release")
    p.add_argument("--seed", help="64-bit noise seed, decimal or 0x-hex")
    p.add_argument("--alpha", type=float, default=None,
                   help="confidence level for bands (median default: 0.05)")
    p.add_argument("--time-scale", type=float, default=None,
                   help="multiply reported times by this factor")
    p.add_argument("--format", choices=("json", "csv", "table"), default="table")
    if name == "cuminc":
        p.add_argument("--event-type", type=int, default=None,
                       help="which competing event type to accumulate (required)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpsurv",
        description="Survival analysis with an optional differentially private release.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    _analysis_parser(sub, "km", "survival curve")
    _analysis_parser(sub, "median", "median survival time with confidence interval")
    _analysis_parser(sub, "logrank", "two-group logrank test", group_needed=True)
    _analysis_parser(sub, "hazard", "cumulative hazard curve")
    _analysis_parser(sub, "cuminc", "cumulative incidence under competing risks")

    bench = sub.add_parser("bench", help="epsilon sweep with repeated seeded runs")
    bench.add_argument("--dataset", action="append", required=True,
                       help="fixture name; repeat or comma-separate for several")
    bench.add_argument("--epsilons", required=True, help="comma-separated, e.g. 3,2,1")
    bench.add_argument("--runs", type=int, default=10)
    bench.add_argument("--seed", default="0", help="base seed; run r uses base+r")
    bench.add_argument("--alpha", type=float, default=0.05)
    bench.add_argument("--analyses", default="km,median,logrank",
                       help="comma-separated subset of km,median,logrank,hazard,cuminc")
    bench.add_argument("--event-type", type=int, default=1,
                       help="event type for the cuminc analysis")
    bench.add_argument("--time-scale", type=float, default=None)
    bench.add_argument("--threads", type=int, default=1)
    bench.add_argument("--timings", action="store_true",
                       help="include wall-clock seconds (breaks byte-stability)")
    bench.add_argument("--export-curves", metavar="DIR",
                       help="also write per-epsilon survival curve CSVs to DIR")
    bench.add_argument("--format", choices=("json", "csv", "table"), default="table")

    datasets = sub.add_parser("datasets", help="list or export bundled fixtures")
    datasets.add_argument("action", choices=("list", "export"))
    datasets.add_argument("--name", help="fixture to export")
    datasets.add_argument("--out", help="output path (default: stdout)")
    datasets.add_argument("--format", choices=("json", "csv", "table"), default="table")
    return parser


_DEFAULT_SCHEMA = {"time_col": "time", "status_col": "status"}


def _resolve_schema(ns) -> SchemaConfig:
    if ns.dataset is not None:
        if ns.dataset not in FIXTURES:
            raise UsageError(
                f"unknown fixture {ns.dataset!r}; see 'dpsurv datasets list'")
        base = FIXTURES[ns.dataset].schema
        mapping = _parse_status_map(ns.status_map) if ns.status_map else base.status_mapping
        return SchemaConfig(
            time_column=ns.time_col or base.time_column,
            status_column=ns.status_col or base.status_column,
            group_column=ns.group_col or base.group_column,
            event_type_count=ns.event_types or base.event_type_count,
            status_mapping=mapping,
        )
    return SchemaConfig(
        time_column=ns.time_col or _DEFAULT_SCHEMA["time_col"],
        status_column=ns.status_col or _DEFAULT_SCHEMA["status_col"],
        group_column=ns.group_col,
        event_type_count=ns.event_types or 1,
        status_mapping=_parse_status_map(ns.status_map) if ns.status_map else None,
    )


def parse_args(argv) -> CommandPlan:
    """Turn argv into a validated CommandPlan; UsageError on bad invocations."""
    ns = build_parser().parse_args(argv)
    plan = CommandPlan(subcommand=ns.subcommand)

    if ns.subcommand == "datasets":
        plan.datasets_action = ns.action
        plan.datasets_name = ns.name
        plan.datasets_out = ns.out
        plan.output_format = ns.format
        if ns.action == "export" and not ns.name:
            raise UsageError("datasets export requires --name")
        if ns.action == "export" and ns.name not in FIXTURES:
            raise UsageError(f"unknown fixture {ns.name!r}")
        return plan

    if ns.subcommand == "bench":
        names = [n for raw in ns.dataset for n in raw.split(",") if n]
        for n in names:
            if n not in FIXTURES:
                raise UsageError(f"unknown fixture {n!r}; see 'dpsurv datasets list'")
        try:
            epsilons = tuple(float(e) for e in ns.epsilons.split(",") if e)
        except ValueError:
            raise UsageError(f"bad --epsilons value {ns.epsilons!r}") from None
        if not epsilons or any(e <= 0 for e in epsilons):
            raise UsageError("--epsilons must be positive reals")
        analyses = tuple(a for a in ns.analyses.split(",") if a)
        unknown = [a for a in analyses if a not in harness.ANALYSES]
        if unknown:
            raise UsageError(f"unknown analyses {unknown}")
        if ns.runs < 1:
            raise UsageError("--runs must be >= 1")
        if ns.threads < 1:
            raise UsageError("--threads must be >= 1")
        plan.bench_datasets = tuple(names)
        plan.bench_epsilons = epsilons
        plan.bench_runs = ns.runs
        plan.bench_analyses = analyses
        plan.bench_threads = ns.threads
        plan.bench_timings = ns.timings
        plan.seed = _parse_seed(ns.seed)
        plan.alpha = ns.alpha
        plan.event_type = ns.event_type
        plan.time_scale = ns.time_scale
        plan.export_curves_dir = ns.export_curves
        plan.output_format = ns.format
        return plan

    # single-analysis subcommands
    plan.input_path = ns.input
    plan.fixture = ns.dataset
    plan.schema = _resolve_schema(ns)
    if ns.input is not None and not any(
            (ns.time_col, ns.status_col, ns.status_map, ns.event_types)):
        stem, ext = os.path.splitext(os.path.basename(ns.input))
        if ext == ".csv" and stem in FIXTURES:
            plan.infer_fixture = stem
    plan.output_format = ns.format
    plan.alpha = ns.alpha
    plan.time_scale = ns.time_scale
    if ns.time_scale is not None and ns.time_scale <= 0:
        raise UsageError("--time-scale must be positive")
    if ns.alpha is not None and not 0 < ns.alpha < 1:
        raise UsageError("--alpha must be in (0,1)")

    if ns.epsilon is not None:
        if ns.epsilon <= 0:
            raise UsageError("--epsilon must be positive")
        plan.epsilon = ns.epsilon
        if ns.seed is not None:
            plan.seed = _parse_seed(ns.seed)
        else:
            plan.seed = secrets.randbits(63)
            plan.seed_was_defaulted = True
    elif ns.seed is not None:
        raise UsageError("--seed requires --epsilon")

    if ns.subcommand == "logrank" and plan.schema.group_column is None:
        raise UsageError("logrank requires --group-col (or a fixture with groups)")
    if ns.subcommand == "cuminc":
        if ns.event_type is None:
            raise UsageError("cuminc requires --event-type")
        plan.event_type = ns.event_type
    return plan


def _input_schema(plan: CommandPlan) -> SchemaConfig:
    """Schema for an --input file, upgrading to a fixture's when it matches."""
    if plan.infer_fixture is None:
        return plan.schema
    base = FIXTURES[plan.infer_fixture].schema
    try:
        with open(plan.input_path, newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh), [])
    except OSError:
        return plan.schema
    needed = {base.time_column, base.status_column}
    if base.group_column:
        needed.add(base.group_column)
    if not needed <= set(header):
        return plan.schema
    return replace(base, group_column=plan.schema.group_column or base.group_column)


def _load(plan: CommandPlan):
    if plan.fixture is not None:
        info = FIXTURES[plan.fixture]
        path = fixture_path(plan.fixture)
        with open(path, newline="", encoding="utf-8") as fh:
            return parse_dataset(fh, plan.schema, info.time_unit, plan.fixture)
    try:
        fh = open(plan.input_path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read {plan.input_path!r}: {exc}") from exc
    with fh:
        return parse_dataset(fh, _input_schema(plan), name=plan.input_path)


def _num(x) -> str:
    if x is None:
        return ""
    f = float(x)
    return str(int(f)) if f.is_integer() else repr(f)


def _provenance_dict(plan: CommandPlan) -> dict:
    if plan.epsilon is None:
        return {"mode": "exact"}
    return {"mode": "dp", "epsilon": plan.epsilon, "seed": plan.seed,
            "sensitivity": dp_mechanism.sensitivity()}


def _emit_privacy_preamble(plan: CommandPlan, out, err):
    if plan.epsilon is None:
        return
    eps = format_epsilon(plan.epsilon)
    if plan.seed_was_defaulted:
        print(f"note: seed drawn from system entropy: {plan.seed}", file=err)
    print(f"privacy: epsilon={eps} (one-shot)", file=err)
    print(f"# dp epsilon={eps} seed={plan.seed} sensitivity=2", file=out)


def _scaled(t: float, plan: CommandPlan) -> float:
    return t * plan.time_scale if plan.time_scale is not None else t


def _emit_curve(plan: CommandPlan, payload_points, extra: dict, out):
    """Shared writer for km/hazard/cuminc curve outputs."""
    has_band = any(len(p) == 4 for p in payload_points)
    if plan.output_format == "json":
        points = []
        for p in payload_points:
            entry = {"t": p[0], "estimate": p[1]}
            if len(p) == 4:
                entry["lower"], entry["upper"] = p[2], p[3]
            points.append(entry)
        doc = {"points": points, "provenance": _provenance_dict(plan), **extra}
        print(json.dumps(doc, indent=2, sort_keys=True), file=out)
    elif plan.output_format == "csv":
        header = "t,estimate,lower,upper" if has_band else "t,estimate"
        print(header, file=out)
        for p in payload_points:
            print(",".join(_num(v) for v in p), file=out)
    else:
        header = f"{'t':>12} {'estimate':>12}"
        if has_band:
            header += f" {'lower':>12} {'upper':>12}"
        print(header, file=out)
        for p in payload_points:
            print(" ".join(f"{_num(v):>12}" for v in p), file=out)


def _analysis_curve(plan: CommandPlan, ds):
    """The requested curve (km/hazard/cuminc), private when epsilon given."""
    if plan.epsilon is not None:
        params = dp_mechanism.PrivacyParams(epsilon=plan.epsilon, seed=plan.seed)
        if plan.subcommand == "km":
            if plan.alpha is not None:
                return dp_mechanism.dp_greenwood(ds, params, plan.alpha)
            return dp_mechanism.dp_km(ds, params)
        if plan.subcommand == "hazard":
            return dp_mechanism.dp_nelson_aalen(ds, params)
        return dp_mechanism.dp_cumulative_incidence(ds, params, plan.event_type)
    tbl = build_event_table(ds)
    if plan.subcommand == "km":
        curve = estimators.km_estimate(tbl)
        if plan.alpha is not None:
            curve = estimators.greenwood_ci(curve, tbl, plan.alpha)
        return curve
    if plan.subcommand == "hazard":
        return estimators.nelson_aalen(tbl)
    return estimators.cumulative_incidence(tbl, plan.event_type)


def execute(plan: CommandPlan, out=None, err=None) -> int:
    """Run the plan; returns the exit code and writes to the given streams."""
    out = out if out is not None else sys.stdout
    err = err if err is not None else sys.stderr

    if plan.subcommand == "datasets":
        return _execute_datasets(plan, out)
    if plan.subcommand == "bench":
        return _execute_bench(plan, out, err)

    ds = _load(plan)

    if plan.subcommand in ("km", "hazard", "cuminc"):
        curve = _analysis_curve(plan, ds)
        _emit_privacy_preamble(plan, out, err)
        rows = []
        if getattr(curve, "band", None) is not None:
            for (t, s), (lo, hi) in zip(curve.points, curve.band):
                rows.append((_scaled(t, plan), s, lo, hi))
        else:
            for t, v in curve.points:
                rows.append((_scaled(t, plan), v))
        extra = {"analysis": plan.subcommand, "dataset": ds.name or plan.input_path}
        if plan.subcommand == "cuminc":
            extra["event_type"] = plan.event_type
        if plan.subcommand == "km":
            extra["n_total"] = curve.n_total
            if curve.alpha is not None:
                extra["alpha"] = curve.alpha
        _emit_curve(plan, rows, extra, out)
        return 0

    if plan.subcommand == "median":
        alpha = plan.alpha if plan.alpha is not None else 0.05
        if plan.epsilon is not None:
            params = dp_mechanism.PrivacyParams(epsilon=plan.epsilon, seed=plan.seed)
            curve = dp_mechanism.dp_greenwood(ds, params, alpha)
        else:
            tbl = build_event_table(ds)
            curve = estimators.greenwood_ci(estimators.km_estimate(tbl), tbl, alpha)
        est = estimators.median_survival(curve)
        _emit_privacy_preamble(plan, out, err)
        median = _scaled(est.median, plan) if est.median is not None else None
        lo = _scaled(est.ci[0], plan) if est.ci and est.ci[0] is not None else None
        hi = _scaled(est.ci[1], plan) if est.ci and est.ci[1] is not None else None
        if plan.output_format == "json":
            doc = {"analysis": "median", "dataset": ds.name or plan.input_path,
                   "median": median, "ci_lower": lo, "ci_upper": hi,
                   "alpha": alpha, "provenance": _provenance_dict(plan)}
            print(json.dumps(doc, indent=2, sort_keys=True), file=out)
        elif plan.output_format == "csv":
            print("median,ci_lower,ci_upper", file=out)
            print(f"{_num(median)},{_num(lo)},{_num(hi)}", file=out)
        else:
            print(f"median survival: {_num(median) or 'not reached'}", file=out)
            print(f"{(1 - alpha) * 100:g}% ci: [{_num(lo) or '-'}, {_num(hi) or '-'}]",
                  file=out)
        return 0

    if plan.subcommand == "logrank":
        groups = split_by_group(ds)
        if len(groups) != 2:
            raise EstimationError(
                f"logrank compares exactly 2 groups, found {len(groups)}")
        if plan.epsilon is not None:
            params = dp_mechanism.PrivacyParams(epsilon=plan.epsilon, seed=plan.seed)
            result = dp_mechanism.dp_logrank(groups, params)
        else:
            grid = sorted({r.time for g in groups.values()
                           for r in g.records if r.status > 0})
            tables = [build_event_table(g, grid=grid) for g in groups.values()]
            result = estimators.logrank(tables[0], tables[1], labels=tuple(groups))
        _emit_privacy_preamble(plan, out, err)
        if plan.output_format == "json":
            doc = {"analysis": "logrank", "dataset": ds.name or plan.input_path,
                   "z": result.z, "chi_square": result.chi_square,
                   "p_value": result.p_value,
                   "groups": [{"label": g.label, "observed": g.observed,
                               "expected": g.expected} for g in result.per_group],
                   "provenance": _provenance_dict(plan)}
            print(json.dumps(doc, indent=2, sort_keys=True), file=out)
        elif plan.output_format == "csv":
            print("z,chi_square,p_value", file=out)
            print(f"{result.z!r},{result.chi_square!r},{result.p_value!r}", file=out)
        else:
            for g in result.per_group:
                print(f"{g.label:>12}  observed={g.observed:g}  "
                      f"expected={g.expected:.2f}", file=out)
            print(f"z={result.z:.4f}  chi_square={result.chi_square:.4f}  "
                  f"p={result.p_value:.4g}", file=out)
        return 0

    raise UsageError(f"unknown subcommand {plan.subcommand!r}")


def _execute_datasets(plan: CommandPlan, out) -> int:
    if plan.datasets_action == "list":
        if plan.output_format == "json":
            doc = {"fixtures": [
                {"name": name, "time_unit": FIXTURES[name].time_unit,
                 "description": FIXTURES[name].description}
                for name in list_fixtures()]}
            print(json.dumps(doc, indent=2, sort_keys=True), file=out)
        else:
            for name in list_fixtures():
                print(name, file=out)
        return 0
    # export copies bytes: fixtures keep their CRLF row terminators
    path = fixture_path(plan.datasets_name)
    try:
        with open(path, "rb") as fh:
            content = fh.read()
    except OSError as exc:
        raise DatasetError(f"cannot read fixture {plan.datasets_name!r}: {exc}") from exc
    if plan.datasets_out:
        with open(plan.datasets_out, "wb") as fh:
            fh.write(content)
    else:
        out.write(content.decode("utf-8"))
    return 0


def _execute_bench(plan: CommandPlan, out, err) -> int:
    cfg = ExperimentConfig(
        datasets=plan.bench_datasets,
        epsilons=plan.bench_epsilons,
        runs=plan.bench_runs,
        base_seed=plan.seed,
        alpha=plan.alpha,
        analyses=plan.bench_analyses,
        time_scale=plan.time_scale,
        cuminc_event_type=plan.event_type,
        threads=plan.bench_threads,
    )
    report = harness.run_experiment(cfg)
    for eps in plan.bench_epsilons:
        print(f"privacy: epsilon={format_epsilon(eps)} (one-shot)", file=err)
    if plan.export_curves_dir:
        for name in plan.bench_datasets:
            harness.export_curve_bundle(name, plan.bench_epsilons,
                                        plan.seed, plan.export_curves_dir)
    if plan.output_format == "json":
        print(report.to_json(include_timings=plan.bench_timings), file=out)
    elif plan.output_format == "csv":
        print("dataset,epsilon,statistic,run,value", file=out)
        for ds_name, stats in report.baselines.items():
            for stat, value in stats.items():
                print(f"{ds_name},,{stat},baseline,{_num(value)}", file=out)
        for cell in report.cells:
            for stat, rs in cell.stats.items():
                for i, v in enumerate(rs.values, start=1):
                    print(f"{cell.dataset},{format_epsilon(cell.epsilon)},"
                          f"{stat},{i},{_num(v)}", file=out)
                print(f"{cell.dataset},{format_epsilon(cell.epsilon)},"
                      f"{stat},mean,{_num(rs.mean)}", file=out)
                print(f"{cell.dataset},{format_epsilon(cell.epsilon)},"
                      f"{stat},median,{_num(rs.median)}", file=out)
            if cell.significance_flips is not None:
                print(f"{cell.dataset},{format_epsilon(cell.epsilon)},"
                      f"significance_flips,,{cell.significance_flips}", file=out)
    else:
        out.write(report.render_table(include_timings=plan.bench_timings))
    return 0


def main(argv=None) -> int:
    """Entry point; returns the process exit code."""
    argv = argv if argv is not None else sys.argv[1:]
    try:
        plan = parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return execute(plan)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, EstimationError, HarnessError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
