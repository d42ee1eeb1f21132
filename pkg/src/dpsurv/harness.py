"""Benchmark harness: epsilon sweeps with repeated seeded runs per dataset.

Each run releases one private event table per group (or per whole cohort
when no grouping is requested) and post-processes every requested statistic
from that table, mirroring one-budget-per-analysis accounting. Reports carry
the run-level values, their mean and median, the non-private baseline, and a
count of runs whose logrank significance verdict differs from the baseline.
Reports are pure functions of the configuration.
"""

import concurrent.futures
import json
import statistics as pystats
import time
from dataclasses import dataclass
from typing import Optional

from . import dp_mechanism, estimators
from .dataset import (
    EventTable, SurvivalDataset, build_event_table, load_fixture, split_by_group,
)

ANALYSES = ("km", "median", "logrank", "hazard", "cuminc")


class HarnessError(Exception):
    """An experiment failed; message carries (dataset, epsilon, run) context."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark: datasets x epsilons x runs, with chosen analyses."""

    datasets: tuple
    epsilons: tuple
    runs: int = 10
    base_seed: int = 0
    alpha: float = 0.05
    analyses: tuple = ("km", "median", "logrank")
    time_scale: Optional[float] = None
    cuminc_event_type: int = 1
    threads: int = 1

    def __post_init__(self):
        if not self.datasets:
            raise ValueError("at least one dataset required")
        if not self.epsilons or any(e <= 0 for e in self.epsilons):
            raise ValueError("epsilons must be a nonempty list of positive reals")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0,1)")
        unknown = [a for a in self.analyses if a not in ANALYSES]
        if unknown:
            raise ValueError(f"unknown analyses {unknown}; choose from {ANALYSES}")
        if not self.analyses:
            raise ValueError("at least one analysis required")
        if self.time_scale is not None and self.time_scale <= 0:
            raise ValueError("time_scale must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(frozen=True)
class RunStats:
    """Run-level values of one statistic plus aggregates over defined runs."""

    values: tuple
    mean: Optional[float]
    median: Optional[float]
    defined: int

    @classmethod
    def from_values(cls, values) -> "RunStats":
        present = [v for v in values if v is not None]
        return cls(
            values=tuple(values),
            mean=sum(present) / len(present) if present else None,
            median=pystats.median(present) if present else None,
            defined=len(present),
        )


@dataclass(frozen=True)
class ReportCell:
    """All runs for one (dataset, epsilon) pair."""

    dataset: str
    epsilon: float
    stats: dict
    significance_flips: Optional[int]
    wall_clock_seconds: float


@dataclass(frozen=True)
class ExperimentReport:
    """Baselines plus one cell per (dataset, epsilon), JSON-serializable."""

    config: ExperimentConfig
    baselines: dict
    cells: tuple

    def to_dict(self, include_timings: bool = False) -> dict:
        out = {
            "config": {
                "datasets": list(self.config.datasets),
                "epsilons": list(self.config.epsilons),
                "runs": self.config.runs,
                "base_seed": self.config.base_seed,
                "alpha": self.config.alpha,
                "analyses": list(self.config.analyses),
                "time_scale": self.config.time_scale,
                "cuminc_event_type": self.config.cuminc_event_type,
            },
            "baselines": {ds: dict(stats) for ds, stats in self.baselines.items()},
            "cells": [],
        }
        for cell in self.cells:
            entry = {
                "dataset": cell.dataset,
                "epsilon": cell.epsilon,
                "significance_flips": cell.significance_flips,
                "statistics": {
                    name: {
                        "values": list(rs.values),
                        "mean": rs.mean,
                        "median": rs.median,
                        "defined": rs.defined,
                    }
                    for name, rs in cell.stats.items()
                },
            }
            if include_timings:
                entry["wall_clock_seconds"] = cell.wall_clock_seconds
            out["cells"].append(entry)
        return out

    def to_json(self, include_timings: bool = False) -> str:
        return json.dumps(self.to_dict(include_timings), indent=2, sort_keys=True)

    def render_table(self, include_timings: bool = False) -> str:
        """Aligned human-readable summary; no stability guarantee."""
        lines = []
        for ds in self.config.datasets:
            lines.append(f"dataset: {ds}")
            base = self.baselines[ds]
            base_txt = "  ".join(f"{k}={_fmt(v)}" for k, v in base.items())
            lines.append(f"  baseline  {base_txt}")
            for cell in self.cells:
                if cell.dataset != ds:
                    continue
                parts = []
                for name, rs in cell.stats.items():
                    parts.append(f"{name} mean={_fmt(rs.mean)} median={_fmt(rs.median)}")
                if cell.significance_flips is not None:
                    parts.append(f"flips={cell.significance_flips}/{self.config.runs}")
                if include_timings:
                    parts.append(f"wall={cell.wall_clock_seconds:.3f}s")
                lines.append(f"  eps={_fmt(cell.epsilon):<8}" + "  ".join(parts))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "none"
    return f"{v:.6g}"


def _sup_deviation(curve_a, curve_b) -> float:
    ts = sorted({t for t, _ in curve_a.points} | {t for t, _ in curve_b.points})
    worst = 0.0
    for t in ts:
        worst = max(worst, abs(curve_a.value_at(t) - curve_b.value_at(t)))
    return worst


def _pool_pair(a: EventTable, b: EventTable) -> EventTable:
    """Merge two same-grid group tables into one whole-cohort table."""
    kt = 1 if a.events_by_type is None else len(a.events_by_type)
    by_type = None
    if kt > 1:
        by_type = tuple(
            tuple(x + y for x, y in zip(a.events_by_type[i], b.events_by_type[i]))
            for i in range(kt))
    return EventTable(
        times=a.times,
        events=tuple(x + y for x, y in zip(a.events, b.events)),
        at_risk=tuple(x + y for x, y in zip(a.at_risk, b.at_risk)),
        n_total=a.n_total + b.n_total,
        events_by_type=by_type,
        provenance=a.provenance,
        epsilon=a.epsilon,
        seed=a.seed,
    )


@dataclass(frozen=True)
class _DatasetContext:
    """Exact-table artifacts computed once per dataset."""

    dataset: SurvivalDataset
    groups: Optional[dict]
    exact_table: EventTable
    baseline: dict
    exact_km: "estimators.SurvivalCurve"
    baseline_p: Optional[float]


def _prepare(name: str, cfg: ExperimentConfig) -> _DatasetContext:
    ds = load_fixture(name)
    exact_table = build_event_table(ds)
    exact_km = estimators.km_estimate(exact_table)
    scale = cfg.time_scale if cfg.time_scale is not None else 1.0
    baseline = {}
    baseline_p = None
    groups = None

    if "km" in cfg.analyses:
        baseline["km_deviation"] = 0.0
    if "median" in cfg.analyses:
        banded = estimators.greenwood_ci(exact_km, exact_table, cfg.alpha)
        med = estimators.median_survival(banded).median
        baseline["median"] = med * scale if med is not None else None
    if "hazard" in cfg.analyses:
        hz = estimators.nelson_aalen(exact_table)
        baseline["hazard_at_end"] = hz.points[-1][1] if hz.points else 0.0
    if "cuminc" in cfg.analyses:
        ci = estimators.cumulative_incidence(exact_table, cfg.cuminc_event_type)
        baseline["cuminc_at_end"] = ci.points[-1][1] if ci.points else 0.0
    if "logrank" in cfg.analyses:
        groups = split_by_group(ds)
        if len(groups) != 2:
            raise HarnessError(f"dataset {name}: logrank needs exactly 2 groups")
        grid = sorted({r.time for g in groups.values() for r in g.records if r.status > 0})
        tables = [build_event_table(g, grid=grid) for g in groups.values()]
        lr = estimators.logrank(tables[0], tables[1], labels=tuple(groups))
        baseline["logrank_chi_square"] = lr.chi_square
        baseline["logrank_p"] = lr.p_value
        baseline_p = lr.p_value
    return _DatasetContext(ds, groups, exact_table, baseline, exact_km, baseline_p)


def _one_run(ctx: _DatasetContext, cfg: ExperimentConfig,
             epsilon: float, run: int) -> dict:
    """All requested statistics for one seeded run, from one table release."""
    seed = cfg.base_seed + run
    params = dp_mechanism.PrivacyParams(epsilon=epsilon, seed=seed)
    scale = cfg.time_scale if cfg.time_scale is not None else 1.0
    out = {}
    try:
        if ctx.groups is not None:
            tables = dp_mechanism.dp_group_tables(ctx.groups, params)
            (la, ta), (lb, tb) = tables.items()
            grid = sorted(set(ta.times) | set(tb.times))
            aligned_a = dp_mechanism.align_to_grid(ta, grid)
            aligned_b = dp_mechanism.align_to_grid(tb, grid)
            lr = estimators.logrank(aligned_a, aligned_b, labels=(la, lb))
            out["logrank_chi_square"] = lr.chi_square
            out["logrank_p"] = lr.p_value
            whole = _pool_pair(aligned_a, aligned_b)
        else:
            whole = dp_mechanism.dp_event_table(ctx.dataset, params)

        if "km" in cfg.analyses or "median" in cfg.analyses:
            dp_km_curve = estimators.km_estimate(whole)
            if "km" in cfg.analyses:
                out["km_deviation"] = _sup_deviation(dp_km_curve, ctx.exact_km)
            if "median" in cfg.analyses:
                banded = estimators.greenwood_ci(dp_km_curve, whole, cfg.alpha)
                med = estimators.median_survival(banded).median
                out["median"] = med * scale if med is not None else None
        if "hazard" in cfg.analyses:
            hz = estimators.nelson_aalen(whole)
            end = ctx.exact_table.times[-1]
            out["hazard_at_end"] = hz.value_at(end)
        if "cuminc" in cfg.analyses:
            ci = estimators.cumulative_incidence(whole, cfg.cuminc_event_type)
            end = ctx.exact_table.times[-1]
            out["cuminc_at_end"] = ci.value_at(end)
    except (estimators.EstimationError, ValueError) as exc:
        raise HarnessError(
            f"dataset {ctx.dataset.name}, epsilon {epsilon}, run {run}: {exc}") from exc
    return out


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Execute the full sweep. Deterministic given the configuration."""
    contexts = {name: _prepare(name, cfg) for name in cfg.datasets}
    stat_names = []
    if "logrank" in cfg.analyses:
        stat_names += ["logrank_chi_square", "logrank_p"]
    if "km" in cfg.analyses:
        stat_names.append("km_deviation")
    if "median" in cfg.analyses:
        stat_names.append("median")
    if "hazard" in cfg.analyses:
        stat_names.append("hazard_at_end")
    if "cuminc" in cfg.analyses:
        stat_names.append("cuminc_at_end")

    jobs = [(name, eps, run)
            for name in cfg.datasets
            for eps in cfg.epsilons
            for run in range(1, cfg.runs + 1)]
    results = {}
    durations = {(name, eps): 0.0 for name in cfg.datasets for eps in cfg.epsilons}

    def timed_run(name, eps, run):
        t0 = time.perf_counter()
        value = _one_run(contexts[name], cfg, eps, run)
        return value, time.perf_counter() - t0

    if cfg.threads == 1:
        for name, eps, run in jobs:
            value, elapsed = timed_run(name, eps, run)
            results[(name, eps, run)] = value
            durations[(name, eps)] += elapsed
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            futures = {
                pool.submit(timed_run, name, eps, run): (name, eps, run)
                for name, eps, run in jobs
            }
            for fut in concurrent.futures.as_completed(futures):
                key = futures[fut]
                value, elapsed = fut.result()
                results[key] = value
                durations[(key[0], key[1])] += elapsed

    cells = []
    for name in cfg.datasets:
        ctx = contexts[name]
        for eps in cfg.epsilons:
            per_run = [results[(name, eps, run)] for run in range(1, cfg.runs + 1)]
            stats = {
                stat: RunStats.from_values([r.get(stat) for r in per_run])
                for stat in stat_names
            }
            flips = None
            if ctx.baseline_p is not None:
                base_sig = ctx.baseline_p < cfg.alpha
                flips = sum(
                    1 for r in per_run
                    if r.get("logrank_p") is not None
                    and (r["logrank_p"] < cfg.alpha) != base_sig)
            cells.append(ReportCell(
                dataset=name, epsilon=eps, stats=stats,
                significance_flips=flips,
                wall_clock_seconds=durations[(name, eps)]))
    return ExperimentReport(
        config=cfg,
        baselines={name: contexts[name].baseline for name in cfg.datasets},
        cells=tuple(cells),
    )


def format_epsilon(e: float) -> str:
    """Compact epsilon text for filenames and headers: 3.0 -> "3"."""
    return f"{e:g}"


def export_curve_bundle(ds, epsilons, base_seed: int, out_dir: str = ".") -> "list[str]":
    """Write step-function survival CSVs: one exact file plus one per epsilon.

    ``ds`` is a fixture name or a SurvivalDataset. Files are named
    <name>_exact.csv and <name>_eps<e>.csv with columns t,estimate; private
    files start with a provenance header line. Every epsilon uses seed
    base_seed + 1, matching the first run of run_experiment.
    """
    import os

    dataset = load_fixture(ds) if isinstance(ds, str) else ds
    name = dataset.name or "dataset"
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    exact = estimators.km_estimate(build_event_table(dataset))
    path = os.path.join(out_dir, f"{name}_exact.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,estimate\n")
        for t, s in exact.points:
            fh.write(f"{t:g},{s!r}\n")
    paths.append(path)

    seed = base_seed + 1
    for eps in epsilons:
        params = dp_mechanism.PrivacyParams(epsilon=eps, seed=seed)
        curve = dp_mechanism.dp_km(dataset, params)
        path = os.path.join(out_dir, f"{name}_eps{format_epsilon(eps)}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# dp epsilon={format_epsilon(eps)} seed={seed} sensitivity=2\n")
            fh.write("t,estimate\n")
            for t, s in curve.points:
                fh.write(f"{t:g},{s!r}\n")
        paths.append(path)
    return paths
