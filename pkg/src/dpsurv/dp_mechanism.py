"""Differentially private release of event tables and derived statistics.

The release works on the count summary of a dataset: the initial at-risk
count plus the event count at each distinct event time. Every entry receives
independent Laplace noise scaled to sensitivity/epsilon (one individual can
change the summary by at most 2 in L1: one event entry plus the at-risk
entry). The at-risk column is then rebuilt by the subtraction recurrence
r_j = r_{j-1} - d_{j-1}, integrity violations are repaired, and every
downstream statistic is computed from the released table alone, so a single
noise application covers all of them.

Censored withdrawals are deliberately not subtracted during reconstruction;
on censored data the rebuilt at-risk counts are biased upward. This follows
the release procedure exactly rather than inventing a correction that would
need additional noisy counts.
"""

import hashlib
import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from .dataset import EventTable, SurvivalDataset, build_event_table
from . import estimators
from .estimators import (
    EstimationError, HazardCurve, IncidenceCurve, LogrankResult, SurvivalCurve,
)

SENSITIVITY = 2.0
_MASK64 = (1 << 64) - 1


def sensitivity() -> float:
    """L1 sensitivity of the released count summary: always 2."""
    return SENSITIVITY


@dataclass(frozen=True)
class PrivacyParams:
    """Budget epsilon, noise sensitivity, and the seed pinning the draws.

    delta is fixed at 0: the mechanism is pure epsilon-DP. sensitivity
    defaults to 2 and is overridable only for experiments.
    """

    epsilon: float
    sensitivity: float = SENSITIVITY
    delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.sensitivity <= 0:
            raise ValueError(f"sensitivity must be positive, got {self.sensitivity}")
        if self.delta != 0:
            raise ValueError("only pure epsilon-DP is supported: delta is fixed at 0")
        if not 0 <= self.seed <= _MASK64:
            raise ValueError("seed must fit in 64 unsigned bits")

    @property
    def scale(self) -> float:
        return self.sensitivity / self.epsilon


@dataclass(frozen=True)
class PartialMatrix:
    """The released count summary: initial at-risk count plus event counts.

    ``events`` is flat; with K event types it concatenates one full column
    per type (type 1's counts at every time, then type 2's, ...). Before
    noising all entries are counts; after noising they are unconstrained
    reals.
    """

    r1: float
    events: tuple
    event_type_count: int = 1

    def __post_init__(self):
        if self.event_type_count < 1:
            raise ValueError("event_type_count must be >= 1")
        if len(self.events) % self.event_type_count != 0:
            raise ValueError("events length must be a multiple of event_type_count")

    @property
    def k(self) -> int:
        return len(self.events) // self.event_type_count

    @classmethod
    def from_event_table(cls, tbl: EventTable) -> "PartialMatrix":
        if tbl.k == 0:
            raise EstimationError("empty event table: nothing to privatize")
        if tbl.events_by_type is None:
            return cls(r1=tbl.at_risk[0], events=tuple(tbl.events))
        flat = tuple(x for row in tbl.events_by_type for x in row)
        return cls(r1=tbl.at_risk[0], events=flat,
                   event_type_count=len(tbl.events_by_type))


class NoiseSource:
    """Deterministic Laplace deviate stream from a 64-bit seed.

    Each draw maps one uniform in the open interval (0,1) through the
    inverse CDF; identical seed and draw order give identical deviates.
    ``draws`` counts consumed stream positions. Single-owner: not safe to
    share across threads.
    """

    def __init__(self, seed: int):
        if not 0 <= seed <= _MASK64:
            raise ValueError("seed must fit in 64 unsigned bits")
        self.seed = seed
        self.draws = 0
        self._bits = np.random.PCG64(seed)

    def next_uniform(self) -> float:
        """One uniform strictly inside (0,1) with 53-bit resolution."""
        self.draws += 1
        raw = int(self._bits.random_raw())
        return ((raw >> 11) + 1) / float((1 << 53) + 1)

    def laplace(self, scale: float) -> float:
        return laplace_inverse_cdf(self.next_uniform(), scale)


class ZeroNoiseSource(NoiseSource):
    """Test hook: counts draws but every deviate is exactly zero."""

    def laplace(self, scale: float) -> float:
        self.draws += 1
        return 0.0


def laplace_inverse_cdf(u: float, scale: float) -> float:
    """Laplace(0, scale) quantile at u in (0,1); u=0.5 maps to 0."""
    if not 0 < u < 1:
        raise ValueError(f"u must be strictly inside (0,1), got {u}")
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    half = u - 0.5
    if half == 0:
        return 0.0
    return -scale * math.copysign(1.0, half) * math.log(1.0 - 2.0 * abs(half))


def laplace_sample(scale: float, src: NoiseSource) -> float:
    """One Laplace deviate from the source at the given scale."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    return src.laplace(scale)


def perturb(m: PartialMatrix, p: PrivacyParams,
            src: Optional[NoiseSource] = None) -> PartialMatrix:
    """Add independent Laplace(sensitivity/epsilon) noise to every entry.

    Draw order is fixed (r1 first, then events in stored order) so a seed
    pins the whole release. k+1 draws are consumed for a single event type.
    """
    if src is None:
        src = NoiseSource(p.seed)
    noisy_r1 = m.r1 + src.laplace(p.scale)
    noisy_events = tuple(d + src.laplace(p.scale) for d in m.events)
    return PartialMatrix(r1=noisy_r1, events=noisy_events,
                         event_type_count=m.event_type_count)


def reconstruct(m: PartialMatrix, times: Sequence[float],
                params: Optional[PrivacyParams] = None) -> EventTable:
    """Rebuild the at-risk column from a noisy summary, without repair.

    r_1 is the noisy initial count and each later value subtracts the
    previous total event count. Results may be negative or increasing;
    repair() restores the table invariants. Censored withdrawals are not
    subtracted (see module docstring).
    """
    if len(times) != m.k:
        raise ValueError(f"times length {len(times)} != event count {m.k}")
    kt = m.event_type_count
    per_type = [m.events[i * m.k:(i + 1) * m.k] for i in range(kt)]
    totals = [sum(col[j] for col in per_type) for j in range(m.k)]
    at_risk = []
    r = m.r1
    for j in range(m.k):
        at_risk.append(r)
        r -= totals[j]
    return EventTable(
        times=tuple(float(t) for t in times),
        events=tuple(totals),
        at_risk=tuple(at_risk),
        n_total=m.r1,
        events_by_type=tuple(tuple(col) for col in per_type) if kt > 1 else None,
        provenance="dp",
        epsilon=params.epsilon if params is not None else None,
        seed=params.seed if params is not None else None,
    )


def repair(tbl: EventTable) -> EventTable:
    """Restore table integrity on a noised table.

    Event counts are clamped to [0, r_j] (per type, scaled proportionally
    when the type totals exceed r_j), the at-risk recurrence is re-run from
    the first entry, and the table is truncated from the first nonpositive
    at-risk value onward. The result satisfies 0 <= d_j <= r_j, r_j > 0,
    non-increasing at-risk, and a survival estimate within [0,1].
    """
    if not tbl.is_dp:
        raise ValueError("repair applies to noised tables only")
    kt = 1 if tbl.events_by_type is None else len(tbl.events_by_type)
    per_type = [list(tbl.events)] if tbl.events_by_type is None \
        else [list(row) for row in tbl.events_by_type]

    times = []
    events = []
    at_risk = []
    kept_types = [[] for _ in range(kt)]
    r = tbl.at_risk[0] if tbl.k else 0.0
    for j in range(tbl.k):
        if r <= 0:
            break
        type_vals = [max(col[j], 0.0) for col in per_type]
        total = sum(type_vals)
        if total > r:
            scale = r / total
            type_vals = [v * scale for v in type_vals]
            total = r
        times.append(tbl.times[j])
        events.append(total)
        at_risk.append(r)
        for col, v in zip(kept_types, type_vals):
            col.append(v)
        r -= total
    return EventTable(
        times=tuple(times),
        events=tuple(events),
        at_risk=tuple(at_risk),
        n_total=at_risk[0] if at_risk else 0.0,
        events_by_type=tuple(tuple(col) for col in kept_types) if kt > 1 else None,
        provenance="dp",
        epsilon=tbl.epsilon,
        seed=tbl.seed,
    )


def dp_event_table(ds: SurvivalDataset, p: PrivacyParams,
                   src: Optional[NoiseSource] = None) -> EventTable:
    """One-shot private release of a dataset's event table.

    Count summary extraction, noising, at-risk reconstruction, and repair,
    in that order. The event-time grid itself is carried over unperturbed.
    All derived statistics should reuse this one table; they then cost no
    further budget.
    """
    exact = build_event_table(ds)
    if exact.k == 0:
        raise EstimationError("dataset has no events: nothing to privatize")
    m = PartialMatrix.from_event_table(exact)
    noisy = perturb(m, p, src)
    return repair(reconstruct(noisy, exact.times, params=p))


def label_seed(base_seed: int, label: str) -> int:
    """Stable per-group seed: base xor a digest-derived 64-bit label hash."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return (base_seed ^ int.from_bytes(digest[:8], "big")) & _MASK64


def dp_group_tables(groups: Mapping[str, SurvivalDataset],
                    p: PrivacyParams) -> "dict[str, EventTable]":
    """Independent private release per group.

    Groups partition disjoint subpopulations, so by parallel composition
    the total budget stays epsilon. Each group gets its own noise stream
    seeded from the base seed and its label.
    """
    return {
        label: dp_event_table(ds, replace(p, seed=label_seed(p.seed, label)))
        for label, ds in groups.items()
    }


def align_to_grid(tbl: EventTable, grid: Sequence[float]) -> EventTable:
    """Express a repaired table on a superset time grid.

    At this table's own times the entries carry over; between them the
    at-risk count carries forward as r_j - d_j (the value the subtraction
    recurrence implies until the next event) with zero events. Before the
    first time the at-risk count is the initial one; after the last it is
    the final remainder.
    """
    own = {t: j for j, t in enumerate(tbl.times)}
    kt = 1 if tbl.events_by_type is None else len(tbl.events_by_type)
    times = list(grid)
    events = []
    at_risk = []
    by_type = [[] for _ in range(kt)]
    j_prev = -1
    for t in times:
        j = own.get(t)
        if j is not None:
            j_prev = j
            events.append(tbl.events[j])
            at_risk.append(tbl.at_risk[j])
            for i in range(kt):
                col = tbl.events if tbl.events_by_type is None else tbl.events_by_type[i]
                by_type[i].append(col[j])
        else:
            if j_prev < 0:
                r = tbl.at_risk[0] if tbl.k else 0.0
            else:
                r = tbl.at_risk[j_prev] - tbl.events[j_prev]
            events.append(0.0)
            at_risk.append(max(r, 0.0))
            for i in range(kt):
                by_type[i].append(0.0)
    return EventTable(
        times=tuple(float(t) for t in times),
        events=tuple(events),
        at_risk=tuple(at_risk),
        n_total=tbl.n_total,
        events_by_type=tuple(tuple(col) for col in by_type) if kt > 1 else None,
        provenance=tbl.provenance,
        epsilon=tbl.epsilon,
        seed=tbl.seed,
    )


def dp_logrank(groups: Mapping[str, SurvivalDataset], p: PrivacyParams) -> LogrankResult:
    """Private two-group logrank: noise each arm once, then post-process."""
    if len(groups) != 2:
        raise EstimationError(f"logrank compares exactly 2 groups, got {len(groups)}")
    tables = dp_group_tables(groups, p)
    (label_a, tbl_a), (label_b, tbl_b) = tables.items()
    grid = sorted(set(tbl_a.times) | set(tbl_b.times))
    return estimators.logrank(
        align_to_grid(tbl_a, grid), align_to_grid(tbl_b, grid),
        labels=(label_a, label_b))


def dp_km(ds: SurvivalDataset, p: PrivacyParams) -> SurvivalCurve:
    """Private survival curve: one table release, then the plain estimator."""
    return estimators.km_estimate(dp_event_table(ds, p))


def dp_greenwood(ds: SurvivalDataset, p: PrivacyParams, alpha: float) -> SurvivalCurve:
    """Private survival curve with confidence band from the same release."""
    tbl = dp_event_table(ds, p)
    return estimators.greenwood_ci(estimators.km_estimate(tbl), tbl, alpha)


def dp_nelson_aalen(ds: SurvivalDataset, p: PrivacyParams) -> HazardCurve:
    """Private cumulative hazard from a single table release."""
    return estimators.nelson_aalen(dp_event_table(ds, p))


def dp_cumulative_incidence(ds: SurvivalDataset, p: PrivacyParams,
                            event_type: int) -> IncidenceCurve:
    """Private cumulative incidence from a single table release."""
    return estimators.cumulative_incidence(dp_event_table(ds, p), event_type)
