"""Survival dataset parsing, grouping, and event-table construction.

A dataset is a flat list of (time, status) records, optionally labelled with a
group. Status 0 is censored; statuses 1..K are event types (K=1 for plain
survival). All types are immutable after construction and safe to share
across threads.
"""

import csv
import os
from dataclasses import dataclass
from importlib import resources
from math import isfinite
from typing import IO, Iterable, Mapping, Optional, Sequence, Union


class DatasetError(Exception):
    """Base for all data-layer failures."""


class SchemaError(DatasetError):
    """The schema is malformed or does not match the input header."""


class RowError(DatasetError):
    """A data row is invalid; carries its 1-based line number."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: follow-up time, status code, optional group label."""

    time: float
    status: int
    group: Optional[str] = None


@dataclass(frozen=True)
class SchemaConfig:
    """Names the CSV columns and how raw status values map to codes 0..K."""

    time_column: str
    status_column: str
    group_column: Optional[str] = None
    event_type_count: int = 1
    status_mapping: Optional[Mapping[str, int]] = None

    def __post_init__(self):
        names = [self.time_column, self.status_column]
        if self.group_column is not None:
            names.append(self.group_column)
        if len(set(names)) != len(names):
            raise SchemaError(f"column names must be distinct, got {names}")
        if self.event_type_count < 1:
            raise SchemaError("event_type_count must be >= 1")
        if self.status_mapping is not None:
            bad = {v for v in self.status_mapping.values()
                   if not 0 <= v <= self.event_type_count}
            if bad:
                raise SchemaError(
                    f"status_mapping values {sorted(bad)} outside 0..{self.event_type_count}")

    def map_status(self, raw: str, line_number: int) -> int:
        if self.status_mapping is not None:
            if raw not in self.status_mapping:
                raise RowError(f"unmapped status value {raw!r}", line_number)
            return self.status_mapping[raw]
        try:
            code = int(raw)
        except ValueError:
            raise RowError(f"unmapped status value {raw!r}", line_number) from None
        if not 0 <= code <= self.event_type_count:
            raise RowError(f"status {code} outside 0..{self.event_type_count}", line_number)
        return code


@dataclass(frozen=True)
class SurvivalDataset:
    """Immutable record collection with its event-type count and time unit."""

    records: tuple
    event_type_count: int = 1
    time_unit: str = ""
    name: str = ""

    @property
    def n(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class EventTable:
    """Counts at each distinct event time: events d_j and at-risk r_j.

    ``provenance`` is "exact" for tables counted from records and "dp" for
    noised tables; dp tables carry epsilon and seed. For K>1,
    ``events_by_type`` holds one row per event type, summing to ``events``.
    Exact tables have nonnegative integer counts; dp tables may hold
    arbitrary reals until repaired.
    """

    times: tuple
    events: tuple
    at_risk: tuple
    n_total: float
    events_by_type: Optional[tuple] = None
    provenance: str = "exact"
    epsilon: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self):
        k = len(self.times)
        if len(self.events) != k or len(self.at_risk) != k:
            raise ValueError("times, events, at_risk must have equal length")
        if any(self.times[i] >= self.times[i + 1] for i in range(k - 1)):
            raise ValueError("times must be strictly increasing")
        if self.provenance not in ("exact", "dp"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.provenance == "exact":
            if any(d < 0 for d in self.events) or any(r < 0 for r in self.at_risk):
                raise ValueError("exact tables require nonnegative counts")
            if k and self.n_total < self.at_risk[0]:
                raise ValueError("n_total smaller than initial at-risk count")
        if self.events_by_type is not None:
            for row in self.events_by_type:
                if len(row) != k:
                    raise ValueError("events_by_type rows must match times length")
            for j in range(k):
                total = sum(row[j] for row in self.events_by_type)
                if abs(total - self.events[j]) > 1e-9:
                    raise ValueError("events_by_type must sum to events")

    @property
    def k(self) -> int:
        return len(self.times)

    @property
    def is_dp(self) -> bool:
        return self.provenance == "dp"


def parse_dataset(source: Union[IO, Iterable[str]], schema: SchemaConfig,
                  time_unit: str = "", name: str = "") -> SurvivalDataset:
    """Read CSV rows into a SurvivalDataset, preserving input order.

    Raises SchemaError when a configured column is missing and RowError
    (with line number) for unparsable times, nonpositive times, or status
    values the schema cannot map.
    """
    reader = csv.DictReader(source)
    header = reader.fieldnames
    if header is None:
        raise SchemaError("input has no header row")
    needed = [schema.time_column, schema.status_column]
    if schema.group_column is not None:
        needed.append(schema.group_column)
    missing = [c for c in needed if c not in header]
    if missing:
        raise SchemaError(f"missing columns {missing}, header has {header}")

    records = []
    for line_number, row in enumerate(reader, start=2):
        raw_time = row[schema.time_column]
        try:
            t = float(raw_time)
        except (TypeError, ValueError):
            raise RowError(f"unparsable time {raw_time!r}", line_number) from None
        if not isfinite(t) or t <= 0:
            raise RowError(f"time must be a positive real, got {raw_time!r}", line_number)
        status = schema.map_status(row[schema.status_column], line_number)
        group = row[schema.group_column] if schema.group_column is not None else None
        records.append(SubjectRecord(t, status, group))
    return SurvivalDataset(tuple(records), schema.event_type_count, time_unit, name)


def split_by_group(ds: SurvivalDataset) -> "dict[str, SurvivalDataset]":
    """Partition records by group label, in order of first appearance."""
    if any(r.group is None for r in ds.records):
        raise SchemaError("dataset has no group labels; configure a group column")
    parts: "dict[str, list]" = {}
    for r in ds.records:
        parts.setdefault(r.group, []).append(r)
    if len(parts) < 2:
        raise DatasetError(f"need at least 2 groups, found {len(parts)}")
    return {
        label: SurvivalDataset(tuple(rows), ds.event_type_count, ds.time_unit,
                               f"{ds.name}[{label}]" if ds.name else label)
        for label, rows in parts.items()
    }


def build_event_table(ds: SurvivalDataset,
                      grid: Optional[Sequence[float]] = None) -> EventTable:
    """Count events and at-risk subjects at each distinct event time.

    A subject censored exactly at an event time is counted in the risk set at
    that time. With ``grid`` (a strictly increasing superset of this
    dataset's own event times, e.g. the union over groups), counts are
    produced at every grid time; times without an event here get d_j = 0.
    """
    own_times = sorted({r.time for r in ds.records if r.status > 0})
    if grid is None:
        times = own_times
    else:
        times = list(grid)
        if any(times[i] >= times[i + 1] for i in range(len(times) - 1)):
            raise ValueError("grid must be strictly increasing")
        if not set(own_times) <= set(times):
            raise ValueError("grid must contain every event time of the dataset")

    all_times = sorted(r.time for r in ds.records)
    k_types = ds.event_type_count
    by_type = [[0] * len(times) for _ in range(k_types)]
    events = [0] * len(times)
    at_risk = [0] * len(times)
    for j, t in enumerate(times):
        # count records with time >= t by binary search over sorted times
        lo, hi = 0, len(all_times)
        while lo < hi:
            mid = (lo + hi) // 2
            if all_times[mid] < t:
                lo = mid + 1
            else:
                hi = mid
        at_risk[j] = len(all_times) - lo
    index_of = {t: j for j, t in enumerate(times)}
    for r in ds.records:
        if r.status > 0:
            j = index_of[r.time]
            events[j] += 1
            by_type[r.status - 1][j] += 1
    return EventTable(
        times=tuple(float(t) for t in times),
        events=tuple(float(d) for d in events),
        at_risk=tuple(float(r) for r in at_risk),
        n_total=float(ds.n),
        events_by_type=tuple(tuple(float(x) for x in row) for row in by_type)
        if k_types > 1 else None,
    )


@dataclass(frozen=True)
class FixtureInfo:
    """A bundled dataset: file name, parsing schema, unit, description."""

    filename: str
    schema: SchemaConfig
    time_unit: str
    description: str
    event_names: Optional[Mapping[int, str]] = None


FIXTURES: "dict[str, FixtureInfo]" = {
    "cancer": FixtureInfo(
        "cancer.csv",
        SchemaConfig("time", "status", "sex", 1, {"1": 0, "2": 1}),
        "days", "advanced lung cancer cohort; groups male(1)/female(2)"),
    "gehan": FixtureInfo(
        "gehan.csv",
        SchemaConfig("time", "cens", "treat", 1),
        "weeks", "leukemia remission trial; groups control/6-MP"),
    "kidney": FixtureInfo(
        "kidney.csv",
        SchemaConfig("time", "status", "sex", 1),
        "days", "catheter infection recurrences; groups male(1)/female(2)"),
    "leukemia": FixtureInfo(
        "leukemia.csv",
        SchemaConfig("time", "status", "x", 1),
        "months", "AML maintenance trial; groups Maintained/Nonmaintained"),
    "mgus": FixtureInfo(
        "mgus.csv",
        SchemaConfig("futime", "death", "sex", 1),
        "months", "monoclonal gammopathy cohort (replica); groups M/F"),
    "myeloid": FixtureInfo(
        "myeloid.csv",
        SchemaConfig("futime", "death", "trt", 1),
        "days", "AML trial (replica); groups A/B"),
    "ovarian": FixtureInfo(
        "ovarian.csv",
        SchemaConfig("futime", "fustat", "rx", 1),
        "days", "ovarian carcinoma trial; groups rx 1/2"),
    "stanford": FixtureInfo(
        "stanford.csv",
        SchemaConfig("time", "status", "agegroup", 1),
        "days", "heart transplant series (replica); groups young/old"),
    "veteran": FixtureInfo(
        "veteran.csv",
        SchemaConfig("time", "status", "trt", 1),
        "days", "VA lung cancer trial; groups trt 1/2"),
    "pbc": FixtureInfo(
        "pbc.csv",
        SchemaConfig("time", "status", None, 2),
        "days", "biliary cirrhosis cohort (replica); competing risks",
        {1: "transplant", 2: "death"}),
    "transplant": FixtureInfo(
        "transplant.csv",
        SchemaConfig("futime", "event", None, 3,
                     {"censored": 0, "ltx": 1, "death": 2, "withdraw": 3}),
        "days", "liver waiting list (replica); competing risks",
        {1: "ltx", 2: "death", 3: "withdraw"}),
}

DATA_DIR_ENV = "DPSURV_DATA_DIR"


def fixture_path(name: str) -> str:
    """Absolute path of a fixture CSV, honoring the data-dir override."""
    if name not in FIXTURES:
        raise DatasetError(f"unknown fixture {name!r}; known: {', '.join(sorted(FIXTURES))}")
    override = os.environ.get(DATA_DIR_ENV)
    if override:
        return os.path.join(override, FIXTURES[name].filename)
    return str(resources.files(__package__) / "data" / FIXTURES[name].filename)


def list_fixtures() -> "list[str]":
    return sorted(FIXTURES)


def load_fixture(name: str) -> SurvivalDataset:
    """Parse a bundled fixture with its registered schema."""
    info = FIXTURES[name] if name in FIXTURES else None
    if info is None:
        raise DatasetError(f"unknown fixture {name!r}; known: {', '.join(sorted(FIXTURES))}")
    path = fixture_path(name)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return parse_dataset(fh, info.schema, info.time_unit, name)
    except OSError as exc:
        raise DatasetError(f"cannot read fixture {name!r}: {exc}") from exc
