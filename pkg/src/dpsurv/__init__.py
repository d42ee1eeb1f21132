"""Survival analysis with a differentially private release path.

The package exposes four layers:

* :mod:`dpsurv.dataset` parses subject-level records and builds event tables.
* :mod:`dpsurv.estimators` computes the classical quantities from a table:
  survival curves, confidence bands, medians, logrank tests, cumulative
  hazards and competing-risk incidence.
* :mod:`dpsurv.dp_mechanism` releases a noisy event table under pure
  epsilon-differential privacy; every downstream estimate is post-processing
  of that single release.
* :mod:`dpsurv.harness` sweeps epsilon values over bundled datasets and
  reports utility statistics across repeated seeded runs.

``dpsurv.cli`` provides the command-line front end installed as ``dpsurv``.
"""

from .dataset import (
    DatasetError,
    EventTable,
    FixtureInfo,
    RowError,
    SchemaConfig,
    SchemaError,
    SubjectRecord,
    SurvivalDataset,
    build_event_table,
    fixture_path,
    list_fixtures,
    load_fixture,
    parse_dataset,
    split_by_group,
)
from .dp_mechanism import (
    NoiseSource,
    PartialMatrix,
    PrivacyParams,
    ZeroNoiseSource,
    dp_cumulative_incidence,
    dp_event_table,
    dp_greenwood,
    dp_group_tables,
    dp_km,
    dp_logrank,
    dp_nelson_aalen,
    perturb,
    reconstruct,
    repair,
    sensitivity,
)
from .estimators import (
    EstimationError,
    HazardCurve,
    IncidenceCurve,
    LogrankResult,
    MedianEstimate,
    SurvivalCurve,
    cumulative_incidence,
    greenwood_ci,
    km_estimate,
    logrank,
    median_survival,
    nelson_aalen,
)
from .harness import (
    ExperimentConfig,
    ExperimentReport,
    HarnessError,
    export_curve_bundle,
    run_experiment,
)

__version__ = "0.1.0"

__all__ = [
    "DatasetError",
    "EstimationError",
    "EventTable",
    "ExperimentConfig",
    "ExperimentReport",
    "FixtureInfo",
    "HarnessError",
    "HazardCurve",
    "IncidenceCurve",
    "LogrankResult",
    "MedianEstimate",
    "NoiseSource",
    "PartialMatrix",
    "PrivacyParams",
    "RowError",
    "SchemaConfig",
    "SchemaError",
    "SubjectRecord",
    "SurvivalCurve",
    "SurvivalDataset",
    "ZeroNoiseSource",
    "build_event_table",
    "cumulative_incidence",
    "dp_cumulative_incidence",
    "dp_event_table",
    "dp_greenwood",
    "dp_group_tables",
    "dp_km",
    "dp_logrank",
    "dp_nelson_aalen",
    "export_curve_bundle",
    "fixture_path",
    "greenwood_ci",
    "km_estimate",
    "list_fixtures",
    "load_fixture",
    "logrank",
    "median_survival",
    "nelson_aalen",
    "parse_dataset",
    "perturb",
    "reconstruct",
    "repair",
    "run_experiment",
    "sensitivity",
    "split_by_group",
    "__version__",
]
