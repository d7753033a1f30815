"""Multiply robust instrumental-variable estimation with possibly invalid
candidate instruments.

Generated interaction instruments remain valid whenever at least an
analyst-chosen number of the candidates satisfy the exclusion
restriction, without knowing which; the exposure effect is then estimated
by two-stage least squares with a conservative moment-based variance.
"""

from .dataset import Dataset, column_means, load_csv, write_csv
from .diagnostics import FTest, HausmanResult, first_stage_f, hausman_statistic, hausman_test
from .errors import (
    AggregationError,
    CapacityError,
    CollinearityError,
    CsvParseError,
    DataError,
    DegenerateInstrumentError,
    MissingColumnError,
    Mr2Error,
    ParameterError,
    SampleSizeError,
    UnsupportedError,
    WeakIdentificationError,
)
from .estimator import (
    FitResult,
    HOptCombination,
    fit_2sls,
    fit_mr2,
    fit_naive_2sls,
    fit_oracle_2sls,
    h_opt_combination,
    ratio_estimate,
    variance_homoskedastic,
    variance_sandwich,
)
from .instruments import (
    InstrumentMatrix,
    WeightVector,
    build_instruments,
    build_weighted_instruments,
    default_h,
    estimate_weights,
    interaction_basis,
)
from .montecarlo import (
    McReport,
    McScenario,
    PRESETS,
    format_report_table,
    generate,
    load_scenario,
    run,
)
from .subsets import SubsetFamily, complement, enumerate_family, partial_id_interactions

__version__ = "0.1.0"

__all__ = [
    "AggregationError", "CapacityError", "CollinearityError", "CsvParseError",
    "DataError", "Dataset", "DegenerateInstrumentError", "FTest", "FitResult",
    "HOptCombination", "HausmanResult", "InstrumentMatrix", "McReport",
    "McScenario", "MissingColumnError", "Mr2Error", "PRESETS", "ParameterError",
    "SampleSizeError", "SubsetFamily", "UnsupportedError",
    "WeakIdentificationError", "WeightVector", "build_instruments",
    "build_weighted_instruments", "column_means", "complement", "default_h",
    "enumerate_family", "estimate_weights", "first_stage_f", "fit_2sls",
    "fit_mr2", "fit_naive_2sls", "fit_oracle_2sls", "format_report_table",
    "generate", "h_opt_combination", "hausman_statistic", "hausman_test",
    "interaction_basis", "load_csv", "load_scenario", "partial_id_interactions",
    "ratio_estimate", "run", "variance_homoskedastic", "variance_sandwich",
    "write_csv",
]
