"""Sensor sampling trade-offs for low-cost air-quality sensor calibration.

Simulate duty-cycled acquisition plans on high-frequency raw sensor data,
run the filtering/aggregation/calibration pipeline and measure how the
calibration quality changes with the duty cycle.
"""

from .calibration import (
    CalibrationModel,
    CvSummary,
    FitMetrics,
    correlation_matrix,
    fit_mlr,
    forward_select,
    kfold_cv,
    predict,
    r2,
    rmse,
)
from .core import (
    AggregatedDataset,
    ChannelId,
    PeriodSeries,
    RawSeries,
    ReferenceSeries,
    align,
    derive_features,
    electrode_signal,
    load_raw_csv,
    load_reference_csv,
    write_raw_csv,
    write_reference_csv,
)
from .experiment import ExperimentConfig, ExperimentData, SweepReport, emit_report, load_config, run_plan, split, sweep
from .preprocess import AggregateSpec, FilterSpec, aggregate_window, filter_window, to_ref_series, to_sen_series
from .sampling import SamplingPlan, duty_cycle, energy_estimate, simulate, validate_plan

__version__ = "0.1.0"
