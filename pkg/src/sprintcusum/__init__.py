"""Distribution-free CUSUM control charts with bootstrap-calibrated,
sprint-length-conditional control limits."""

from .calibration import (
    CalibrationConfig,
    CalibrationError,
    CalibrationResult,
    calibrate,
    calibrate_known,
)
from .cusum import (
    CusumState,
    LimitSchedule,
    RunLengthSummary,
    RunResult,
    StreamEnded,
    cusum_step,
    run_length,
    signal_check,
    summarize_runs,
)
from .density import FittedDensity, cv_bandwidth, fit_kde, normalize, smoothed_draw
from .distributions import DistributionModel, Kind, ShiftSpec, sample_stream

__all__ = [
    "CalibrationConfig",
    "CalibrationError",
    "CalibrationResult",
    "CusumState",
    "DistributionModel",
    "FittedDensity",
    "Kind",
    "LimitSchedule",
    "RunLengthSummary",
    "RunResult",
    "ShiftSpec",
    "StreamEnded",
    "calibrate",
    "calibrate_known",
    "cusum_step",
    "cv_bandwidth",
    "fit_kde",
    "normalize",
    "run_length",
    "sample_stream",
    "signal_check",
    "smoothed_draw",
    "summarize_runs",
]

__version__ = "0.1.0"
