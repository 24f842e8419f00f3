"""Finkelstein-Schoenfeld and progressive follow-up (ProFS) tests for hierarchical composite endpoints."""

__version__ = "0.1.0"

from progfs.errors import ArgumentError, DataFormatError, NumericError, ProFSError, StructuralError
from progfs.groupseq import GsDesign, GsRunState, gs_boundaries_and_decide, gs_look_statistics
from progfs.mvn import (
    CorrelationMatrix,
    MvnEstimate,
    standard_normal_cdf,
    standard_normal_quantile,
    symmetric_rectangle_probability,
)
from progfs.profs import (
    ExaminationSchedule,
    ProfsResult,
    event_rate_threshold_time,
    profs_statistics,
    profs_test,
    quantile_schedule,
)
from progfs.winstat import (
    FsResult,
    SubjectRecord,
    TrialDataset,
    fs_statistic,
    fs_statistic_stratified,
    pairwise_score,
    restrict_to_horizon,
)

__all__ = [
    "ArgumentError",
    "CorrelationMatrix",
    "DataFormatError",
    "ExaminationSchedule",
    "FsResult",
    "GsDesign",
    "GsRunState",
    "MvnEstimate",
    "NumericError",
    "ProFSError",
    "ProfsResult",
    "StructuralError",
    "SubjectRecord",
    "TrialDataset",
    "event_rate_threshold_time",
    "fs_statistic",
    "fs_statistic_stratified",
    "gs_boundaries_and_decide",
    "gs_look_statistics",
    "pairwise_score",
    "profs_statistics",
    "profs_test",
    "quantile_schedule",
    "restrict_to_horizon",
    "standard_normal_cdf",
    "standard_normal_quantile",
    "symmetric_rectangle_probability",
]
