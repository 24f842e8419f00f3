"""Progressive follow-up max test across several examination times."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from progfs.errors import ArgumentError
from progfs.mvn import (
    DEFAULT_ACCURACY,
    CorrelationMatrix,
    MvnEstimate,
    symmetric_rectangle_probability,
)
from progfs.winstat import TrialDataset, examination_scores, restrict_to_horizon

__all__ = [
    "ExaminationSchedule",
    "ProfsResult",
    "ThresholdTime",
    "restrict_to_horizon",
    "quantile_schedule",
    "event_rate_threshold_time",
    "profs_statistics",
    "profs_test",
    "max_test",
]


@dataclass(frozen=True)
class ExaminationSchedule:
    """Strictly increasing examination times within ``[floor, horizon]``."""

    times: tuple[float, ...]
    horizon: float
    floor: float = 0.0

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        if not times:
            raise ArgumentError("a schedule needs at least one examination time")
        if self.floor < 0:
            raise ArgumentError(f"floor must be >= 0, got {self.floor}")
        if not times[0] > 0:
            raise ArgumentError(f"first examination must be > 0, got {times[0]}")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ArgumentError(f"examination times must be strictly increasing: {times}")
        if times[-1] > self.horizon * (1 + 1e-12):
            raise ArgumentError(f"last examination {times[-1]} exceeds horizon {self.horizon}")
        if times[0] < self.floor * (1 - 1e-12):
            raise ArgumentError(f"first examination {times[0]} precedes floor {self.floor}")

    @property
    def p(self) -> int:
        return len(self.times)

    @classmethod
    def single(cls, horizon: float) -> "ExaminationSchedule":
        """The plain FS test: one examination at full follow-up."""
        return cls((horizon,), horizon)


def quantile_schedule(horizon: float, p: int, floor: float = 0.0) -> ExaminationSchedule:
    """Equally spaced examinations ending at ``horizon``.

    Uses ``k * S / p`` when ``S / p >= floor``; otherwise ``p`` points spaced
    evenly from ``floor`` to ``S``.  With ``p = 1`` the schedule is ``(S,)``.
    """
    if p < 1:
        raise ArgumentError(f"p must be >= 1, got {p}")
    if floor < 0 or floor >= horizon:
        raise ArgumentError(f"need 0 <= floor < horizon, got floor={floor}, horizon={horizon}")
    if p == 1:
        times = [horizon]
    elif horizon / p >= floor:
        times = [horizon * k / p for k in range(1, p)] + [horizon]
    else:
        step = (horizon - floor) / (p - 1)
        times = [floor + k * step for k in range(p - 1)] + [horizon]
    return ExaminationSchedule(tuple(times), horizon, floor)


@dataclass(frozen=True)
class ThresholdTime:
    time: float | None
    reached: bool
    event_fraction: float


def event_rate_threshold_time(data: TrialDataset, layer: int, rate: float) -> ThresholdTime:
    """Earliest event time at which the pooled cumulative event fraction reaches ``rate``.

    Data-driven, so only appropriate for post-hoc or secondary analyses;
    primary analyses should fix the floor from design assumptions.
    """
    if not 0 <= layer < data.layer_count:
        raise ArgumentError(f"layer {layer} out of range for {data.layer_count} layers")
    if not 0 < rate < 1:
        raise ArgumentError(f"rate must lie in (0, 1), got {rate}")
    event_times = np.sort(data.times[~data.censored[:, layer], layer])
    if event_times.size == 0:
        return ThresholdTime(None, False, 0.0)
    unique = np.unique(event_times)
    counts = np.searchsorted(event_times, unique, side="right")
    fractions = counts / data.N
    hit = np.flatnonzero(fractions >= rate - 1e-12)
    if hit.size == 0:
        return ThresholdTime(None, False, float(fractions[-1]))
    k = hit[0]
    return ThresholdTime(float(unique[k]), True, float(fractions[k]))


def _schedule_times(schedule) -> np.ndarray:
    if isinstance(schedule, ExaminationSchedule):
        return np.asarray(schedule.times)
    return np.asarray(schedule, dtype=float)


def profs_statistics(
    data: TrialDataset, schedule: ExaminationSchedule, stratified: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Z at each examination and the closed-form covariance matrix between them."""
    ex = examination_scores(data, _schedule_times(schedule), stratified=stratified)
    return ex.z, ex.sigma


@dataclass(frozen=True)
class ProfsResult:
    schedule: ExaminationSchedule | None
    z_vec: np.ndarray
    sigma: np.ndarray
    omega: CorrelationMatrix | None
    r_vec: np.ndarray
    z_max: float
    p_value: float
    argmax_examination: int | None
    mvn: MvnEstimate | None
    used: np.ndarray
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "schedule": None if self.schedule is None else list(self.schedule.times),
            "z_vec": self.z_vec.tolist(),
            "sigma": self.sigma.tolist(),
            "omega": None if self.omega is None else self.omega.entries.tolist(),
            "r_vec": self.r_vec.tolist(),
            "z_max": self.z_max,
            "p_value": self.p_value,
            "argmax_examination": self.argmax_examination,
            "examinations_used": self.used.tolist(),
            "degenerate": self.degenerate,
            "mvn": None
            if self.mvn is None
            else {
                "value": self.mvn.value,
                "error_estimate": self.mvn.error_estimate,
                "samples_used": self.mvn.samples_used,
                "converged": self.mvn.converged,
                "near_singular": self.mvn.near_singular,
            },
        }


def max_test(
    z_vec,
    sigma,
    accuracy: float = DEFAULT_ACCURACY,
    seed: int = 0,
    schedule: ExaminationSchedule | None = None,
    decision_threshold: float | None = None,
) -> ProfsResult:
    """Joint two-sided max test from examination statistics and their covariance.

    Examinations with zero variance are left out of both the maximum and the
    correlation matrix.  ``decision_threshold`` is a significance level; the
    MVN refinement may stop once the p-value is resolved against it.
    """
    z_vec = np.asarray(z_vec, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    var = np.diag(sigma)
    used = var > 0
    r_vec = np.zeros_like(z_vec)
    r_vec[used] = z_vec[used] / np.sqrt(var[used])
    if not used.any():
        return ProfsResult(schedule, z_vec, sigma, None, r_vec, 0.0, 1.0, None, None, used, True)
    abs_r = np.where(used, np.abs(r_vec), -1.0)
    k_max = int(np.argmax(abs_r))
    z_max = float(abs_r[k_max])
    omega = CorrelationMatrix.from_covariance(sigma[np.ix_(used, used)])
    est = symmetric_rectangle_probability(
        omega,
        z_max,
        accuracy=accuracy,
        seed=seed,
        decision_threshold=None if decision_threshold is None else 1.0 - decision_threshold,
    )
    p_value = min(max(1.0 - est.value, 0.0), 1.0)
    return ProfsResult(
        schedule, z_vec, sigma, omega, r_vec, z_max, p_value, k_max, est, used, not used.all()
    )


def profs_test(
    data: TrialDataset,
    schedule: ExaminationSchedule,
    accuracy: float = DEFAULT_ACCURACY,
    seed: int = 0,
    stratified: bool = False,
) -> ProfsResult:
    """ProFS max test of no treatment difference at any examination time."""
    z_vec, sigma = profs_statistics(data, schedule, stratified=stratified)
    sched = schedule if isinstance(schedule, ExaminationSchedule) else None
    return max_test(z_vec, sigma, accuracy=accuracy, seed=seed, schedule=sched)

