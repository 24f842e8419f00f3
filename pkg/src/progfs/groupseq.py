"""Group-sequential ProFS with simulated efficacy boundaries.

Each look adds a balanced cohort of ``2l`` subjects whose follow-up is
complete.  Cohorts act as strata: scores are formed within a cohort and the
look statistics are running sums over cohorts.  At look ``q`` the boundary is
the ``ceil(V (1 - tau_q))``-th smallest of the observed max statistic pooled
with ``V - 1`` null draws; the null draws are cumulative sums of per-cohort
normal increments and are carried from look to look.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from progfs.errors import ArgumentError
from progfs.profs import ExaminationSchedule
from progfs.winstat import TrialDataset, examination_scores

__all__ = [
    "GsDesign",
    "LookRecord",
    "GsRunState",
    "GroupSequentialMonitor",
    "gs_look_statistics",
    "gs_boundaries_and_decide",
    "boundary_rank",
    "GsSimulationSummary",
    "simulate_group_sequential",
]

MIN_DRAWS = 100
CONTINUE = "continue"
STOP = "stop-efficacy"
REJECT = "final-reject"
ACCEPT = "final-accept"


def boundary_rank(draws: int, tau: float) -> int:
    """1-indexed ascending rank ``ceil(V (1 - tau))`` of the boundary in the pooled set."""
    x = draws * (1.0 - tau)
    nearest = round(x)
    # absorb representation error so that e.g. 500 * 0.95 gives 475
    x = nearest if abs(x - nearest) < 1e-9 else x
    return min(max(int(math.ceil(x)), 1), draws)


@dataclass(frozen=True)
class GsDesign:
    looks: int
    per_arm_increment: int
    stop_probs: tuple[float, ...]
    schedule: ExaminationSchedule
    draws: int = 10_000
    seed: int = 0

    def __post_init__(self):
        taus = tuple(float(t) for t in self.stop_probs)
        object.__setattr__(self, "stop_probs", taus)
        if self.looks < 1:
            raise ArgumentError(f"looks must be >= 1, got {self.looks}")
        if self.per_arm_increment < 1:
            raise ArgumentError(f"per_arm_increment must be >= 1, got {self.per_arm_increment}")
        if len(taus) != self.looks:
            raise ArgumentError(f"need {self.looks} stop probabilities, got {len(taus)}")
        if any(not 0 < t < 1 for t in taus):
            raise ArgumentError(f"stop probabilities must lie in (0, 1): {taus}")
        if any(b < a for a, b in zip(taus, taus[1:])):
            raise ArgumentError(f"stop probabilities must be nondecreasing: {taus}")
        if self.draws < MIN_DRAWS:
            raise ArgumentError(f"draws V={self.draws} is below the minimum {MIN_DRAWS}")

    def rank(self, look: int) -> int:
        return boundary_rank(self.draws, self.stop_probs[look])


@dataclass(frozen=True)
class LookRecord:
    look: int
    cumulative_n: int
    z_vec: np.ndarray
    sigma: np.ndarray
    r_vec: np.ndarray
    z_max: float
    boundary: float
    rank: int
    decision: str

    def to_dict(self) -> dict:
        return {
            "look": self.look,
            "cumulative_n": self.cumulative_n,
            "z_vec": self.z_vec.tolist(),
            "sigma": self.sigma.tolist(),
            "r_vec": self.r_vec.tolist(),
            "observed_max": self.z_max,
            "boundary": self.boundary,
            "boundary_rank": self.rank,
            "decision": self.decision,
        }


@dataclass
class GsRunState:
    design: GsDesign
    looks: list[LookRecord] = field(default_factory=list)
    draws: np.ndarray | None = None

    @property
    def decision(self) -> str | None:
        return self.looks[-1].decision if self.looks else None

    @property
    def finished(self) -> bool:
        return self.decision in (STOP, REJECT, ACCEPT)

    @property
    def rejected(self) -> bool:
        return self.decision in (STOP, REJECT)

    @property
    def stopped_at(self) -> int | None:
        """1-based look at which the null was rejected, if any."""
        return self.looks[-1].look if self.rejected else None


def _check_cohort(cohort: TrialDataset, l: int | None, name: str) -> int:
    m = cohort.M
    if m != cohort.N - m or m == 0:
        raise ArgumentError(f"cohort {name} is unbalanced: {m} treated vs {cohort.N - m} control")
    if l is not None and m != l:
        raise ArgumentError(f"cohort {name} has {m} subjects per arm, expected {l}")
    return m


def _cohort_increment(cohort: TrialDataset, schedule: ExaminationSchedule):
    ex = examination_scores(cohort, schedule.times)
    return ex.z, ex.sigma


def gs_look_statistics(
    cohorts: Sequence[TrialDataset], schedule: ExaminationSchedule, names: Sequence[str] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative examination statistics and covariance after ``len(cohorts)`` looks."""
    if not cohorts:
        raise ArgumentError("need at least one cohort")
    names = names or [str(k + 1) for k in range(len(cohorts))]
    l = _check_cohort(cohorts[0], None, names[0])
    z = np.zeros(schedule.p)
    sigma = np.zeros((schedule.p, schedule.p))
    for cohort, name in zip(cohorts, names):
        _check_cohort(cohort, l, name)
        dz, ds = _cohort_increment(cohort, schedule)
        z += dz
        sigma += ds
    return z, sigma


def _standardized_max(z: np.ndarray, var: np.ndarray) -> np.ndarray:
    """max_k |z_k| / sqrt(var_k) over examinations with positive variance (rows of ``z``)."""
    used = var > 0
    if not used.any():
        return np.zeros(z.shape[:-1])
    return np.max(np.abs(z[..., used]) / np.sqrt(var[used]), axis=-1)


def _normal_draws(sigma: np.ndarray, rng: np.random.Generator, count: int) -> np.ndarray:
    vals, vecs = np.linalg.eigh((sigma + sigma.T) / 2.0)
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return rng.standard_normal((count, sigma.shape[0])) @ root.T


class GroupSequentialMonitor:
    """Feeds cohorts one look at a time and records boundary decisions."""

    def __init__(self, design: GsDesign):
        self.design = design
        self.state = GsRunState(design)
        p = design.schedule.p
        self._z = np.zeros(p)
        self._sigma = np.zeros((p, p))
        self._sim = np.zeros((design.draws - 1, p))
        self._n = 0

    def add_look(self, cohort: TrialDataset, name: str | None = None) -> LookRecord:
        d = self.design
        q = len(self.state.looks)
        if self.state.finished:
            raise ArgumentError("the trial has already concluded")
        name = name or str(q + 1)
        _check_cohort(cohort, d.per_arm_increment, name)
        dz, dsigma = _cohort_increment(cohort, d.schedule)
        self._z = self._z + dz
        self._sigma = self._sigma + dsigma
        self._n += cohort.N

        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([d.seed, q])))
        self._sim = self._sim + _normal_draws(dsigma, rng, d.draws - 1)

        var = np.diag(self._sigma)
        observed = float(_standardized_max(self._z, var))
        pooled = np.sort(np.concatenate(([observed], _standardized_max(self._sim, var))))
        rank = d.rank(q)
        boundary = float(pooled[rank - 1])
        crossed = observed > boundary
        last = q == d.looks - 1
        if crossed:
            decision = REJECT if last else STOP
        else:
            decision = ACCEPT if last else CONTINUE

        r_vec = np.zeros_like(self._z)
        used = var > 0
        r_vec[used] = self._z[used] / np.sqrt(var[used])
        rec = LookRecord(
            q + 1, self._n, self._z.copy(), self._sigma.copy(), r_vec, observed, boundary, rank, decision
        )
        self.state.looks.append(rec)
        self.state.draws = self._sim
        return rec


def gs_boundaries_and_decide(
    design: GsDesign, cohorts: Iterable[TrialDataset], names: Sequence[str] | None = None
) -> GsRunState:
    """Run looks in order until a boundary is crossed or the cohorts run out."""
    monitor = GroupSequentialMonitor(design)
    for k, cohort in enumerate(cohorts):
        if monitor.state.finished:
            break
        monitor.add_look(cohort, None if names is None else names[k])
    return monitor.state


@dataclass(frozen=True)
class GsSimulationSummary:
    trials: int
    rejections: int
    stops_by_look: tuple[int, ...]
    boundaries: np.ndarray  # (trials, looks); NaN after an early stop

    @property
    def rate(self) -> float:
        return self.rejections / self.trials


def simulate_group_sequential(design: GsDesign, scenario, trials: int) -> GsSimulationSummary:
    """Run ``trials`` complete group-sequential trials on cohorts drawn from ``scenario``.

    Cohort ``q`` of trial ``t`` is replicate ``t * looks + q`` of the scenario
    (resized to ``2l`` subjects); trial ``t`` uses boundary seed ``(design.seed, t)``.
    """
    from dataclasses import replace

    from progfs.simulation import generate_trial

    if trials < 1:
        raise ArgumentError(f"trials must be >= 1, got {trials}")
    cohort_cfg = replace(scenario, n_total=2 * design.per_arm_increment, allocation=0.5)
    stops = [0] * design.looks
    bounds = np.full((trials, design.looks), np.nan)
    for t in range(trials):
        seed = int(np.random.SeedSequence([design.seed, t]).generate_state(1)[0])
        monitor = GroupSequentialMonitor(replace(design, seed=seed))
        for q in range(design.looks):
            rec = monitor.add_look(generate_trial(cohort_cfg, t * design.looks + q))
            bounds[t, q] = rec.boundary
            if monitor.state.finished:
                break
        if monitor.state.rejected:
            stops[monitor.state.stopped_at - 1] += 1
    return GsSimulationSummary(trials, sum(stops), tuple(stops), bounds)
