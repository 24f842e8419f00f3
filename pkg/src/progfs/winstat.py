"""Trial data model and the Finkelstein-Schoenfeld statistic.

Subjects are compared pairwise on an ordered list of time-to-event layers
(layer 0 has the highest priority).  On a layer, ``a`` beats ``b`` iff ``b``
has an observed event at ``t_b`` and ``a``'s observed time is strictly
greater than ``t_b``; anything else is indeterminate and the next layer is
consulted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from progfs._scoring import subject_scores
from progfs.errors import ArgumentError, StructuralError

__all__ = [
    "SubjectRecord",
    "TrialDataset",
    "ScoreTable",
    "StratumSummary",
    "FsResult",
    "ExaminationScores",
    "restrict_to_horizon",
    "pairwise_score",
    "fs_statistic",
    "fs_statistic_stratified",
    "examination_scores",
    "variance_factor",
]


@dataclass(frozen=True)
class SubjectRecord:
    """One participant: arm (1 = treatment), stratum, and per-layer ``(time, censored)``."""

    arm: int
    layer_times: tuple[tuple[float, bool], ...]
    stratum: str | None = None
    id: str | None = None

    def __post_init__(self):
        if self.arm not in (0, 1):
            raise ArgumentError(f"arm must be 0 or 1, got {self.arm!r}")
        layers = tuple((float(t), bool(c)) for t, c in self.layer_times)
        if not layers:
            raise StructuralError("a subject needs at least one layer")
        for t, _ in layers:
            if not math.isfinite(t) or t < 0:
                raise ArgumentError(f"observed times must be finite and >= 0, got {t}")
        object.__setattr__(self, "layer_times", layers)

    @property
    def layer_count(self) -> int:
        return len(self.layer_times)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class TrialDataset:
    """Column-oriented participant data.

    ``times`` and ``censored`` have shape ``(N, layer_count)``.  ``strata`` is
    ``None`` or an array of string labels (``""`` for a missing label).
    """

    arm: np.ndarray
    times: np.ndarray
    censored: np.ndarray
    strata: np.ndarray | None = None
    ids: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        arm = np.asarray(self.arm)
        times = np.asarray(self.times, dtype=np.float64)
        censored = np.asarray(self.censored, dtype=bool)
        if times.ndim == 1:
            times = times[:, None]
        if censored.ndim == 1:
            censored = censored[:, None]
        if times.ndim != 2 or times.shape != censored.shape:
            raise StructuralError(
                f"times {times.shape} and censored {censored.shape} must share shape (N, layers)"
            )
        if arm.shape != (times.shape[0],):
            raise StructuralError(f"arm has shape {arm.shape}, expected ({times.shape[0]},)")
        if times.shape[1] < 1:
            raise StructuralError("layer_count must be >= 1")
        if not np.isin(arm, (0, 1)).all():
            raise ArgumentError("arm values must be 0 or 1")
        if not np.isfinite(times).all() or (times < 0).any():
            raise ArgumentError("observed times must be finite and >= 0")
        object.__setattr__(self, "arm", _frozen(arm.astype(np.int8)))
        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "censored", _frozen(censored))
        if self.strata is not None:
            strata = np.asarray(self.strata, dtype=str)
            if strata.shape != arm.shape:
                raise StructuralError("strata must have one label per subject")
            object.__setattr__(self, "strata", _frozen(strata))
        if self.ids is not None:
            ids = tuple(str(i) for i in self.ids)
            if len(ids) != arm.shape[0]:
                raise StructuralError("ids must have one entry per subject")
            object.__setattr__(self, "ids", ids)

    @classmethod
    def from_records(cls, records: Iterable[SubjectRecord]) -> "TrialDataset":
        records = list(records)
        if not records:
            raise StructuralError("dataset has no subjects")
        n_layers = records[0].layer_count
        for k, rec in enumerate(records):
            if rec.layer_count != n_layers:
                raise StructuralError(
                    f"subject {k} has {rec.layer_count} layers, expected {n_layers}"
                )
        times = np.array([[t for t, _ in r.layer_times] for r in records], dtype=float)
        censored = np.array([[c for _, c in r.layer_times] for r in records], dtype=bool)
        has_strata = any(r.stratum is not None for r in records)
        strata = np.array([r.stratum or "" for r in records]) if has_strata else None
        has_ids = any(r.id is not None for r in records)
        ids = tuple(r.id if r.id is not None else str(k) for k, r in enumerate(records)) if has_ids else None
        return cls(np.array([r.arm for r in records]), times, censored, strata, ids)

    @property
    def N(self) -> int:
        return int(self.arm.shape[0])

    @property
    def M(self) -> int:
        return int(self.arm.sum())

    @property
    def layer_count(self) -> int:
        return int(self.times.shape[1])

    @property
    def events(self) -> np.ndarray:
        return ~self.censored

    @property
    def subjects(self) -> list[SubjectRecord]:
        out = []
        for i in range(self.N):
            out.append(
                SubjectRecord(
                    arm=int(self.arm[i]),
                    layer_times=tuple(zip(self.times[i].tolist(), self.censored[i].tolist())),
                    stratum=None if self.strata is None else str(self.strata[i]),
                    id=None if self.ids is None else self.ids[i],
                )
            )
        return out

    def take(self, index) -> "TrialDataset":
        """Subset of subjects (boolean mask or integer index)."""
        return TrialDataset(
            self.arm[index],
            self.times[index],
            self.censored[index],
            None if self.strata is None else self.strata[index],
            None if self.ids is None else tuple(np.asarray(self.ids, dtype=object)[index]),
        )

    def with_strata(self, strata: Sequence[str] | None) -> "TrialDataset":
        return TrialDataset(self.arm, self.times, self.censored, strata, self.ids)

    def flip_arms(self) -> "TrialDataset":
        return TrialDataset(1 - self.arm, self.times, self.censored, self.strata, self.ids)

    @staticmethod
    def concat(parts: Sequence["TrialDataset"], strata: Sequence[str] | None = None) -> "TrialDataset":
        """Stack datasets; ``strata`` (one label per part) overrides stored labels."""
        if not parts:
            raise StructuralError("nothing to concatenate")
        n_layers = {p.layer_count for p in parts}
        if len(n_layers) != 1:
            raise StructuralError(f"layer counts differ across parts: {sorted(n_layers)}")
        if strata is not None:
            labels = np.concatenate([np.full(p.N, str(s)) for p, s in zip(parts, strata)])
        elif all(p.strata is not None for p in parts):
            labels = np.concatenate([p.strata for p in parts])
        else:
            labels = None
        return TrialDataset(
            np.concatenate([p.arm for p in parts]),
            np.concatenate([p.times for p in parts]),
            np.concatenate([p.censored for p in parts]),
            labels,
        )


def _restrict(times: np.ndarray, censored: np.ndarray, t: float):
    return np.minimum(times, t), censored | (times > t)


def restrict_to_horizon(data: TrialDataset, t: float) -> TrialDataset:
    """Administratively censor every layer at time ``t``.

    An event exactly at ``t`` stays an event.
    """
    if not t > 0:
        raise ArgumentError(f"horizon must be > 0, got {t}")
    times, censored = _restrict(data.times, data.censored, float(t))
    return TrialDataset(data.arm, times, censored, data.strata, data.ids)


def pairwise_score(a: SubjectRecord, b: SubjectRecord, horizon: float) -> int:
    """+1 if ``a`` wins against ``b`` on the first determinate layer, -1 if it loses, else 0."""
    if a.layer_count != b.layer_count:
        raise StructuralError(f"layer counts differ: {a.layer_count} vs {b.layer_count}")
    if horizon < 0:
        raise ArgumentError(f"horizon must be non-negative, got {horizon}")
    for (ta, ca), (tb, cb) in zip(a.layer_times, b.layer_times):
        ca = ca or ta > horizon
        cb = cb or tb > horizon
        ta = min(ta, horizon)
        tb = min(tb, horizon)
        if not cb and ta > tb:
            return 1
        if not ca and tb > ta:
            return -1
    return 0


def variance_factor(n: int, m: int) -> float:
    """Closed-form permutation factor M(N-M) / (N(N-1))."""
    return m * (n - m) / (n * (n - 1))


@dataclass(frozen=True)
class ScoreTable:
    scores: np.ndarray
    pair_count: int


@dataclass(frozen=True)
class StratumSummary:
    label: str
    n: int
    m: int
    z: float
    variance: float


@dataclass(frozen=True)
class FsResult:
    z: float
    variance: float
    r: float
    score_table: ScoreTable
    per_stratum: tuple[StratumSummary, ...] | None = None
    degenerate: bool = False

    def p_value(self) -> float:
        """Two-sided normal p-value for ``r``."""
        from progfs.mvn import standard_normal_cdf

        return 1.0 if self.degenerate else 2.0 * standard_normal_cdf(-abs(self.r))


@dataclass(frozen=True)
class ExaminationScores:
    """Scores of every subject at each of ``K`` horizons.

    ``scores`` is ``(K, N)``; ``z`` is ``(K,)``; ``sigma`` is the ``(K, K)``
    closed-form covariance summed over strata (a single stratum when the
    computation is unstratified).
    """

    horizons: np.ndarray
    scores: np.ndarray
    pair_counts: np.ndarray
    z: np.ndarray
    sigma: np.ndarray
    strata: tuple[StratumSummary, ...]
    stratum_z: np.ndarray
    stratum_sigma: np.ndarray


def _check_arms(arm: np.ndarray, where: str = "dataset"):
    m = int(arm.sum())
    if arm.shape[0] < 2 or m == 0 or m == arm.shape[0]:
        raise ArgumentError(f"{where} needs both arms nonempty (N={arm.shape[0]}, M={m})")


def _blocks(data: TrialDataset, stratified: bool) -> list[tuple[str, np.ndarray]]:
    if not stratified:
        return [("", np.arange(data.N))]
    if data.strata is None or (data.strata == "").any():
        raise ArgumentError("stratified analysis needs a stratum label on every subject")
    labels, inverse = np.unique(data.strata, return_inverse=True)
    return [(str(lab), np.flatnonzero(inverse == k)) for k, lab in enumerate(labels)]


def examination_scores(
    data: TrialDataset, horizons: Sequence[float], stratified: bool = False
) -> ExaminationScores:
    """Score all subjects at every horizon; comparisons stay inside strata when stratified.

    Stratum contributions are accumulated in ascending label order.
    """
    horizons = np.asarray(horizons, dtype=float)
    if horizons.ndim != 1 or horizons.size == 0:
        raise ArgumentError("need at least one horizon")
    if (horizons <= 0).any():
        raise ArgumentError("horizons must be > 0")
    blocks = _blocks(data, stratified)
    if not stratified:
        _check_arms(data.arm)
    k = horizons.size
    scores = np.zeros((k, data.N), dtype=np.int64)
    pair_counts = np.zeros(k, dtype=np.int64)
    summaries = []
    stratum_z = np.zeros((len(blocks), k))
    stratum_sigma = np.zeros((len(blocks), k, k))
    for s, (label, idx) in enumerate(blocks):
        arm = data.arm[idx]
        if stratified:
            _check_arms(arm, f"stratum {label!r}")
        times = data.times[idx]
        events = ~data.censored[idx]
        for h_i, h in enumerate(horizons):
            t_h = np.minimum(times, h)
            e_h = events & (times <= h)
            u, wins = subject_scores(t_h, e_h)
            scores[h_i, idx] = u
            pair_counts[h_i] += int(wins.sum())
        block = scores[:, idx]
        treated = arm.astype(bool)
        z_s = block[:, treated].sum(axis=1)
        gram = block @ block.T
        c = variance_factor(idx.size, int(treated.sum()))
        stratum_z[s] = z_s
        stratum_sigma[s] = c * gram
        summaries.append(
            StratumSummary(label, int(idx.size), int(treated.sum()), float(z_s[-1]), float(c * gram[-1, -1]))
        )
    z = stratum_z.sum(axis=0)
    sigma = stratum_sigma.sum(axis=0)
    return ExaminationScores(
        horizons, scores, pair_counts, z, sigma, tuple(summaries), stratum_z, stratum_sigma
    )


def _fs_result(ex: ExaminationScores, stratified: bool) -> FsResult:
    z = float(ex.z[0])
    var = float(ex.sigma[0, 0])
    degenerate = var <= 0.0
    r = 0.0 if degenerate else z / math.sqrt(var)
    per = None
    if stratified:
        per = tuple(
            StratumSummary(s.label, s.n, s.m, float(ex.stratum_z[k, 0]), float(ex.stratum_sigma[k, 0, 0]))
            for k, s in enumerate(ex.strata)
        )
    return FsResult(
        z=z,
        variance=var,
        r=r,
        score_table=ScoreTable(ex.scores[0], int(ex.pair_counts[0])),
        per_stratum=per,
        degenerate=degenerate,
    )


def fs_statistic(data: TrialDataset, horizon: float) -> FsResult:
    """Unstratified FS statistic on data censored at ``horizon``."""
    return _fs_result(examination_scores(data, [horizon]), stratified=False)


def fs_statistic_stratified(data: TrialDataset, horizon: float) -> FsResult:
    """FS statistic with comparisons formed only within strata; Z and Var are summed."""
    return _fs_result(examination_scores(data, [horizon], stratified=True), stratified=True)
