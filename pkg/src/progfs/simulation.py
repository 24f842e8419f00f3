"""Copula-based trial generator and operating-characteristic harness.

Death and hospitalization times are coupled with a Gumbel-Hougaard copula
(Marshall-Olkin construction over a positive stable frailty) and mapped to
piecewise-exponential marginals.  Every replicate draws from its own Philox
stream keyed by ``(seed, replicate)``; subject ``i`` always consumes row ``i``
of that stream, so datasets do not depend on execution order or worker count.
"""

from __future__ import annotations

import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from progfs.errors import ArgumentError
from progfs.mvn import DEFAULT_ACCURACY
from progfs.profs import ExaminationSchedule, max_test, quantile_schedule
from progfs.winstat import TrialDataset, examination_scores

__all__ = [
    "PiecewiseHazard",
    "CopulaSpec",
    "ScenarioConfig",
    "TestSpec",
    "OcRow",
    "OcTable",
    "sample_piecewise_exponential",
    "sample_copula_pair",
    "sample_copula_pairs",
    "generate_trial",
    "parse_tests",
    "estimate_operating_characteristics",
    "clopper_pearson",
    "build_paper_scenarios",
    "table2_scenarios",
    "constant_effect_scenario",
    "short_term_scenario",
]

LAMBDA_DEATH = 0.0008
LAMBDA_HOSP = 0.0022
EFFECT_GRID = (0.0, 0.1, 0.2, 0.3)
KENDALL_GRID = (0.0, 0.5)
TABLE2_FOLLOW_UPS = (500.0, 1000.0, 1500.0)
FIGURE_FOLLOW_UPS = (300.0, 500.0, 800.0, 1000.0, 1500.0)
TABLE2_POWER_EFFECTS = ((0.0, 0.3), (0.1, 0.2), (0.3, 0.0), (0.2, 0.1))
TABLE2_TESTS = ("profs2", "profs4", "profs5", "profs10")
POWER_REPLICATES = 2000
TYPE1_REPLICATES = 5000
_UNIFORMS_PER_SUBJECT = 4


@dataclass(frozen=True)
class PiecewiseHazard:
    """Interval-constant hazard; the last interval is open-ended."""

    cut_points: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cut_points)
        rates = tuple(float(r) for r in self.rates)
        object.__setattr__(self, "cut_points", cuts)
        object.__setattr__(self, "rates", rates)
        if len(rates) != len(cuts) + 1:
            raise ArgumentError(f"need len(rates) == len(cut_points) + 1, got {len(rates)} and {len(cuts)}")
        if any(r <= 0 or not math.isfinite(r) for r in rates):
            raise ArgumentError(f"hazard rates must be positive and finite: {rates}")
        if any(c <= 0 for c in cuts) or any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ArgumentError(f"cut points must be positive and strictly increasing: {cuts}")

    @classmethod
    def constant(cls, rate: float) -> "PiecewiseHazard":
        return cls((), (rate,))

    def _knots(self):
        edges = np.array((0.0,) + self.cut_points)
        rates = np.array(self.rates)
        widths = np.diff(edges)
        cum = np.concatenate(([0.0], np.cumsum(rates[:-1] * widths)))
        return edges, rates, cum

    def cumulative(self, t):
        """Cumulative hazard at ``t`` (vectorized)."""
        edges, rates, cum = self._knots()
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(edges, t, side="right") - 1
        k = np.clip(k, 0, len(rates) - 1)
        return cum[k] + rates[k] * (t - edges[k])

    def survival(self, t):
        return np.exp(-self.cumulative(t))

    def inverse_cumulative(self, x):
        """Time ``t`` with cumulative hazard ``x`` (vectorized, ``x >= 0``)."""
        edges, rates, cum = self._knots()
        x = np.asarray(x, dtype=float)
        k = np.searchsorted(cum, x, side="right") - 1
        k = np.clip(k, 0, len(rates) - 1)
        return edges[k] + (x - cum[k]) / rates[k]


def sample_piecewise_exponential(hazard: PiecewiseHazard, u: float) -> float:
    """Inverse-transform draw: the ``t`` solving ``Lambda(t) = -log(1 - u)``."""
    if not 0 < u < 1:
        raise ArgumentError(f"u must lie in (0, 1), got {u}")
    return float(hazard.inverse_cumulative(-math.log1p(-u)))


@dataclass(frozen=True)
class CopulaSpec:
    """Gumbel-Hougaard dependence ``beta >= 1`` with death/hospitalization marginals for one arm."""

    beta: float
    death: PiecewiseHazard
    hosp: PiecewiseHazard

    def __post_init__(self):
        if not self.beta >= 1 or not math.isfinite(self.beta):
            raise ArgumentError(f"beta must be >= 1, got {self.beta}")

    @property
    def kendall_w(self) -> float:
        return 1.0 - 1.0 / self.beta

    @staticmethod
    def beta_for_kendall(w: float) -> float:
        if not 0 <= w < 1:
            raise ArgumentError(f"Kendall's W must lie in [0, 1), got {w}")
        return 1.0 / (1.0 - w)


def _positive_stable(alpha: float, theta: np.ndarray, expo: np.ndarray) -> np.ndarray:
    """Kanter's representation of S with ``E exp(-tS) = exp(-t**alpha)``.

    ``theta`` is uniform on (0, pi) and ``expo`` unit exponential.
    """
    if alpha == 1.0:
        return np.ones_like(theta)
    a = (np.sin(alpha * theta) / np.sin(theta) ** (1.0 / alpha)) * (
        np.sin((1.0 - alpha) * theta)
    ) ** ((1.0 - alpha) / alpha)
    return a / expo ** ((1.0 - alpha) / alpha)


def _hazard_levels(beta: float, uniforms: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative-hazard values (-log U_1, -log U_2) of copula pairs from (n, 4) uniforms."""
    theta = math.pi * uniforms[:, 0]
    frailty_exp = -np.log1p(-uniforms[:, 1])
    e1 = -np.log1p(-uniforms[:, 2])
    e2 = -np.log1p(-uniforms[:, 3])
    s = _positive_stable(1.0 / beta, theta, frailty_exp)
    inv = 1.0 / beta
    return (e1 / s) ** inv, (e2 / s) ** inv


def sample_copula_pairs(spec: CopulaSpec, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    """``size`` latent (death, hospitalization) time pairs."""
    x_d, x_h = _hazard_levels(spec.beta, _open_uniforms(rng, size))
    return spec.death.inverse_cumulative(x_d), spec.hosp.inverse_cumulative(x_h)


def sample_copula_pair(spec: CopulaSpec, rng: np.random.Generator) -> tuple[float, float]:
    d, h = sample_copula_pairs(spec, rng, 1)
    return float(d[0]), float(h[0])


def _open_uniforms(rng: np.random.Generator, size: int) -> np.ndarray:
    u = rng.random((size, _UNIFORMS_PER_SUBJECT))
    # keep strictly inside (0, 1) for the log and sine transforms
    return np.clip(u, 1e-300, 1.0 - 2.0**-53)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    treatment: CopulaSpec
    control: CopulaSpec
    follow_up: float
    n_total: int = 2000
    allocation: float = 0.5
    s_inf: float = 0.0
    replicates: int = POWER_REPLICATES
    alpha: float = 0.05
    seed: int = 20240101
    family: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.replicates < 1:
            raise ArgumentError(f"replicates must be >= 1, got {self.replicates}")
        if not 0 < self.alpha <= 1:
            raise ArgumentError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.n_total < 2:
            raise ArgumentError(f"n_total must be >= 2, got {self.n_total}")
        if not 0 < self.allocation < 1:
            raise ArgumentError(f"allocation must lie in (0, 1), got {self.allocation}")
        if not self.follow_up > 0:
            raise ArgumentError(f"follow_up must be > 0, got {self.follow_up}")
        n_treat = self.n_treated
        if n_treat == 0 or n_treat == self.n_total:
            raise ArgumentError("allocation leaves an arm empty")
        if not 0 <= self.s_inf < self.follow_up:
            raise ArgumentError(f"need 0 <= s_inf < follow_up, got {self.s_inf}")

    @property
    def n_treated(self) -> int:
        return int(round(self.n_total * self.allocation))

    @property
    def kendall_w(self) -> float:
        return self.treatment.kendall_w


def _replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replicate])))


def generate_trial(config: ScenarioConfig, replicate_index: int) -> TrialDataset:
    """One simulated trial, administratively censored at ``config.follow_up``.

    The first ``n_treated`` subjects are treated.
    """
    rng = _replicate_rng(config.seed, replicate_index)
    uniforms = _open_uniforms(rng, config.n_total)
    m = config.n_treated
    times = np.empty((config.n_total, 2))
    for sl, spec in ((slice(0, m), config.treatment), (slice(m, None), config.control)):
        x_d, x_h = _hazard_levels(spec.beta, uniforms[sl])
        times[sl, 0] = spec.death.inverse_cumulative(x_d)
        times[sl, 1] = spec.hosp.inverse_cumulative(x_h)
    s = config.follow_up
    censored = times > s
    arm = np.zeros(config.n_total, dtype=np.int8)
    arm[:m] = 1
    return TrialDataset(arm, np.minimum(times, s), censored)


@dataclass(frozen=True)
class TestSpec:
    """``fs`` (one examination at full follow-up) or ``profsP`` (P quantile examinations)."""

    name: str
    examinations: int

    @property
    def label(self) -> str:
        return "FS" if self.name == "fs" else f"ProFS-{self.examinations}"

    def schedule(self, follow_up: float, s_inf: float = 0.0) -> ExaminationSchedule:
        if self.name == "fs":
            return ExaminationSchedule.single(follow_up)
        return quantile_schedule(follow_up, self.examinations, s_inf)


_TEST_RE = re.compile(r"^(fs|profs(\d+))$")


def parse_tests(names: str | Iterable[str]) -> list[TestSpec]:
    if isinstance(names, str):
        names = [n for n in names.split(",") if n.strip()]
    out = []
    for raw in names:
        name = raw.strip().lower().replace("-", "")
        m = _TEST_RE.match(name)
        if not m or (m.group(2) is not None and int(m.group(2)) < 1):
            raise ArgumentError(f"unknown test {raw!r}; expected fs or profs<p>")
        out.append(TestSpec(name, 1 if m.group(1) == "fs" else int(m.group(2))))
    if not out:
        raise ArgumentError("no tests requested")
    return out


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Exact binomial confidence interval for ``k`` successes in ``n`` trials."""
    a = 1.0 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


def _mvn_seed(seed: int, replicate: int, test_index: int) -> int:
    return int(np.random.SeedSequence([seed, replicate, test_index, 7]).generate_state(1)[0])


def replicate_p_values(
    config: ScenarioConfig,
    tests: Sequence[TestSpec],
    replicate: int,
    accuracy: float = DEFAULT_ACCURACY,
    decide: bool = True,
) -> np.ndarray:
    """p-value of each test on one replicate; all tests share one scoring pass."""
    schedules = [t.schedule(config.follow_up, config.s_inf) for t in tests]
    horizons = sorted({h for s in schedules for h in s.times})
    ex = examination_scores(generate_trial(config, replicate), horizons)
    pos = {h: k for k, h in enumerate(horizons)}
    out = np.empty(len(tests))
    for t_i, sched in enumerate(schedules):
        idx = [pos[h] for h in sched.times]
        res = max_test(
            ex.z[idx],
            ex.sigma[np.ix_(idx, idx)],
            accuracy=accuracy,
            seed=_mvn_seed(config.seed, replicate, t_i),
            decision_threshold=config.alpha if decide else None,
        )
        out[t_i] = res.p_value
    return out


def _run_chunk(args) -> np.ndarray:
    config, tests, replicates, accuracy, decide = args
    return np.stack([replicate_p_values(config, tests, r, accuracy, decide) for r in replicates])


@dataclass(frozen=True)
class OcRow:
    scenario: str
    test: str
    rejections: int
    replicates: int
    rate: float
    ci_lo: float
    ci_hi: float


@dataclass(frozen=True)
class OcTable:
    config: ScenarioConfig
    tests: tuple[TestSpec, ...]
    rows: tuple[OcRow, ...]
    p_values: np.ndarray | None = None

    def rate(self, test: str) -> float:
        label = parse_tests(test)[0].label
        for row in self.rows:
            if row.test == label:
                return row.rate
        raise KeyError(test)


def default_workers() -> int:
    return os.cpu_count() or 1


def estimate_operating_characteristics(
    config: ScenarioConfig,
    tests: Sequence[TestSpec] | str,
    workers: int = 1,
    keep_p_values: bool = False,
    accuracy: float = DEFAULT_ACCURACY,
    decide: bool = True,
    pool: ProcessPoolExecutor | None = None,
) -> OcTable:
    """Rejection rate (p < alpha) of each test across ``config.replicates`` trials.

    Replicates are split into contiguous chunks across ``workers`` processes
    and reassembled in replicate order, so results are identical for any
    worker count.  ``decide=True`` lets each MVN evaluation stop once its
    p-value is resolved against ``alpha``; stored p-values are then only that
    precise.
    """
    if isinstance(tests, str):
        tests = parse_tests(tests)
    tests = tuple(tests)
    reps = np.arange(config.replicates)
    if workers <= 1 and pool is None:
        pvals = _run_chunk((config, tests, reps, accuracy, decide))
    else:
        n_chunks = max(1, min(len(reps), 4 * max(workers, 1)))
        chunks = [c for c in np.array_split(reps, n_chunks) if c.size]
        jobs = [(config, tests, c, accuracy, decide) for c in chunks]
        if pool is not None:
            parts = list(pool.map(_run_chunk, jobs))
        else:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                parts = list(ex.map(_run_chunk, jobs))
        pvals = np.concatenate(parts, axis=0)
    rows = []
    n = config.replicates
    for t_i, test in enumerate(tests):
        k = int((pvals[:, t_i] < config.alpha).sum()) if config.alpha < 1 else n
        lo, hi = clopper_pearson(k, n)
        rows.append(OcRow(config.name, test.label, k, n, k / n, lo, hi))
    return OcTable(config, tests, tuple(rows), pvals if keep_p_values else None)


def _arm(beta: float, death: PiecewiseHazard, hosp: PiecewiseHazard) -> CopulaSpec:
    return CopulaSpec(beta, death, hosp)


def _fmt(x: float) -> str:
    return f"{x:g}"


def constant_effect_scenario(
    alpha_d: float,
    alpha_h: float,
    kendall_w: float,
    follow_up: float,
    replicates: int | None = None,
    **kwargs,
) -> ScenarioConfig:
    """Exponential hazards ``lambda * exp(-effect * T)`` for each layer."""
    beta = CopulaSpec.beta_for_kendall(kendall_w)
    treat = _arm(
        beta,
        PiecewiseHazard.constant(LAMBDA_DEATH * math.exp(-alpha_d)),
        PiecewiseHazard.constant(LAMBDA_HOSP * math.exp(-alpha_h)),
    )
    ctrl = _arm(beta, PiecewiseHazard.constant(LAMBDA_DEATH), PiecewiseHazard.constant(LAMBDA_HOSP))
    null = alpha_d == 0 and alpha_h == 0
    if replicates is None:
        replicates = TYPE1_REPLICATES if null else POWER_REPLICATES
    family = f"const_aD{_fmt(alpha_d)}_aH{_fmt(alpha_h)}"
    return ScenarioConfig(
        name=f"{family}_W{_fmt(kendall_w)}_S{_fmt(follow_up)}",
        treatment=treat,
        control=ctrl,
        follow_up=follow_up,
        replicates=replicates,
        family=family,
        meta={"alpha_d": alpha_d, "alpha_h": alpha_h, "kendall_w": kendall_w},
        **kwargs,
    )


# layer: (treatment (cuts, rates), control (cuts, rates)); the other layer is
# constant and shared by both arms.  In both scenarios the arms' cumulative
# hazards meet (day 700 for death, day 200 for hospitalization) and coincide
# afterwards.
SHORT_TERM_HAZARDS = {
    "death": (((500.0,), (0.0004, 0.0008)), ((300.0, 700.0), (0.0008, 0.0003, 0.0008))),
    "hosp": (((150.0,), (0.0013, 0.0022)), ((100.0, 200.0), (0.0022, 0.00085, 0.0022))),
}

# Hospitalization control rates in the order (0.00085, 0.0022, 0.00085).  The
# arms then never converge: after day 200 the control arm keeps a lower
# hazard for good.  Selectable with ``hazards=SHORT_TERM_HAZARDS_AS_PRINTED``.
SHORT_TERM_HAZARDS_AS_PRINTED = {
    "death": SHORT_TERM_HAZARDS["death"],
    "hosp": (((150.0,), (0.0013, 0.0022)), ((100.0, 200.0), (0.00085, 0.0022, 0.00085))),
}

SHORT_TERM_READINGS = {"converging": SHORT_TERM_HAZARDS, "printed": SHORT_TERM_HAZARDS_AS_PRINTED}


def short_term_scenario(
    layer: str,
    kendall_w: float,
    follow_up: float,
    replicates: int | None = None,
    hazards: dict | str = "converging",
    **kwargs,
) -> ScenarioConfig:
    """Piecewise-exponential short-term effect on ``layer`` ("death" or "hosp").

    ``hazards`` is a table shaped like ``SHORT_TERM_HAZARDS`` or the name of a
    built-in reading ("converging" or "printed").
    """
    if isinstance(hazards, str):
        if hazards not in SHORT_TERM_READINGS:
            raise ArgumentError(f"unknown short-term reading {hazards!r}")
        hazards = SHORT_TERM_READINGS[hazards]
    table = hazards
    if layer not in table:
        raise ArgumentError(f"layer must be one of {sorted(table)}, got {layer!r}")
    (t_cuts, t_rates), (c_cuts, c_rates) = table[layer]
    beta = CopulaSpec.beta_for_kendall(kendall_w)
    varied_t = PiecewiseHazard(t_cuts, t_rates)
    varied_c = PiecewiseHazard(c_cuts, c_rates)
    if layer == "death":
        other = PiecewiseHazard.constant(LAMBDA_HOSP)
        treat, ctrl = _arm(beta, varied_t, other), _arm(beta, varied_c, other)
    else:
        other = PiecewiseHazard.constant(LAMBDA_DEATH)
        treat, ctrl = _arm(beta, other, varied_t), _arm(beta, other, varied_c)
    family = f"short_{layer}"
    return ScenarioConfig(
        name=f"{family}_W{_fmt(kendall_w)}_S{_fmt(follow_up)}",
        treatment=treat,
        control=ctrl,
        follow_up=follow_up,
        replicates=POWER_REPLICATES if replicates is None else replicates,
        family=family,
        meta={"layer": layer, "kendall_w": kendall_w},
        **kwargs,
    )


def table2_scenarios(replicates: int | None = None, **kwargs) -> list[ScenarioConfig]:
    """The 30 scenario rows of the examination-count table: 6 null, then 24 power."""
    out = []
    for w in KENDALL_GRID:
        for s in TABLE2_FOLLOW_UPS:
            out.append(constant_effect_scenario(0.0, 0.0, w, s, replicates, **kwargs))
    for a_d, a_h in TABLE2_POWER_EFFECTS:
        for w in (0.5, 0.0):
            for s in TABLE2_FOLLOW_UPS:
                out.append(constant_effect_scenario(a_d, a_h, w, s, replicates, **kwargs))
    return out


def build_paper_scenarios(
    follow_ups: Sequence[float] = FIGURE_FOLLOW_UPS, replicates: int | None = None, **kwargs
) -> dict[str, ScenarioConfig]:
    """Every constant-effect grid point plus both short-term scenarios, keyed by name."""
    grid = sorted(set(follow_ups) | set(TABLE2_FOLLOW_UPS))
    out: dict[str, ScenarioConfig] = {}
    for a_d in EFFECT_GRID:
        for a_h in EFFECT_GRID:
            for w in KENDALL_GRID:
                for s in grid:
                    cfg = constant_effect_scenario(a_d, a_h, w, s, replicates, **kwargs)
                    out[cfg.name] = cfg
    for layer in ("death", "hosp"):
        for w in KENDALL_GRID:
            for s in grid:
                cfg = short_term_scenario(layer, w, s, replicates, **kwargs)
                out[cfg.name] = cfg
    return out


def with_overrides(config: ScenarioConfig, **changes) -> ScenarioConfig:
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(config, **changes) if changes else config
