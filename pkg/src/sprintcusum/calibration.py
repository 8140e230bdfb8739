"""Calibration of sprint-length-conditional control limits.

Three stages, all driven by resampling from the (estimated or exactly
known) in-control law:

1. pick the allowance ``k`` by bisection so the mean first-sprint length
   of bootstrap streams matches a target;
2. take preliminary limits as upper order statistics of the CUSUM value
   conditional on each sprint length, at tail level
   alpha = 1 / (p^2 * ARL0) with p the in-control exceedance rate of k;
3. fine-tune the whole limit vector by bracketed linear interpolation
   until the simulated in-control mean run length matches ARL0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Protocol

import numpy as np

from ._rng import STAGE_PRELIM, STAGE_SELECT_K, STAGE_TUNE, derive
from .cusum import LimitSchedule, cusum_path, run_length_from_draws
from .density import FittedDensity, fit_kde, normalize
from .distributions import DistributionModel

__all__ = [
    "CalibrationConfig",
    "CalibrationError",
    "PreliminaryLimits",
    "KSelection",
    "TuneResult",
    "CalibrationResult",
    "estimate_alpha_hat",
    "select_k",
    "bootstrap_preliminary_limits",
    "tune_limits",
    "calibrate",
    "calibrate_known",
    "reduce_horizon",
]


class CalibrationError(RuntimeError):
    """Calibration could not reach its target with the given resources."""


class Sampler(Protocol):
    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray: ...


class EmpiricalSampler:
    """Plain with-replacement resampling from a fixed data vector."""

    def __init__(self, points: np.ndarray) -> None:
        self.points = np.asarray(points, dtype=float)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.points[rng.integers(0, self.points.size, size=n)]


@dataclass(frozen=True)
class CalibrationConfig:
    """Tuning knobs for the three calibration stages.

    ``target_sprint`` defaults to 0.75 * j_max.  ``boot_reps`` is the
    bootstrap Monte Carlo size B used both for the first-sprint estimates
    in the k search and for the conditional samples behind each limit;
    ``tune_reps`` is the number of simulated runs per fine-tuning
    evaluation.
    """

    arl0: float = 200.0
    j_max: int = 50
    target_sprint: float | None = None
    boot_reps: int = 2000
    tune_reps: int = 200
    epsilon: float = 0.2
    epsilon_tilde: float = 0.02
    max_tune_iters: int = 15
    seed: int | tuple[int, ...] = 0
    select_tol: float = 0.05
    max_select_iters: int = 30
    variance_corrected: bool = True
    run_cap: int | None = None
    prelim_step_budget: int | None = None

    def __post_init__(self) -> None:
        if self.arl0 <= 1.0:
            raise ValueError("arl0 must exceed 1")
        if self.j_max < 1:
            raise ValueError("j_max must be at least 1")
        if not (0.0 < self.epsilon < 1.0) or not (0.0 < self.epsilon_tilde < 1.0):
            raise ValueError("epsilon and epsilon_tilde must lie in (0, 1)")
        if self.epsilon_tilde >= self.epsilon:
            raise ValueError("epsilon_tilde must be smaller than epsilon")
        if self.target_sprint is not None and not (0.0 < self.target_sprint <= self.j_max):
            raise ValueError("target_sprint must lie in (0, j_max]")
        if self.boot_reps < 2 or self.tune_reps < 2:
            raise ValueError("boot_reps and tune_reps must be at least 2")

    @property
    def target(self) -> float:
        return 0.75 * self.j_max if self.target_sprint is None else self.target_sprint

    @property
    def cap(self) -> int:
        return int(50 * self.arl0) if self.run_cap is None else self.run_cap

    @property
    def step_budget(self) -> int:
        if self.prelim_step_budget is None:
            return 10_000 * self.boot_reps
        return self.prelim_step_budget


@dataclass(frozen=True)
class PreliminaryLimits:
    """Order-statistic limits before fine-tuning."""

    m: tuple[float, ...]
    m_star: float
    alpha_hat: float
    conditional_counts: tuple[int, ...]


@dataclass(frozen=True)
class KSelection:
    """Outcome of the allowance search."""

    k: float
    iterations: int
    estimated_sprint: float
    converged: bool
    hit_bound: bool


@dataclass(frozen=True)
class TuneResult:
    schedule: LimitSchedule
    iterations: int
    achieved_rl: float


@dataclass(frozen=True)
class CalibrationResult:
    """Tuned schedule plus everything needed to monitor new data.

    ``density`` is None when the in-control law was known exactly and no
    estimate was needed.
    """

    schedule: LimitSchedule
    density: FittedDensity | None
    mu: float
    sigma: float
    k_selection: KSelection
    alpha_hat: float
    tune: TuneResult


def alpha_from_tail(tail_prob: float, arl0: float) -> float:
    """Tail level 1 / (p^2 * ARL0) for exceedance probability p."""
    if arl0 <= 1.0:
        raise ValueError("arl0 must exceed 1")
    if tail_prob <= 0.0:
        raise CalibrationError("allowance exceeds data range (no observations above k)")
    alpha = 1.0 / (tail_prob * tail_prob * arl0)
    if alpha >= 1.0:
        raise CalibrationError("ARL_0 too small for this k (implied tail level >= 1)")
    return alpha


def estimate_alpha_hat(phase1: np.ndarray, k: float, arl0: float) -> float:
    """Tail level from the observed proportion of Phase-I data above k."""
    x = np.asarray(phase1, dtype=float)
    return alpha_from_tail(float(np.mean(x > k)), arl0)


def _first_sprint_length(sampler: Sampler, rng: np.random.Generator, k: float, budget: int) -> int:
    """Length of the first completed nonzero sprint of a bootstrap stream.

    Contributes the in-progress (or zero) sprint length if the budget runs
    out first.
    """
    c0, t0 = 0.0, 0
    steps = 0
    chunk = 128
    while steps < budget:
        n = min(chunk, budget - steps)
        x = sampler.draw(rng, n)
        c, t = cusum_path(x - k, c0, t0)
        prev_t = np.concatenate(([t0], t[:-1]))
        ends = (c == 0.0) & (prev_t > 0)
        if ends.any():
            return int(prev_t[int(np.argmax(ends))])
        c0, t0 = float(c[-1]), int(t[-1])
        steps += n
        chunk = min(chunk * 2, 8192)
    return t0


def _mean_first_sprint(sampler: Sampler, k: float, boot_reps: int, seed: int, budget: int) -> float:
    total = 0
    for b in range(boot_reps):
        total += _first_sprint_length(sampler, derive(seed, STAGE_SELECT_K, b), k, budget)
    return total / boot_reps


def select_k_from_sampler(
    sampler: Sampler,
    bounds: tuple[float, float, float],
    target_sprint: float,
    boot_reps: int,
    seed: int,
    tol: float = 0.05,
    max_iters: int = 30,
    budget: int | None = None,
) -> KSelection:
    """Bisection for the allowance whose mean first-sprint length matches
    ``target_sprint``.

    ``bounds`` is (lower, initial, upper); the same bootstrap streams are
    reused across iterations so the estimated sprint curve is a fixed
    decreasing function of k.
    """
    if target_sprint <= 0.0:
        raise ValueError("target_sprint must be positive")
    k_lo, k_cur, k_hi = (float(b) for b in bounds)
    if not (k_lo <= k_cur <= k_hi):
        raise ValueError("bounds must satisfy lower <= initial <= upper")
    if budget is None:
        budget = max(10_000, int(200 * target_sprint))
    est = math.nan
    iterations = 0
    for iterations in range(1, max_iters + 1):
        est = _mean_first_sprint(sampler, k_cur, boot_reps, seed, budget)
        if abs(est - target_sprint) <= tol * target_sprint:
            return KSelection(k_cur, iterations, est, converged=True, hit_bound=False)
        if est > target_sprint:
            k_lo, k_cur = k_cur, 0.5 * (k_cur + k_hi)
        else:
            k_hi, k_cur = k_cur, 0.5 * (k_lo + k_cur)
        if k_hi - k_lo <= 1e-12:
            break
    hit_bound = abs(est - target_sprint) > tol * target_sprint
    if hit_bound:
        warnings.warn(
            "target sprint length not reachable within the quartile bounds; "
            "returning the nearest boundary allowance",
            RuntimeWarning,
        )
    return KSelection(k_cur, iterations, est, converged=not hit_bound, hit_bound=hit_bound)


def select_k(
    phase1: np.ndarray,
    j_max: int,
    target_sprint: float,
    boot_reps: int = 2000,
    seed: int = 0,
    tol: float = 0.05,
    max_iters: int = 30,
) -> KSelection:
    """Allowance search over plain bootstrap resamples of the normalized
    Phase-I data, bracketed by its quartiles (initial point: median)."""
    if target_sprint > j_max:
        raise ValueError("target_sprint cannot exceed j_max")
    z = normalize(phase1)
    q1, q2, q3 = np.quantile(z, [0.25, 0.5, 0.75])
    return select_k_from_sampler(
        EmpiricalSampler(z), (q1, q2, q3), target_sprint, boot_reps, seed, tol, max_iters
    )


def _record_conditional(
    sampler: Sampler,
    rng: np.random.Generator,
    k: float,
    j: int,
    count: int,
    step_budget: int,
    chunk: int = 65536,
) -> np.ndarray:
    """``count`` draws of the CUSUM value conditional on sprint length j,
    collected along one continuing bootstrap stream."""
    out = np.empty(count)
    filled = 0
    c0, t0 = 0.0, 0
    steps = 0
    while filled < count:
        if steps >= step_budget:
            raise CalibrationError(
                f"sprint length {j} unreachable within the step budget; reduce k or j_max"
            )
        n = min(chunk, step_budget - steps)
        x = sampler.draw(rng, n)
        c, t = cusum_path(x - k, c0, t0)
        hits = np.flatnonzero(t == j)
        if hits.size:
            take = min(hits.size, count - filled)
            out[filled : filled + take] = c[hits[:take]]
            filled += take
        c0, t0 = float(c[-1]), int(t[-1])
        steps += n
    return out


def upper_order_statistic(values: np.ndarray, alpha: float) -> float:
    """ceil(B * (1 - alpha))-th ordered value (1-indexed)."""
    v = np.sort(np.asarray(values, dtype=float))
    b = v.size
    rank = min(b, max(1, math.ceil(b * (1.0 - alpha))))
    return float(v[rank - 1])


def bootstrap_preliminary_limits(
    sampler: Sampler | FittedDensity,
    k: float,
    cfg: CalibrationConfig,
    alpha_hat: float | None = None,
) -> PreliminaryLimits:
    """Preliminary limits: for each sprint length j up to the horizon plus
    one, record B conditional CUSUM values and take the upper order
    statistic at the tail level.

    ``alpha_hat`` defaults to the level implied by the sampler's own
    exceedance rate of k when the sampler carries Phase-I points.
    """
    if k < 0.0:
        raise ValueError("k must be nonnegative")
    if alpha_hat is None:
        points = getattr(sampler, "points", None)
        if points is None:
            raise ValueError("alpha_hat is required when the sampler has no Phase-I points")
        alpha_hat = estimate_alpha_hat(points, k, cfg.arl0)
    if not (0.0 < alpha_hat < 1.0):
        raise ValueError("alpha_hat must lie in (0, 1)")
    b = cfg.boot_reps
    m_values = []
    for j in range(1, cfg.j_max + 2):
        y = _record_conditional(sampler, derive(cfg.seed, STAGE_PRELIM, j), k, j, b, cfg.step_budget)
        m_values.append(upper_order_statistic(y, alpha_hat))
    return PreliminaryLimits(
        m=tuple(m_values[: cfg.j_max]),
        m_star=m_values[cfg.j_max],
        alpha_hat=alpha_hat,
        conditional_counts=tuple([b] * (cfg.j_max + 1)),
    )


def _schedule_from_vector(k: float, vec: np.ndarray) -> LimitSchedule:
    return LimitSchedule(k=k, limits=tuple(vec[:-1]), h_star=float(vec[-1]))


def _mean_run_length(
    sampler: Sampler,
    schedule: LimitSchedule,
    n_runs: int,
    cap: int,
    seed: int,
    tag: tuple[int, int],
) -> float:
    total = 0.0
    for i in range(n_runs):
        rng = derive(seed, STAGE_TUNE, tag[0], tag[1], i)
        res = run_length_from_draws(lambda n: sampler.draw(rng, n), schedule, cap)
        total += res.length
    return total / n_runs


def interpolate_limits(
    current: np.ndarray, bracket: np.ndarray, rl: float, rl_bracket: float, arl0: float
) -> np.ndarray:
    """Linear interpolation of the whole limit vector between the current
    iterate and a bracket, weighted so the interpolated mean run length
    would hit ``arl0`` if the response were linear."""
    if rl_bracket == rl:
        raise CalibrationError("degenerate interpolation: bracket and current run lengths coincide")
    w = (rl_bracket - arl0) / (rl_bracket - rl)
    return w * current + (1.0 - w) * bracket


def tune_limits(
    sampler: Sampler | FittedDensity,
    k: float,
    prelim: PreliminaryLimits,
    cfg: CalibrationConfig,
) -> TuneResult:
    """Fine-tune the preliminary limits until the simulated in-control mean
    run length is within ``epsilon_tilde`` (relative) of ARL0.

    Each iteration simulates ``tune_reps`` in-control runs on the current
    vector; if the mean falls short of (exceeds) ARL0, a scaled-up
    (scaled-down) bracket vector is evaluated and the whole vector is
    interpolated toward it.  Brackets carry forward between iterations.
    """
    arl0 = cfg.arl0
    cap = cfg.cap
    cur = np.array(prelim.m + (prelim.m_star,), dtype=float)
    upper: np.ndarray | None = None
    upper_rl = math.nan
    lower: np.ndarray | None = None
    lower_rl = math.nan

    def evaluate(vec: np.ndarray, iteration: int, which: int) -> float:
        rl = _mean_run_length(sampler, _schedule_from_vector(k, vec), cfg.tune_reps, cap, cfg.seed, (iteration, which))
        if not math.isfinite(rl):
            raise CalibrationError("non-finite run length during tuning")
        return rl

    for iteration in range(1, cfg.max_tune_iters + 1):
        rl = evaluate(cur, iteration, 0)
        if abs(rl - arl0) / arl0 < cfg.epsilon_tilde:
            return TuneResult(_schedule_from_vector(k, cur), iteration, rl)
        if rl < arl0:
            candidate = (1.0 + cfg.epsilon) * cur if upper is None else upper
            eps = cfg.epsilon
            for attempt in range(4):
                upper_rl = evaluate(candidate, iteration, 1 + attempt)
                if upper_rl > arl0:
                    break
                eps *= 2.0
                candidate = (1.0 + eps) * candidate
            else:
                raise CalibrationError("could not bracket ARL_0 from above; widen epsilon")
            upper = candidate
            nxt = interpolate_limits(cur, upper, rl, upper_rl, arl0)
            lower, lower_rl = cur, rl
        else:
            candidate = (1.0 - cfg.epsilon) * cur if lower is None else lower
            eps = cfg.epsilon
            for attempt in range(4):
                lower_rl = evaluate(candidate, iteration, 10 + attempt)
                if lower_rl < arl0:
                    break
                eps = min(2.0 * eps, 0.99)
                candidate = (1.0 - eps) * candidate
            else:
                raise CalibrationError("could not bracket ARL_0 from below; widen epsilon")
            lower = candidate
            nxt = interpolate_limits(cur, lower, rl, lower_rl, arl0)
            upper, upper_rl = cur, rl
        cur = nxt
    raise CalibrationError(
        f"fine-tuning did not reach |RL - ARL0|/ARL0 < {cfg.epsilon_tilde} "
        f"within {cfg.max_tune_iters} iterations"
    )


def calibrate(phase1: np.ndarray, cfg: CalibrationConfig) -> CalibrationResult:
    """Full pipeline on Phase-I data: normalize, fit the KDE, pick k,
    bootstrap preliminary limits from the fitted density, fine-tune."""
    x = np.asarray(phase1, dtype=float)
    if x.size < 100:
        raise ValueError("need at least 100 Phase-I observations")
    z = normalize(x)
    fhat = fit_kde(z, variance_corrected=cfg.variance_corrected)
    ksel = select_k(
        x, cfg.j_max, cfg.target, cfg.boot_reps, cfg.seed, cfg.select_tol, cfg.max_select_iters
    )
    alpha = estimate_alpha_hat(z, ksel.k, cfg.arl0)
    prelim = bootstrap_preliminary_limits(fhat, ksel.k, cfg, alpha_hat=alpha)
    tuned = tune_limits(fhat, ksel.k, prelim, cfg)
    return CalibrationResult(
        schedule=tuned.schedule,
        density=fhat,
        mu=float(x.mean()),
        sigma=float(x.std(ddof=1)),
        k_selection=ksel,
        alpha_hat=alpha,
        tune=tuned,
    )


def calibrate_known(model: DistributionModel, cfg: CalibrationConfig) -> CalibrationResult:
    """Same pipeline with the in-control law known exactly: streams are
    drawn from the model itself and the tail level uses its analytic
    exceedance probability."""
    q1, q2, q3 = (model.quantile_at(q) for q in (0.25, 0.5, 0.75))
    ksel = select_k_from_sampler(
        model, (q1, q2, q3), cfg.target, cfg.boot_reps, cfg.seed, cfg.select_tol, cfg.max_select_iters
    )
    alpha = alpha_from_tail(1.0 - model.cdf_at(ksel.k), cfg.arl0)
    prelim = bootstrap_preliminary_limits(model, ksel.k, cfg, alpha_hat=alpha)
    tuned = tune_limits(model, ksel.k, prelim, cfg)
    return CalibrationResult(
        schedule=tuned.schedule,
        density=None,
        mu=0.0,
        sigma=1.0,
        k_selection=ksel,
        alpha_hat=alpha,
        tune=tuned,
    )


def reduce_horizon(
    sampler: Sampler | FittedDensity,
    schedule: LimitSchedule,
    new_j_max: int,
    cfg: CalibrationConfig,
    alpha_hat: float,
) -> LimitSchedule:
    """Shorten the schedule to ``new_j_max`` limits, keeping them unchanged
    and recomputing only the tail limit at the new horizon.

    The link between the sprint-length target and the horizon is not
    preserved by this shortcut; a warning flags that.
    """
    if not (1 <= new_j_max < schedule.j_max):
        raise ValueError("new_j_max must be shorter than the current horizon")
    warnings.warn(
        "shortening the horizon keeps k tied to the original sprint-length target; "
        "the target/horizon ratio is no longer preserved",
        RuntimeWarning,
    )
    y = _record_conditional(
        sampler,
        derive(cfg.seed, STAGE_PRELIM, new_j_max + 1, 1),
        schedule.k,
        new_j_max + 1,
        cfg.boot_reps,
        cfg.step_budget,
    )
    return LimitSchedule(
        k=schedule.k,
        limits=schedule.limits[:new_j_max],
        h_star=upper_order_statistic(y, alpha_hat),
    )
