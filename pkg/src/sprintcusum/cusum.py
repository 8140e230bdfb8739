"""Upward CUSUM state machine with sprint-length-indexed control limits.

The chart statistic is C_n = max(C_{n-1} + X_n - k, 0).  The sprint
length T_n counts steps since C was last zero.  A signal fires when C
strictly exceeds the limit attached to the current sprint length: h_j
for sprint length j up to the schedule horizon, a constant tail limit
beyond it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import islice
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "CusumState",
    "LimitSchedule",
    "RunResult",
    "RunLengthSummary",
    "StreamEnded",
    "cusum_step",
    "signal_check",
    "run_length",
    "summarize_runs",
    "cusum_path",
]

DrawFn = Callable[[int], np.ndarray]


class StreamEnded(RuntimeError):
    """The observation source ran out before a signal and before the cap."""


@dataclass(frozen=True)
class CusumState:
    """Chart state: CUSUM value ``c``, sprint length ``t``, steps seen ``n``."""

    c: float = 0.0
    t: int = 0
    n: int = 0

    def __post_init__(self) -> None:
        if not math.isfinite(self.c) or self.c < 0.0:
            raise ValueError("c must be finite and nonnegative")
        if (self.c == 0.0) != (self.t == 0):
            raise ValueError("c == 0 exactly when t == 0")
        if self.t < 0 or self.n < 0 or self.t > self.n:
            raise ValueError("need 0 <= t <= n")


@dataclass(frozen=True)
class LimitSchedule:
    """Allowance ``k`` plus per-sprint-length limits h_1..h_{j_max} and a
    tail limit ``h_star`` used for sprint lengths beyond the horizon."""

    k: float
    limits: tuple[float, ...]
    h_star: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.k) or self.k < 0.0:
            raise ValueError("k must be finite and nonnegative")
        if len(self.limits) < 1:
            raise ValueError("need at least one limit")
        if any(not math.isfinite(h) or h <= 0.0 for h in self.limits):
            raise ValueError("all limits must be finite and positive")
        if not math.isfinite(self.h_star) or self.h_star <= 0.0:
            raise ValueError("h_star must be finite and positive")
        object.__setattr__(self, "limits", tuple(float(h) for h in self.limits))

    @property
    def j_max(self) -> int:
        return len(self.limits)

    def limit_for(self, t: int) -> float:
        """Active limit for sprint length ``t``; +inf at t == 0 where the
        chart cannot signal."""
        if t < 0:
            raise ValueError("sprint length must be nonnegative")
        if t == 0:
            return math.inf
        if t <= self.j_max:
            return self.limits[t - 1]
        return self.h_star

    def scaled(self, factor: float) -> "LimitSchedule":
        return LimitSchedule(self.k, tuple(h * factor for h in self.limits), self.h_star * factor)


class RunResult(NamedTuple):
    length: int
    truncated: bool


@dataclass(frozen=True)
class RunLengthSummary:
    """Mean run length, its standard error, and truncation accounting."""

    mean: float
    se: float
    reps: int
    truncated: int


def cusum_step(state: CusumState, x: float, k: float) -> CusumState:
    """One chart update; resets the sprint length whenever C hits zero."""
    if not math.isfinite(x):
        raise ValueError("observation must be finite")
    c = state.c + x - k
    if c <= 0.0:
        return CusumState(0.0, 0, state.n + 1)
    return CusumState(c, state.t + 1, state.n + 1)


def signal_check(state: CusumState, schedule: LimitSchedule) -> bool:
    """True iff the current CUSUM strictly exceeds its active limit."""
    if state.t == 0:
        return False
    return state.c > schedule.limit_for(state.t)


def cusum_path(
    increments: np.ndarray, c_start: float = 0.0, t_start: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Whole CUSUM trajectory for an increment block, vectorized.

    ``increments`` are x - k values.  Returns (c_values, sprint_lengths)
    aligned with the block.  Uses the reflection identity
    C_i = S_i - min(0, min_{l<=i} S_l) with S the running sum started at
    ``c_start``, so a fresh minimum gives an exact zero.
    """
    inc = np.asarray(increments, dtype=float)
    s = c_start + np.cumsum(inc)
    floor = np.minimum(np.minimum.accumulate(s), 0.0)
    c = s - floor
    n = inc.shape[0]
    idx = np.arange(1, n + 1)
    last_zero = np.maximum.accumulate(np.where(c == 0.0, idx, 0))
    t = np.where(last_zero > 0, idx - last_zero, idx + t_start)
    return c, t.astype(np.int64)


def _limits_vector(schedule: LimitSchedule) -> np.ndarray:
    # index by sprint length directly: [inf, h_1..h_jmax, h_star]
    return np.concatenate(([np.inf], np.asarray(schedule.limits), [schedule.h_star]))


def _first_signal(c: np.ndarray, t: np.ndarray, limits_vec: np.ndarray, j_max: int) -> int:
    active = limits_vec[np.minimum(t, j_max + 1)]
    hits = c > active
    if not hits.any():
        return -1
    return int(np.argmax(hits))


def run_length_from_draws(
    draw: DrawFn,
    schedule: LimitSchedule,
    cap: int,
    state: CusumState | None = None,
) -> RunResult:
    """Run length of the chart fed by ``draw`` (which may return short
    blocks once the source is exhausted)."""
    if cap < 1:
        raise ValueError("cap must be at least 1")
    limits_vec = _limits_vector(schedule)
    j_max = schedule.j_max
    c0 = state.c if state is not None else 0.0
    t0 = state.t if state is not None else 0
    done = 0
    chunk = 256
    while done < cap:
        want = min(chunk, cap - done)
        x = np.asarray(draw(want), dtype=float)
        if x.size and not np.isfinite(x).all():
            raise ValueError("observation must be finite")
        if x.size:
            c, t = cusum_path(x - schedule.k, c0, t0)
            hit = _first_signal(c, t, limits_vec, j_max)
            if hit >= 0:
                return RunResult(done + hit + 1, False)
            c0 = float(c[-1])
            t0 = int(t[-1])
            done += x.size
        if x.size < want:
            raise StreamEnded(f"stream ended after {done} observations, before a signal and before the cap")
        chunk = min(chunk * 2, 4096)
    return RunResult(cap, True)


def run_length(stream: Iterable[float], schedule: LimitSchedule, cap: int) -> RunResult:
    """Run length over an iterable of observations.

    Returns the first n at which the chart signals; ``RunResult(cap, True)``
    if no signal occurs within ``cap`` steps.  Raises :class:`StreamEnded`
    if the iterable is exhausted first.
    """
    it = iter(stream)

    def draw(n: int) -> np.ndarray:
        return np.fromiter(islice(it, n), dtype=float)

    return run_length_from_draws(draw, schedule, cap)


def summarize_runs(runs: Sequence[RunResult | int]) -> RunLengthSummary:
    """Mean and standard error (sample SD / sqrt(count)) of run lengths."""
    lengths = np.array([r.length if isinstance(r, RunResult) else int(r) for r in runs], dtype=float)
    if lengths.size < 2:
        raise ValueError("need at least 2 runs for a standard error")
    truncated = sum(1 for r in runs if isinstance(r, RunResult) and r.truncated)
    mean = float(lengths.mean())
    se = float(lengths.std(ddof=1) / math.sqrt(lengths.size))
    return RunLengthSummary(mean=mean, se=se, reps=int(lengths.size), truncated=truncated)
