"""Monte Carlo studies: bootstrap validity of the conditional CUSUM
distributions, and run-length comparisons across charts.

The comparison harness is paired: within a replication every chart reads
the same Phase-II observation sequence, so chart-vs-chart differences can
be tested with a paired t-test.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import kolmogorov
from scipy.stats import t as t_dist

from ._rng import STAGE_PHASE1, STAGE_REFERENCE, STAGE_REPLICATION, STAGE_STREAM, derive
from .baselines import ClassicalParams, NpCusumParams, classical_schedule, lookup_classical_h, np_cusum_run
from .calibration import (
    CalibrationConfig,
    CalibrationError,
    CalibrationResult,
    EmpiricalSampler,
    calibrate,
    calibrate_known,
)
from .cusum import RunLengthSummary, RunResult, run_length_from_draws, summarize_runs
from .distributions import DistributionModel, Kind, ShiftSpec, sample_stream

__all__ = [
    "CASES",
    "ExperimentConfig",
    "MethodResult",
    "ArlTable",
    "ks_two_sample",
    "ks_uniform",
    "bootstrap_validity_study",
    "arl_table",
    "paired_comparison",
    "write_long_format",
]

CASES = {
    "I": Kind.STANDARD_NORMAL,
    "II": Kind.RIGHT_SKEW_MIX,
    "III": Kind.LEFT_SKEW_MIX,
}

_SPRINT_FRACTIONS = {"B1": 0.5, "B2": 0.75, "B3": 1.0}
_NP_PARAMS = {
    "NP1": NpCusumParams(g=10, k=13.0, h=24.0),
    "NP2": NpCusumParams(g=10, k=21.0, h=14.0),
}


def ks_two_sample(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value with
    the usual effective-sample-size scaling."""
    x = np.sort(np.asarray(a, dtype=float))
    y = np.sort(np.asarray(b, dtype=float))
    n1, n2 = x.size, y.size
    if n1 < 2 or n2 < 2:
        raise ValueError("need at least 2 observations per sample")
    pooled = np.concatenate([x, y])
    cdf1 = np.searchsorted(x, pooled, side="right") / n1
    cdf2 = np.searchsorted(y, pooled, side="right") / n2
    d = float(np.max(np.abs(cdf1 - cdf2)))
    en = math.sqrt(n1 * n2 / (n1 + n2))
    p = float(np.clip(kolmogorov(en * d), 0.0, 1.0))
    return d, p


def ks_uniform(pvals: np.ndarray) -> float:
    """One-sample Kolmogorov-Smirnov p-value against Uniform(0, 1)."""
    p = np.asarray(pvals, dtype=float)
    if p.size < 1:
        raise ValueError("need at least one value")
    if np.any((p < 0.0) | (p > 1.0)):
        raise ValueError("values must lie in [0, 1]")
    s = np.sort(p)
    n = s.size
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - s)
    d_minus = np.max(s - (i - 1) / n)
    d = max(float(d_plus), float(d_minus))
    return float(np.clip(kolmogorov(math.sqrt(n) * d), 0.0, 1.0))


def _record_all_sprints(
    sampler,
    rng: np.random.Generator,
    k: float,
    j_count: int,
    count: int,
    step_budget: int,
    chunk: int = 65536,
) -> list[np.ndarray]:
    """Conditional CUSUM samples for every sprint length 1..j_count along a
    single continuing stream, ``count`` values each."""
    from .cusum import cusum_path

    out = [np.empty(count) for _ in range(j_count)]
    filled = [0] * j_count
    c0, t0 = 0.0, 0
    steps = 0
    while any(f < count for f in filled):
        if steps >= step_budget:
            raise CalibrationError("sprint lengths unreachable within the step budget")
        x = sampler.draw(rng, chunk)
        c, t = cusum_path(x - k, c0, t0)
        for j in range(1, j_count + 1):
            if filled[j - 1] >= count:
                continue
            hits = np.flatnonzero(t == j)
            if hits.size:
                take = min(hits.size, count - filled[j - 1])
                out[j - 1][filled[j - 1] : filled[j - 1] + take] = c[hits[:take]]
                filled[j - 1] += take
        c0, t0 = float(c[-1]), int(t[-1])
        steps += chunk
    return out


def bootstrap_validity_study(
    j_count: int = 10,
    k: float = 0.5,
    n: int = 10_000,
    ref_reps: int = 10_000,
    i_reps: int = 200,
    boot_reps: int = 500,
    seed: int = 0,
) -> np.ndarray:
    """How uniformly distributed are the per-replication KS p-values that
    compare bootstrap conditional CUSUM samples against directly simulated
    ones?  Returns one uniformity p-value per sprint length 1..j_count.

    Reference samples come from standard normal streams; each replication
    draws a fresh dataset of size ``n``, resamples it with replacement,
    records ``boot_reps`` conditional values per sprint length, and runs a
    two-sample KS test against the reference.
    """
    model = DistributionModel(Kind.STANDARD_NORMAL)
    budget = max(10_000 * max(ref_reps, boot_reps), 10**7)
    reference = _record_all_sprints(
        model, derive(seed, STAGE_REFERENCE), k, j_count, ref_reps, budget
    )
    pvals = np.empty((i_reps, j_count))
    for i in range(i_reps):
        data = model.draw(derive(seed, STAGE_REPLICATION, i, 0), n)
        boot = _record_all_sprints(
            EmpiricalSampler(data), derive(seed, STAGE_REPLICATION, i, 1), k, j_count, boot_reps, budget
        )
        for j in range(j_count):
            pvals[i, j] = ks_two_sample(boot[j], reference[j])[1]
    return np.array([ks_uniform(pvals[:, j]) for j in range(j_count)])


@dataclass(frozen=True)
class ExperimentConfig:
    """One cell of the run-length comparison: a case, a shift, a horizon."""

    case: str = "I"
    delta: float = 0.0
    m: int = 1000
    i_reps: int = 100
    j_max: int = 50
    sprint_fraction: float = 0.75
    arl0: float = 200.0
    seed: int = 0
    known_f: bool = False
    n1: int = 0
    boot_reps: int = 2000
    tune_reps: int = 200
    run_cap: int | None = None

    def __post_init__(self) -> None:
        if self.case not in CASES:
            raise ValueError(f"case must be one of {sorted(CASES)}")
        if self.i_reps < 2:
            raise ValueError("need at least 2 replications")
        if self.sprint_fraction not in (0.5, 0.75, 1.0):
            raise ValueError("sprint_fraction must be 0.5, 0.75 or 1.0")

    @property
    def kind(self) -> Kind:
        return CASES[self.case]

    @property
    def cap(self) -> int:
        return int(50 * self.arl0) if self.run_cap is None else self.run_cap


@dataclass(frozen=True)
class MethodResult:
    summary: RunLengthSummary
    run_lengths: np.ndarray


@dataclass(frozen=True)
class ArlTable:
    config: ExperimentConfig
    results: dict[str, MethodResult] = field(default_factory=dict)


class _CachedStream:
    """Lazily generated Phase-II sequence shared by all charts within one
    replication, so comparisons are paired."""

    def __init__(self, rng: np.random.Generator, model: DistributionModel, delta: float, n1: int):
        self._rng = rng
        self._model = model
        self._delta = delta
        self._n1 = n1
        self._buf = np.empty(0)

    def prefix(self, n: int) -> np.ndarray:
        while self._buf.size < n:
            grow = max(256, self._buf.size)
            new = self._model.draw(self._rng, grow)
            if self._delta != 0.0:
                start = self._buf.size
                cut = max(self._n1 - start, 0)
                new[cut:] += self._delta
            self._buf = np.concatenate([self._buf, new])
        return self._buf[:n]

    def reader(self, mu: float = 0.0, sigma: float = 1.0):
        pos = 0

        def draw(count: int) -> np.ndarray:
            nonlocal pos
            out = self.prefix(pos + count)[pos : pos + count]
            pos += count
            return (out - mu) / sigma if (mu, sigma) != (0.0, 1.0) else out.copy()

        return draw

    def iterate(self):
        pos = 0
        while True:
            block = self.prefix(pos + 256)[pos : pos + 256]
            pos += 256
            yield from block


def _calibration_config(cfg: ExperimentConfig, fraction: float, tag: int) -> CalibrationConfig:
    return CalibrationConfig(
        arl0=cfg.arl0,
        j_max=cfg.j_max,
        target_sprint=fraction * cfg.j_max,
        boot_reps=cfg.boot_reps,
        tune_reps=cfg.tune_reps,
        seed=(cfg.seed, tag),
        run_cap=cfg.run_cap,
    )


def _calibrations(
    cfg: ExperimentConfig, methods: Sequence[str], phase1: np.ndarray | None
) -> dict[str, CalibrationResult]:
    out: dict[str, CalibrationResult] = {}
    for tag, name in enumerate(sorted(set(methods))):
        if name not in _SPRINT_FRACTIONS:
            continue
        ccfg = _calibration_config(cfg, _SPRINT_FRACTIONS[name], tag)
        if cfg.known_f:
            out[name] = calibrate_known(DistributionModel(cfg.kind), ccfg)
        else:
            assert phase1 is not None
            out[name] = calibrate(phase1, ccfg)
    return out


def arl_table(cfg: ExperimentConfig, methods: Sequence[str]) -> ArlTable:
    """Run lengths of the requested charts over ``i_reps`` paired Phase-II
    streams; B-charts are calibrated once on shared Phase-I data (or on the
    known law), the classical chart uses k = delta/2 and Phase-I moment
    estimates, and the signed-rank charts use their fixed parameters."""
    methods = list(dict.fromkeys(methods))
    unknown = [m for m in methods if m != "C" and m not in _NP_PARAMS and m not in _SPRINT_FRACTIONS]
    if unknown:
        raise ValueError(f"unknown methods: {unknown}")
    model = DistributionModel(cfg.kind)
    phase1 = None
    if not cfg.known_f:
        phase1 = sample_stream(model, ShiftSpec(), cfg.m, derive(cfg.seed, STAGE_PHASE1))
    calibrated = _calibrations(cfg, methods, phase1)

    classical: ClassicalParams | None = None
    if "C" in methods:
        k_c = cfg.delta / 2.0
        h_c = lookup_classical_h(k_c, cfg.arl0)
        if cfg.known_f:
            classical = ClassicalParams(k=k_c, h=h_c)
        else:
            classical = ClassicalParams(
                k=k_c, h=h_c, mu=float(phase1.mean()), sigma=float(phase1.std(ddof=1))
            )

    runs: dict[str, list[RunResult]] = {name: [] for name in methods}
    cap = cfg.cap
    for i in range(cfg.i_reps):
        stream = _CachedStream(derive(cfg.seed, STAGE_STREAM, i), model, cfg.delta, cfg.n1)
        for name in methods:
            if name == "C":
                assert classical is not None
                res = run_length_from_draws(
                    stream.reader(classical.mu, classical.sigma), classical_schedule(classical), cap
                )
            elif name in _NP_PARAMS:
                res = np_cusum_run(stream.iterate(), _NP_PARAMS[name], cap)
            else:
                cal = calibrated[name]
                res = run_length_from_draws(
                    stream.reader(cal.mu, cal.sigma), cal.schedule, cap
                )
            runs[name].append(res)

    results = {
        name: MethodResult(summary=summarize_runs(rs), run_lengths=np.array([r.length for r in rs]))
        for name, rs in runs.items()
    }
    return ArlTable(config=cfg, results=results)


def paired_comparison(run_lengths_a: np.ndarray, run_lengths_b: np.ndarray) -> float:
    """Two-sided paired t-test p-value on run-length differences.

    Zero-variance differences degenerate: p = 1 when the runs agree
    everywhere, else 0 (a constant nonzero shift is infinitely
    significant under the t model).
    """
    a = np.asarray(run_lengths_a, dtype=float)
    b = np.asarray(run_lengths_b, dtype=float)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("need two equal-length vectors of at least 2 paired runs")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0.0:
        return 1.0 if np.all(d == 0.0) else 0.0
    t_stat = d.mean() / (sd / math.sqrt(d.size))
    return float(2.0 * t_dist.sf(abs(t_stat), d.size - 1))


def write_long_format(tables: Iterable[ArlTable], path) -> None:
    """Plot-ready long-format table, one row per (case, method) cell."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(["case", "method", "delta", "j_max", "arl", "se", "reps"])
        for table in tables:
            for name in sorted(table.results):
                s = table.results[name].summary
                writer.writerow(
                    [
                        table.config.case,
                        name,
                        repr(table.config.delta),
                        table.config.j_max,
                        repr(s.mean),
                        repr(s.se),
                        s.reps,
                    ]
                )
