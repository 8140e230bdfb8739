"""Command-line surface: calibrate a limit schedule from Phase-I data,
monitor a stream against a saved schedule, and run the simulation
harness.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

from .calibration import CalibrationConfig, CalibrationError, calibrate
from .cusum import CusumState, LimitSchedule, cusum_step, signal_check
from .experiments import ExperimentConfig, arl_table, bootstrap_validity_study, write_long_format
from .prewhiten import ArModel, select_order_aic, yule_walker_fit

__all__ = [
    "ScheduleFile",
    "UsageError",
    "DataError",
    "read_column",
    "cmd_calibrate",
    "cmd_monitor",
    "cmd_simulate",
    "main",
    "entrypoint",
]

FORMAT_VERSION = 1


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass(frozen=True)
class ScheduleFile:
    """On-disk form of a calibrated schedule.

    ``mu`` and ``sigma`` are the Phase-I standardization constants applied
    to incoming observations before charting.  ``ar_model`` and
    ``ar_warmup`` are present when the schedule was calibrated on
    pre-whitened residuals; the warmup holds the last ``order`` raw
    Phase-I values so monitoring can whiten from its first observation.
    """

    format_version: int
    k: float
    j_max: int
    limits: tuple[float, ...]
    h_star: float
    arl0: float
    created_with_seed: int
    phase1_fingerprint: str
    mu: float
    sigma: float
    ar_model: ArModel | None = None
    ar_warmup: tuple[float, ...] = ()

    def schedule(self) -> LimitSchedule:
        return LimitSchedule(k=self.k, limits=self.limits, h_star=self.h_star)

    def render(self) -> str:
        doc = {
            "format_version": self.format_version,
            "k": self.k,
            "j_max": self.j_max,
            "limits": list(self.limits),
            "h_star": self.h_star,
            "arl0": self.arl0,
            "created_with_seed": self.created_with_seed,
            "phase1_fingerprint": self.phase1_fingerprint,
            "mu": self.mu,
            "sigma": self.sigma,
            "ar_model": None
            if self.ar_model is None
            else {
                "mu": self.ar_model.mu,
                "coeffs": list(self.ar_model.coeffs),
                "noise_var": self.ar_model.noise_var,
            },
            "ar_warmup": list(self.ar_warmup),
        }
        return json.dumps(doc, indent=2) + "\n"

    @staticmethod
    def parse(text: str) -> "ScheduleFile":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"schedule file is not valid JSON: {exc}") from exc
        try:
            version = int(doc["format_version"])
            if version != FORMAT_VERSION:
                raise DataError(f"unsupported schedule format version {version}")
            ar = doc.get("ar_model")
            model = None if ar is None else ArModel(ar["mu"], tuple(ar["coeffs"]), ar["noise_var"])
            return ScheduleFile(
                format_version=version,
                k=float(doc["k"]),
                j_max=int(doc["j_max"]),
                limits=tuple(float(h) for h in doc["limits"]),
                h_star=float(doc["h_star"]),
                arl0=float(doc["arl0"]),
                created_with_seed=int(doc["created_with_seed"]),
                phase1_fingerprint=str(doc["phase1_fingerprint"]),
                mu=float(doc["mu"]),
                sigma=float(doc["sigma"]),
                ar_model=model,
                ar_warmup=tuple(float(v) for v in doc.get("ar_warmup", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"schedule file is missing or corrupts a field: {exc}") from exc

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(self.render())

    @staticmethod
    def load(path: str) -> "ScheduleFile":
        with open(path) as fh:
            return ScheduleFile.parse(fh.read())


def fingerprint(data: np.ndarray) -> str:
    digest = hashlib.sha256(np.ascontiguousarray(data, dtype=float).tobytes()).hexdigest()
    return f"sha256:{digest[:16]}"


def read_column(lines: Iterable[str], column: int = 0, source: str = "<input>") -> np.ndarray:
    """Numeric column from CSV-ish lines; '#' lines and blanks are skipped,
    malformed rows abort with their line numbers."""
    values: list[float] = []
    bad: list[int] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        try:
            value = float(fields[column].strip())
        except (IndexError, ValueError):
            bad.append(lineno)
            continue
        if not math.isfinite(value):
            bad.append(lineno)
            continue
        values.append(value)
    if bad:
        shown = ", ".join(str(b) for b in bad[:20])
        more = "" if len(bad) <= 20 else f" (+{len(bad) - 20} more)"
        raise DataError(f"{source}: malformed rows at lines {shown}{more}")
    return np.array(values)


def _read_file_column(path: str, column: int) -> np.ndarray:
    if path == "-":
        return read_column(sys.stdin, column, "<stdin>")
    try:
        with open(path) as fh:
            return read_column(fh, column, path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _parse_prewhiten(spec: str) -> tuple[str, int]:
    if spec == "off":
        return "off", 0
    kind, _, arg = spec.partition(":")
    if kind in ("aic", "fixed") and arg.isdigit():
        return kind, int(arg)
    raise UsageError(f"bad --prewhiten value {spec!r}; expected off, aic:<max_order> or fixed:<r>")


def cmd_calibrate(args: argparse.Namespace, out: TextIO) -> int:
    data = _read_file_column(args.input, args.column)
    if data.size < 100:
        raise DataError(f"insufficient Phase-I data: {data.size} rows, need at least 100")

    mode, order = _parse_prewhiten(args.prewhiten)
    ar_model = None
    warmup: tuple[float, ...] = ()
    series = data
    if mode != "off":
        r = select_order_aic(data, order) if mode == "aic" else order
        ar_model = yule_walker_fit(data, r)
        from .prewhiten import residuals

        series = residuals(data, ar_model)
        warmup = tuple(data[-r:]) if r else ()
        if series.size < 100:
            raise DataError("insufficient Phase-I data after pre-whitening")

    cfg = CalibrationConfig(
        arl0=args.arl0,
        j_max=args.jmax,
        target_sprint=args.sprint_fraction * args.jmax,
        boot_reps=args.boot_reps,
        seed=args.seed,
    )
    result = calibrate(series, cfg)
    sched = result.schedule
    doc = ScheduleFile(
        format_version=FORMAT_VERSION,
        k=sched.k,
        j_max=sched.j_max,
        limits=sched.limits,
        h_star=sched.h_star,
        arl0=cfg.arl0,
        created_with_seed=args.seed,
        phase1_fingerprint=fingerprint(data),
        mu=result.mu,
        sigma=result.sigma,
        ar_model=ar_model,
        ar_warmup=warmup,
    )
    doc.save(args.out)
    out.write(f"k: {result.k_selection.k:.6f} (search iterations: {result.k_selection.iterations})\n")
    out.write(f"j_max: {sched.j_max}\n")
    out.write(f"achieved in-control mean run length: {result.tune.achieved_rl:.2f} "
              f"(tuning iterations: {result.tune.iterations})\n")
    out.write(f"schedule written to {args.out}\n")
    return 0


def _whitened(values: Iterator[float], model: ArModel, warmup: Sequence[float]) -> Iterator[float]:
    r = model.order
    history: deque[float] = deque((v - model.mu for v in warmup), maxlen=max(r, 1))
    if r and len(history) < r:
        raise DataError(f"AR order {r} exceeds the available warmup history ({len(history)} values)")
    for x in values:
        centered = x - model.mu
        eps = centered
        for lag, a in enumerate(model.coeffs, start=1):
            eps -= a * history[-lag]
        if r:
            history.append(centered)
        yield eps


def _stream_values(path: str, column: int) -> Iterator[float]:
    fh = sys.stdin if path == "-" else open(path)
    try:
        lineno = 0
        for raw in fh:
            lineno += 1
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split(",")
            try:
                value = float(fields[column].strip())
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}: malformed row at line {lineno}") from exc
            yield value
    finally:
        if fh is not sys.stdin:
            fh.close()


def cmd_monitor(args: argparse.Namespace, out: TextIO) -> int:
    doc = ScheduleFile.load(args.schedule)
    schedule = doc.schedule()

    values: Iterator[float] = _stream_values(args.input, args.column)
    mode, order = _parse_prewhiten(args.prewhiten)
    if mode == "off":
        ar_model = doc.ar_model
        warmup: Sequence[float] = doc.ar_warmup
    else:
        if not args.phase1:
            raise UsageError("--prewhiten at monitor time needs --phase1 to fit the model on")
        phase1 = _read_file_column(args.phase1, args.column)
        r = select_order_aic(phase1, order) if mode == "aic" else order
        ar_model = yule_walker_fit(phase1, r)
        warmup = tuple(phase1[-r:]) if r else ()
    if ar_model is not None:
        values = _whitened(values, ar_model, warmup)

    out.write("n\tx\tc\tt\tlimit\n")
    state = CusumState()
    signals = []
    for x in values:
        z = (x - doc.mu) / doc.sigma
        state = cusum_step(state, z, schedule.k)
        active = schedule.limit_for(state.t)
        shown = 0.0 if state.t == 0 else active
        out.write(f"{state.n}\t{x:.6g}\t{state.c:.6g}\t{state.t}\t{shown:.6g}\n")
        if signal_check(state, schedule):
            signals.append((state.n, state.c, state.t, active))
            out.write(
                f"signal at n={state.n}: C={state.c:.6g} exceeds limit {active:.6g} "
                f"at sprint length {state.t}\n"
            )
            if not args.keep_going:
                return 0
            state = CusumState(0.0, 0, state.n)
    if not signals:
        out.write(f"no signal in {state.n} observations\n")
    return 0


def cmd_simulate(args: argparse.Namespace, out: TextIO) -> int:
    if args.table1:
        pvals = bootstrap_validity_study(seed=args.seed)
        out.write("sprint_length\tuniformity_p\n")
        for j, p in enumerate(pvals, start=1):
            out.write(f"{j}\t{p:.4f}\n")
        return 0
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise UsageError("no methods given")
    known = {"C", "NP1", "NP2", "B1", "B2", "B3"}
    bad = [m for m in methods if m not in known]
    if bad:
        raise UsageError(f"unknown methods: {', '.join(bad)}; choose from {sorted(known)}")
    cfg = ExperimentConfig(
        case=args.case,
        delta=args.delta,
        m=args.m,
        i_reps=args.reps,
        j_max=args.jmax,
        arl0=args.arl0,
        seed=args.seed,
        known_f=args.known_f,
        boot_reps=args.boot_reps,
    )
    table = arl_table(cfg, methods)
    out.write("case\tmethod\tdelta\tj_max\tarl\tse\treps\ttruncated\n")
    for name in methods:
        s = table.results[name].summary
        out.write(
            f"{cfg.case}\t{name}\t{cfg.delta:g}\t{cfg.j_max}\t{s.mean:.2f}\t{s.se:.2f}\t{s.reps}\t{s.truncated}\n"
        )
    if args.out:
        write_long_format([table], args.out)
        out.write(f"long-format table written to {args.out}\n")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit code 1 for usage problems, not argparse's 2
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sprintcusum", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="calibrate a limit schedule from Phase-I data")
    cal.add_argument("--input", required=True, help="CSV path ('-' for stdin)")
    cal.add_argument("--out", required=True, help="schedule file to write")
    cal.add_argument("--column", type=int, default=0)
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--arl0", type=float, default=200.0)
    cal.add_argument("--jmax", type=int, default=50)
    cal.add_argument("--sprint-fraction", type=float, default=0.75, choices=[0.5, 0.75, 1.0])
    cal.add_argument("--boot-reps", type=int, default=2000)
    cal.add_argument("--prewhiten", default="off", help="off | aic:<max_order> | fixed:<r>")

    mon = sub.add_parser("monitor", help="monitor a stream against a saved schedule")
    mon.add_argument("--input", required=True, help="CSV path ('-' for stdin)")
    mon.add_argument("--schedule", required=True)
    mon.add_argument("--column", type=int, default=0)
    mon.add_argument("--prewhiten", default="off")
    mon.add_argument("--phase1", default=None, help="Phase-I CSV for fitting the AR model")
    mon.add_argument("--continue", dest="keep_going", action="store_true",
                     help="restart at zero after each signal instead of stopping")

    sim = sub.add_parser("simulate", help="run-length experiments")
    sim.add_argument("--case", default="I", choices=["I", "II", "III"])
    sim.add_argument("--methods", default="C,B2")
    sim.add_argument("--delta", type=float, default=0.0)
    sim.add_argument("--m", type=int, default=1000)
    sim.add_argument("--reps", type=int, default=100)
    sim.add_argument("--jmax", type=int, default=50)
    sim.add_argument("--arl0", type=float, default=200.0)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--boot-reps", type=int, default=2000)
    sim.add_argument("--known-f", action="store_true", help="draw calibration streams from the analytic law")
    sim.add_argument("--table1", action="store_true", help="bootstrap-validity uniformity table")
    sim.add_argument("--out", default=None, help="also write a long-format TSV")
    return parser


def main(argv: Sequence[str] | None = None, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "calibrate":
            return cmd_calibrate(args, out)
        if args.command == "monitor":
            return cmd_monitor(args, out)
        return cmd_simulate(args, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (CalibrationError, ValueError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())
