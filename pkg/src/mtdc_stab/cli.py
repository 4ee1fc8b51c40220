"""Command-line front end: ``mtdc-stab <command> <case.json> [options]``.

Results go to ``--out`` (or standard output); logging goes to standard error.
"""
from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .case import load_case, validate
from .control import STRATEGIES
from .powerflow import solve_sequential
from .small_signal import analyze, damping_ratio, frequency_hz, gain_sweep, machine_vector, tracked_modes
from .time_domain import EventSchedule, FaultSpec, compute_cct, simulate

log = logging.getLogger("mtdc_stab")

DEFAULT_FAULT = {"bus": 8, "trips": [9], "t_fault": 0.1}


# ---------------------------------------------------------------------------
# Emission

def fmt(v) -> str:
    """Numbers with 6 significant digits; everything else as text."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6g}"
    return str(v)


def _round(obj):
    """Recursively round floats to 6 significant digits for JSON output."""
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _round(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return None
        return float(f"{v:.6g}")
    return obj


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(_round(obj), indent=2) + "\n"


def emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {out}: {exc.strerror or exc}") from exc
    log.info("wrote %s", out)


def _format(args, default: str) -> str:
    if getattr(args, "format", None):
        return args.format
    if args.out and args.out.lower().endswith(".csv"):
        return "csv"
    if args.out and args.out.lower().endswith(".json"):
        return "json"
    return default


# ---------------------------------------------------------------------------
# Study configuration

@dataclass(frozen=True)
class StudyConfig:
    case_path: str
    strategy: str = "none"
    k: float | None = None
    delay_ms: float = 0.0
    fault: dict = field(default_factory=lambda: dict(DEFAULT_FAULT))

    def __post_init__(self):
        s = self.strategy.lower().replace("-", "")
        if s not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        object.__setattr__(self, "strategy", s)
        if self.delay_ms < 0:
            raise ValueError("delay_ms must be >= 0")
        if s in ("none", "base"):
            # the gain has no meaning without a controller
            object.__setattr__(self, "k", None)

    @property
    def label(self) -> str:
        if self.strategy in ("none", "base"):
            return "base"
        return {"pwaf": "P-WAF", "qwaf": "Q-WAF", "pqwaf": "PQ-WAF"}[self.strategy]

    def case(self):
        return load_case(self.case_path).with_strategy(self.strategy, self.k, self.delay_ms)


def _load(path):
    case = load_case(path)
    problems = validate(case)
    if problems:
        raise ValueError("invalid case: " + "; ".join(problems))
    return case


def _configured(args):
    case = _load(args.case)
    if getattr(args, "strategy", None):
        case = case.with_strategy(args.strategy, args.k, args.delay_ms)
    return case


# ---------------------------------------------------------------------------
# Commands

def cmd_powerflow(args) -> int:
    case = _load(args.case)
    pf = solve_sequential(case)
    if _format(args, "json") == "csv":
        rows = [(b.id, abs(v), math.degrees(np.angle(v))) for b, v in zip(case.buses, pf.ac_voltages)]
        emit(csv_text(["bus", "v_pu", "angle_deg"], rows), args.out)
    else:
        emit(json_text(pf.to_json(case)), args.out)
    return 0 if pf.converged else 1


MODES_HEADER = ["mode_id", "re", "im", "zeta_pct", "freq_hz", "top3_participating_states"]


def modes_rows(rep, idx):
    for n, i in enumerate(idx):
        lam = rep.eigenvalues[i]
        yield (n, lam.real, lam.imag, rep.damping_pct[i], rep.freq_hz[i], " ".join(rep.top_states(i)))


def cmd_modes(args) -> int:
    case = _configured(args)
    lm, rep = analyze(case)
    idx = [i for i in range(len(rep)) if args.all or rep.eigenvalues[i].imag >= 0]
    rows = list(modes_rows(rep, idx))
    if _format(args, "json") == "csv":
        emit(csv_text(MODES_HEADER, rows), args.out)
        return 0
    em = set(rep.electromechanical())
    out = []
    for row, i in zip(rows, idx):
        d = dict(zip(MODES_HEADER, row))
        d["top3_participating_states"] = rep.top_states(i)
        d["electromechanical"] = i in em
        if rep.shapes.shape[0]:
            d["shape"] = [{"state": s, "mag": abs(z), "phase_deg": math.degrees(np.angle(z))}
                          for s, z in zip(rep.speed_labels, rep.shapes[:, i])]
        out.append(d)
    ia = idx.index(rep.inter_area()) if em else None
    emit(json_text({"n_states": lm.n, "inter_area_mode": ia, "modes": out}), args.out)
    return 0


def _k_values(args):
    if args.k_values:
        return [float(v) for v in args.k_values.split(",")]
    if args.k_step <= 0:
        raise ValueError("--k-step must be > 0")
    n = int(math.floor((args.k_to - args.k_from) / args.k_step + 1e-9))
    return [args.k_from + i * args.k_step for i in range(n + 1)]


def cmd_sweep(args) -> int:
    case = _load(args.case)
    res = gain_sweep(case, args.strategy, _k_values(args), delay_ms=args.delay_ms, modes=args.modes)
    rows = list(res.rows())
    if _format(args, "csv") == "json":
        emit(json_text({"k": res.k_values, "modes": {m: {"zeta_pct": res.damping(m), "freq_hz": res.frequency(m)}
                                                     for m in res.mode_ids}}), args.out)
    else:
        emit(csv_text(["k", "mode_id", "re", "im", "zeta_pct", "freq_hz"], rows), args.out)
    return 0 if all(z is not None for m in res.mode_ids for z in res.tracks[m]) else 1


def cmd_simulate(args) -> int:
    case = _configured(args)
    schedule = EventSchedule.load(args.events, case) if args.events else EventSchedule()
    res = simulate(case, schedule, t_end=args.t_end, dt=args.dt)
    log.info("termination: %s %s", res.termination, res.message)
    if _format(args, "csv") == "json":
        emit(json_text({"termination": res.termination, "message": res.message, "t": res.t,
                        "channels": {k: v for k, v in sorted(res.channels.items())}}), args.out)
    else:
        emit(csv_text(["t", "channel", "value"], res.long_rows()), args.out)
    if res.termination != "completed":
        sys.stderr.write(f"simulation ended: {res.termination} ({res.message})\n")
    return 0


def _fault(args, case):
    if args.fault:
        return FaultSpec.from_json(json.loads(Path(args.fault).read_text()), case)
    return FaultSpec.from_json(DEFAULT_FAULT, case)


def cmd_cct(args) -> int:
    case = _configured(args)
    res = compute_cct(case, _fault(args, case), args.resolution, t_max=args.t_max, t_sim=args.t_sim,
                      dt=args.dt, scan_pockets=args.scan_pockets)
    emit(json_text(res.to_json()), args.out)
    return 0


# -- report -----------------------------------------------------------------

REPORT_HEADER = ["case", "delay_ms", "k", "zeta1_pct", "f1_hz", "zeta2_pct", "f2_hz", "cct_ms", "cct_at_t_max", "status"]


def _report_row(cfg: StudyConfig, base_vectors, resolution, with_cct):
    try:
        case = cfg.case()
        k = cfg.k if cfg.k is not None else 0.0
        strategy = "none" if cfg.strategy in ("none", "base") else cfg.strategy
        tracked = tracked_modes(case, strategy, k, base_vectors, delay_ms=cfg.delay_ms)
        vals = []
        for mid in ("m1", "m2"):
            z = tracked.get(mid)
            vals += [math.nan, math.nan] if z is None else [damping_ratio(z), frequency_hz(z)]
        cct, capped = math.nan, False
        if with_cct:
            res = compute_cct(case, FaultSpec.from_json(cfg.fault, case), resolution)
            cct, capped = res.cct * 1000.0, res.at_t_max
        return [cfg.label, cfg.delay_ms, k, *vals, cct, capped, "ok"]
    except Exception as exc:  # a failed row is recorded and the run continues
        log.error("row %s/%s ms failed: %s", cfg.label, cfg.delay_ms, exc)
        return [cfg.label, cfg.delay_ms, cfg.k or 0.0, math.nan, math.nan, math.nan, math.nan, math.nan,
                False, "failed"]


def run_report(configs, *, resolution=0.01, with_cct=True, workers=1):
    """Rows mirroring the comparison table.

    The two lowest-frequency electromechanical modes of the uncontrolled case
    are followed into every row by continuation in the gain.
    """
    if not configs:
        return []
    base_case = load_case(configs[0].case_path).with_strategy("none")
    _, base = analyze(base_case)
    em = sorted(base.electromechanical(), key=lambda i: base.freq_hz[i])[:2]
    vectors = {f"m{j + 1}": machine_vector(base, i) for j, i in enumerate(em)}

    if workers > 1 and len(configs) > 1:
        with cf.ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(_report_row, c, vectors, resolution, with_cct) for c in configs]
            return [f.result() for f in futs]
    return [_report_row(c, vectors, resolution, with_cct) for c in configs]


def table_text(rows) -> str:
    head = f"{'case':<8}{'delay':>7}{'k':>7}{'zeta1 %':>10}{'f1 Hz':>9}{'zeta2 %':>10}{'f2 Hz':>9}{'CCT ms':>10}  status"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r[0]:<8}{fmt(r[1]):>7}{fmt(r[2]):>7}{fmt(r[3]):>10}{fmt(r[4]):>9}{fmt(r[5]):>10}{fmt(r[6]):>9}"
                     f"{('>=' if r[8] else '') + fmt(r[7]):>10}  {r[9]}")
    return "\n".join(lines) + "\n"


def threads() -> int:
    raw = os.environ.get("MTDC_STAB_THREADS", "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        log.warning("ignoring MTDC_STAB_THREADS=%r", raw)
        return 1


def cmd_report(args) -> int:
    _load(args.case)
    fault = json.loads(Path(args.fault).read_text()) if args.fault else dict(DEFAULT_FAULT)
    configs = []
    for s in args.strategies.split(","):
        s = s.strip()
        delays = [0.0] if s in ("none", "base") else [float(d) for d in args.delays.split(",")]
        for d in delays:
            configs.append(StudyConfig(args.case, s, args.k, d, fault))
    rows = run_report(configs, resolution=args.resolution, with_cct=not args.no_cct, workers=threads())
    emit(csv_text(REPORT_HEADER, rows), args.out)
    sys.stderr.write(table_text(rows))
    return 0 if all(r[-1] == "ok" for r in rows) else 1


# ---------------------------------------------------------------------------

def _strategy_flags(p, required=False):
    p.add_argument("--strategy", choices=["none", "pwaf", "qwaf", "pqwaf"], required=required,
                   help="supplementary controller strategy")
    p.add_argument("--k", type=float, default=None, help="per-converter controller gain (pu); ignored for none")
    p.add_argument("--delay-ms", type=float, default=None, help="communication delay of the WAF signal in ms")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mtdc-stab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr (-v, -vv)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("powerflow", help="sequential AC/DC power flow")
    p.add_argument("case")
    p.add_argument("--out", help="output file (.json or .csv); stdout when omitted")
    p.add_argument("--format", choices=["json", "csv"])
    p.set_defaults(func=cmd_powerflow)

    p = sub.add_parser("modes", help="eigenvalues, damping, participation")
    p.add_argument("case")
    _strategy_flags(p)
    p.add_argument("--all", action="store_true", help="list both members of complex pairs")
    p.add_argument("--out")
    p.add_argument("--format", choices=["json", "csv"])
    p.set_defaults(func=cmd_modes)

    p = sub.add_parser("sweep", help="modal analysis over a range of gains")
    p.add_argument("case")
    p.add_argument("--strategy", choices=["pwaf", "qwaf", "pqwaf"], required=True)
    p.add_argument("--k-from", type=float, default=0.0)
    p.add_argument("--k-to", type=float, default=500.0)
    p.add_argument("--k-step", type=float, default=20.0)
    p.add_argument("--k-values", help="comma-separated gains (overrides the range)")
    p.add_argument("--delay-ms", type=float, default=0.0)
    p.add_argument("--modes", choices=["em", "inter_area"], default="em")
    p.add_argument("--out")
    p.add_argument("--format", choices=["json", "csv"])
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="nonlinear time-domain simulation")
    p.add_argument("case")
    p.add_argument("--events", help="event schedule JSON")
    p.add_argument("--t-end", type=float, default=20.0)
    p.add_argument("--dt", type=float, default=0.005)
    _strategy_flags(p)
    p.add_argument("--out")
    p.add_argument("--format", choices=["json", "csv"])
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cct", help="critical clearing time by bisection")
    p.add_argument("case")
    p.add_argument("--fault", help="fault JSON (bus or branch end, trips, t_fault)")
    p.add_argument("--resolution", type=float, default=0.01)
    p.add_argument("--t-max", type=float, default=1.0)
    p.add_argument("--t-sim", type=float, default=5.0, help="simulated time after fault inception")
    p.add_argument("--dt", type=float, default=0.005)
    p.add_argument("--scan-pockets", action="store_true", help="sample every clearing time to look for pockets")
    _strategy_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_cct)

    p = sub.add_parser("report", help="comparison table of strategies and delays")
    p.add_argument("case")
    p.add_argument("--strategies", default="none,pwaf,qwaf,pqwaf")
    p.add_argument("--delays", default="0,50,100")
    p.add_argument("--k", type=float, default=200.0)
    p.add_argument("--fault")
    p.add_argument("--resolution", type=float, default=0.01)
    p.add_argument("--no-cct", action="store_true", help="skip the transient-stability column")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, LookupError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
