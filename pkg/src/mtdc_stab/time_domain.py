"""Nonlinear time-domain simulation, disturbances and critical clearing time.

Integration is a fixed-step trapezoidal rule. Plant states are solved by a
modified Newton iteration; within every iterate the controllers are advanced
with their own bilinear update, so the algebraic properties of the
controller bank (for instance the zero sum of the P-WAF outputs) hold at
every step to round-off.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .case import NetworkCase
from .dynamics import FAULT_ADMITTANCE, DynamicModel
from .powerflow import PowerFlowSolution

log = logging.getLogger(__name__)

COMPLETED = "completed"
LOSS_OF_SYNC = "loss_of_sync"
NUMERICAL_FAILURE = "numerical_failure"


# ---------------------------------------------------------------------------
# Events and topology

@dataclass(frozen=True)
class Event:
    t: float
    kind: str  # trip_ac_branch | apply_fault | clear_fault
    branch: int | None = None
    bus: int | None = None
    admittance: complex = FAULT_ADMITTANCE
    trips: tuple = ()

    def to_json(self) -> dict:
        out = {"t": self.t, "type": self.kind}
        if self.branch is not None:
            out["branch"] = self.branch
        if self.bus is not None:
            out["bus"] = self.bus
        if self.kind == "apply_fault":
            out["admittance"] = {"re": self.admittance.real, "im": self.admittance.imag}
        if self.trips:
            out["trips"] = list(self.trips)
        return out


@dataclass(frozen=True)
class EventSchedule:
    events: tuple = ()

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)

    def violations(self, case: NetworkCase) -> list[str]:
        out = []
        branch_ids = {b.id for b in case.branches}
        bus_ids = {b.id for b in case.buses}
        times = [e.t for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            out.append("event times must be nondecreasing")
        topo = Topology.of(case)
        for e in self.events:
            if e.t < 0:
                out.append(f"event at t={e.t}: negative time")
            try:
                topo = apply_event(topo, e, case)
            except ValueError as exc:
                out.append(f"event at t={e.t}: {exc}")
            for b in e.trips:
                if b not in branch_ids:
                    out.append(f"event at t={e.t}: unknown branch {b}")
            if e.bus is not None and e.bus not in bus_ids:
                out.append(f"event at t={e.t}: unknown bus {e.bus}")
        return out

    def to_json(self) -> dict:
        return {"events": [e.to_json() for e in self.events]}

    @classmethod
    def from_json(cls, data, case: NetworkCase | None = None) -> "EventSchedule":
        items = data["events"] if isinstance(data, dict) else data
        out = []
        for d in items:
            kind = d["type"]
            if kind == "trip_branch":
                kind = "trip_ac_branch"
            bus = d.get("bus")
            if bus is None and kind in ("apply_fault", "clear_fault") and "branch" in d:
                if case is None:
                    raise ValueError("branch-end faults need the case to resolve the bus")
                br = case.branch(d["branch"])
                bus = br.to_bus if d.get("end", "from") == "to" else br.from_bus
            adm = d.get("admittance")
            adm = FAULT_ADMITTANCE if adm is None else complex(adm["re"], adm["im"])
            out.append(Event(t=float(d["t"]), kind=kind, branch=d.get("branch") if kind == "trip_ac_branch" else None,
                             bus=bus, admittance=adm, trips=tuple(d.get("trips", ()))))
        return cls(tuple(sorted(out, key=lambda e: e.t)))

    @classmethod
    def load(cls, path, case=None) -> "EventSchedule":
        return cls.from_json(json.loads(Path(path).read_text()), case)


@dataclass(frozen=True)
class Topology:
    """Out-of-service branch ids and active fault shunts (bus id -> admittance)."""

    out_branches: frozenset = frozenset()
    faults: tuple = ()

    @classmethod
    def of(cls, case: NetworkCase) -> "Topology":
        return cls(out_branches=frozenset(b.id for b in case.branches if not b.status))

    def fault_map(self) -> dict:
        return dict(self.faults)


def trip_branch(topo: Topology, branch: int, case: NetworkCase | None = None) -> Topology:
    if case is not None and branch not in {b.id for b in case.branches}:
        raise ValueError(f"unknown branch {branch}")
    if branch in topo.out_branches:
        raise ValueError(f"branch {branch} already out of service")
    return Topology(out_branches=topo.out_branches | {branch}, faults=topo.faults)


def apply_fault(topo: Topology, bus: int, admittance: complex = FAULT_ADMITTANCE) -> Topology:
    """Add a shunt fault admittance at ``bus``."""
    faults = topo.fault_map()
    if bus in faults:
        raise ValueError(f"bus {bus} is already faulted")
    faults[bus] = complex(admittance)
    return Topology(out_branches=topo.out_branches, faults=tuple(sorted(faults.items())))


def clear_fault(topo: Topology, bus: int, trips=()) -> Topology:
    """Remove the fault at ``bus`` and trip the listed branches."""
    faults = topo.fault_map()
    if bus not in faults:
        raise ValueError(f"no fault at bus {bus} to clear")
    del faults[bus]
    out = topo.out_branches
    for b in trips:
        if b in out:
            raise ValueError(f"branch {b} already out of service")
        out = out | {b}
    return Topology(out_branches=out, faults=tuple(sorted(faults.items())))


def apply_event(topo: Topology, ev: Event, case: NetworkCase | None = None) -> Topology:
    if ev.kind == "trip_ac_branch":
        return trip_branch(topo, ev.branch, case)
    if ev.kind == "apply_fault":
        return apply_fault(topo, ev.bus, ev.admittance)
    if ev.kind == "clear_fault":
        return clear_fault(topo, ev.bus, ev.trips)
    raise ValueError(f"unknown event type {ev.kind!r}")


# ---------------------------------------------------------------------------
# Loss of synchronism

def coi_angle(delta, H):
    delta = np.asarray(delta, dtype=float)
    H = np.asarray(H, dtype=float)
    return (delta @ H) / H.sum()


def loss_of_sync(delta, H, reference=None, threshold: float = math.pi) -> bool:
    """True when any rotor angle leaves the reference by more than ``threshold``.

    ``delta`` is ``(n_machines,)`` or ``(n_steps, n_machines)``. The
    reference is the inertia-weighted centre of inertia unless an explicit
    reference angle (an infinite bus) is given.
    """
    d = np.atleast_2d(np.asarray(delta, dtype=float))
    if reference is None:
        if d.shape[1] < 2:
            raise ValueError("centre-of-inertia reference needs at least two machines")
        ref = coi_angle(d, H)
    else:
        ref = np.broadcast_to(np.asarray(reference, dtype=float), d.shape[:1])
    return bool(np.any(np.abs(d - ref[:, None]) > threshold))


# ---------------------------------------------------------------------------
# Simulation

@dataclass
class SimulationResult:
    t: np.ndarray
    channels: dict
    termination: str = COMPLETED
    message: str = ""
    machine_ids: list = field(default_factory=list)
    vsc_ids: list = field(default_factory=list)
    dc_bus_ids: list = field(default_factory=list)
    final_state: np.ndarray | None = None

    @property
    def stable(self) -> bool:
        return self.termination == COMPLETED

    def long_rows(self):
        """``(t, channel, value)`` rows in a deterministic order."""
        names = {"delta": self.machine_ids, "dw": self.machine_ids, "p_e": self.machine_ids,
                 "p_s": self.vsc_ids, "q_s": self.vsc_ids, "dp": self.vsc_ids, "dq": self.vsc_ids,
                 "omega": self.vsc_ids, "freq_dev": self.vsc_ids, "u_dc": self.dc_bus_ids}
        for i, t in enumerate(self.t):
            for ch in sorted(self.channels):
                arr = self.channels[ch]
                if arr.ndim == 1:
                    yield (t, ch, arr[i])
                else:
                    ids = names.get(ch, list(range(arr.shape[1])))
                    for j, ident in enumerate(ids):
                        yield (t, f"{ch}[{ident}]", arr[i, j])


class _Stepper:
    """Trapezoidal step with modified Newton for one model."""

    def __init__(self, model: DynamicModel, dt: float, tol: float, max_iter: int):
        self.m = model
        self.dt = dt
        self.tol = tol
        self.max_iter = max_iter
        self.lu = None
        self.u_gate = None

    def evaluate(self, xp, cstate):
        m = self.m
        V = m.network(xp)
        omegas, u_s = m.measurements(xp, V)
        # the Q-WAF gate is a discrete variable held over the step
        dp, dq, omega_star, cnew = m.step_controllers(cstate, omegas, self.u_gate, self.dt)
        f, aux = m.plant_derivs(xp, V, dp, dq, v_th=-1.0)
        return f, aux, dp, dq, omega_star, cnew, V

    def jacobian(self, xp, cstate, f0):
        n = xp.size
        J = np.eye(n)
        for j in range(n):
            h = 1e-7 * max(1.0, abs(xp[j]))
            xh = xp.copy()
            xh[j] += h
            fh = self.evaluate(xh, cstate)[0]
            J[:, j] -= 0.5 * self.dt * (fh - f0) / h
        self.lu = lu_factor(J)

    def step(self, xn, fn, cstate):
        """Return ``(evaluation at t+dt, x_{n+1})``; the evaluation is None on failure.

        The Jacobian is reused across steps and refreshed at the current
        iterate whenever the contraction is slow (limiter switching, events).
        """
        xp = xn.copy()
        if self.lu is None:
            ev = self.evaluate(xp, cstate)
            if not np.all(np.isfinite(ev[0])):
                return None, xp
            self.jacobian(xp, cstate, ev[0])
        prev = np.inf
        for _ in range(self.max_iter):
            ev = self.evaluate(xp, cstate)
            f = ev[0]
            if not np.all(np.isfinite(f)):
                break
            dx = lu_solve(self.lu, -(xp - xn - 0.5 * self.dt * (fn + f)))
            xp = xp + dx
            size = np.max(np.abs(dx))
            if size < self.tol:
                return self.evaluate(xp, cstate), xp
            if size > 0.25 * prev:
                f_now = self.evaluate(xp, cstate)[0]
                if not np.all(np.isfinite(f_now)):
                    break
                self.jacobian(xp, cstate, f_now)
            prev = size
        self.lu = None
        return None, xp


def _controller_rest(model: DynamicModel, xp, cstate):
    """Refresh the controller's stored input after an algebraic jump."""
    from .control import ControllerState, BlockState
    V = model.network(xp)
    omegas, _ = model.measurements(xp, V)
    cfg = model.cfg
    if not model.has_ctrl:
        return cstate
    raw = float(np.dot(cfg.alpha, omegas))
    if model.has_delay:
        from .control import pade_matrices
        _, _, C, D = pade_matrices(cfg.tau)
        pade = BlockState(x=cstate.pade.x, u_prev=raw - 1.0)
        omega_star = 1.0 + float(C @ cstate.pade.x + D * (raw - 1.0))
    else:
        pade = BlockState(x=cstate.pade.x, u_prev=raw - 1.0)
        omega_star = raw
    return ControllerState(chain=cstate.chain, err_prev=omega_star - omegas, pade=pade)


def simulate(case_or_model, schedule: EventSchedule | None = None, t_end: float = 10.0, dt: float = 0.005, *,
             x0=None, tol: float = 1e-8, max_iter: int = 40, stop_on_loss_of_sync: bool = True,
             pf: PowerFlowSolution | None = None) -> SimulationResult:
    """Fixed-step trapezoidal simulation from the power-flow equilibrium.

    ``x0`` optionally overrides the initial state (same layout as the
    model's state vector, controller part included).
    """
    if dt > 0.01 + 1e-12:
        raise ValueError("dt must be at most 10 ms")
    model = case_or_model if isinstance(case_or_model, DynamicModel) else DynamicModel(case_or_model, pf)
    case = model.case
    schedule = schedule or EventSchedule()
    problems = schedule.violations(case)
    if problems:
        raise ValueError("invalid event schedule: " + "; ".join(problems))

    idx = case.bus_index()
    topo = Topology.of(case)
    model.set_topology(topo.out_branches, {})
    n_steps = int(round(t_end / dt))
    event_steps: dict = {}
    for ev in schedule:
        event_steps.setdefault(int(round(ev.t / dt)), []).append(ev)

    x_full = model.x0.copy() if x0 is None else np.array(x0, dtype=float)
    cstate = model.controller_state_from(x_full)
    xp = x_full[: model.n_plant].copy()
    stepper = _Stepper(model, dt, tol, max_iter)

    ng, nv = model.ng, model.nv
    ref = None
    if model.fixed:
        ref = float(np.angle(next(iter(model.fixed.values()))))
    ch = {
        "delta": np.full((n_steps + 1, ng), np.nan),
        "dw": np.full((n_steps + 1, ng), np.nan),
        "p_e": np.full((n_steps + 1, ng), np.nan),
        "p_s": np.full((n_steps + 1, nv), np.nan),
        "q_s": np.full((n_steps + 1, nv), np.nan),
        "dp": np.full((n_steps + 1, nv), np.nan),
        "dq": np.full((n_steps + 1, nv), np.nan),
        "omega": np.full((n_steps + 1, nv), np.nan),
        "freq_dev": np.full((n_steps + 1, nv), np.nan),
        "u_dc": np.full((n_steps + 1, model.ndc), np.nan),
        "omega_star": np.full(n_steps + 1, np.nan),
        "sum_dp": np.full(n_steps + 1, np.nan),
    }
    off = model.off
    mod_warned = False
    check_sync = ng > 1 or (ng == 1 and ref is not None)

    def record(i, xp, aux, dp, dq, omega_star):
        ch["delta"][i] = xp[off[0]:off[0] + ng]
        ch["dw"][i] = xp[off[1]:off[1] + ng]
        ch["p_e"][i] = aux[4, :ng]
        ch["p_s"][i] = aux[0, :nv]
        ch["q_s"][i] = aux[1, :nv]
        ch["dp"][i] = dp
        ch["dq"][i] = dq
        ch["omega"][i] = aux[2, :nv]
        ch["freq_dev"][i] = aux[2, :nv] - omega_star
        ch["u_dc"][i] = xp[off[6]:off[6] + model.ndc]
        ch["omega_star"][i] = omega_star
        ch["sum_dp"][i] = float(np.sum(dp))

    def current_eval(xp, cstate):
        """Derivative at a known point using the controller outputs already held in ``cstate``."""
        V = model.network(xp)
        omegas, u_s = model.measurements(xp, V)
        if model.has_ctrl:
            from .control import chain_matrices, controller_outputs
            _, _, C = chain_matrices(model.cfg.Tf, model.cfg.Tw)
            dp, dq = controller_outputs(cstate.chain @ C, u_s, model.cfg)
            dp, dq = dp * model.v_ratio, dq * model.v_ratio
            omega_star = float(omegas[0] + cstate.err_prev[0])
        else:
            dp, dq = np.zeros(nv), np.zeros(nv)
            omega_star = float(np.dot(model.cfg.alpha, omegas)) if nv else 1.0
        f, aux = model.plant_derivs(xp, V, dp, dq)
        return f, aux, dp, dq, omega_star

    termination = COMPLETED
    message = ""
    last = 0
    for i in range(n_steps + 1):
        if i in event_steps:
            for ev in event_steps[i]:
                topo = apply_event(topo, ev, case)
            faults = {idx[b]: y for b, y in topo.faults}
            try:
                model.set_topology(topo.out_branches, faults)
            except Exception as exc:  # singular network after the event
                termination, message = NUMERICAL_FAILURE, str(exc)
                break
            stepper.lu = None
            cstate = _controller_rest(model, xp, cstate)
        fn, aux, dp, dq, omega_star = current_eval(xp, cstate)
        record(i, xp, aux, dp, dq, omega_star)
        stepper.u_gate = aux[3, :nv].copy()
        last = i
        if check_sync and loss_of_sync(xp[off[0]:off[0] + ng], model.mg_H, reference=ref):
            termination = LOSS_OF_SYNC
            message = f"loss of synchronism at t={i * dt:.4f} s"
            if stop_on_loss_of_sync:
                break
        if nv and not mod_warned and np.any(model.modulation_ratio(xp) > 1.0):
            log.warning("modulation index above m_max at t=%.4f s", i * dt)
            mod_warned = True
        if i == n_steps:
            break
        ev_out, xnew = stepper.step(xp, fn, cstate)
        if ev_out is None:
            termination = NUMERICAL_FAILURE
            message = f"Newton iteration failed at t={(i + 1) * dt:.4f} s"
            break
        udc = xnew[off[6]:off[6] + model.ndc]
        if model.ndc and (np.any(udc < 0.5) or np.any(udc > 1.5)):
            termination = NUMERICAL_FAILURE
            message = f"DC voltage out of [0.5, 1.5] at t={(i + 1) * dt:.4f} s"
            break
        xp = xnew
        cstate = ev_out[5]

    keep = last + 1
    t = np.arange(keep) * dt
    channels = {k: v[:keep] for k, v in ch.items()}
    final = np.concatenate([xp, _continuous_ctrl(model, cstate)])
    return SimulationResult(t=t, channels=channels, termination=termination, message=message,
                            machine_ids=[g.id for g in case.machines], vsc_ids=[v.id for v in case.vscs],
                            dc_bus_ids=[b.id for b in case.dc_buses], final_state=final)


def _continuous_ctrl(model: DynamicModel, cstate):
    parts = []
    if model.has_ctrl:
        parts.append(cstate.chain.ravel())
    if model.has_delay:
        parts.append(cstate.pade.x)
    return np.concatenate(parts) if parts else np.zeros(0)


# ---------------------------------------------------------------------------
# Critical clearing time

@dataclass(frozen=True)
class FaultSpec:
    bus: int
    trips: tuple = ()
    admittance: complex = FAULT_ADMITTANCE
    t_fault: float = 0.1

    def schedule(self, duration: float) -> EventSchedule:
        return EventSchedule((
            Event(t=self.t_fault, kind="apply_fault", bus=self.bus, admittance=self.admittance),
            Event(t=self.t_fault + duration, kind="clear_fault", bus=self.bus, trips=tuple(self.trips)),
        ))

    def to_json(self) -> dict:
        return {"bus": self.bus, "trips": list(self.trips), "t_fault": self.t_fault,
                "admittance": {"re": self.admittance.real, "im": self.admittance.imag}}

    @classmethod
    def from_json(cls, d: dict, case: NetworkCase | None = None) -> "FaultSpec":
        bus = d.get("bus")
        if bus is None:
            if case is None:
                raise ValueError("branch-end faults need the case to resolve the bus")
            br = case.branch(d["branch"])
            bus = br.to_bus if d.get("end", "from") == "to" else br.from_bus
        adm = d.get("admittance")
        adm = FAULT_ADMITTANCE if adm is None else complex(adm["re"], adm["im"])
        return cls(bus=bus, trips=tuple(d.get("trips", ())), admittance=adm, t_fault=float(d.get("t_fault", 0.1)))


@dataclass
class CCTResult:
    cct: float
    at_t_max: bool
    resolution: float
    evaluations: list  # (clearing time, stable)
    pockets: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "cct_s": self.cct,
            "cct_ms": round(self.cct * 1000.0, 6),
            "at_t_max": self.at_t_max,
            "resolution_s": self.resolution,
            "evaluations": [{"t_clear": t, "stable": s} for t, s in self.evaluations],
            "pockets": self.pockets,
        }


def is_stable(model: DynamicModel, fault: FaultSpec, t_clear: float, *, t_sim: float = 5.0,
              dt: float = 0.005) -> bool:
    res = simulate(model, fault.schedule(t_clear), t_end=fault.t_fault + t_sim, dt=dt)
    return res.stable


def compute_cct(case_or_model, fault: FaultSpec, resolution: float = 0.01, *, t_max: float = 1.0,
                t_sim: float = 5.0, dt: float = 0.005, scan_pockets: bool = False,
                pf: PowerFlowSolution | None = None) -> CCTResult:
    """Largest stable clearing time by bisection on a grid of ``resolution``.

    Returns ``at_t_max=True`` (with ``cct=t_max``) when clearing at ``t_max``
    is still stable. Raises ``RuntimeError`` if the post-fault system is
    unstable even for an instantaneous clearing.
    """
    if resolution < dt - 1e-12:
        raise ValueError("resolution must be at least dt")
    model = case_or_model if isinstance(case_or_model, DynamicModel) else DynamicModel(case_or_model, pf)
    if fault.bus not in model.case.bus_index():
        raise ValueError(f"unknown fault bus {fault.bus}")
    evaluations: list = []
    cache: dict = {}

    def stable(n):
        if n not in cache:
            t = round(n * resolution, 12)
            cache[n] = is_stable(model, fault, t, t_sim=t_sim, dt=dt)
            evaluations.append((t, cache[n]))
        return cache[n]

    hi = int(math.floor(t_max / resolution + 1e-9))
    if not stable(0):
        raise RuntimeError("case unstable without fault duration")
    if stable(hi):
        return CCTResult(cct=hi * resolution, at_t_max=True, resolution=resolution, evaluations=evaluations)
    lo = 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if stable(mid):
            lo = mid
        else:
            hi = mid
    pockets = []
    if scan_pockets:
        top = int(math.floor(t_max / resolution + 1e-9))
        for n in range(0, top + 1):
            s = stable(n)
            if (n <= lo and not s) or (n >= hi and s):
                pockets.append(round(n * resolution, 12))
        if pockets:
            log.warning("stability pockets found at clearing times %s", pockets)
    return CCTResult(cct=round(lo * resolution, 12), at_t_max=False, resolution=resolution,
                     evaluations=evaluations, pockets=pockets)
