"""Sequential AC/DC power flow.

The AC grid is solved by Newton-Raphson with the converters as fixed P/Q
injections, converter losses are evaluated from the AC-side current, the DC
grid is solved with one DC-voltage slack converter, and the slack
converter's AC injection is updated until it stops moving.

Sign conventions: ``p_s > 0`` injects active power into the AC grid;
DC-side power and current are positive when injected into the DC grid.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .case import NetworkCase, VSCStation, build_ybus, to_system_base

log = logging.getLogger(__name__)


@dataclass
class ACSolution:
    voltages: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float
    history: list = field(default_factory=list)


@dataclass
class DCSolution:
    voltages: np.ndarray
    slack_power: float
    converged: bool
    iterations: int
    residual: float


@dataclass
class PowerFlowSolution:
    ac_voltages: np.ndarray
    dc_voltages: np.ndarray
    vsc_p_s: np.ndarray
    vsc_q_s: np.ndarray
    vsc_p_loss: np.ndarray
    vsc_i_dc: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float
    outer_history: list = field(default_factory=list)

    def to_json(self, case: NetworkCase | None = None) -> dict:
        out = {
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "max_mismatch": float(self.max_mismatch),
            "ac_voltages": [{"re": float(v.real), "im": float(v.imag)} for v in self.ac_voltages],
            "dc_voltages": [float(u) for u in self.dc_voltages],
            "vsc_p_s": [float(p) for p in self.vsc_p_s],
            "vsc_q_s": [float(q) for q in self.vsc_q_s],
            "vsc_p_loss": [float(p) for p in self.vsc_p_loss],
            "vsc_i_dc": [float(i) for i in self.vsc_i_dc],
        }
        if case is not None:
            out["bus_ids"] = [b.id for b in case.buses]
            out["dc_bus_ids"] = [b.id for b in case.dc_buses]
            out["vsc_ids"] = [v.id for v in case.vscs]
        return out


# ---------------------------------------------------------------------------
# AC Newton-Raphson

def _dS_dV(Y, V):
    """Partial derivatives of bus injections w.r.t. angle and magnitude."""
    I = Y @ V
    Vn = V / np.abs(V)
    dS_dth = 1j * np.diag(V) @ np.conj(np.diag(I) - Y @ np.diag(V))
    dS_dvm = np.diag(V) @ np.conj(Y @ np.diag(Vn)) + np.conj(np.diag(I)) @ np.diag(Vn)
    return dS_dth, dS_dvm


def scheduled_injections(case: NetworkCase, vsc_pq=None) -> np.ndarray:
    """Net complex injection per bus (generation + converters - load), system pu.

    Slack-bus entries are meaningless and ignored by the solver.
    """
    idx = case.bus_index()
    S = np.array([-(b.p_load + 1j * b.q_load) for b in case.buses], dtype=complex)
    for m in case.machines:
        S[idx[m.bus]] += m.p_set
    if vsc_pq is not None:
        for v, (p, q) in zip(case.vscs, vsc_pq):
            S[idx[v.ac_bus]] += p + 1j * q
    return S


def solve_ac(case: NetworkCase, vsc_injections=None, *, tol: float = 1e-10, max_iter: int = 30,
             v0=None) -> ACSolution:
    """Newton-Raphson AC power flow with converters as fixed P/Q injections.

    ``case`` must be on the system base. ``vsc_injections`` is a sequence of
    ``(p, q)`` per converter in system pu.
    """
    Y = build_ybus(case)
    types = [b.type for b in case.buses]
    pv = [i for i, t in enumerate(types) if t == "PV"]
    pq = [i for i, t in enumerate(types) if t == "PQ"]
    pvpq = pv + pq
    n = len(case.buses)
    if v0 is None:
        V = np.ones(n, dtype=complex)
    else:
        V = np.array(v0, dtype=complex)
    for i, b in enumerate(case.buses):
        if b.type in ("slack", "PV"):
            V[i] = b.v_set * V[i] / abs(V[i])
    S_sched = scheduled_injections(case, vsc_injections)

    history = []
    converged = False
    it = 0
    mis = np.inf
    for it in range(max_iter + 1):
        S_calc = V * np.conj(Y @ V)
        dS = S_calc - S_sched
        F = np.concatenate([dS.real[pvpq], dS.imag[pq]])
        mis = float(np.max(np.abs(F))) if F.size else 0.0
        history.append(mis)
        if not np.isfinite(mis):
            break
        if mis < tol:
            converged = True
            break
        if it == max_iter:
            break
        dS_dth, dS_dvm = _dS_dV(Y, V)
        J = np.block([
            [dS_dth.real[np.ix_(pvpq, pvpq)], dS_dvm.real[np.ix_(pvpq, pq)]],
            [dS_dth.imag[np.ix_(pq, pvpq)], dS_dvm.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        th = np.angle(V)
        vm = np.abs(V)
        th[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        if np.any(vm <= 0):
            break
        V = vm * np.exp(1j * th)
    return ACSolution(voltages=V, converged=converged, iterations=it, max_mismatch=mis, history=history)


# ---------------------------------------------------------------------------
# Converter losses

def _coeffs(coeffs):
    if isinstance(coeffs, VSCStation):
        return coeffs.loss_a, coeffs.loss_b, coeffs.loss_c_rec, coeffs.loss_c_inv
    if isinstance(coeffs, dict):
        return coeffs["a"], coeffs["b"], coeffs["c_rec"], coeffs["c_inv"]
    return tuple(coeffs)


def losses(i_s: float, direction: str, coeffs) -> float:
    """Converter losses ``a + b i + c i^2`` with ``c`` picked by direction."""
    if i_s < 0:
        raise ValueError("current magnitude must be non-negative")
    a, b, c_rec, c_inv = _coeffs(coeffs)
    if direction == "rectifier":
        c = c_rec
    elif direction == "inverter":
        c = c_inv
    else:
        raise ValueError(f"direction must be 'rectifier' or 'inverter', not {direction!r}")
    return a + b * i_s + c * i_s * i_s


def converter_loss(p_s, i_s, a, b, c_rec, c_inv):
    """Loss with the operating direction taken from the DC-side power sign.

    The converter rectifies when, counting rectifier losses, it still pushes
    power into the DC grid. Works element-wise on arrays.
    """
    base = a + b * i_s
    rect = base + c_rec * i_s * i_s
    inv = base + c_inv * i_s * i_s
    return np.where(p_s + rect < 0.0, rect, inv)


# ---------------------------------------------------------------------------
# DC grid

def dc_conductance(case: NetworkCase) -> np.ndarray:
    idx = case.dc_bus_index()
    n = len(case.dc_buses)
    G = np.zeros((n, n))
    for ln in case.dc_lines:
        i, j = idx[ln.from_bus], idx[ln.to_bus]
        g = 1.0 / ln.r_dc
        G[i, i] += g
        G[j, j] += g
        G[i, j] -= g
        G[j, i] -= g
    return G


def solve_dc_grid(case: NetworkCase, p_dc, slack_vsc=None, *, tol: float = 1e-12, max_iter: int = 30,
                  u0=None) -> DCSolution:
    """Newton solution of ``p_i = u_i * sum_j (u_i - u_j) / r_ij``.

    ``p_dc`` maps converter id to DC-side injection (system pu) for every
    converter except the slack; the slack defaults to the ``dc_slack``
    converter and holds its ``udc_set0``.
    """
    idx = case.dc_bus_index()
    if slack_vsc is None:
        slack_vsc = next(v for v in case.vscs if v.mode == "dc_slack")
    elif not isinstance(slack_vsc, VSCStation):
        slack_vsc = next(v for v in case.vscs if v.id == slack_vsc)
    s = idx[slack_vsc.dc_bus]
    n = len(case.dc_buses)
    P = np.zeros(n)
    by_id = {v.id: v for v in case.vscs}
    for vid, p in dict(p_dc).items():
        if vid == slack_vsc.id:
            continue
        P[idx[by_id[vid].dc_bus]] += p
    G = dc_conductance(case)
    u = np.ones(n) if u0 is None else np.array(u0, dtype=float)
    u[s] = slack_vsc.udc_set0
    free = [i for i in range(n) if i != s]
    converged = False
    res = np.inf
    it = 0
    for it in range(max_iter + 1):
        F = (u * (G @ u) - P)[free]
        res = float(np.max(np.abs(F))) if F.size else 0.0
        if not np.isfinite(res):
            break
        if res < tol:
            converged = True
            break
        if it == max_iter:
            break
        J = np.diag(G @ u) + np.diag(u) @ G
        u[free] += np.linalg.solve(J[np.ix_(free, free)], -F)
    slack_power = float(u[s] * (G @ u)[s] - P[s])
    return DCSolution(voltages=u, slack_power=slack_power, converged=converged, iterations=it, residual=res)


# ---------------------------------------------------------------------------
# Sequential algorithm

def _vsc_currents(case, V, pq):
    idx = case.bus_index()
    out = np.zeros(len(case.vscs))
    for k, v in enumerate(case.vscs):
        p, q = pq[k]
        out[k] = abs(complex(p, q)) / abs(V[idx[v.ac_bus]])
    return out


def solve_sequential(case: NetworkCase, *, tol: float = 1e-10, max_outer: int = 50, ac_tol: float = 1e-10,
                     v0=None, u0=None) -> PowerFlowSolution:
    """Sequential AC/DC power flow; converter data is converted to the system base first."""
    case = to_system_base(case)
    n_vsc = len(case.vscs)
    if n_vsc == 0:
        ac = solve_ac(case, None, tol=ac_tol, v0=v0)
        return PowerFlowSolution(
            ac_voltages=ac.voltages, dc_voltages=np.ones(len(case.dc_buses)), vsc_p_s=np.zeros(0),
            vsc_q_s=np.zeros(0), vsc_p_loss=np.zeros(0), vsc_i_dc=np.zeros(0), converged=ac.converged,
            iterations=ac.iterations, max_mismatch=ac.max_mismatch,
        )

    slack_k = next(k for k, v in enumerate(case.vscs) if v.mode == "dc_slack")
    slack = case.vscs[slack_k]
    p_s = np.array([v.p_set0 for v in case.vscs], dtype=float)
    q_s = np.array([v.q_set0 for v in case.vscs], dtype=float)
    p_s[slack_k] = -sum(p_s[k] for k in range(n_vsc) if k != slack_k)
    a = np.array([v.loss_a for v in case.vscs])
    b = np.array([v.loss_b for v in case.vscs])
    c_rec = np.array([v.loss_c_rec for v in case.vscs])
    c_inv = np.array([v.loss_c_inv for v in case.vscs])
    dc_idx = case.dc_bus_index()

    damping = 1.0
    history: list = []
    V = v0
    u = u0
    converged = False
    outer = 0
    ac = dc = None
    for outer in range(1, max_outer + 1):
        ac = solve_ac(case, list(zip(p_s, q_s)), tol=ac_tol, v0=V)
        if not ac.converged:
            log.warning("AC power flow did not converge in outer iteration %d", outer)
            break
        V = ac.voltages
        i_s = _vsc_currents(case, V, list(zip(p_s, q_s)))
        loss = converter_loss(p_s, i_s, a, b, c_rec, c_inv)
        p_dc = -(p_s + loss)
        dc = solve_dc_grid(case, {v.id: p_dc[k] for k, v in enumerate(case.vscs)}, slack, u0=u)
        if not dc.converged:
            log.warning("DC power flow did not converge in outer iteration %d", outer)
            break
        u = dc.voltages
        target = -dc.slack_power - loss[slack_k]
        step = target - p_s[slack_k]
        history.append(abs(step))
        if abs(step) < tol:
            converged = True
            break
        if len(history) >= 3 and history[-1] > history[-2] > 0 and damping == 1.0:
            log.info("outer loop oscillating; switching to damping 0.5")
            damping = 0.5
        p_s[slack_k] += damping * step

    i_s = _vsc_currents(case, ac.voltages, list(zip(p_s, q_s)))
    loss = converter_loss(p_s, i_s, a, b, c_rec, c_inv)
    p_dc = -(p_s + loss)
    u = dc.voltages if dc is not None else np.ones(len(case.dc_buses))
    i_dc = np.array([p_dc[k] / u[dc_idx[v.dc_bus]] for k, v in enumerate(case.vscs)])
    for k, v in enumerate(case.vscs):
        if i_s[k] > v.i_max:
            log.warning("vsc %s: current %.4g exceeds i_max %.4g at the operating point", v.id, i_s[k], v.i_max)
    return PowerFlowSolution(
        ac_voltages=ac.voltages, dc_voltages=u, vsc_p_s=p_s.copy(), vsc_q_s=q_s.copy(), vsc_p_loss=loss,
        vsc_i_dc=i_dc, converged=converged, iterations=outer,
        max_mismatch=ac.max_mismatch, outer_history=history,
    )


def generator_injections(case: NetworkCase, pf: PowerFlowSolution) -> np.ndarray:
    """Complex generation per machine implied by the converged voltages."""
    case = to_system_base(case)
    idx = case.bus_index()
    V = pf.ac_voltages
    S_calc = V * np.conj(build_ybus(case) @ V)
    S_load = np.array([b.p_load + 1j * b.q_load for b in case.buses])
    S_vsc = np.zeros(len(case.buses), dtype=complex)
    for k, v in enumerate(case.vscs):
        S_vsc[idx[v.ac_bus]] += pf.vsc_p_s[k] + 1j * pf.vsc_q_s[k]
    S_gen_bus = S_calc + S_load - S_vsc
    return np.array([S_gen_bus[idx[m.bus]] for m in case.machines])
