"""Differential-algebraic model of the hybrid AC/DC system.

States, in this order: machine angles and speed deviations, governor
outputs, converter d/q currents, converter angle-tracking filters, DC bus
voltages, DC line currents, and (when a strategy is active) the controller
filters and the delay block. The AC network is algebraic and is solved
inside every evaluation, so :meth:`DynamicModel.rhs` is an ordinary
``dx/dt = f(x)``.

Everything runs on the system base. Converter currents are aligned with the
angle-tracking filter, which keeps the network equations linear in the
states.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .case import NetworkCase, build_ybus, to_system_base
from .control import (ControllerState, WAFConfig, chain_matrices, chain_rhs, controller_outputs, pade_rhs,
                      supplementary_outputs)
from .powerflow import PowerFlowSolution, generator_injections, solve_sequential

log = logging.getLogger(__name__)

FAULT_ADMITTANCE = -1e6j


class NetworkError(RuntimeError):
    """The augmented admittance matrix is singular."""


# ---------------------------------------------------------------------------
# Component equations (scalar forms used for testing and documentation)

def machine_rhs(dw, p_m, p_e, H, D, omega_b):
    """Swing equation of a classical machine: returns ``(d delta/dt, d dw/dt)``."""
    return omega_b * dw, (p_m - p_e - D * dw) / (2.0 * H)


def governor_rhs(dw, p_m, p_ref, R, T_g):
    return (p_ref - dw / R - p_m) / T_g


def current_limit(i_d_ref, i_q_ref, i_max):
    """Limit the current reference magnitude to ``i_max`` giving the d axis priority."""
    if i_max <= 0:
        raise ValueError("i_max must be positive")
    return tuple(float(v) for v in kernels.limit_np(np.float64(i_d_ref), np.float64(i_q_ref), i_max))


def vsc_rhs(i_d, i_q, p_ref, q_ref, u_s, tau, i_max):
    """First-order inner current loops: returns ``(d i_d/dt, d i_q/dt)``."""
    if u_s < kernels.U_MIN:
        idr = iqr = 0.0
    else:
        idr, iqr = p_ref / u_s, -q_ref / u_s
    idr, iqr = current_limit(idr, iqr, i_max)
    return (idr - i_d) / tau, (iqr - i_q) / tau


def dc_grid_rhs(u_dc, i_line, i_inj, c_dc, lines):
    """DC grid dynamics.

    ``lines`` holds ``(from, to, r, L)`` with 0-based bus positions; lines
    with ``L == 0`` are treated as purely resistive and carry no state (their
    derivative entry is returned as 0).
    """
    u_dc = np.asarray(u_dc, dtype=float)
    if np.any(u_dc <= 0):
        raise FloatingPointError("non-positive DC voltage")
    i_line = np.asarray(i_line, dtype=float)
    net = np.array(i_inj, dtype=float)
    dil = np.zeros(len(lines))
    for k, (f, t, r, L) in enumerate(lines):
        du = u_dc[f] - u_dc[t]
        if L > 0:
            il = i_line[k]
            dil[k] = (du - r * il) / L
        else:
            il = du / r
        net[f] -= il
        net[t] += il
    return net / np.asarray(c_dc, dtype=float), dil


def network_solve(y_aug, injections, fixed=None):
    """Solve ``Y V = I`` with some bus voltages held (``fixed`` maps index to voltage)."""
    y_aug = np.asarray(y_aug, dtype=complex)
    I = np.asarray(injections, dtype=complex)
    n = I.size
    fixed = dict(fixed or {})
    fx = sorted(fixed)
    fr = [i for i in range(n) if i not in fixed]
    V = np.zeros(n, dtype=complex)
    for i in fx:
        V[i] = fixed[i]
    if fr:
        rhs = I[fr] - y_aug[np.ix_(fr, fx)] @ V[fx] if fx else I[fr]
        try:
            V[fr] = np.linalg.solve(y_aug[np.ix_(fr, fr)], rhs)
        except np.linalg.LinAlgError as exc:
            raise NetworkError("singular network matrix (island without reference?)") from exc
    return V


# ---------------------------------------------------------------------------

@dataclass
class SystemState:
    """Flat state vector with its labels and the matching bus voltages."""

    x: np.ndarray
    labels: list
    voltages: np.ndarray

    def __getitem__(self, label):
        return self.x[self.labels.index(label)]


class DynamicModel:
    """Compiled dynamic model of a case around a power-flow solution."""

    def __init__(self, case: NetworkCase, pf: PowerFlowSolution | None = None):
        self.case_input = case
        case = to_system_base(case)
        self.case = case
        if pf is None:
            pf = solve_sequential(case)
        if not pf.converged:
            raise ValueError("power flow did not converge; cannot initialise dynamics")
        self.pf = pf
        self.cfg: WAFConfig = case.waf
        self.omega_b = case.omega_base
        idx = case.bus_index()
        self._idx = idx
        V0 = pf.ac_voltages

        # machines
        m = case.machines
        self.ng = len(m)
        S_g = generator_injections(case, pf)
        I_g = np.conj(S_g / np.array([V0[idx[g.bus]] for g in m], dtype=complex)) if m else np.zeros(0)
        xd = np.array([g.xd_prime for g in m], dtype=float)
        Eph = np.array([V0[idx[g.bus]] for g in m], dtype=complex) + 1j * xd * I_g
        self.mg_bus = np.array([idx[g.bus] for g in m], dtype=np.int64)
        self.mg_E = np.abs(Eph)
        self.mg_xd = xd
        self.mg_H = np.array([g.H for g in m], dtype=float)
        self.mg_D = np.array([g.D for g in m], dtype=float)
        self.mg_pm0 = np.real(S_g).astype(float)
        gov = [k for k, g in enumerate(m) if g.governor is not None]
        self.mg_gov = np.full(self.ng, -1, dtype=np.int64)
        for j, k in enumerate(gov):
            self.mg_gov[k] = j
        self.gov_R = np.array([g.governor.R if g.governor else 1.0 for g in m], dtype=float)
        self.gov_Tg = np.array([g.governor.T_g if g.governor else 1.0 for g in m], dtype=float)
        self.gov_pref = self.mg_pm0.copy()
        self.ngov = len(gov)

        # converters
        v = case.vscs
        self.nv = len(v)
        dcidx = case.dc_bus_index()
        self.v_bus = np.array([idx[c.ac_bus] for c in v], dtype=np.int64)
        self.v_dc = np.array([dcidx[c.dc_bus] for c in v], dtype=np.int64)
        self.v_tau = np.array([c.tau_i for c in v], dtype=float)
        self.v_imax = np.array([c.i_max for c in v], dtype=float)
        self.v_pmax = np.array([c.p_max for c in v], dtype=float)
        self.v_qmax = np.array([c.q_max for c in v], dtype=float)
        self.v_kdc = np.array([c.k_dc if c.k_dc > 0 else np.inf for c in v], dtype=float)
        self.v_udc0 = np.array([pf.dc_voltages[dcidx[c.dc_bus]] for c in v], dtype=float)
        self.v_p0 = np.asarray(pf.vsc_p_s, dtype=float).copy()
        self.v_q0 = np.asarray(pf.vsc_q_s, dtype=float).copy()
        self.v_a = np.array([c.loss_a for c in v], dtype=float)
        self.v_b = np.array([c.loss_b for c in v], dtype=float)
        self.v_crec = np.array([c.loss_c_rec for c in v], dtype=float)
        self.v_cinv = np.array([c.loss_c_inv for c in v], dtype=float)
        self.v_rs = np.array([complex(c.r_s, c.x_s) for c in v], dtype=complex)
        self.v_mmax = np.array([c.m_max for c in v], dtype=float)
        self.v_ratio = np.array([c.rating_mva / case.system_base_mva for c in v], dtype=float)

        # DC grid
        self.ndc = len(case.dc_buses)
        self.dc_C = np.array([b.c_dc for b in case.dc_buses], dtype=float)
        ln = case.dc_lines
        self.ln_from = np.array([dcidx[l.from_bus] for l in ln], dtype=np.int64)
        self.ln_to = np.array([dcidx[l.to_bus] for l in ln], dtype=np.int64)
        self.ln_r = np.array([l.r_dc for l in ln], dtype=float)
        self.ln_L = np.array([l.l_dc if l.l_dc > 0 else 1.0 for l in ln], dtype=float)
        self.ln_state = np.full(len(ln), -1, dtype=np.int64)
        j = 0
        for k, l in enumerate(ln):
            if l.l_dc > 0:
                self.ln_state[k] = j
                j += 1
        self.nil = j

        # layout
        ng, nv = self.ng, self.nv
        o_delta = 0
        o_dw = o_delta + ng
        o_pm = o_dw + ng
        o_id = o_pm + self.ngov
        o_iq = o_id + nv
        o_xm = o_iq + nv
        o_udc = o_xm + nv
        o_il = o_udc + self.ndc
        self.n_plant = o_il + self.nil
        self.off = np.array([o_delta, o_dw, o_pm, o_id, o_iq, o_xm, o_udc, o_il, self.n_plant], dtype=np.int64)
        self.has_ctrl = self.cfg.active and nv > 0
        self.has_delay = self.has_ctrl and self.cfg.tau > 0
        self.o_chain = self.n_plant
        self.o_pade = self.o_chain + (2 * nv if self.has_ctrl else 0)
        self.n = self.o_pade + (2 if self.has_delay else 0)

        labels = []
        labels += [f"delta[{g.id}]" for g in m]
        labels += [f"dw[{g.id}]" for g in m]
        labels += [f"pm[{m[k].id}]" for k in gov]
        labels += [f"id[{c.id}]" for c in v]
        labels += [f"iq[{c.id}]" for c in v]
        labels += [f"pll[{c.id}]" for c in v]
        labels += [f"udc[{b.id}]" for b in case.dc_buses]
        labels += [f"idc[{l.id}]" for l in ln if l.l_dc > 0]
        if self.has_ctrl:
            for c in v:
                labels += [f"lp[{c.id}]", f"wo[{c.id}]"]
        if self.has_delay:
            labels += ["pade[0]", "pade[1]"]
        self.labels = labels

        # constant-impedance loads at the initial voltages
        self.y_load = np.array([(b.p_load - 1j * b.q_load) / abs(V0[i]) ** 2 for i, b in enumerate(case.buses)])
        self.fixed = {i: V0[i] for i, b in enumerate(case.buses)
                      if b.type == "slack" and not any(g.bus == b.id for g in m)}
        self._zcache: dict = {}
        self.set_topology(frozenset(), {})

        # equilibrium
        x0 = np.zeros(self.n)
        if ng:
            x0[o_delta:o_delta + ng] = np.angle(Eph)
        x0[o_pm:o_pm + self.ngov] = self.mg_pm0[gov]
        if nv:
            Vk = V0[self.v_bus]
            S = self.v_p0 + 1j * self.v_q0
            Ik = np.conj(S / Vk)
            rot = np.exp(-1j * np.angle(Vk))
            x0[o_id:o_id + nv] = (Ik * rot).real
            x0[o_iq:o_iq + nv] = (Ik * rot).imag
            x0[o_xm:o_xm + nv] = np.angle(Vk)
        x0[o_udc:o_udc + self.ndc] = pf.dc_voltages
        for k, l in enumerate(ln):
            if l.l_dc > 0:
                x0[o_il + self.ln_state[k]] = (pf.dc_voltages[self.ln_from[k]] - pf.dc_voltages[self.ln_to[k]]) / l.r_dc
        self.x0 = x0
        self._check_operating_point()

    # -- topology ---------------------------------------------------------
    def set_topology(self, out_branches=frozenset(), faults=None):
        """Select the in-service branch set and fault shunts (bus index -> admittance)."""
        faults = dict(faults or {})
        key = (frozenset(out_branches), tuple(sorted(faults.items())))
        if key not in self._zcache:
            self._zcache[key] = self._factor(key[0], faults)
        self.topology = key
        self.Zf, self.Vbase = self._zcache[key]

    def _factor(self, out_branches, faults):
        case = self.case.with_branch_status(out_branches, False) if out_branches else self.case
        Y = build_ybus(case) + np.diag(self.y_load)
        for g in range(self.ng):
            Y[self.mg_bus[g], self.mg_bus[g]] += 1.0 / (1j * self.mg_xd[g])
        for i, y in faults.items():
            Y[i, i] += y
        n = Y.shape[0]
        fx = sorted(self.fixed)
        fr = [i for i in range(n) if i not in self.fixed]
        Zf = np.zeros((n, n), dtype=complex)
        Vbase = np.zeros(n, dtype=complex)
        Yrr = Y[np.ix_(fr, fr)]
        if np.linalg.cond(Yrr) > 1e14:
            raise NetworkError("singular network matrix (island without reference?)")
        Zrr = np.linalg.inv(Yrr)
        Zf[np.ix_(fr, fr)] = Zrr
        Vf = np.array([self.fixed[i] for i in fx], dtype=complex)
        if fx:
            Vbase[fr] = -Zrr @ (Y[np.ix_(fr, fx)] @ Vf)
            Vbase[fx] = Vf
        return np.ascontiguousarray(Zf), Vbase

    def y_aug(self):
        out, faults = self.topology
        case = self.case.with_branch_status(out, False) if out else self.case
        Y = build_ybus(case) + np.diag(self.y_load)
        for g in range(self.ng):
            Y[self.mg_bus[g], self.mg_bus[g]] += 1.0 / (1j * self.mg_xd[g])
        for i, y in faults:
            Y[i, i] += y
        return Y

    # -- kernels ----------------------------------------------------------
    def _kargs(self):
        return (self.off, self.mg_bus, self.mg_E, self.mg_xd, self.mg_H, self.mg_D, self.mg_pm0, self.mg_gov,
                self.gov_R, self.gov_Tg, self.gov_pref, self.v_bus, self.v_dc, self.v_tau, self.v_imax,
                self.v_pmax, self.v_qmax, self.v_kdc, self.v_udc0, self.v_p0, self.v_q0, self.v_a, self.v_b,
                self.v_crec, self.v_cinv, self.dc_C, self.ln_from, self.ln_to, self.ln_r, self.ln_L,
                self.ln_state, float(self.omega_b), float(self.cfg.t_meas))

    def network(self, xp):
        """Bus voltages for plant states ``xp``."""
        return kernels.network(np.ascontiguousarray(xp[: self.n_plant]), self.off, self.Zf, self.Vbase,
                               self.mg_bus, self.mg_E, self.mg_xd, self.v_bus)

    def measurements(self, xp, V):
        """Converter frequencies (pu) and terminal voltage magnitudes."""
        xm = xp[self.off[5]:self.off[5] + self.nv]
        Vk = V[self.v_bus]
        phi = np.angle(Vk * np.exp(-1j * xm))
        return 1.0 + phi / (self.cfg.t_meas * self.omega_b), np.abs(Vk)

    def plant_derivs(self, xp, V, dp_sys, dq_sys, v_th=None):
        """Plant derivatives and auxiliary outputs (rows: p_s, q_s, omega, u_s, p_e).

        ``v_th`` overrides the Q-WAF gate threshold; a negative value leaves
        ``dq_sys`` ungated (the caller has gated it already).
        """
        v_th = self.cfg.v_th if v_th is None else v_th
        return kernels.derivs(np.ascontiguousarray(xp[: self.n_plant]), V, np.ascontiguousarray(dp_sys),
                              np.ascontiguousarray(dq_sys), float(v_th), *self._kargs())

    def controller_signals(self, x, omegas, u_s):
        """Continuous-time controller derivatives and outputs (system pu)."""
        cfg = self.cfg
        nv = self.nv
        dxc = np.zeros(self.n - self.n_plant)
        if not self.has_ctrl:
            return dxc, np.zeros(nv), np.zeros(nv), float(np.dot(cfg.alpha, omegas)) if nv else 1.0
        raw = float(np.dot(cfg.alpha, omegas))
        if self.has_delay:
            xpade = x[self.o_pade:self.o_pade + 2]
            dpade, y = pade_rhs(xpade, raw - 1.0, cfg.tau)
            dxc[self.o_pade - self.n_plant:] = dpade
            omega_star = 1.0 + y
        else:
            omega_star = raw
        chain = x[self.o_chain:self.o_chain + 2 * nv].reshape(nv, 2)
        err = omega_star - omegas
        dxc[: 2 * nv] = chain_rhs(chain, err, cfg).ravel()
        _, _, C = chain_matrices(cfg.Tf, cfg.Tw)
        dp, dq = controller_outputs(chain @ C, u_s, cfg)
        return dxc, dp * self.v_ratio, dq * self.v_ratio, omega_star

    def rhs(self, x, t=0.0):
        """Full continuous derivative ``f(x)``; a pure function of the state."""
        xp = x[: self.n_plant]
        V = self.network(xp)
        omegas, u_s = self.measurements(xp, V)
        dxc, dp, dq, _ = self.controller_signals(x, omegas, u_s)
        dxp, _ = self.plant_derivs(xp, V, dp, dq)
        return np.concatenate([dxp, dxc])

    def outputs(self, x):
        """Algebraic quantities at state ``x`` as a dict of arrays."""
        xp = x[: self.n_plant]
        V = self.network(xp)
        omegas, u_s = self.measurements(xp, V)
        _, dp, dq, omega_star = self.controller_signals(x, omegas, u_s)
        _, aux = self.plant_derivs(xp, V, dp, dq)
        return {
            "V": V, "p_s": aux[0, : self.nv].copy(), "q_s": aux[1, : self.nv].copy(), "omega": omegas,
            "u_s": u_s, "p_e": aux[4, : self.ng].copy(), "dp": dp, "dq": dq, "omega_star": omega_star,
        }

    def state(self, x=None) -> SystemState:
        x = self.x0 if x is None else x
        return SystemState(x=np.array(x), labels=list(self.labels), voltages=self.network(x))

    def initial_controller_state(self) -> ControllerState:
        return ControllerState.at_rest(self.nv, self.cfg.tau)

    def step_controllers(self, cstate: ControllerState, omegas, u_s, dt):
        """Discrete controller update; outputs converted to system pu."""
        dp, dq, omega_star, new = supplementary_outputs(cstate, omegas, u_s, self.cfg, dt)
        return dp * self.v_ratio, dq * self.v_ratio, omega_star, new

    def controller_state_from(self, x) -> ControllerState:
        """Discrete controller state matching the continuous part of ``x``."""
        nv = self.nv
        from .control import BlockState
        if not self.has_ctrl:
            return self.initial_controller_state()
        chain = x[self.o_chain:self.o_chain + 2 * nv].reshape(nv, 2).copy()
        V = self.network(x)
        omegas, _ = self.measurements(x, V)
        raw = float(np.dot(self.cfg.alpha, omegas))
        if self.has_delay:
            xp = x[self.o_pade:self.o_pade + 2].copy()
            _, y = pade_rhs(xp, raw - 1.0, self.cfg.tau)
            pade = BlockState(x=xp, u_prev=raw - 1.0)
            omega_star = 1.0 + y
        else:
            pade = BlockState(x=np.zeros(2), u_prev=raw - 1.0)
            omega_star = raw
        return ControllerState(chain=chain, err_prev=omega_star - omegas, pade=pade)

    # -- checks -----------------------------------------------------------
    def modulation_ratio(self, x):
        """Converter terminal voltage over the modulation limit (>1 means violated)."""
        V = self.network(x)
        nv = self.nv
        i_d = x[self.off[3]:self.off[3] + nv]
        i_q = x[self.off[4]:self.off[4] + nv]
        xm = x[self.off[5]:self.off[5] + nv]
        Ik = (i_d + 1j * i_q) * np.exp(1j * xm) / self.v_ratio
        Vc = V[self.v_bus] + self.v_rs * self.v_ratio * Ik
        udc = x[self.off[6] + self.v_dc]
        return np.abs(Vc) / (self.v_mmax * udc)

    def limiters_inactive(self, x=None, margin=1e-9) -> bool:
        x = self.x0 if x is None else x
        if self.nv == 0:
            return True
        out = self.outputs(x)
        i = np.hypot(x[self.off[3]:self.off[3] + self.nv], x[self.off[4]:self.off[4] + self.nv])
        p_ref = self.v_p0 + out["dp"]
        q_ref = self.v_q0 + out["dq"]
        ok = np.all(i < self.v_imax - margin) and np.all(np.abs(p_ref) < self.v_pmax - margin)
        ok = ok and np.all(np.abs(q_ref) < self.v_qmax - margin) and np.all(out["u_s"] > kernels.U_MIN)
        if self.has_ctrl and self.cfg.enable_q:
            ok = ok and np.all(np.abs(out["u_s"] - self.cfg.v_th) > margin)
        return bool(ok)

    def _check_operating_point(self):
        if self.nv == 0:
            return
        if not self.limiters_inactive():
            log.warning("converter limits are active at the initial operating point")
        ratio = self.modulation_ratio(self.x0)
        if np.any(ratio > 1.0):
            log.warning("modulation index above m_max at the operating point: %s", np.round(ratio, 4))


def build_model(case: NetworkCase, strategy: str | None = None, k: float | None = None,
                delay_ms: float | None = None, pf: PowerFlowSolution | None = None) -> DynamicModel:
    """Convenience constructor applying a controller strategy on the fly."""
    if strategy is not None:
        case = case.with_strategy(strategy, k, delay_ms)
    return DynamicModel(case, pf)


def assemble_rhs(model: DynamicModel, x, t=0.0):
    return model.rhs(x, t)
