"""Hot kernels of the plant right-hand side.

Two implementations with identical results: explicit loops compiled with
numba, and vectorised numpy. ``MTDC_STAB_DISABLE_NUMBA=1`` selects numpy.
Both take the packed argument tuple built by
:class:`mtdc_stab.dynamics.DynamicModel`.

State offsets in ``off``: delta, dw, pm, id, iq, xm, udc, iline, n_plant.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

# Below this terminal voltage the current references are forced to zero.
U_MIN = 0.01


# ---------------------------------------------------------------------------
# numpy path

def network_np(x, off, Zf, Vbase, mg_bus, mg_E, mg_xd, v_bus):
    ng = mg_bus.size
    nv = v_bus.size
    n = Vbase.size
    I = np.zeros(n, dtype=np.complex128)
    delta = x[off[0]:off[0] + ng]
    np.add.at(I, mg_bus, mg_E * np.exp(1j * delta) / (1j * mg_xd))
    i_d = x[off[3]:off[3] + nv]
    i_q = x[off[4]:off[4] + nv]
    xm = x[off[5]:off[5] + nv]
    np.add.at(I, v_bus, (i_d + 1j * i_q) * np.exp(1j * xm))
    return Vbase + Zf @ I


def limit_np(i_d, i_q, i_max):
    """d-axis priority current limiter (vectorised)."""
    norm = np.hypot(i_d, i_q)
    inside = norm <= i_max
    d = np.clip(i_d, -i_max, i_max)
    q_room = np.sqrt(np.maximum(i_max * i_max - d * d, 0.0))
    q = np.clip(i_q, -q_room, q_room)
    return np.where(inside, i_d, d), np.where(inside, i_q, q)


def derivs_np(x, V, dp, dq, v_th, off,
              mg_bus, mg_E, mg_xd, mg_H, mg_D, mg_pm0, mg_gov, gov_R, gov_Tg, gov_pref,
              v_bus, v_dc, v_tau, v_imax, v_pmax, v_qmax, v_kdc, v_udc0, v_p0, v_q0,
              v_a, v_b, v_crec, v_cinv,
              dc_C, ln_from, ln_to, ln_r, ln_L, ln_state, omega_b, t_meas):
    ng = mg_bus.size
    nv = v_bus.size
    ndc = dc_C.size
    dx = np.zeros_like(x)
    aux = np.zeros((5, max(nv, ng)))

    delta = x[off[0]:off[0] + ng]
    dw = x[off[1]:off[1] + ng]
    pm = mg_pm0.copy()
    has_gov = mg_gov >= 0
    pm[has_gov] = x[off[2] + mg_gov[has_gov]]
    E = mg_E * np.exp(1j * delta)
    Vg = V[mg_bus]
    pe = (E * np.conj((E - Vg) / (1j * mg_xd))).real
    dx[off[0]:off[0] + ng] = omega_b * dw
    dx[off[1]:off[1] + ng] = (pm - pe - mg_D * dw) / (2.0 * mg_H)
    if np.any(has_gov):
        k = mg_gov[has_gov]
        dx[off[2] + k] = (gov_pref[has_gov] - dw[has_gov] / gov_R[has_gov] - pm[has_gov]) / gov_Tg[has_gov]
    aux[4, :ng] = pe

    udc = x[off[6]:off[6] + ndc]
    if nv:
        i_d = x[off[3]:off[3] + nv]
        i_q = x[off[4]:off[4] + nv]
        xm = x[off[5]:off[5] + nv]
        Vk = V[v_bus]
        u_s = np.abs(Vk)
        rot = np.exp(1j * xm)
        phi = np.angle(Vk * np.conj(rot))
        Ik = (i_d + 1j * i_q) * rot
        S = Vk * np.conj(Ik)
        p_s = S.real
        i_s = np.abs(Ik)
        base = v_a + v_b * i_s
        rect = base + v_crec * i_s * i_s
        loss = np.where(p_s + rect < 0.0, rect, base + v_cinv * i_s * i_s)
        u_k = udc[v_dc]
        gate = (u_s >= v_th).astype(np.float64)
        p_ref = np.clip(v_p0 + (u_k - v_udc0) / v_kdc + dp, -v_pmax, v_pmax)
        q_ref = np.clip(v_q0 + gate * dq, -v_qmax, v_qmax)
        ok = u_s >= U_MIN
        safe_u = np.where(ok, u_s, 1.0)
        idr = np.where(ok, p_ref / safe_u, 0.0)
        iqr = np.where(ok, -q_ref / safe_u, 0.0)
        idr, iqr = limit_np(idr, iqr, v_imax)
        dx[off[3]:off[3] + nv] = (idr - i_d) / v_tau
        dx[off[4]:off[4] + nv] = (iqr - i_q) / v_tau
        dx[off[5]:off[5] + nv] = phi / t_meas
        inj = np.zeros(ndc)
        np.add.at(inj, v_dc, -(p_s + loss) / np.where(u_k > 0.0, u_k, 1.0))
        aux[0, :nv] = p_s
        aux[1, :nv] = S.imag
        aux[2, :nv] = 1.0 + phi / (t_meas * omega_b)
        aux[3, :nv] = u_s
    else:
        inj = np.zeros(ndc)

    if ndc:
        du_line = udc[ln_from] - udc[ln_to]
        alg = ln_state < 0
        il = du_line / ln_r
        il[~alg] = x[off[7] + ln_state[~alg]]
        net = inj.copy()
        np.add.at(net, ln_from, -il)
        np.add.at(net, ln_to, il)
        dx[off[6]:off[6] + ndc] = net / dc_C
        st = ~alg
        dx[off[7] + ln_state[st]] = (du_line[st] - ln_r[st] * il[st]) / ln_L[st]
        if np.any(udc <= 0.0):
            dx[:] = np.nan
    return dx, aux


# ---------------------------------------------------------------------------
# numba path

@njit(cache=True)
def network_nb(x, off, Zf, Vbase, mg_bus, mg_E, mg_xd, v_bus):
    n = Vbase.size
    I = np.zeros(n, dtype=np.complex128)
    for g in range(mg_bus.size):
        d = x[off[0] + g]
        I[mg_bus[g]] += mg_E[g] * complex(math.cos(d), math.sin(d)) / complex(0.0, mg_xd[g])
    nv = v_bus.size
    for k in range(nv):
        a = x[off[5] + k]
        I[v_bus[k]] += complex(x[off[3] + k], x[off[4] + k]) * complex(math.cos(a), math.sin(a))
    V = Vbase.copy()
    for i in range(n):
        acc = 0j
        for j in range(n):
            acc += Zf[i, j] * I[j]
        V[i] += acc
    return V


@njit(cache=True)
def limit_nb(i_d, i_q, i_max):
    if i_d * i_d + i_q * i_q <= i_max * i_max:
        return i_d, i_q
    d = min(max(i_d, -i_max), i_max)
    room = math.sqrt(max(i_max * i_max - d * d, 0.0))
    q = min(max(i_q, -room), room)
    return d, q


@njit(cache=True)
def derivs_nb(x, V, dp, dq, v_th, off,
              mg_bus, mg_E, mg_xd, mg_H, mg_D, mg_pm0, mg_gov, gov_R, gov_Tg, gov_pref,
              v_bus, v_dc, v_tau, v_imax, v_pmax, v_qmax, v_kdc, v_udc0, v_p0, v_q0,
              v_a, v_b, v_crec, v_cinv,
              dc_C, ln_from, ln_to, ln_r, ln_L, ln_state, omega_b, t_meas):
    ng = mg_bus.size
    nv = v_bus.size
    ndc = dc_C.size
    dx = np.zeros_like(x)
    aux = np.zeros((5, max(nv, ng)))

    for g in range(ng):
        d = x[off[0] + g]
        w = x[off[1] + g]
        pm = mg_pm0[g]
        if mg_gov[g] >= 0:
            pm = x[off[2] + mg_gov[g]]
            dx[off[2] + mg_gov[g]] = (gov_pref[g] - w / gov_R[g] - pm) / gov_Tg[g]
        E = mg_E[g] * complex(math.cos(d), math.sin(d))
        Ig = (E - V[mg_bus[g]]) / complex(0.0, mg_xd[g])
        pe = (E * Ig.conjugate()).real
        dx[off[0] + g] = omega_b * w
        dx[off[1] + g] = (pm - pe - mg_D[g] * w) / (2.0 * mg_H[g])
        aux[4, g] = pe

    inj = np.zeros(ndc)
    for k in range(nv):
        i_d = x[off[3] + k]
        i_q = x[off[4] + k]
        a = x[off[5] + k]
        Vk = V[v_bus[k]]
        u_s = abs(Vk)
        rot = complex(math.cos(a), math.sin(a))
        rel = Vk * rot.conjugate()
        phi = math.atan2(rel.imag, rel.real)
        Ik = complex(i_d, i_q) * rot
        S = Vk * Ik.conjugate()
        p_s = S.real
        i_s = abs(Ik)
        rect = v_a[k] + v_b[k] * i_s + v_crec[k] * i_s * i_s
        if p_s + rect < 0.0:
            loss = rect
        else:
            loss = v_a[k] + v_b[k] * i_s + v_cinv[k] * i_s * i_s
        u_k = x[off[6] + v_dc[k]]
        gate = 1.0 if u_s >= v_th else 0.0
        p_ref = v_p0[k] + (u_k - v_udc0[k]) / v_kdc[k] + dp[k]
        p_ref = min(max(p_ref, -v_pmax[k]), v_pmax[k])
        q_ref = v_q0[k] + gate * dq[k]
        q_ref = min(max(q_ref, -v_qmax[k]), v_qmax[k])
        if u_s >= U_MIN:
            idr = p_ref / u_s
            iqr = -q_ref / u_s
        else:
            idr = 0.0
            iqr = 0.0
        idr, iqr = limit_nb(idr, iqr, v_imax[k])
        dx[off[3] + k] = (idr - i_d) / v_tau[k]
        dx[off[4] + k] = (iqr - i_q) / v_tau[k]
        dx[off[5] + k] = phi / t_meas
        if u_k > 0.0:
            inj[v_dc[k]] += -(p_s + loss) / u_k
        aux[0, k] = p_s
        aux[1, k] = S.imag
        aux[2, k] = 1.0 + phi / (t_meas * omega_b)
        aux[3, k] = u_s

    bad = False
    for i in range(ndc):
        if x[off[6] + i] <= 0.0:
            bad = True
    for ln in range(ln_r.size):
        f = ln_from[ln]
        t = ln_to[ln]
        du_line = x[off[6] + f] - x[off[6] + t]
        if ln_state[ln] >= 0:
            il = x[off[7] + ln_state[ln]]
            dx[off[7] + ln_state[ln]] = (du_line - ln_r[ln] * il) / ln_L[ln]
        else:
            il = du_line / ln_r[ln]
        inj[f] -= il
        inj[t] += il
    for i in range(ndc):
        dx[off[6] + i] = inj[i] / dc_C[i]
    if bad:
        for i in range(dx.size):
            dx[i] = np.nan
    return dx, aux


if USE_NUMBA:
    network = network_nb
    derivs = derivs_nb
else:
    network = network_np
    derivs = derivs_np
