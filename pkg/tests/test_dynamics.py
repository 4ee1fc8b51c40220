import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtdc_stab import DynamicModel, build_model, linearize
from mtdc_stab.dynamics import (NetworkError, assemble_rhs, current_limit, dc_grid_rhs, machine_rhs, network_solve,
                                vsc_rhs)

from conftest import bundled, bundled_pf, smib_case


# -- component equations -----------------------------------------------------

def test_machine_equilibrium():
    assert machine_rhs(0.0, 0.8, 0.8, 3.5, 2.0, 314.16) == (0.0, 0.0)


def test_machine_power_step():
    _, ddw = machine_rhs(0.0, 0.8, 0.7, 3.5, 0.0, 314.16)
    assert ddw == pytest.approx(0.1 / 7, rel=1e-12)


def test_machine_damping_only():
    d, ddw = machine_rhs(0.01, 0.8, 0.8, 3.5, 10.0, 100.0)
    assert ddw == pytest.approx(-0.1 / 7, rel=1e-12)
    assert d == pytest.approx(1.0)


def test_vsc_tracking_examples():
    assert vsc_rhs(0.5, 0.0, 0.5, 0.0, 1.0, 0.005, 1.0) == (0.0, 0.0)
    did, _ = vsc_rhs(0.0, 0.0, 0.5, 0.0, 1.0, 0.005, 1.0)
    assert did == pytest.approx(100.0)
    _, diq = vsc_rhs(0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0)
    assert diq == pytest.approx(-0.5)  # i_q reference is -q/u


def test_vsc_low_voltage_guard():
    did, diq = vsc_rhs(0.2, -0.1, 0.5, 0.3, 0.005, 0.005, 1.0)
    assert did == pytest.approx(-0.2 / 0.005)
    assert diq == pytest.approx(0.1 / 0.005)


@pytest.mark.parametrize("ref, expected", [((0.3, 0.3), (0.3, 0.3)), ((0.8, 0.8), (0.8, 0.6)),
                                           ((1.5, 0.5), (1.0, 0.0)), ((-0.8, -0.8), (-0.8, -0.6))])
def test_current_limit_examples(ref, expected):
    assert current_limit(*ref, 1.0) == pytest.approx(expected, abs=1e-12)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 3))
def test_current_limit_property(i_d, i_q, i_max):
    d, q = current_limit(i_d, i_q, i_max)
    assert math.hypot(d, q) <= i_max + 1e-12
    if math.hypot(i_d, i_q) <= i_max:
        assert (d, q) == (i_d, i_q)
    assert d * i_d >= 0 and q * i_q >= 0


def test_dc_steady_state_zero():
    u = [1.01, 1.0]
    i = 0.01 / 0.01
    du, di = dc_grid_rhs(u, [i], [i, -i], [0.02, 0.02], [(0, 1, 0.01, 0.001)])
    assert np.allclose(du, 0.0) and np.allclose(di, 0.0)


def test_dc_line_inductance():
    _, di = dc_grid_rhs([1.01, 1.0], [0.0], [0.0, 0.0], [1.0, 1.0], [(0, 1, 0.01, 0.001)])
    assert di[0] == pytest.approx(10.0)


def test_dc_isolated_bus_charging():
    du, _ = dc_grid_rhs([1.0], [], [0.1], [0.02], [])
    assert du[0] == pytest.approx(5.0)


def test_dc_nonpositive_voltage():
    with pytest.raises(FloatingPointError):
        dc_grid_rhs([0.0, 1.0], [0.0], [0.0, 0.0], [1.0, 1.0], [(0, 1, 0.01, 0.001)])


@given(u=st.lists(st.floats(0.8, 1.2), min_size=3, max_size=3),
       il=st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       inj=st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_dc_energy_identity(u, il, inj):
    C = np.array([0.5, 0.8, 0.3])
    lines = [(0, 1, 0.01, 0.002), (1, 2, 0.02, 0.001), (0, 2, 0.015, 0.003)]
    du, di = dc_grid_rhs(u, il, inj, C, lines)
    u, il = np.array(u), np.array(il)
    dE = np.sum(C * u * du) + sum(L * i * d for (_, _, _, L), i, d in zip(lines, il, di))
    expected = np.dot(u, inj) - sum(r * i * i for (_, _, r, _), i in zip(lines, il))
    assert dE == pytest.approx(expected, abs=1e-9)


# -- network -----------------------------------------------------------------

def test_network_power_angle():
    E = 1.05 * cmath.exp(1j * math.radians(30))
    xd, xl = 0.3, 0.2
    Y = np.array([[1 / (1j * xd) + 1 / (1j * xl), -1 / (1j * xl)], [-1 / (1j * xl), 1 / (1j * xl)]])
    V = network_solve(Y, [E / (1j * xd), 0.0], {1: 1.0})
    Ig = (E - V[0]) / (1j * xd)
    assert (E * np.conj(Ig)).real == pytest.approx(1.05, rel=1e-12)
    assert np.max(np.abs(Y[0] @ V - E / (1j * xd))) < 1e-10


def test_network_no_sources():
    Y = np.array([[2 - 1j, -1], [-1, 2 - 1j]])
    assert np.all(network_solve(Y, [0, 0]) == 0)


def test_network_fixed_bus_unchanged():
    Y = np.array([[-5j, 5j], [5j, -5j]])
    V = network_solve(Y, [0.0, 0.5], {1: 1.0})
    assert V[1] == 1.0


def test_network_singular():
    with pytest.raises(NetworkError):
        network_solve(np.zeros((2, 2)), [1.0, 0.0])


# -- assembled model ---------------------------------------------------------

@pytest.mark.parametrize("name, strategy", [("smib", None)] + [("two_area_mtdc", s)
                                                                 for s in (None, "pwaf", "qwaf", "pqwaf")])
def test_equilibrium_at_power_flow(name, strategy):
    case = bundled(name)
    m = build_model(case, strategy, 200.0, 50.0 if strategy == "pqwaf" else None, pf=bundled_pf(name))
    assert np.max(np.abs(assemble_rhs(m, m.x0))) < 1e-6
    assert len(m.labels) == m.n == m.x0.size


def test_single_machine_is_swing_equation():
    case = smib_case(p=0.8, H=3.5, D=2.0, x_line=0.2)
    m = DynamicModel(case)
    x = m.x0.copy()
    x[0] += 0.1
    x[1] = 0.003
    f = m.rhs(x)
    E = m.mg_E[0]
    pe = E * 1.0 / (0.3 + 0.2) * math.sin(x[0])  # infinite bus at angle 0
    assert f[0] == pytest.approx(m.omega_b * 0.003)
    assert f[1] == pytest.approx((0.8 - pe - 2.0 * 0.003) / 7.0, rel=1e-10)


def test_perturbation_matches_linear_prediction(two_area, two_area_pf):
    m = DynamicModel(two_area, two_area_pf)
    A = linearize(m).A
    dx = np.zeros(m.n)
    dx[0] = 1e-3
    f = m.rhs(m.x0 + dx)
    pred = A @ dx
    assert np.max(np.abs(f - pred)) < 0.01 * np.max(np.abs(pred))


def test_rhs_pure_function(two_area, two_area_pf):
    m = build_model(two_area, "pqwaf", 200.0, 100.0, pf=two_area_pf)
    x = m.x0 + 1e-3 * np.sin(np.arange(m.n))
    a = m.rhs(x)
    m.rhs(m.x0 - 0.01)
    assert np.array_equal(a, m.rhs(x))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-0.05, 0.05), min_size=5, max_size=5))
def test_model_dc_energy_balance(noise):
    case, pf = bundled("two_area_mtdc"), bundled_pf("two_area_mtdc")
    m = _model_cache(case, pf)
    x = m.x0.copy()
    idx = [m.off[0], m.off[0] + 1, m.off[3], m.off[6], m.off[7]]
    for i, e in zip(idx, noise):
        x[i] += e
    f = m.rhs(x)
    u = x[m.off[6]:m.off[6] + m.ndc]
    il = x[m.off[7]:m.off[7] + m.nil]
    dE = np.sum(m.dc_C * u * f[m.off[6]:m.off[6] + m.ndc]) + np.sum(m.ln_L * il * f[m.off[7]:m.off[7] + m.nil])
    out = m.outputs(x)
    Ik = (x[m.off[3]:m.off[3] + m.nv] + 1j * x[m.off[4]:m.off[4] + m.nv])
    i_s = np.abs(Ik)
    from mtdc_stab.powerflow import converter_loss
    loss = converter_loss(out["p_s"], i_s, m.v_a, m.v_b, m.v_crec, m.v_cinv)
    expected = -np.sum(out["p_s"] + loss) - np.sum(m.ln_r * il * il)
    assert dE == pytest.approx(expected, abs=1e-8)


_MODELS = {}


def _model_cache(case, pf):
    if "m" not in _MODELS:
        _MODELS["m"] = DynamicModel(case, pf)
    return _MODELS["m"]


def test_zero_gain_holds_equilibrium(two_area, two_area_pf):
    from mtdc_stab import simulate
    m = build_model(two_area, "pqwaf", 0.0, pf=two_area_pf)
    res = simulate(m, t_end=10.0)
    assert res.termination == "completed"
    assert np.max(np.abs(res.channels["delta"] - res.channels["delta"][0])) < 1e-8
