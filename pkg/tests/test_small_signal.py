import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtdc_stab import (DynamicModel, analyze, build_model, damping_ratio, frequency_hz, gain_sweep, linearize,
                       modal_analysis, relative_equilibrium, tracked_modes)
from mtdc_stab.small_signal import LinearModel, machine_vector

from conftest import bundled, bundled_pf


def smib_analytic(case):
    """Eigenvalues of the classical SMIB from the synchronising-torque formula."""
    pf = bundled_pf("smib")
    g = case.machines[0]
    X = g.xd_prime + 0.4 / 2  # machine reactance plus the two parallel lines
    V = pf.ac_voltages
    # machine output is the flow over the lines; the load stub hangs off the fixed bus
    S = V[0] * np.conj((V[0] - V[1]) / (1j * 0.2))
    E = V[0] + 1j * g.xd_prime * np.conj(S / V[0])
    delta0 = np.angle(E) - np.angle(V[1])
    Ks = abs(E) * abs(V[1]) * math.cos(delta0) / X
    wb = 2 * math.pi * case.f_base_hz
    a, b = g.D / (2 * g.H), wb * Ks / (2 * g.H)
    return np.roots([1.0, a, b])


# -- damping arithmetic ----------------------------------------------------

@pytest.mark.parametrize("lam, zeta, f", [(-0.1044 + 3.2333j, 3.23, 0.51), (-0.3186 + 5.2160j, 6.10, 0.83)])
def test_reference_damping_values(lam, zeta, f):
    assert abs(damping_ratio(lam) - zeta) <= 0.01
    assert abs(frequency_hz(lam) - f) <= 0.005


def test_real_modes():
    assert damping_ratio(-2.0) == 100.0
    assert damping_ratio(0.5) == -100.0
    rep = modal_analysis(LinearModel(A=np.diag([-1.0, -2.0]), state_labels=["a", "b"], operating_point=np.zeros(2)))
    assert np.allclose(rep.damping_pct, 100.0)
    assert np.allclose(rep.freq_hz, 0.0)


def test_diagonal_participation_identity():
    rep = modal_analysis(LinearModel(A=np.diag([-1.0, -2.0]), state_labels=["a", "b"], operating_point=np.zeros(2)))
    for i, lam in enumerate(rep.eigenvalues):
        own = 0 if np.isclose(lam, -1.0) else 1
        assert rep.participation[own, i] == 1.0
        assert rep.participation[1 - own, i] == 0.0


def test_defective_matrix_flagged():
    rep = modal_analysis(LinearModel(A=np.array([[0.0, 1.0], [0.0, 0.0]]), state_labels=["a", "b"],
                                     operating_point=np.zeros(2)))
    assert rep.defective.all()
    assert np.all(np.isnan(rep.participation))


# -- linearisation ---------------------------------------------------------

def test_smib_matches_analytic():
    case = bundled("smib")
    lm = linearize(DynamicModel(case, bundled_pf("smib")))
    lam = np.sort_complex(np.linalg.eigvals(lm.A))
    ref = np.sort_complex(smib_analytic(case))
    assert np.max(np.abs(lam - ref) / np.abs(ref)) < 1e-5


def test_smib_state_matrix_entries():
    case = bundled("smib")
    lm = linearize(DynamicModel(case, bundled_pf("smib")))
    wb = case.omega_base
    assert lm.A[0, 1] == pytest.approx(wb, rel=1e-9)
    assert lm.A[1, 1] == pytest.approx(-case.machines[0].D / (2 * case.machines[0].H), rel=1e-6)


class _WithDummy(DynamicModel):
    T = 0.37

    def __init__(self, case, pf):
        super().__init__(case, pf)
        self.x0 = np.append(self.x0, 0.0)
        self.labels = self.labels + ["dummy"]

    def rhs(self, x, t=0.0):
        return np.append(super().rhs(x[:-1], t), -x[-1] / self.T)


def test_decoupled_pole_exact():
    m = _WithDummy(bundled("smib"), bundled_pf("smib"))
    lam = np.linalg.eigvals(linearize(m).A)
    assert np.min(np.abs(lam + 1 / _WithDummy.T)) < 1e-9


def test_zero_gain_keeps_plant_poles(two_area, two_area_pf):
    base = np.linalg.eigvals(linearize(DynamicModel(two_area, two_area_pf)).A)
    ctrl = np.linalg.eigvals(linearize(build_model(two_area, "pqwaf", 0.0, pf=two_area_pf)).A)
    assert ctrl.size == base.size + 6
    for z in base:
        assert np.min(np.abs(ctrl - z)) < 1e-8 * max(1.0, abs(z))


def test_non_equilibrium_rejected(two_area, two_area_pf):
    m = DynamicModel(two_area, two_area_pf)
    with pytest.raises(ValueError, match="equilibrium"):
        linearize(m, m.x0 + 1e-3)


def test_gate_on_threshold_rejected(two_area, two_area_pf):
    u = abs(two_area_pf.ac_voltages[two_area.bus_index()[two_area.vscs[0].ac_bus]])
    case = two_area.with_waf(replace(two_area.waf, v_th=float(u))).with_strategy("qwaf", 200.0)
    with pytest.raises(ValueError, match="limiter or gate"):
        linearize(DynamicModel(case, two_area_pf))


@pytest.mark.parametrize("strategy", [None, "pwaf", "pqwaf"])
def test_spectrum_properties(strategy, two_area, two_area_pf):
    lm, rep = analyze(two_area, strategy, 200.0, 100.0 if strategy else None, pf=two_area_pf)
    lam = rep.eigenvalues
    assert np.max(np.abs(np.sort_complex(lam) - np.sort_complex(np.conj(lam)))) < 1e-10 * np.max(np.abs(lam))
    assert lam.sum().real == pytest.approx(np.trace(lm.A), rel=1e-8)
    assert np.all((rep.damping_pct > -100) & (rep.damping_pct <= 100))
    ok = ~rep.defective
    assert np.allclose(np.nanmax(rep.participation[:, ok], axis=0), 1.0)
    assert len(lm.state_labels) == lm.n


@settings(max_examples=10, deadline=None)
@given(k=st.floats(0, 500), strategy=st.sampled_from(["pwaf", "qwaf", "pqwaf"]))
def test_equilibrium_independent_of_gain(k, strategy):
    case, pf = bundled("two_area_mtdc"), bundled_pf("two_area_mtdc")
    ref = DynamicModel(case, pf)
    m = build_model(case, strategy, k, pf=pf)
    assert np.max(np.abs(m.x0[: ref.n] - ref.x0)) < 1e-10
    assert np.max(np.abs(m.rhs(m.x0))) < 1e-6


def test_local_mode_owned_by_its_machine():
    # the speed with the largest participation also has a large entry in the mode shape
    rep = analyze(bundled("two_area_mtdc"), pf=bundled_pf("two_area_mtdc"))[1]
    dw = [i for i, s in enumerate(rep.state_labels) if s.startswith("dw[")]
    for i in rep.electromechanical():
        col = rep.participation[dw, i]
        top = int(np.argmax(col))
        shape = np.abs(rep.shapes[:, i])
        assert shape[top] >= 0.5 * shape.max()


# -- modal report ----------------------------------------------------------

def test_inter_area_mode_shape(two_area, two_area_pf):
    _, rep = analyze(two_area, pf=two_area_pf)
    i = rep.inter_area()
    assert 0.1 <= rep.freq_hz[i] <= 1.0
    ph = np.degrees(np.angle(rep.shapes[:, i]))
    labels = rep.speed_labels
    a1 = [ph[labels.index("dw[1]")], ph[labels.index("dw[2]")]]
    a2 = [ph[labels.index("dw[3]")], ph[labels.index("dw[4]")]]
    for p in a1:
        for q in a2:
            assert abs((p - q + 180) % 360 - 180) > 90  # areas swing against each other
    assert np.max(np.abs(rep.shapes[:, i])) == pytest.approx(1.0)
    assert np.angle(rep.shapes[np.argmax(np.abs(rep.shapes[:, i])), i]) == pytest.approx(0.0, abs=1e-12)
    assert all(s.startswith(("delta[", "dw[")) for s in rep.top_states(i))


# -- sweeps ----------------------------------------------------------------

def test_sweep_zero_gain_equals_base(two_area, two_area_pf):
    _, base = analyze(two_area, pf=two_area_pf)
    res = gain_sweep(two_area, "pwaf", [0.0], modes="inter_area", pf=two_area_pf)
    assert res.tracks["inter_area"][0] == pytest.approx(base.eigenvalues[base.inter_area()], abs=1e-8)


def test_pwaf_damping_increases_to_200(two_area, two_area_pf):
    res = gain_sweep(two_area, "pwaf", [0, 100, 200], modes="inter_area", pf=two_area_pf)
    z = res.damping("inter_area")
    assert z[0] < z[1] < z[2]
    # regression values of the bundled case
    assert z == pytest.approx([2.1591, 17.21, 22.535], abs=0.01)


def test_sweep_rows_and_ids(two_area, two_area_pf):
    res = gain_sweep(two_area, "qwaf", [0, 50], pf=two_area_pf)
    assert res.mode_ids[0] == "em0" and len(res.mode_ids) == 3
    rows = list(res.rows())
    assert len(rows) == 2 * len(res.mode_ids)
    assert rows[0][0] == 0.0
    with pytest.raises(ValueError):
        gain_sweep(two_area, "pwaf", [-1.0], pf=two_area_pf)


def test_continuation_tracking_consistent(two_area, two_area_pf):
    _, base = analyze(two_area, pf=two_area_pf)
    seed = {"ia": machine_vector(base, base.inter_area())}
    z1 = tracked_modes(two_area, "qwaf", 200.0, seed, pf=two_area_pf)["ia"]
    z2 = tracked_modes(two_area, "qwaf", 200.0, seed, pf=two_area_pf, step=5.0)["ia"]
    assert z1 == pytest.approx(z2, abs=1e-9)
    assert 0.4 < frequency_hz(z1) < 0.8


# -- relative equilibrium --------------------------------------------------

def test_relative_equilibrium_with_infinite_bus_is_plain():
    m = DynamicModel(bundled("smib"), bundled_pf("smib"))
    x, slip = relative_equilibrium(m)
    assert slip == 0.0
    assert np.max(np.abs(x - m.x0)) < 1e-12


def test_relative_equilibrium_after_trip(two_area, two_area_pf):
    m = DynamicModel(two_area, two_area_pf)
    m.set_topology(frozenset([7]), {})
    x, slip = relative_equilibrium(m)
    f = m.rhs(x)
    rot = np.array([1.0 if s.startswith(("delta[", "pll[")) else 0.0 for s in m.labels])
    assert np.max(np.abs(f - slip * rot)) < 1e-9
    assert slip != 0.0
    lm = linearize(m, x, slip=slip)
    with pytest.raises(ValueError):
        linearize(m, x)
    assert np.all(np.isfinite(lm.A))


@pytest.mark.parametrize("t_meas", [0.005, 0.02, 0.1])
def test_measurement_lag_sensitivity(t_meas):
    # the frequency-measurement lag is not a published parameter; the gain in
    # inter-area damping must not hinge on the value chosen
    case = bundled("two_area_mtdc")
    case = case.with_waf(replace(case.waf, t_meas=t_meas))
    _, base = analyze(case)
    i = base.inter_area()
    seed = {"ia": machine_vector(base, i)}
    z0 = damping_ratio(base.eigenvalues[i])
    for s in ("pwaf", "qwaf", "pqwaf"):
        assert damping_ratio(tracked_modes(case, s, 200.0, seed)["ia"]) > 5 * z0
