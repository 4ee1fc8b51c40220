import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtdc_stab import backend, build_model
from mtdc_stab import kernels

from conftest import bundled, bundled_pf


def model(name, strategy=None):
    return build_model(bundled(name), strategy, 200.0, 0.0, pf=bundled_pf(name))


def both(fn_np, fn_nb, *args):
    return fn_np(*args), fn_nb(*args)


@pytest.mark.parametrize("name", ["two_area_mtdc", "smib"])
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.sampled_from([1e-4, 1e-2, 0.2]))
def test_network_and_derivs_agree(name, seed, scale):
    m = model(name)
    rng = np.random.default_rng(seed)
    xp = m.x0[: m.n_plant] * (1 + scale * rng.standard_normal(m.n_plant))
    net = (xp, m.off, m.Zf, m.Vbase, m.mg_bus, m.mg_E, m.mg_xd, m.v_bus)
    Va, Vb = both(kernels.network_np, kernels.network_nb, *net)
    assert np.allclose(Va, Vb, rtol=1e-12, atol=1e-12)

    dp = scale * rng.standard_normal(m.nv)
    dq = scale * rng.standard_normal(m.nv)
    v_th = float(rng.uniform(0.5, 1.1))
    args = (xp, Va, dp, dq, v_th, *m._kargs())
    (da, aa), (db, ab) = both(kernels.derivs_np, kernels.derivs_nb, *args)
    assert np.allclose(da, db, rtol=1e-10, atol=1e-12, equal_nan=True)
    assert np.allclose(aa, ab, rtol=1e-10, atol=1e-12, equal_nan=True)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 2))
def test_limit_agrees(i_d, i_q, i_max):
    a = kernels.limit_np(np.float64(i_d), np.float64(i_q), i_max)
    b = kernels.limit_nb(i_d, i_q, i_max)
    assert np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=1e-14, atol=1e-15)


def test_nonpositive_dc_voltage_poisons_both():
    m = model("two_area_mtdc")
    xp = m.x0[: m.n_plant].copy()
    xp[m.off[6]] = 0.0
    V = kernels.network_np(xp, m.off, m.Zf, m.Vbase, m.mg_bus, m.mg_E, m.mg_xd, m.v_bus)
    args = (xp, V, np.zeros(m.nv), np.zeros(m.nv), 0.75, *m._kargs())
    assert np.all(np.isnan(kernels.derivs_np(*args)[0]))
    assert np.all(np.isnan(kernels.derivs_nb(*args)[0]))


SCRIPT = """
import json, sys
import numpy as np
from mtdc_stab import backend, load_case, simulate, build_model
from mtdc_stab.time_domain import EventSchedule, Event
m = build_model(load_case("two_area_mtdc"), "pqwaf", 200.0, 50.0)
res = simulate(m, EventSchedule((Event(0.1, "trip_ac_branch", branch=7),)), t_end=1.0)
json.dump({"backend": backend(), "delta": res.channels["delta"][-1].tolist(),
           "u_dc": res.channels["u_dc"][-1].tolist()}, sys.stdout)
"""


def run_with(disable):
    env = dict(os.environ, MTDC_STAB_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def test_environment_switch_same_trajectory():
    a = run_with(disable=True)
    b = run_with(disable=False)
    assert a["backend"] == "numpy" and b["backend"] == "numba"
    assert np.allclose(a["delta"], b["delta"], rtol=1e-9, atol=1e-11)
    assert np.allclose(a["u_dc"], b["u_dc"], rtol=1e-9, atol=1e-11)


def test_backend_reported():
    assert backend() in ("numba", "numpy")
    assert (kernels.derivs is kernels.derivs_nb) == (backend() == "numba")
