"""Numba vs numpy kernels, per call and end to end.

    python benchmarks/bench_kernels.py [--repeat N]

The per-call numbers time ``kernels.*_nb`` against ``kernels.*_np`` in one
process. The end-to-end numbers run a 10 s trip simulation in a fresh
interpreter with and without ``MTDC_STAB_DISABLE_NUMBA``.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from mtdc_stab import build_model, load_case
from mtdc_stab import kernels

SIM = """
import time
from mtdc_stab import build_model, load_case, simulate
from mtdc_stab.time_domain import Event, EventSchedule
m = build_model(load_case("two_area_mtdc"), "pqwaf", 200.0, 50.0)
sch = EventSchedule((Event(1.0, "trip_ac_branch", branch=7),))
simulate(m, sch, t_end=0.05)  # compile / warm caches
t0 = time.perf_counter()
simulate(m, sch, t_end=10.0)
print(time.perf_counter() - t0)
"""


def per_call(repeat):
    m = build_model(load_case("two_area_mtdc"), "pqwaf", 200.0, 0.0)
    xp = np.ascontiguousarray(m.x0[: m.n_plant])
    net = (xp, m.off, m.Zf, m.Vbase, m.mg_bus, m.mg_E, m.mg_xd, m.v_bus)
    V = kernels.network_np(*net)
    args = (xp, V, np.zeros(m.nv), np.zeros(m.nv), 0.75, *m._kargs())
    kernels.network_nb(*net)
    kernels.derivs_nb(*args)
    rows = []
    for name, f_np, f_nb, a in (("network", kernels.network_np, kernels.network_nb, net),
                                ("derivs", kernels.derivs_np, kernels.derivs_nb, args)):
        t_np = min(timeit.repeat(lambda: f_np(*a), number=repeat, repeat=5)) / repeat
        t_nb = min(timeit.repeat(lambda: f_nb(*a), number=repeat, repeat=5)) / repeat
        rows.append((name, t_np, t_nb))
    return rows


def end_to_end(disable):
    env = dict(os.environ, MTDC_STAB_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", SIM], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args()
    if kernels.derivs is not kernels.derivs_nb:
        sys.exit("numba is disabled in this interpreter; unset MTDC_STAB_DISABLE_NUMBA")

    print(f"{'kernel':<10}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for name, t_np, t_nb in per_call(args.repeat):
        print(f"{name:<10}{1e6 * t_np:>12.2f}{1e6 * t_nb:>12.2f}{t_np / t_nb:>10.1f}")
    s_np, s_nb = end_to_end(True), end_to_end(False)
    print(f"\n10 s trip simulation: numpy {s_np:.2f} s, numba {s_nb:.2f} s, speedup {s_np / s_nb:.1f}x")


if __name__ == "__main__":
    main()
