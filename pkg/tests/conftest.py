import functools

import numpy as np
import pytest

from mtdc_stab import load_case, solve_sequential
from mtdc_stab.case import ACBranch, Bus, DCBus, DCLine, Machine, NetworkCase, VSCStation
from mtdc_stab.control import WAFConfig


@functools.lru_cache(maxsize=None)
def bundled(name):
    return load_case(name)


@functools.lru_cache(maxsize=None)
def bundled_pf(name):
    return solve_sequential(bundled(name))


@pytest.fixture(scope="session")
def two_area():
    return bundled("two_area_mtdc")


@pytest.fixture(scope="session")
def two_area_pf():
    return bundled_pf("two_area_mtdc")


@pytest.fixture(scope="session")
def smib():
    return bundled("smib")


def two_bus(x=0.5, p_load=0.5, q_load=0.0, b_shunt=0.0):
    """Slack at bus 1, PQ load at bus 2, one branch."""
    return NetworkCase(
        buses=(Bus(1, 400.0, "slack", 1.0), Bus(2, 400.0, "PQ", 1.0, p_load, q_load)),
        branches=(ACBranch(1, 1, 2, 0.0, x, b_shunt),),
        name="two_bus",
    )


def mtdc_three_bus(p1=-0.35, p2=0.5, losses=True, rating=1000.0):
    """Three AC buses tied to one slack, three converters on a DC triangle."""
    zero = dict(loss_a=0.0, loss_b=0.0, loss_c_rec=0.0, loss_c_inv=0.0) if not losses else {}
    buses = (Bus(1, 400.0, "slack", 1.0), Bus(2, 400.0, "PQ"), Bus(3, 400.0, "PQ"), Bus(4, 400.0, "PQ"))
    branches = tuple(ACBranch(i, 1, i + 1, 0.001, 0.02) for i in range(1, 4))
    vscs = (
        VSCStation(1, 2, 1, rating, p_set0=p1, **zero),
        VSCStation(2, 3, 2, rating, p_set0=p2, **zero),
        VSCStation(3, 4, 3, rating, mode="dc_slack", **zero),
    )
    dc_buses = tuple(DCBus(i, 0.8) for i in (1, 2, 3))
    dc_lines = (DCLine(1, 1, 2, 0.0005, 3e-5), DCLine(2, 2, 3, 0.0005, 3e-5), DCLine(3, 1, 3, 0.0005, 3e-5))
    return NetworkCase(buses=buses, branches=branches, vscs=vscs, dc_buses=dc_buses, dc_lines=dc_lines,
                       waf=WAFConfig(alpha=(1 / 3, 1 / 3, 1 / 3)), name="mtdc3")


def smib_case(p=0.8, H=3.5, D=2.0, x_line=0.2, rating=100.0, f_base=50.0):
    """Machine at bus 1 behind one line to an infinite bus at bus 2."""
    return NetworkCase(
        buses=(Bus(1, 20.0, "PV", 1.0), Bus(2, 20.0, "slack", 1.0)),
        branches=(ACBranch(1, 1, 2, 0.0, x_line),),
        machines=(Machine(1, 1, rating, H, D, 0.3, p_set=p),),
        f_base_hz=f_base,
        name="smib_test",
    )


def max_rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


# -- acceptance verdict lines -------------------------------------------------

_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then return ``ok``."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
