"""Regenerate the bundled case files in src/mtdc_stab/data."""
from pathlib import Path

from mtdc_stab.case import (ACBranch, Bus, DCBus, DCLine, Machine, NetworkCase, VSCStation, dumps, validate)
from mtdc_stab.control import WAFConfig

DATA = Path(__file__).resolve().parents[1] / "src" / "mtdc_stab" / "data"

# DC per-unit bases: 640 kV pole to pole, 100 MVA
Z_DC = 640.0 ** 2 / 100.0


def two_area(D=2.0, ratings=(700.0, 700.0, 700.0), ac_buses=(7, 9, 6), p_area1=5.9) -> NetworkCase:
    buses = [
        Bus(1, 20.0, "PV", 1.03), Bus(2, 20.0, "PV", 1.01), Bus(3, 20.0, "slack", 1.03), Bus(4, 20.0, "PV", 1.01),
        Bus(5, 230.0), Bus(6, 230.0), Bus(7, 230.0, p_load=9.67, q_load=-1.0), Bus(8, 230.0),
        Bus(9, 230.0, p_load=17.67, q_load=-2.5), Bus(10, 230.0), Bus(11, 230.0),
    ]
    xt = 0.15 * 100.0 / 900.0
    long = (0.011, 0.11, 0.1925)
    branches = [
        ACBranch(1, 1, 5, 0.0, xt), ACBranch(2, 2, 6, 0.0, xt), ACBranch(3, 3, 11, 0.0, xt),
        ACBranch(4, 4, 10, 0.0, xt),
        ACBranch(5, 5, 6, 0.0025, 0.025, 0.04375), ACBranch(6, 6, 7, 0.001, 0.01, 0.0175),
        ACBranch(7, 7, 8, *long), ACBranch(8, 7, 8, *long), ACBranch(9, 8, 9, *long), ACBranch(10, 8, 9, *long),
        ACBranch(11, 9, 10, 0.001, 0.01, 0.0175), ACBranch(12, 10, 11, 0.0025, 0.025, 0.04375),
    ]
    machines = [
        Machine(1, 1, 900.0, 6.5, D, 0.3, p_area1 / 9.0), Machine(2, 2, 900.0, 6.5, D, 0.3, p_area1 / 9.0),
        Machine(3, 3, 900.0, 6.175, D, 0.3, 7.19 / 9.0), Machine(4, 4, 900.0, 6.175, D, 0.3, 7.0 / 9.0),
    ]
    r1, r2, r3 = ratings
    vscs = [
        VSCStation(1, ac_buses[0], 1, r1, p_set0=-350.0 / r1, q_set0=0.0),
        VSCStation(2, ac_buses[1], 2, r2, p_set0=500.0 / r2, q_set0=150.0 / r2),
        VSCStation(3, ac_buses[2], 3, r3, mode="dc_slack", q_set0=100.0 / r3),
    ]
    c = 195e-6 * Z_DC
    dc_buses = [DCBus(1, c), DCBus(2, c), DCBus(3, c)]
    dc_lines = [
        DCLine(1, 1, 2, 2.05 / Z_DC, 0.1401 / Z_DC), DCLine(2, 2, 3, 2.05 / Z_DC, 0.1401 / Z_DC),
        DCLine(3, 1, 3, 2.05 / Z_DC, 0.1401 / Z_DC),
    ]
    waf = WAFConfig(alpha=(1 / 3, 1 / 3, 1 / 3))
    return NetworkCase(tuple(buses), tuple(branches), tuple(machines), tuple(vscs), tuple(dc_buses),
                       tuple(dc_lines), waf, 100.0, 60.0, "two_area_mtdc")


def smib() -> NetworkCase:
    buses = [Bus(1, 20.0, "PV", 1.0), Bus(2, 400.0, "slack", 1.0), Bus(3, 400.0, p_load=0.1, q_load=0.02)]
    branches = [ACBranch(1, 1, 2, 0.0, 0.4), ACBranch(2, 1, 2, 0.0, 0.4), ACBranch(3, 2, 3, 0.0, 0.05)]
    machines = [Machine(1, 1, 100.0, 3.5, 2.0, 0.3, 0.8)]
    return NetworkCase(tuple(buses), tuple(branches), tuple(machines), name="smib", f_base_hz=50.0)


def main():
    for case in (two_area(), smib()):
        problems = validate(case)
        if problems:
            raise SystemExit(f"{case.name}: {problems}")
        (DATA / f"{case.name}.json").write_text(dumps(case))
        print("wrote", case.name)


if __name__ == "__main__":
    main()
