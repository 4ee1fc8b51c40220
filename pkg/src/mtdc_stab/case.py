"""Data model of hybrid AC/DC cases.

Device quantities (machines and converters) are stored on their own rating
until :func:`to_system_base` converts them. AC network, loads and DC grid
data are always on the system base. Case files are JSON documents; see
``docs/formats.md``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .control import WAFConfig

BUS_TYPES = ("slack", "PV", "PQ")


@dataclass(frozen=True)
class Bus:
    id: int
    base_kv: float
    type: str = "PQ"
    v_set: float = 1.0
    p_load: float = 0.0
    q_load: float = 0.0


@dataclass(frozen=True)
class ACBranch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float = 0.0
    status: bool = True


@dataclass(frozen=True)
class Governor:
    R: float
    T_g: float


@dataclass(frozen=True)
class Machine:
    id: int
    bus: int
    rating_mva: float
    H: float
    D: float
    xd_prime: float
    p_set: float = 0.0
    model: str = "classical"
    governor: Optional[Governor] = None
    on_system_base: bool = False


@dataclass(frozen=True)
class VSCStation:
    id: int
    ac_bus: int
    dc_bus: int
    rating_mva: float
    r_s: float = 0.002
    x_s: float = 0.17
    tau_i: float = 0.005
    p_max: float = 1.0
    q_max: float = 0.45
    i_max: float = 1.0
    m_max: float = 1.31
    loss_a: float = 0.011033
    loss_b: float = 0.003464
    loss_c_rec: float = 0.0044
    loss_c_inv: float = 0.00667
    k_dc: float = 0.1
    mode: str = "droop"
    p_set0: float = 0.0
    q_set0: float = 0.0
    udc_set0: float = 1.0
    on_system_base: bool = False


@dataclass(frozen=True)
class DCBus:
    id: int
    c_dc: float
    v_base_kv: float = 640.0


@dataclass(frozen=True)
class DCLine:
    id: int
    from_bus: int
    to_bus: int
    r_dc: float
    l_dc: float = 0.0


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple = ()
    branches: tuple = ()
    machines: tuple = ()
    vscs: tuple = ()
    dc_buses: tuple = ()
    dc_lines: tuple = ()
    waf: WAFConfig = field(default_factory=WAFConfig)
    system_base_mva: float = 100.0
    f_base_hz: float = 50.0
    name: str = ""

    @property
    def omega_base(self) -> float:
        return 2.0 * np.pi * self.f_base_hz

    def bus_index(self) -> dict:
        return {b.id: i for i, b in enumerate(self.buses)}

    def dc_bus_index(self) -> dict:
        return {b.id: i for i, b in enumerate(self.dc_buses)}

    def branch(self, branch_id: int) -> ACBranch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise KeyError(f"no AC branch with id {branch_id}")

    def with_branch_status(self, branch_ids, status: bool) -> "NetworkCase":
        ids = set(branch_ids)
        branches = tuple(replace(b, status=status) if b.id in ids else b for b in self.branches)
        return replace(self, branches=branches)

    def with_waf(self, cfg: WAFConfig) -> "NetworkCase":
        return replace(self, waf=cfg)

    def with_strategy(self, strategy: str, k: float | None = None, delay_ms: float | None = None):
        """Copy with the controller strategy set; ``k`` is the per-converter gain."""
        return replace(self, waf=self.waf.with_strategy(strategy, k, delay_ms))


# ---------------------------------------------------------------------------
# Validation

def _components(nodes, edges):
    parent = {n: n for n in nodes}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        if a in parent and b in parent:
            parent[find(a)] = find(b)
    groups: dict = {}
    for n in nodes:
        groups.setdefault(find(n), []).append(n)
    return list(groups.values())


def validate(case: NetworkCase) -> list[str]:
    """Return every rule the case breaks; an empty list means the case is valid."""
    out: list[str] = []
    bus_ids = [b.id for b in case.buses]
    bus_set = set(bus_ids)
    dc_ids = {b.id for b in case.dc_buses}
    if len(bus_set) != len(bus_ids):
        out.append("buses: duplicate bus ids")
    if case.system_base_mva <= 0:
        out.append("case: system_base_mva must be > 0")

    for b in case.buses:
        if b.type not in BUS_TYPES:
            out.append(f"bus {b.id}: unknown type {b.type!r}")
        if b.base_kv <= 0:
            out.append(f"bus {b.id}: base_kv > 0")
        if b.type in ("slack", "PV") and not (0.5 < b.v_set < 1.5):
            out.append(f"bus {b.id}: v_set in (0.5, 1.5)")

    for br in case.branches:
        if br.x == 0:
            out.append(f"branch {br.id}: x != 0")
        if br.r < 0:
            out.append(f"branch {br.id}: r >= 0")
        if br.from_bus == br.to_bus:
            out.append(f"branch {br.id}: from != to")
        for end in (br.from_bus, br.to_bus):
            if end not in bus_set:
                out.append(f"branch {br.id}: unknown bus {end}")

    machine_buses = []
    for m in case.machines:
        if m.H <= 0:
            out.append(f"machine {m.id}: H > 0")
        if m.xd_prime <= 0:
            out.append(f"machine {m.id}: xd_prime > 0")
        if m.D < 0:
            out.append(f"machine {m.id}: D >= 0")
        if m.rating_mva <= 0:
            out.append(f"machine {m.id}: rating_mva > 0")
        if m.bus not in bus_set:
            out.append(f"machine {m.id}: unknown bus {m.bus}")
        if m.model != "classical":
            out.append(f"machine {m.id}: only the classical model is supported")
        if m.governor is not None and (m.governor.R <= 0 or m.governor.T_g <= 0):
            out.append(f"machine {m.id}: governor R and T_g > 0")
        machine_buses.append(m.bus)
    if len(set(machine_buses)) != len(machine_buses):
        out.append("machines: at most one machine per bus")

    for v in case.vscs:
        if v.rating_mva <= 0:
            out.append(f"vsc {v.id}: rating_mva > 0")
        if v.i_max <= 0:
            out.append(f"vsc {v.id}: i_max > 0")
        if v.tau_i <= 0:
            out.append(f"vsc {v.id}: tau_i > 0")
        if min(v.loss_a, v.loss_b, v.loss_c_rec, v.loss_c_inv) < 0:
            out.append(f"vsc {v.id}: loss coefficients >= 0")
        if v.mode not in ("droop", "dc_slack"):
            out.append(f"vsc {v.id}: unknown mode {v.mode!r}")
        if v.mode == "droop" and v.k_dc <= 0:
            out.append(f"vsc {v.id}: k_dc > 0 when mode = droop")
        if v.ac_bus not in bus_set:
            out.append(f"vsc {v.id}: unknown AC bus {v.ac_bus}")
        if v.dc_bus not in dc_ids:
            out.append(f"vsc {v.id}: unknown DC bus {v.dc_bus}")
    if case.vscs and sum(v.mode == "dc_slack" for v in case.vscs) != 1:
        out.append("vscs: exactly one dc_slack converter required")

    for b in case.dc_buses:
        if b.c_dc <= 0:
            out.append(f"dc bus {b.id}: c_dc > 0")
    for ln in case.dc_lines:
        if ln.r_dc <= 0:
            out.append(f"dc line {ln.id}: r_dc > 0")
        if ln.l_dc < 0:
            out.append(f"dc line {ln.id}: l_dc >= 0")
        for end in (ln.from_bus, ln.to_bus):
            if end not in dc_ids:
                out.append(f"dc line {ln.id}: unknown DC bus {end}")

    # Islands: each needs exactly one slack bus.
    edges = [(br.from_bus, br.to_bus) for br in case.branches if br.status]
    for island in _components(bus_ids, edges):
        n_slack = sum(1 for b in case.buses if b.id in island and b.type == "slack")
        if n_slack != 1:
            out.append(f"island {sorted(island)}: exactly one slack bus required (found {n_slack})")
    if case.dc_buses:
        dc_edges = [(ln.from_bus, ln.to_bus) for ln in case.dc_lines]
        if len(_components(sorted(dc_ids), dc_edges)) != 1:
            out.append("dc grid: not connected")

    if case.vscs:
        if len(case.waf.alpha) != len(case.vscs):
            out.append("waf: one weighting factor per converter required")
        out.extend(case.waf.violations())
    return out


# ---------------------------------------------------------------------------
# Per-unit conversion

# field -> exponent of (rating / system base) applied on conversion
_MACHINE_SCALING = {"H": 1, "D": 1, "xd_prime": -1, "p_set": 1}
_VSC_SCALING = {
    "r_s": -1, "x_s": -1, "p_max": 1, "q_max": 1, "i_max": 1,
    "loss_a": 1, "loss_b": 0, "loss_c_rec": -1, "loss_c_inv": -1,
    "k_dc": -1, "p_set0": 1, "q_set0": 1,
}


def to_system_base(case: NetworkCase) -> NetworkCase:
    """Convert machine and converter data from device base to the system base.

    Records already on the system base are left alone, so the function is
    idempotent.
    """
    sb = case.system_base_mva
    if sb <= 0:
        raise ValueError("system_base_mva must be positive")
    machines = []
    for m in case.machines:
        if m.on_system_base:
            machines.append(m)
            continue
        if m.rating_mva <= 0:
            raise ValueError(f"machine {m.id}: rating must be positive")
        ratio = m.rating_mva / sb
        changes = {k: getattr(m, k) * ratio ** e for k, e in _MACHINE_SCALING.items()}
        if m.governor is not None:
            changes["governor"] = Governor(R=m.governor.R / ratio, T_g=m.governor.T_g)
        machines.append(replace(m, on_system_base=True, **changes))
    vscs = []
    for v in case.vscs:
        if v.on_system_base:
            vscs.append(v)
            continue
        if v.rating_mva <= 0:
            raise ValueError(f"vsc {v.id}: rating must be positive")
        ratio = v.rating_mva / sb
        changes = {k: getattr(v, k) * ratio ** e for k, e in _VSC_SCALING.items()}
        vscs.append(replace(v, on_system_base=True, **changes))
    return replace(case, machines=tuple(machines), vscs=tuple(vscs))


# ---------------------------------------------------------------------------
# Admittance matrix

def build_ybus(case: NetworkCase) -> np.ndarray:
    """Dense bus admittance matrix of the in-service AC branches.

    ``Y_kk = sum(y_series + j b/2)``, ``Y_km = -y_series``.
    """
    idx = case.bus_index()
    n = len(case.buses)
    Y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        if not br.status:
            continue
        i, j = idx[br.from_bus], idx[br.to_bus]
        y = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b_shunt
        Y[i, i] += y + ysh
        Y[j, j] += y + ysh
        Y[i, j] -= y
        Y[j, i] -= y
    return Y


# ---------------------------------------------------------------------------
# JSON I/O

def _record_to_json(rec, scaling=None) -> dict:
    out = {}
    system = getattr(rec, "on_system_base", False)
    for f in fields(rec):
        if f.name == "on_system_base":
            continue
        val = getattr(rec, f.name)
        if isinstance(val, Governor):
            val = {"R": val.R, "T_g": val.T_g}
        key = f.name
        if system and scaling and key in scaling:
            key = f"{key}_system_pu"
        out[key] = val
    return out


def _record_from_json(cls, data: dict, scaling=None):
    data = dict(data)
    system = any(k.endswith("_system_pu") for k in data)
    clean = {}
    for k, v in data.items():
        name = k[: -len("_system_pu")] if k.endswith("_system_pu") else k
        clean[name] = v
    if scaling is not None:
        clean["on_system_base"] = system
    if clean.get("governor") is not None:
        clean["governor"] = Governor(**clean["governor"])
    return cls(**clean)


def case_to_dict(case: NetworkCase) -> dict:
    return {
        "name": case.name,
        "system_base_mva": case.system_base_mva,
        "f_base_hz": case.f_base_hz,
        "buses": [_record_to_json(b) for b in case.buses],
        "branches": [_record_to_json(b) for b in case.branches],
        "machines": [_record_to_json(m, _MACHINE_SCALING) for m in case.machines],
        "vscs": [_record_to_json(v, _VSC_SCALING) for v in case.vscs],
        "dc_buses": [_record_to_json(b) for b in case.dc_buses],
        "dc_lines": [_record_to_json(ln) for ln in case.dc_lines],
        "waf": case.waf.to_json(),
    }


def case_from_dict(data: dict) -> NetworkCase:
    return NetworkCase(
        name=data.get("name", ""),
        system_base_mva=float(data.get("system_base_mva", 100.0)),
        f_base_hz=float(data.get("f_base_hz", 50.0)),
        buses=tuple(Bus(**b) for b in data.get("buses", [])),
        branches=tuple(ACBranch(**b) for b in data.get("branches", [])),
        machines=tuple(_record_from_json(Machine, m, _MACHINE_SCALING) for m in data.get("machines", [])),
        vscs=tuple(_record_from_json(VSCStation, v, _VSC_SCALING) for v in data.get("vscs", [])),
        dc_buses=tuple(DCBus(**b) for b in data.get("dc_buses", [])),
        dc_lines=tuple(DCLine(**ln) for ln in data.get("dc_lines", [])),
        waf=WAFConfig.from_json(data.get("waf", {})),
    )


def dumps(case: NetworkCase) -> str:
    return json.dumps(case_to_dict(case), indent=2) + "\n"


def loads(text: str) -> NetworkCase:
    return case_from_dict(json.loads(text))


def load_case(path) -> NetworkCase:
    """Load a case file, or a bundled case by name (``two_area_mtdc``, ``smib``)."""
    p = Path(path)
    if not p.exists() and p.suffix in ("", ".json") and len(p.parts) == 1:
        name = p.stem + ".json"
        ref = resources.files("mtdc_stab.data").joinpath(name)
        if ref.is_file():
            return loads(ref.read_text())
    return loads(p.read_text())


def save_case(case: NetworkCase, path) -> None:
    Path(path).write_text(dumps(case))


def bundled_cases() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("mtdc_stab.data").iterdir() if p.name.endswith(".json"))
