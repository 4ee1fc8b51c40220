"""Small- and large-disturbance angle stability of AC grids with VSC-MTDC systems."""
from ._accel import backend
from .case import NetworkCase, load_case, save_case, validate, to_system_base, bundled_cases
from .control import WAFConfig, waf, distribute_gains
from .powerflow import solve_sequential
from .dynamics import DynamicModel, build_model
from .small_signal import (linearize, modal_analysis, analyze, gain_sweep, tracked_modes, relative_equilibrium,
                           damping_ratio, frequency_hz)
from .time_domain import EventSchedule, Event, FaultSpec, simulate, compute_cct, loss_of_sync

__version__ = "0.1.0"

__all__ = [
    "backend", "NetworkCase", "load_case", "save_case", "validate", "to_system_base", "bundled_cases",
    "WAFConfig", "waf", "distribute_gains", "solve_sequential", "DynamicModel", "build_model",
    "linearize", "modal_analysis", "analyze", "gain_sweep", "tracked_modes", "relative_equilibrium",
    "damping_ratio", "frequency_hz",
    "EventSchedule", "Event", "FaultSpec", "simulate", "compute_cct", "loss_of_sync",
]
