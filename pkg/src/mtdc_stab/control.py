"""Supplementary converter controllers driven by the weighted-averaged frequency.

Each converter compares its own measured frequency with the weighted average
of all converter frequencies and modulates its active power (P-WAF), its
reactive power (Q-WAF) or both. The error signal passes through a low-pass
filter, a washout, a gain and a saturation.

All discrete updates use the bilinear (trapezoidal) rule, which is exactly
what the time-domain integrator applies to the continuous equations returned
by :func:`chain_rhs` and :func:`pade_rhs`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class WAFConfig:
    """Controller settings shared by every converter of the MTDC grid.

    Gains and limits are in per unit of each converter rating.
    """

    alpha: tuple = ()
    kP_total: float = 600.0
    kQ_total: float = 600.0
    Tf: float = 0.1
    Tw: float = 10.0
    dp_max: float = 1.0
    dq_max: float = 1.0
    v_th: float = 0.75
    enable_p: bool = False
    enable_q: bool = False
    delay_ms: float = 0.0
    t_meas: float = 0.02

    @property
    def tau(self) -> float:
        return self.delay_ms / 1000.0

    @property
    def active(self) -> bool:
        return self.enable_p or self.enable_q

    def kp(self) -> np.ndarray:
        return distribute_gains(self.kP_total, self.alpha)

    def kq(self) -> np.ndarray:
        return distribute_gains(self.kQ_total, self.alpha)

    def with_strategy(self, strategy: str, k: float | None = None, delay_ms: float | None = None) -> "WAFConfig":
        """Return a copy configured for ``none``, ``pwaf``, ``qwaf`` or ``pqwaf``.

        ``k`` is the nominal per-converter gain: the total gain becomes
        ``k * n_vsc``, so with equal weights every converter gets exactly
        ``k``. The same ``k`` is used for the P and Q channels.
        """
        strategy = strategy.lower().replace("-", "")
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}; expected one of {sorted(STRATEGIES)}")
        enable_p, enable_q = STRATEGIES[strategy]
        changes = dict(enable_p=enable_p, enable_q=enable_q)
        if k is not None:
            total = float(k) * max(len(self.alpha), 1)
            changes.update(kP_total=total, kQ_total=total)
        if delay_ms is not None:
            changes.update(delay_ms=float(delay_ms))
        return replace(self, **changes)

    def violations(self) -> list[str]:
        out = []
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.size and (np.any(alpha < 0.0) or np.any(alpha > 1.0)):
            out.append("waf: weighting factors must lie in [0, 1]")
        if alpha.size and abs(alpha.sum() - 1.0) > 1e-9:
            out.append(f"waf: sum of weighting factors != 1 (got {alpha.sum():.6g})")
        if self.Tf <= 0 or self.Tw <= 0:
            out.append("waf: Tf and Tw must be > 0")
        if self.dp_max <= 0 or self.dq_max <= 0:
            out.append("waf: dp_max and dq_max must be > 0")
        if self.delay_ms < 0:
            out.append("waf: delay_ms must be >= 0")
        if self.kP_total < 0 or self.kQ_total < 0:
            out.append("waf: total gains must be >= 0")
        if self.t_meas <= 0:
            out.append("waf: t_meas must be > 0")
        return out

    def to_json(self) -> dict:
        return {
            "alpha": [float(a) for a in self.alpha],
            "kP_total": self.kP_total,
            "kQ_total": self.kQ_total,
            "Tf": self.Tf,
            "Tw": self.Tw,
            "dp_max": self.dp_max,
            "dq_max": self.dq_max,
            "v_th": self.v_th,
            "enable_p": self.enable_p,
            "enable_q": self.enable_q,
            "delay_ms": self.delay_ms,
            "t_meas": self.t_meas,
        }

    @classmethod
    def from_json(cls, data: dict) -> "WAFConfig":
        kwargs = dict(data)
        kwargs["alpha"] = tuple(float(a) for a in kwargs.get("alpha", ()))
        return cls(**kwargs)


STRATEGIES = {
    "none": (False, False),
    "base": (False, False),
    "pwaf": (True, False),
    "qwaf": (False, True),
    "pqwaf": (True, True),
}


def waf(omegas, alpha) -> float:
    """Weighted-averaged frequency of the converter connection points."""
    omegas = np.asarray(omegas, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if abs(alpha.sum() - 1.0) > 1e-9:
        raise ValueError("weighting factors must sum to 1")
    return float(alpha @ omegas)


def distribute_gains(k_total: float, alpha) -> np.ndarray:
    """Split a total gain among converters in proportion to their weights."""
    if k_total < 0:
        raise ValueError("total gain must be non-negative")
    alpha = np.asarray(alpha, dtype=float)
    if alpha.size and abs(alpha.sum() - 1.0) > 1e-9:
        raise ValueError("weighting factors must sum to 1")
    return alpha * float(k_total)


# ---------------------------------------------------------------------------
# Linear blocks

def chain_matrices(Tf: float, Tw: float):
    """State space of low-pass followed by washout; states (lag, washout lag).

    The washout output is ``x_f - x_w`` so the pair realises
    ``Tw s / ((1 + Tf s) (1 + Tw s))``.
    """
    A = np.array([[-1.0 / Tf, 0.0], [1.0 / Tw, -1.0 / Tw]])
    B = np.array([1.0 / Tf, 0.0])
    C = np.array([1.0, -1.0])
    return A, B, C


def pade_matrices(tau: float):
    """Second-order Pade approximation of ``exp(-tau s)`` in controllable form.

    ``(1 - a s + b s^2) / (1 + a s + b s^2)`` with ``a = tau/2``,
    ``b = tau^2/12``. The feed-through is exactly 1 and the constant term of
    the strictly proper part is exactly 0, so the DC gain is exactly 1.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    a = tau / 2.0
    b = tau * tau / 12.0
    A = np.array([[0.0, 1.0], [-1.0 / b, -a / b]])
    B = np.array([0.0, 1.0])
    C = np.array([0.0, -2.0 * a / b])
    D = 1.0
    return A, B, C, D


def tustin(A, B, dt: float):
    """Bilinear discretisation: ``x+ = M1 x + M2 (u + u_prev)``."""
    n = A.shape[0]
    lhs = np.eye(n) - 0.5 * dt * A
    M1 = np.linalg.solve(lhs, np.eye(n) + 0.5 * dt * A)
    M2 = np.linalg.solve(lhs, 0.5 * dt * B)
    return M1, M2


@dataclass(frozen=True)
class BlockState:
    """State of a linear block plus the input seen at the previous step."""

    x: np.ndarray = field(default_factory=lambda: np.zeros(2))
    u_prev: float = 0.0


def _saturate(v, limit):
    return np.clip(v, -limit, limit)


def _chain_step(state: BlockState, err: float, cfg: WAFConfig, dt: float):
    A, B, C = chain_matrices(cfg.Tf, cfg.Tw)
    M1, M2 = tustin(A, B, dt)
    x = M1 @ state.x + M2 * (err + state.u_prev)
    return float(C @ x), BlockState(x=x, u_prev=float(err))


def pwaf_step(state: BlockState, omega_k: float, omega_star: float, cfg: WAFConfig, dt: float, index: int = 0):
    """Advance one P-WAF channel by ``dt``; returns ``(dp_ref, new_state)``.

    A converter whose frequency is above the WAF reduces its injection.
    """
    y, new = _chain_step(state, omega_star - omega_k, cfg, dt)
    k = cfg.kp()[index] if len(cfg.alpha) else cfg.kP_total
    return float(_saturate(k * y, cfg.dp_max)), new


def qwaf_step(state: BlockState, omega_k: float, omega_star: float, u_s: float, cfg: WAFConfig, dt: float,
              index: int = 0):
    """Advance one Q-WAF channel by ``dt``; returns ``(dq_ref, new_state)``.

    Opposite sign to P-WAF, and the output is gated off while the terminal
    voltage is below ``v_th``. The filter keeps running while gated.
    """
    y, new = _chain_step(state, omega_star - omega_k, cfg, dt)
    k = cfg.kq()[index] if len(cfg.alpha) else cfg.kQ_total
    gate = 1.0 if u_s >= cfg.v_th else 0.0
    return gate * float(_saturate(-k * y, cfg.dq_max)), new


def pade_delay_step(state: BlockState, u: float, tau: float, dt: float):
    """Advance the Pade delay by ``dt``; returns ``(delayed output, new_state)``.

    With ``tau == 0`` the block is a pass-through and the state is unchanged.
    """
    if tau == 0:
        return float(u), state
    A, B, C, D = pade_matrices(tau)
    M1, M2 = tustin(A, B, dt)
    x = M1 @ state.x + M2 * (u + state.u_prev)
    return float(C @ x + D * u), BlockState(x=x, u_prev=float(u))


def pade_rest_state(u: float, tau: float) -> BlockState:
    """Steady state of the delay block for a constant input ``u``."""
    if tau == 0:
        return BlockState(x=np.zeros(2), u_prev=float(u))
    b = tau * tau / 12.0
    return BlockState(x=np.array([b * u, 0.0]), u_prev=float(u))


# ---------------------------------------------------------------------------
# Vectorised controller bank used by the simulator

@dataclass(frozen=True)
class ControllerState:
    """Filter states of every converter plus the shared delay block."""

    chain: np.ndarray  # (n_vsc, 2)
    err_prev: np.ndarray  # (n_vsc,)
    pade: BlockState

    @classmethod
    def at_rest(cls, n_vsc: int, tau: float = 0.0) -> "ControllerState":
        return cls(chain=np.zeros((n_vsc, 2)), err_prev=np.zeros(n_vsc), pade=pade_rest_state(0.0, tau))


def controller_outputs(y, u_s, cfg: WAFConfig):
    """Map washout outputs to (dp, dq) in converter pu, with limits and gating."""
    y = np.asarray(y, dtype=float)
    dp = _saturate(cfg.kp() * y, cfg.dp_max) if cfg.enable_p else np.zeros_like(y)
    if cfg.enable_q:
        gate = (np.asarray(u_s) >= cfg.v_th).astype(float)
        dq = gate * _saturate(-cfg.kq() * y, cfg.dq_max)
    else:
        dq = np.zeros_like(y)
    return dp, dq


def supplementary_outputs(state: ControllerState, omegas, u_s, cfg: WAFConfig, dt: float):
    """One synchronous step of all converter controllers.

    Returns ``(dp, dq, omega_star, new_state)``; ``dp``/``dq`` are in pu of
    each converter rating. When the controllers are disabled the outputs are
    zero and the state is returned unchanged.
    """
    omegas = np.asarray(omegas, dtype=float)
    n = omegas.size
    if n == 0:
        return np.zeros(0), np.zeros(0), 1.0, state
    if not cfg.active:
        return np.zeros(n), np.zeros(n), waf(omegas, cfg.alpha), state
    raw = waf(omegas, cfg.alpha)
    delayed, pade = pade_delay_step(state.pade, raw - 1.0, cfg.tau, dt)
    omega_star = 1.0 + delayed
    err = omega_star - omegas
    A, B, C = chain_matrices(cfg.Tf, cfg.Tw)
    M1, M2 = tustin(A, B, dt)
    chain = state.chain @ M1.T + np.outer(err + state.err_prev, M2)
    y = chain @ C
    dp, dq = controller_outputs(y, u_s, cfg)
    return dp, dq, omega_star, ControllerState(chain=chain, err_prev=err, pade=pade)


def chain_rhs(chain, err, cfg: WAFConfig):
    """Continuous-time derivative of the filter states, shape ``(n_vsc, 2)``."""
    A, B, _ = chain_matrices(cfg.Tf, cfg.Tw)
    return chain @ A.T + np.outer(err, B)


def pade_rhs(x, u, tau: float):
    """Continuous-time delay block: returns ``(dx/dt, output)``."""
    A, B, C, D = pade_matrices(tau)
    return A @ x + B * u, float(C @ x + D * u)


def measured_frequency(phase_error, t_meas: float, omega_base: float):
    """Frequency in pu from the phase error of the tracking filter.

    The tracking filter state follows the bus-voltage angle with time
    constant ``t_meas``; its derivative is the filtered angle derivative.
    """
    return 1.0 + np.asarray(phase_error) / (t_meas * omega_base)
