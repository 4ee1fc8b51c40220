"""Linearisation and modal analysis around the power-flow equilibrium."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .case import NetworkCase
from .dynamics import DynamicModel
from .powerflow import PowerFlowSolution, solve_sequential

log = logging.getLogger(__name__)

EQUILIBRIUM_TOL = 1e-6
TRACK_MIN_CORRELATION = 0.7
EM_FREQ_BAND = (0.1, 3.0)


@dataclass
class LinearModel:
    A: np.ndarray
    state_labels: list
    operating_point: np.ndarray
    model: DynamicModel | None = None

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def machine_speed_states(self) -> list[int]:
        return [i for i, s in enumerate(self.state_labels) if s.startswith("dw[")]

    def machine_states(self) -> list[int]:
        return [i for i, s in enumerate(self.state_labels) if s.startswith(("dw[", "delta["))]


@dataclass
class ModeReport:
    eigenvalues: np.ndarray
    damping_pct: np.ndarray
    freq_hz: np.ndarray
    participation: np.ndarray
    shapes: np.ndarray
    state_labels: list
    speed_labels: list
    right: np.ndarray = field(repr=False, default=None)
    defective: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return self.eigenvalues.size

    def top_states(self, mode: int, k: int = 3) -> list[str]:
        col = self.participation[:, mode]
        if not np.all(np.isfinite(col)):
            return []
        order = np.argsort(-col)[:k]
        return [self.state_labels[i] for i in order]

    def electromechanical(self) -> list[int]:
        """Oscillatory modes dominated by machine mechanical states.

        Machine angle and speed participations are summed: in the classical
        model they are equal for any electromechanical mode.
        """
        mech = [i for i, s in enumerate(self.state_labels) if s.startswith(("dw[", "delta["))]
        out = []
        for i, lam in enumerate(self.eigenvalues):
            if lam.imag <= 0 or self.defective[i]:
                continue
            col = self.participation[:, i]
            mass = col.sum()
            if mass <= 0:
                continue
            if col[mech].sum() / mass > 0.5 and EM_FREQ_BAND[0] <= self.freq_hz[i] <= EM_FREQ_BAND[1]:
                out.append(i)
        return out

    def inter_area(self) -> int:
        """Index of the lowest-frequency electromechanical mode."""
        em = self.electromechanical()
        if not em:
            raise LookupError("no electromechanical mode found")
        return min(em, key=lambda i: self.freq_hz[i])


def damping_ratio(lam) -> float:
    """Damping ratio in percent of one eigenvalue (100 for non-oscillatory decaying)."""
    lam = complex(lam)
    mag = abs(lam)
    if mag < 1e-12:
        return 100.0
    if lam.imag == 0.0:
        return 100.0 if lam.real <= 0 else -100.0
    return -lam.real / mag * 100.0


def frequency_hz(lam) -> float:
    return abs(complex(lam).imag) / (2.0 * np.pi)


def _as_model(obj, pf=None) -> DynamicModel:
    if isinstance(obj, DynamicModel):
        return obj
    if isinstance(obj, NetworkCase):
        return DynamicModel(obj, pf)
    raise TypeError("expected a NetworkCase or DynamicModel")


def rotation_vector(model: DynamicModel) -> np.ndarray:
    """Direction of a uniform rotation of every angle state (machines and tracking filters)."""
    return np.array([1.0 if s.startswith(("delta[", "pll[")) else 0.0 for s in model.labels])


def relative_equilibrium(model: DynamicModel, x_guess=None, *, tol: float = 1e-11, max_iter: int = 30):
    """Steady state of a model whose angles may all rotate at a common rate.

    Without a fixed-voltage bus the network only sees angle differences, so
    after a disturbance the system settles where every angle advances at the
    same rate ``slip`` (rad/s). Solves ``f(x) = slip * r`` with one angle
    pinned; with a fixed-voltage bus the slip is forced to zero. Returns
    ``(x, slip)``.
    """
    x0 = model.x0 if x_guess is None else np.asarray(x_guess, dtype=float)
    n = x0.size
    rot = rotation_vector(model) if not model.fixed else np.zeros(n)
    pin = int(np.argmax(rot)) if rot.any() else -1

    def residual(z):
        r = model.rhs(z[:n]) - z[n] * rot
        extra = z[pin] - x0[pin] if pin >= 0 else z[n]
        return np.concatenate([r, [extra]])

    z = np.concatenate([x0, [0.0]])
    for _ in range(max_iter):
        r = residual(z)
        if np.max(np.abs(r)) < tol:
            return z[:n], float(z[n])
        J = np.empty((n + 1, n + 1))
        for j in range(n + 1):
            h = 1e-7 * max(1.0, abs(z[j]))
            zh = z.copy()
            zh[j] += h
            J[:, j] = (residual(zh) - r) / h
        z = z - np.linalg.solve(J, r)
    raise RuntimeError("relative equilibrium not found")


def linearize(model, equilibrium=None, *, check_limits: bool = True, slip: float = 0.0) -> LinearModel:
    """State matrix by central finite differences at an equilibrium.

    Perturbation per state is ``max(1e-6, 1e-6 |x_j|)``. ``slip`` is the
    common angle rate of a relative equilibrium (see
    :func:`relative_equilibrium`); the state matrix is the same in the
    rotating frame. Raises ``ValueError`` when the point is not an
    equilibrium or a limiter or the Q-WAF voltage gate sits on its switching
    boundary.
    """
    model = _as_model(model)
    x0 = model.x0 if equilibrium is None else np.asarray(equilibrium, dtype=float)
    f0 = model.rhs(x0)
    if slip:
        f0 = f0 - slip * rotation_vector(model)
    res = float(np.max(np.abs(f0))) if f0.size else 0.0
    if not res < EQUILIBRIUM_TOL:
        raise ValueError(f"not an equilibrium: max |dx/dt| = {res:.3e}")
    if check_limits and not model.limiters_inactive(x0):
        raise ValueError("a limiter or gate is active at the operating point; linearisation is meaningless")
    n = x0.size
    A = np.zeros((n, n))
    for j in range(n):
        h = max(1e-6, 1e-6 * abs(x0[j]))
        xp = x0.copy()
        xm = x0.copy()
        xp[j] += h
        xm[j] -= h
        A[:, j] = (model.rhs(xp) - model.rhs(xm)) / (2.0 * h)
    return LinearModel(A=A, state_labels=list(model.labels), operating_point=x0.copy(), model=model)


def modal_analysis(lm: LinearModel) -> ModeReport:
    """Eigenvalues, damping, frequencies, participation factors and speed mode shapes."""
    lam, V = np.linalg.eig(lm.A)
    order = np.lexsort((-lam.imag, lam.real))[::-1]
    lam = lam[order]
    V = V[:, order]
    n = lam.size
    defective = np.zeros(n, dtype=bool)
    try:
        W = np.linalg.inv(V)
        with np.errstate(over="ignore", invalid="ignore"):
            cond = np.linalg.norm(W, axis=1) * np.linalg.norm(V, axis=0)
        defective = ~np.isfinite(cond) | (cond > 1e10)
    except np.linalg.LinAlgError:
        W = np.full_like(V, np.nan)
        defective[:] = True
    P = np.abs(V * W.T)
    colmax = P.max(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        P = P / colmax
    P[:, defective] = np.nan

    speeds = lm.machine_speed_states()
    shapes = V[speeds, :].copy() if speeds else np.zeros((0, n), dtype=complex)
    for i in range(n):
        if shapes.shape[0] == 0:
            break
        col = shapes[:, i]
        k = int(np.argmax(np.abs(col)))
        if abs(col[k]) > 0:
            shapes[:, i] = col / col[k]
    return ModeReport(
        eigenvalues=lam,
        damping_pct=np.array([damping_ratio(z) for z in lam]),
        freq_hz=np.array([frequency_hz(z) for z in lam]),
        participation=P,
        shapes=shapes,
        state_labels=list(lm.state_labels),
        speed_labels=[lm.state_labels[i] for i in speeds],
        right=V,
        defective=defective,
    )


def analyze(case: NetworkCase, strategy: str | None = None, k: float | None = None,
            delay_ms: float | None = None, pf: PowerFlowSolution | None = None):
    """Linearise and analyse a case under a strategy; returns ``(LinearModel, ModeReport)``."""
    if strategy is not None:
        case = case.with_strategy(strategy, k, delay_ms)
    lm = linearize(DynamicModel(case, pf))
    return lm, modal_analysis(lm)


# ---------------------------------------------------------------------------
# Gain sweeps

@dataclass
class SweepResult:
    k_values: list
    reports: list
    tracks: dict  # mode_id -> list of eigenvalue or None per k
    mode_ids: list

    def damping(self, mode_id) -> np.ndarray:
        return np.array([np.nan if z is None else damping_ratio(z) for z in self.tracks[mode_id]])

    def frequency(self, mode_id) -> np.ndarray:
        return np.array([np.nan if z is None else frequency_hz(z) for z in self.tracks[mode_id]])

    def rows(self):
        for i, k in enumerate(self.k_values):
            for mid in self.mode_ids:
                z = self.tracks[mid][i]
                if z is None:
                    yield (k, mid, np.nan, np.nan, np.nan, np.nan)
                else:
                    yield (k, mid, z.real, z.imag, damping_ratio(z), frequency_hz(z))


def _normalise(v):
    nrm = np.linalg.norm(v)
    return v / nrm if nrm > 0 else v


def machine_vector(report: ModeReport, i: int) -> np.ndarray:
    """Unit right eigenvector of mode ``i`` restricted to the machine angle and speed states."""
    mech = [j for j, s in enumerate(report.state_labels) if s.startswith(("delta[", "dw["))]
    return _normalise(report.right[mech, i])


def track_modes(prev_vectors: dict, report: ModeReport, min_corr: float = TRACK_MIN_CORRELATION) -> dict:
    """Greedy matching of tracked modes to the modes of ``report``.

    ``prev_vectors`` maps mode ids to :func:`machine_vector` results.
    Machine states keep the same position in every model layout, so modes
    can be followed across strategies as well as gains. Returns mode_id ->
    index into ``report`` (or ``None`` when the best correlation is below
    ``min_corr``).
    """
    cand = [i for i in range(len(report)) if report.eigenvalues[i].imag > 0]
    pairs = []
    for i in cand:
        v = machine_vector(report, i)
        for mid, pv in prev_vectors.items():
            pairs.append((abs(np.vdot(pv, v)), mid, i))
    pairs.sort(key=lambda t: -t[0])
    out = {mid: None for mid in prev_vectors}
    used = set()
    for c, mid, i in pairs:
        if out[mid] is not None or i in used or c < min_corr:
            continue
        out[mid] = i
        used.add(i)
    return out


def gain_sweep(case: NetworkCase, strategy: str, k_values, *, delay_ms: float = 0.0, modes: str = "em",
               pf: PowerFlowSolution | None = None, seed: dict | None = None) -> SweepResult:
    """Modal analysis over a list of per-converter gains with mode tracking.

    Modes tracked are the electromechanical modes found at the first gain
    (``modes="em"``) or just the inter-area mode (``modes="inter_area"``).
    ``seed`` (mode id -> :func:`machine_vector`) instead names the modes to
    follow from a reference analysis, typically the base case.
    """
    k_values = [float(k) for k in k_values]
    if any(k < 0 for k in k_values):
        raise ValueError("gains must be non-negative")
    if pf is None:
        pf = solve_sequential(case)
    reports = []
    tracks: dict = {}
    vectors: dict = dict(seed or {})
    mode_ids: list = list(vectors)
    for mid in mode_ids:
        tracks[mid] = []
    for n_k, k in enumerate(k_values):
        lm = linearize(DynamicModel(case.with_strategy(strategy, k, delay_ms), pf))
        rep = modal_analysis(lm)
        reports.append(rep)
        if n_k == 0 and seed is None:
            chosen = [rep.inter_area()] if modes == "inter_area" else sorted(rep.electromechanical(),
                                                                              key=lambda i: rep.freq_hz[i])
            for j, i in enumerate(chosen):
                mid = "inter_area" if modes == "inter_area" else f"em{j}"
                mode_ids.append(mid)
                tracks[mid] = [rep.eigenvalues[i]]
                vectors[mid] = machine_vector(rep, i)
            continue
        match = track_modes(vectors, rep)
        for mid in mode_ids:
            i = match[mid]
            if i is None:
                log.info("mode %s untracked at k=%g", mid, k)
                tracks[mid].append(None)
            else:
                tracks[mid].append(rep.eigenvalues[i])
                vectors[mid] = machine_vector(rep, i)
    return SweepResult(k_values=k_values, reports=reports, tracks=tracks, mode_ids=mode_ids)


TRACK_STEP = 10.0


def tracked_modes(case: NetworkCase, strategy: str, k: float, seed: dict, *, delay_ms: float = 0.0,
                  pf: PowerFlowSolution | None = None, step: float = TRACK_STEP) -> dict:
    """Eigenvalues at gain ``k`` of the modes named in ``seed``, followed by continuation from ``k = 0``.

    Jumping straight from the uncontrolled case to a strongly controlled
    one can confuse modes whose shapes change a lot; stepping the gain in
    increments of at most ``step`` keeps consecutive shapes close. Returns
    mode id -> eigenvalue (``None`` when tracking is lost).
    """
    n = max(1, int(np.ceil(float(k) / step - 1e-9)))
    ks = np.linspace(0.0, float(k), n + 1)
    res = gain_sweep(case, strategy, ks, delay_ms=delay_ms, pf=pf, seed=seed)
    return {mid: res.tracks[mid][-1] for mid in res.mode_ids}
