"""Long-horizon integration of the conformal-factor evolution.

The flow is d/dt u^N = (n+2)/4 * (a_n Lap_{g0} u - R0 u), integrated fully
implicitly (backward Euler, Newton on the u^N term) with the far boundary
pinned and the time step uniform in log t after a short uniform warmup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import PchipInterpolator

from .background import Background, conformal_background, conformal_scalar_curvature
from .elliptic import EllipticSolution, SolverError, _solve_tridiag

SUMMARY_COLUMNS = ("t", "max_u", "max_u_tilde", "min_Rt", "harnack_K")


class StepRejected(SolverError):
    """A backward-Euler step failed; retry with a smaller dt."""


@dataclass
class FlowState:
    t: float
    u: np.ndarray
    step_index: int

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if np.any(self.u <= 0):
            raise ValueError("flow state must be strictly positive")


@dataclass
class FlowControls:
    dt_warmup: float = 1e-3
    warmup_until: float = 1.0
    eta: float = 0.05            # log-time step bound once t >= warmup_until
    dt_min: float = 1e-9
    newton_tol: float = 1e-13    # on the Newton update, relative to sup u
    newton_max_iter: int = 40
    max_halvings: int = 50
    boundary_value: float = 1.0


@dataclass
class Trajectory:
    background: Background
    checkpoints: list[FlowState]
    summary: dict[str, np.ndarray]
    controls: FlowControls
    initial: FlowState
    aborted: bool = False

    def __post_init__(self):
        times = [s.t for s in self.checkpoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("checkpoint times must be strictly increasing")

    @property
    def t_end(self) -> float:
        return self.checkpoints[-1].t if self.checkpoints else self.initial.t

    def checkpoint_at(self, t: float) -> FlowState:
        for state in self.checkpoints:
            if math.isclose(state.t, t, rel_tol=1e-12, abs_tol=0.0):
                return state
        raise KeyError(f"no checkpoint at t = {t}")


def rescaled(state: FlowState, n_dim: int) -> np.ndarray:
    """t^(-(n-2)/4) * u, the blow-up normalization of the flow."""
    if state.t <= 0.0:
        raise ValueError("rescaling is defined for t > 0 only")
    return state.t ** (-(n_dim - 2.0) / 4.0) * state.u


def step(bg: Background, state: FlowState, dt: float,
         controls: FlowControls | None = None) -> FlowState:
    """One backward-Euler step of size dt.

    Solves (u+)^N - u^N = dt (n+2)/4 (a_n Lap u+ - R0 u+) by damped Newton
    with the outer node pinned; raises StepRejected on divergence or loss
    of positivity so the caller can halve dt.
    """
    if dt <= 0.0 or not np.isfinite(dt):
        raise ValueError("dt must be positive and finite")
    controls = controls or FlowControls()
    op = bg.operator
    sub, dia, sup = op.tridiagonal()
    N = bg.N
    kappa = (bg.n_dim + 2.0) / 4.0
    bc = controls.boundary_value
    u_old_pow = state.u**N
    scale = 1.0 / (dt * kappa)  # keeps residual roundoff at the operator scale

    def residual(u):
        out = scale * (u**N - u_old_pow) + dia * u
        out[:-1] += sup[:-1] * u[1:]
        out[1:] += sub[1:] * u[:-1]
        out[-1] = u[-1] - bc
        return out

    u = state.u.copy()
    u[-1] = bc

    def jacobian(u):
        jdia = scale * N * u ** (N - 1.0) + dia
        jsub = sub.copy()
        jdia[-1] = 1.0
        jsub[-1] = 0.0
        return jsub, jdia, sup

    noise = 64.0 * np.finfo(float).eps * (float(np.max(np.abs(dia)))
                                          + scale * N * max(1.0, float(np.max(state.u))) ** N)
    u = _implicit_newton(residual, jacobian, u, noise, controls)
    return FlowState(t=state.t + dt, u=u, step_index=state.step_index + 1)


def _implicit_newton(residual, jacobian, u, noise_scale, controls):
    """Damped Newton for one implicit step; raises StepRejected on failure.

    Converges on a small update or on stalling at the residual roundoff
    floor (an already-converged initial state must not look like a
    divergence).
    """
    F = residual(u)
    for _ in range(controls.newton_max_iter):
        jsub, jdia, jsup = jacobian(u)
        delta = _solve_tridiag(jsub, jdia, jsup, -F)
        tol_u = controls.newton_tol * max(1.0, float(np.max(u)))
        if float(np.max(np.abs(delta))) <= tol_u:
            if np.min(u + delta) > 0.0:
                u = u + delta
            if np.min(u) <= 0.0:
                raise StepRejected("step lost positivity")
            return u
        norm_f = float(np.max(np.abs(F)))
        alpha = 1.0
        accepted = False
        for _ in range(controls.max_halvings):
            cand = u + alpha * delta
            if np.min(cand) <= 0.0:
                alpha *= 0.5
                continue
            Fc = residual(cand)
            norm_c = float(np.max(np.abs(Fc)))
            if norm_c < norm_f or norm_c == 0.0:
                u, F = cand, Fc
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if norm_f <= noise_scale * max(1.0, float(np.max(u))) and np.min(u) > 0.0:
                return u
            raise StepRejected("Newton damping exhausted")
    raise StepRejected("Newton did not converge within the iteration cap")


def _step_log(bg: Background, state: FlowState, ratio: float,
              controls: FlowControls) -> FlowState:
    """One implicit exponential step of the log-time flow, t -> ratio*t.

    In s = log t the rescaled factor v obeys d/ds v^N = -kappa v^N (1 + Rt)
    with Rt = v^-N L v (scalar curvature times t).  The implicit
    integrating-factor step (v+)^N = v^N exp(-kappa ds (1 + Rt+)) is solved
    in log form.  It is exact on stationary flat data (Rt = 0), its fixed
    points are exactly the discrete steady profiles (Rt = -1), and the
    rescaled flow is nonincreasing precisely where the discrete curvature
    bound Rt >= -1 holds, with no O(ds^2) drift in either property.
    """
    if ratio <= 1.0 or not np.isfinite(ratio):
        raise ValueError("log step needs ratio > 1")
    controls = controls or FlowControls()
    op = bg.operator
    sub, dia, sup = op.tridiagonal()
    N = bg.N
    n = bg.n_dim
    kappa = (n + 2.0) / 4.0
    ds = math.log(ratio)
    t_new = state.t * ratio
    w = state.t ** (-(n - 2.0) / 4.0) * state.u      # current rescaled factor
    log_w = np.log(w)
    bc = controls.boundary_value * t_new ** (-(n - 2.0) / 4.0)
    scale = 1.0 / (ds * kappa)

    def residual(v):
        vpow = v**N
        lv = dia * v
        lv[:-1] += sup[:-1] * v[1:]
        lv[1:] += sub[1:] * v[:-1]
        out = scale * N * (np.log(v) - log_w) + 1.0 + lv / vpow
        out[-1] = v[-1] - bc
        return out

    def jacobian(v):
        vpow = v**N
        lv = dia * v
        lv[:-1] += sup[:-1] * v[1:]
        lv[1:] += sub[1:] * v[:-1]
        jdia = scale * N / v + (dia - N * lv / v) / vpow
        jsub = sub.copy()
        jsub[1:] = sub[1:] / vpow[1:]
        jsup = sup.copy()
        jsup[:-1] = sup[:-1] / vpow[:-1]
        jdia[-1] = 1.0
        jsub[-1] = 0.0
        return jsub, jdia, jsup

    v = w.copy()
    v[-1] = bc
    noise = 64.0 * np.finfo(float).eps * (float(np.max(np.abs(dia) / w ** (N - 1.0)))
                                          + scale * N)
    v = _implicit_newton(residual, jacobian, v, noise, controls)
    u_new = t_new ** ((n - 2.0) / 4.0) * v
    return FlowState(t=t_new, u=u_new, step_index=state.step_index + 1)


def _checkpoint_times(t_end: float) -> list[float]:
    times = []
    k = 0
    while 2.0**k <= t_end * (1.0 + 1e-12):
        times.append(min(2.0**k, t_end))
        k += 1
    if not times or times[-1] < t_end:
        times.append(t_end)
    return times


def _summary_row(bg: Background, state: FlowState):
    n = bg.n_dim
    R = conformal_scalar_curvature(bg, state.u)
    core = bg.grid.mask_within(bg.k_radius)
    u_core = state.u[core]
    return (
        state.t,
        float(np.max(state.u)),
        float(np.max(state.u)) * state.t ** (-(n - 2.0) / 4.0),
        float(np.min(R)) * state.t,
        float(np.max(u_core) / np.min(u_core)),
    )


def _time_grid(t_end: float, controls: FlowControls):
    """Step times: uniform warmup, then a constant log-ratio within each
    checkpoint segment (ratio <= 1 + eta).

    Keeping the log-step constant between checkpoints matters: the rescaled
    flow's discrete attractor depends on the log-step, so jittering it near
    the attractor would break monotonicity at second order.
    """
    warm_end = min(controls.warmup_until, t_end)
    m_warm = max(1, round(warm_end / controls.dt_warmup))
    times = list(np.linspace(0.0, warm_end, m_warm + 1)[1:])
    times[-1] = warm_end
    targets = [t for t in _checkpoint_times(t_end) if t > warm_end * (1.0 + 1e-12)]
    segment_start = warm_end
    log_step = math.log1p(controls.eta)
    for target in targets:
        m = max(1, math.ceil(math.log(target / segment_start) / log_step - 1e-12))
        ratio = (target / segment_start) ** (1.0 / m)
        seg = segment_start * ratio ** np.arange(1, m + 1)
        times.extend(seg[:-1])
        times.append(target)
        segment_start = target
    return times


def run(bg: Background, t_end: float, controls: FlowControls | None = None,
        initial: np.ndarray | None = None) -> Trajectory:
    """Integrate from t = 0 to t_end, logging summaries and dyadic checkpoints."""
    if t_end < 1.0:
        raise ValueError("t_end must be at least 1")
    controls = controls or FlowControls()
    u0 = np.full(bg.grid.num_nodes, controls.boundary_value) if initial is None \
        else np.asarray(initial, dtype=float).copy()
    state = FlowState(t=0.0, u=u0, step_index=0)
    initial_state = FlowState(t=0.0, u=u0.copy(), step_index=0)

    cp_times = set(round(t, 12) for t in _checkpoint_times(t_end))
    checkpoints: list[FlowState] = []
    rows = []
    aborted = False
    warm_end = min(controls.warmup_until, t_end)

    for target in _time_grid(t_end, controls):
        if target <= warm_end * (1.0 + 1e-12):
            state, aborted = _advance_to(bg, state, target, controls)
        else:
            state, aborted = _advance_to_log(bg, state, target, controls)
        if aborted:
            break
        if round(target, 12) in cp_times:
            checkpoints.append(FlowState(target, state.u.copy(), state.step_index))
        rows.append(_summary_row(bg, state))

    summary = {name: np.array([row[i] for row in rows])
               for i, name in enumerate(SUMMARY_COLUMNS)}
    return Trajectory(background=bg, checkpoints=checkpoints, summary=summary,
                      controls=controls, initial=initial_state, aborted=aborted)


def _advance_to(bg, state, target, controls):
    """Advance to the target time, halving rejected steps; (state, aborted)."""
    while state.t < target * (1.0 - 1e-13):
        dt = target - state.t
        while True:
            try:
                state = step(bg, state, dt, controls)
                break
            except StepRejected:
                dt *= 0.5
                if dt < controls.dt_min:
                    return state, True
    return replace(state, t=target), False


def _advance_to_log(bg, state, target, controls):
    """Advance with log-time steps, square-rooting rejected ratios."""
    while state.t < target * (1.0 - 1e-13):
        ratio = target / state.t
        while True:
            try:
                state = _step_log(bg, state, ratio, controls)
                break
            except StepRejected:
                ratio = math.sqrt(ratio)
                if (ratio - 1.0) * state.t < controls.dt_min:
                    return state, True
    return replace(state, t=target), False


@dataclass
class ConformalFlowResult:
    """Flows attached to the conformally changed background.

    u_transplant starts from 1/rho and equals the original flow divided by
    rho; v starts from 1; v_lower/v_upper start from the constant min/max
    of 1/rho and bound the transplant at matched times.
    """

    background: Background
    factor: np.ndarray
    u_transplant: Trajectory
    v: Trajectory
    v_lower: Trajectory
    v_upper: Trajectory
    bounds: tuple[float, float]


def run_conformal(bg: Background, factor, t_end: float,
                  controls: FlowControls | None = None) -> ConformalFlowResult:
    """Run the flow in the factor-composed background.

    `factor` is a conformal factor with factor(r_max) = 1, typically from
    prescribe_scalar_curvature.
    """
    controls = controls or FlowControls()
    rho = factor.values if isinstance(factor, EllipticSolution) else np.asarray(factor, dtype=float)
    bg_rho = conformal_background(bg, rho)
    inv = 1.0 / rho
    b, B = float(np.min(inv)), float(np.max(inv))
    u_traj = run(bg_rho, t_end, replace(controls, boundary_value=float(inv[-1])), initial=inv)
    v_traj = run(bg_rho, t_end, replace(controls, boundary_value=1.0))
    vb_traj = run(bg_rho, t_end, replace(controls, boundary_value=b),
                  initial=np.full(bg.grid.num_nodes, b))
    vB_traj = run(bg_rho, t_end, replace(controls, boundary_value=B),
                  initial=np.full(bg.grid.num_nodes, B))
    return ConformalFlowResult(bg_rho, rho, u_traj, v_traj, vb_traj, vB_traj, (b, B))


class ScaledTrajectory:
    """View of a trajectory under v_c(x, t) = c v(x, c^(-4/(n-2)) t).

    At times c^(4/(n-2)) t_k the view is exact; elsewhere it interpolates
    checkpoints monotonically in log t.
    """

    def __init__(self, traj: Trajectory, c: float):
        if c <= 0.0:
            raise ValueError("scaling constant must be positive")
        self.traj = traj
        self.c = float(c)
        n = traj.background.n_dim
        self.time_scale = c ** (4.0 / (n - 2.0))
        self._times = np.array([s.t for s in traj.checkpoints])
        self.times = self.time_scale * self._times
        self._interp = None

    def at(self, t: float) -> np.ndarray:
        base_t = t / self.time_scale
        hits = np.nonzero(np.isclose(self._times, base_t, rtol=1e-9, atol=0.0))[0]
        if hits.size:
            return self.c * self.traj.checkpoints[int(hits[0])].u
        if base_t < self._times[0] or base_t > self._times[-1]:
            raise ValueError(f"time {t} is outside the scaled trajectory horizon")
        if self._interp is None:
            values = np.stack([s.u for s in self.traj.checkpoints])
            self._interp = PchipInterpolator(np.log(self._times), values, axis=0)
        return self.c * self._interp(math.log(base_t))


def scale_solution(traj: Trajectory, c: float) -> ScaledTrajectory:
    """Reparametrized scaling family of a computed flow."""
    return ScaledTrajectory(traj, c)
