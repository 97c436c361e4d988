"""Executable checks over trajectories and elliptic solutions.

Each check is a pure, deterministic function returning a Verdict whose
margin is the signed distance to the pass threshold (margin >= 0 iff the
check passes).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .background import conformal_scalar_curvature
from .elliptic import EllipticSolution
from .flow import FlowState, Trajectory, rescaled, step


@dataclass
class Verdict:
    check_name: str
    passed: bool
    margin: float
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.passed != (self.margin >= 0.0):
            raise ValueError("margin sign must agree with the verdict")

    def to_dict(self) -> dict:
        return {
            "check": self.check_name,
            "passed": bool(self.passed),
            "margin": float(self.margin),
            "details": self.details,
        }


def _verdict(name: str, margin: float, details: dict) -> Verdict:
    margin = float(margin)
    return Verdict(name, margin >= 0.0, margin, details)


def _loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, dtype=float)),
                            np.log(np.asarray(y, dtype=float)), 1)[0])


def _matched_checkpoints(traj_a: Trajectory, traj_b: Trajectory):
    if not np.allclose(traj_a.background.grid.nodes, traj_b.background.grid.nodes):
        raise ValueError("trajectories live on different grids")
    times_b = {round(s.t, 12): s for s in traj_b.checkpoints}
    pairs = [(sa, times_b[round(sa.t, 12)]) for sa in traj_a.checkpoints
             if round(sa.t, 12) in times_b]
    if not pairs:
        raise ValueError("no matched checkpoint times")
    return pairs


def check_stationary(traj: Trajectory, tol: float) -> Verdict:
    """Flat-background sanity: the flow must hold u identically at its boundary value."""
    bc = traj.controls.boundary_value
    dev = float(np.max(np.abs(traj.summary["max_u"] - bc))) if traj.summary["t"].size else 0.0
    for state in traj.checkpoints:
        dev = max(dev, float(np.max(np.abs(state.u - bc))))
    return _verdict("stationary", tol - dev, {"max_deviation": dev, "tol": tol})


def check_curvature_lower(traj: Trajectory, tol: float) -> Verdict:
    """Scalar curvature stays above -1/t: min over logged t >= 1 of R*t >= -(1+tol)."""
    t = traj.summary["t"]
    if t.size == 0:
        raise ValueError("trajectory has an empty summary log")
    mask = t >= 1.0
    if not mask.any():
        raise ValueError("no logged times t >= 1")
    worst = float(np.min(traj.summary["min_Rt"][mask]))
    return _verdict("curvature_lower", worst + 1.0 + tol,
                    {"min_Rt": worst, "tol": tol})


def check_rescaled_monotone(traj: Trajectory, tol: float) -> Verdict:
    """Nodewise nonincrease of the rescaled flow across checkpoints with t >= 1."""
    n = traj.background.n_dim
    states = [s for s in traj.checkpoints if s.t >= 1.0]
    if len(states) < 2:
        raise ValueError("need at least two checkpoints with t >= 1")
    worst = -np.inf
    worst_t = None
    prev = rescaled(states[0], n)
    for state in states[1:]:
        cur = rescaled(state, n)
        rise = float(np.max(cur - prev))
        if rise > worst:
            worst, worst_t = rise, state.t
        prev = cur
    return _verdict("rescaled_monotone", tol - worst,
                    {"worst_rise": worst, "at_t": worst_t, "tol": tol})


def check_comparison(traj_low: Trajectory, traj_high: Trajectory, tol: float) -> Verdict:
    """Ordered initial and boundary data must stay ordered at matched times."""
    worst = float(np.max(traj_low.initial.u - traj_high.initial.u))
    worst_t = 0.0
    for low, high in _matched_checkpoints(traj_low, traj_high):
        gap = float(np.max(low.u - high.u))
        if gap > worst:
            worst, worst_t = gap, low.t
    return _verdict("comparison", tol - worst,
                    {"worst_violation": worst, "at_t": worst_t, "tol": tol})


def check_lower_envelope(traj: Trajectory, steady: EllipticSolution, tol: float,
                         y_bracket=None) -> Verdict:
    """The constant-curvature -1 profile bounds the rescaled flow from below.

    Uses the normalization-free comparison against the direct elliptic
    solve; y_bracket is accepted for interface parity and not needed.
    """
    del y_bracket
    n = traj.background.n_dim
    states = [s for s in traj.checkpoints if s.t >= 1.0]
    if not states:
        raise ValueError("need checkpoints with t >= 1")
    worst = -np.inf
    worst_t = None
    for state in states:
        gap = float(np.max(steady.values - rescaled(state, n)))
        if gap > worst:
            worst, worst_t = gap, state.t
    return _verdict("lower_envelope", tol - worst,
                    {"worst_violation": worst, "at_t": worst_t, "tol": tol})


def check_steady_limit(traj: Trajectory, steady: EllipticSolution, k_radius: float,
                       tol: float, rate_band: float = 0.10,
                       far_tol: float | None = None) -> Verdict:
    """Negative-sign blow-up profile: rescaled limit, rate, and spatial decay.

    Passes iff (a) the rescaled final state matches the steady profile on
    r <= k_radius within tol, (b) the fitted growth exponent of max u over
    the last decade lies within rate_band of (n-2)/4, and (c) the rescaled
    final state at r = r_max/2 has decayed to the pinned far-field level
    within far_tol.  The whole rescaled profile sits above that level
    (boundary value times t^(-(n-2)/4)), which tends to zero; the excess
    over it is what measures the spatial decay of the limit.
    """
    bg = traj.background
    n = bg.n_dim
    final = traj.checkpoints[-1]
    u_tilde = rescaled(final, n)
    core = bg.grid.mask_within(k_radius)
    sup_diff = float(np.max(np.abs(u_tilde[core] - steady.values[core])))

    t = traj.summary["t"]
    mask = t >= final.t / 10.0
    rate = _loglog_slope(t[mask], traj.summary["max_u"][mask])
    target = (n - 2.0) / 4.0
    rate_margin = rate_band * target - abs(rate - target)

    far_tol = tol if far_tol is None else far_tol
    idx = int(np.argmin(np.abs(bg.grid.nodes - bg.grid.r_max / 2.0)))
    far_value = float(u_tilde[idx] - u_tilde[-1])

    margin = min(tol - sup_diff, rate_margin, far_tol - far_value)
    return _verdict("steady_limit", margin, {
        "sup_diff_core": sup_diff,
        "rate_fit": rate,
        "rate_target": target,
        "far_value": far_value,
        "tol": tol,
        "far_tol": far_tol,
    })


def check_rescaled_vanishing(traj: Trajectory, tol: float) -> Verdict:
    """Zero-sign case: the rescaled flow dies out while remaining unbounded.

    max of the rescaled final state must be below tol, and the rescaled
    checkpoint maxima must have at least halved over the last decade.
    """
    n = traj.background.n_dim
    states = [s for s in traj.checkpoints if s.t >= 1.0]
    if len(states) < 2:
        raise ValueError("need at least two checkpoints with t >= 1")
    values = {s.t: float(np.max(rescaled(s, n))) for s in states}
    t_end = states[-1].t
    final_value = values[t_end]
    earlier = [t for t in values if t <= t_end / 10.0]
    if not earlier:
        raise ValueError("no checkpoint a decade before the end")
    decade_value = values[max(earlier)]
    margin = min(tol - final_value, 0.5 * decade_value - final_value)
    return _verdict("rescaled_vanishing", margin, {
        "final_max_rescaled": final_value,
        "decade_earlier": decade_value,
        "tol": tol,
    })


def check_profile_convergence(traj: Trajectory, harmonic: EllipticSolution,
                              k_radius: float, tol: float) -> Verdict:
    """Core-normalized flow profile converges to the decaying harmonic factor."""
    bg = traj.background
    final = traj.checkpoints[-1]
    core = bg.grid.mask_within(k_radius)
    window = bg.grid.mask_within(2.0 * k_radius)
    profile = final.u / float(np.max(final.u[core]))
    sup_diff = float(np.max(np.abs(profile[window] - harmonic.values[window])))
    return _verdict("profile_convergence", tol - sup_diff, {
        "sup_diff": sup_diff,
        "core_norm_max": float(np.max(profile[core])),
        "tol": tol,
    })


def check_harnack(traj: Trajectory, ball_radius: float, cap: float) -> Verdict:
    """sup/inf of the flow on a fixed ball stays bounded with no growth trend."""
    mask = traj.background.grid.mask_within(ball_radius)
    times, ratios = [], []
    for state in traj.checkpoints:
        block = state.u[mask]
        times.append(state.t)
        ratios.append(float(np.max(block) / np.min(block)))
    if not ratios:
        raise ValueError("trajectory has no checkpoints")
    worst = max(ratios)
    t_end = times[-1]
    tail = [i for i, t in enumerate(times) if t >= t_end / 10.0]
    trend = _loglog_slope([times[i] for i in tail], [ratios[i] for i in tail]) \
        if len(tail) >= 3 else 0.0
    return _verdict("harnack", cap - worst, {
        "worst_ratio": worst,
        "trend_slope": trend,
        "ratios": ratios,
        "times": times,
        "cap": cap,
    })


def check_curvature_sandwich(v_traj: Trajectory, tol: float) -> Verdict:
    """-1/t <= R <= 0 along the unit-initial flow on a nonpositive-curvature base."""
    t = v_traj.summary["t"]
    if t.size == 0:
        raise ValueError("trajectory has an empty summary log")
    low = float(np.min(v_traj.summary["min_Rt"])) + 1.0 + tol
    bg = v_traj.background
    worst_up = -np.inf
    for state in v_traj.checkpoints:
        worst_up = max(worst_up, float(np.max(conformal_scalar_curvature(bg, state.u))))
    return _verdict("curvature_sandwich", min(low, tol - worst_up), {
        "min_Rt": float(np.min(v_traj.summary["min_Rt"])),
        "max_R_checkpoints": worst_up,
        "tol": tol,
    })


def check_sandwich_bounds(u_traj: Trajectory, v_low: Trajectory, v_high: Trajectory,
                          tol: float) -> Verdict:
    """Scaled unit-initial flows bound the transplanted flow at matched times."""
    worst = max(float(np.max(v_low.initial.u - u_traj.initial.u)),
                float(np.max(u_traj.initial.u - v_high.initial.u)))
    for u_state, low_state in _matched_checkpoints(u_traj, v_low):
        worst = max(worst, float(np.max(low_state.u - u_state.u)))
    for u_state, high_state in _matched_checkpoints(u_traj, v_high):
        worst = max(worst, float(np.max(u_state.u - high_state.u)))
    return _verdict("sandwich_bounds", tol - worst,
                    {"worst_violation": worst, "tol": tol})


def check_max_on_core(v_traj: Trajectory, k_radius: float) -> Verdict:
    """The unit-initial flow attains its global maximum inside the core set."""
    mask = v_traj.background.grid.mask_within(k_radius)
    margin = np.inf
    worst_t = None
    for state in v_traj.checkpoints:
        gap = float(np.max(state.u[mask]) - np.max(state.u[~mask]))
        if gap < margin:
            margin, worst_t = gap, state.t
    if not np.isfinite(margin):
        raise ValueError("trajectory has no checkpoints")
    return _verdict("max_on_core", margin, {"tightest_gap": margin, "at_t": worst_t})


def check_scalar_evolution(traj: Trajectory, dt_probe: float, min_order: float = 0.9,
                           use_flow_metric: bool = True, probe_time: float = 1.0) -> Verdict:
    """Finite-difference consistency of d/dt R = (n-1) Lap_{g(t)} R + R^2.

    Richardson refinement of the probe step must show order >= min_order.
    With use_flow_metric=False the Laplacian of the *initial* metric is
    used instead of the evolving one: a deliberate-bug control that should
    destroy the order fit.
    """
    bg = traj.background
    n = bg.n_dim
    base = traj.checkpoint_at(probe_time)
    op = bg.operator
    R_base = conformal_scalar_curvature(bg, base.u)
    metric_op = op.conjugate(base.u) if use_flow_metric else op
    lap_R = (metric_op.R0 * R_base - metric_op.apply(R_base)) / bg.a_n
    rhs = (n - 1.0) * lap_R + R_base**2

    interior = bg.grid.mask_within(bg.grid.r_max / 2.0)
    errs = []
    for dt in (dt_probe, 0.5 * dt_probe):
        forward = step(bg, base, dt, traj.controls)
        dR = (conformal_scalar_curvature(bg, forward.u) - R_base) / dt
        errs.append(float(np.max(np.abs((dR - rhs)[interior]))))
    order = float(np.log2(errs[0] / errs[1]))
    return _verdict("scalar_evolution", order - min_order, {
        "errors": errs,
        "order": order,
        "min_order": min_order,
        "flow_metric": use_flow_metric,
    })
