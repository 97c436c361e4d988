"""Steady-state and conformal-change elliptic solves with decaying far fields."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal, solve_banded

from .background import Background
from .grid import RadialGrid


class SolverError(RuntimeError):
    """Base class for elliptic/flow solver failures (CLI exit code 2)."""


class NewtonDivergence(SolverError):
    pass


class TrivialSolution(SolverError):
    pass


class SingularSystem(SolverError):
    pass


@dataclass
class EllipticSolution:
    values: np.ndarray
    residual_sup: float
    decay_exponent: float
    newton_iters: int
    equation_tag: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values <= 0):
            raise SolverError("elliptic solution must be strictly positive")


def _solve_tridiag(sub, dia, sup, rhs):
    ab = np.zeros((3, dia.size))
    ab[0, 1:] = sup[:-1]
    ab[1] = dia
    ab[2, :-1] = sub[1:]
    return solve_banded((1, 1), ab, rhs)


def _damped_newton(residual, jacobian, u0, tol, noise_scale=0.0, max_iter=200,
                   max_halvings=50, require_positive=True):
    """Newton with residual-decrease damping; returns (u, sup-res, iters).

    `noise_scale` is the roundoff floor of one residual evaluation per unit
    solution amplitude (of order eps * max row weight); iterates stuck at
    that floor count as converged.
    """
    u = np.array(u0, dtype=float)
    F = residual(u)
    norm = float(np.max(np.abs(F)))

    def floor(v):
        return max(tol, noise_scale * max(1.0, float(np.max(np.abs(v)))))

    for it in range(max_iter):
        if norm <= floor(u):
            return u, norm, it
        sub, dia, sup = jacobian(u)
        delta = _solve_tridiag(sub, dia, sup, -F)
        alpha = 1.0
        accepted = False
        for _ in range(max_halvings):
            cand = u + alpha * delta
            if require_positive and np.min(cand) <= 0.0:
                alpha *= 0.5
                continue
            Fc = residual(cand)
            norm_c = float(np.max(np.abs(Fc)))
            if norm_c < norm:
                u, F, norm = cand, Fc, norm_c
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if norm <= floor(u):
                return u, norm, it
            raise NewtonDivergence(f"damping exhausted at residual {norm:.3e}")
    if norm <= floor(u):
        return u, norm, max_iter
    raise NewtonDivergence(f"no convergence in {max_iter} iterations, residual {norm:.3e}")


def _residual_noise_scale(dia) -> float:
    """Roundoff floor of a tridiagonal residual row per unit amplitude."""
    return 8.0 * np.finfo(float).eps * float(np.max(np.abs(dia)))


def fit_decay_exponent(grid: RadialGrid, f, window) -> float:
    """Least-squares slope of log f against log r over the window, negated."""
    lo, hi = float(window[0]), float(window[1])
    if lo < grid.r_max / 10.0 * (1.0 - 1e-9) or hi > grid.r_max * (1.0 + 1e-9):
        raise ValueError("fit window must lie inside [r_max/10, r_max]")
    f = np.asarray(f, dtype=float)
    mask = (grid.nodes >= lo) & (grid.nodes <= hi)
    if mask.sum() <= 3:
        raise ValueError("fit window must contain more than 3 nodes")
    if np.any(f[mask] <= 0):
        raise ValueError("samples must be positive on the fit window")
    slope = np.polyfit(np.log(grid.nodes[mask]), np.log(f[mask]), 1)[0]
    return float(-slope)


def _smooth(values, passes=3):
    out = np.array(values, dtype=float)
    for _ in range(passes):
        out[1:-1] = 0.25 * out[:-2] + 0.5 * out[1:-1] + 0.25 * out[2:]
    return out


def solve_steady_negative(bg: Background, tol: float = 1e-9) -> EllipticSolution:
    """Positive decaying solution of L u = -u^N (constant curvature -1).

    Robin far field selects the r^(2-n) mode; regularity at the origin is
    built into the operator rows.  Valid for backgrounds with a negative
    Yamabe quotient.
    """
    op = bg.operator
    sub, dia, sup = op.robin_system()
    N = bg.N

    def residual(u):
        out = dia * u + u**N
        out[:-1] += sup[:-1] * u[1:]
        out[1:] += sub[1:] * u[:-1]
        return out

    def jacobian(u):
        return sub, dia + N * u ** (N - 1.0), sup

    guess = np.maximum(_smooth(np.maximum(-bg.R0, 0.0) ** ((bg.n_dim - 2.0) / 4.0)), 1e-6)
    u, res, iters = _damped_newton(residual, jacobian, guess, tol,
                                   noise_scale=_residual_noise_scale(dia))
    if float(np.max(u)) < 1e-8:
        raise TrivialSolution("steady solve collapsed to zero; background admits no positive solution")
    decay = fit_decay_exponent(bg.grid, u, (bg.grid.r_max / 10.0, bg.grid.r_max))
    return EllipticSolution(u, res, decay, iters, "steady_negative")


def solve_harmonic_decay(bg: Background, tol: float = 1e-9,
                         singular_ratio: float = 1e-3,
                         method: str = "eigen") -> EllipticSolution:
    """Positive decaying solution of L w = 0, normalized to max 1 on the core.

    Exists only when the Robin-closed operator is (numerically) singular,
    i.e. the background carries an exact zero Yamabe quotient.  Two solver
    paths are provided: the ground eigenvector of the volume-symmetrized
    tridiagonal ('eigen') and inverse iteration on the same symmetrized
    operator ('inverse'); both must agree up to scale.
    """
    op = bg.operator
    sub, dia, sup = op.robin_system()
    vol = op.vol

    # Volume-weighted symmetrization keeps the problem tridiagonal.
    tdia = dia
    toff = sup[:-1] * np.sqrt(vol[:-1] / vol[1:])
    vals = eigh_tridiagonal(tdia, toff, select="i", select_range=(0, 1),
                            eigvals_only=True)
    lam0, lam1 = float(vals[0]), float(vals[1])
    if not (abs(lam0) <= singular_ratio * abs(lam1)):
        raise SingularSystem(
            f"no decaying kernel: ground eigenvalue {lam0:.3e} is not small "
            f"against the spectral scale {lam1:.3e}"
        )

    if method == "eigen":
        _, vecs = eigh_tridiagonal(tdia, toff, select="i", select_range=(0, 0))
        y = vecs[:, 0]
    elif method == "inverse":
        y = np.ones(dia.size) / math.sqrt(dia.size)
        for _ in range(4):
            y = _solve_tridiag(np.concatenate([[0.0], toff]), tdia,
                               np.concatenate([toff, [0.0]]), y)
            y = y / np.linalg.norm(y)
    else:
        raise ValueError(f"unknown method {method!r}")
    w = y / np.sqrt(vol)

    w = w * np.sign(w[np.argmax(np.abs(w))])
    if np.any(w <= 0):
        raise SingularSystem("kernel profile is not positive; background not admissible")
    core = bg.grid.mask_within(bg.k_radius)
    w = w / np.max(w[core])
    res = float(np.max(np.abs(op.apply(w)[:-1])))
    decay = fit_decay_exponent(bg.grid, w, (bg.grid.r_max / 10.0, bg.grid.r_max))
    return EllipticSolution(w, res, decay, 0, "harmonic_decay")


def solve_yamabe_profile(bg: Background, sign: str, y_bracket=None,
                         tol: float = 1e-9) -> EllipticSolution:
    """Canonical decaying profile for the compactified conformal problem.

    Negative sign: the constant-curvature -1 solution, rescaled by
    |Y|^(-(n-2)/4) when a numerical bracket for Y is supplied.  Zero sign:
    the decaying harmonic profile.
    """
    if sign == "negative":
        sol = solve_steady_negative(bg, tol=tol)
        values = sol.values
        if y_bracket is not None:
            y = 0.5 * (float(y_bracket[0]) + float(y_bracket[1]))
            if y >= 0:
                raise ValueError("negative-sign profile needs a negative bracket")
            values = values * abs(y) ** (-(bg.n_dim - 2.0) / 4.0)
        return EllipticSolution(values, sol.residual_sup, sol.decay_exponent,
                                sol.newton_iters, "yamabe_profile")
    if sign == "zero_band":
        sol = solve_harmonic_decay(bg, tol=tol)
        return EllipticSolution(sol.values, sol.residual_sup, sol.decay_exponent,
                                sol.newton_iters, "yamabe_profile")
    raise ValueError(f"profile defined for negative/zero_band signs only, got {sign!r}")


def prescribe_scalar_curvature(bg: Background, r_target, tol: float = 1e-9) -> EllipticSolution:
    """Conformal factor rho, rho(r_max)=1, with R(rho-metric) = r_target.

    r_target must be nonpositive and supported inside the core set.
    Newton on L rho = r_target rho^N with a Dirichlet far condition.
    """
    r_target = np.asarray(r_target, dtype=float)
    if r_target.shape != bg.grid.nodes.shape:
        raise ValueError("target curvature needs one sample per node")
    if np.any(r_target > 0):
        raise ValueError("target curvature must be nonpositive")
    outside = bg.grid.nodes > bg.k_radius
    if np.any(r_target[outside] != 0.0):
        raise ValueError("target curvature must be supported in r <= k_radius")

    op = bg.operator
    sub, dia, sup = op.dirichlet_system()
    N = bg.N

    def residual(rho):
        out = dia * rho - r_target * rho**N
        out[:-1] += sup[:-1] * rho[1:]
        out[1:] += sub[1:] * rho[:-1]
        out[-1] = rho[-1] - 1.0
        return out

    def jacobian(rho):
        jdia = dia - N * r_target * rho ** (N - 1.0)
        jdia[-1] = 1.0
        return sub, jdia, sup

    rho, res, iters = _damped_newton(residual, jacobian, np.ones(bg.grid.num_nodes), tol,
                                     noise_scale=_residual_noise_scale(dia))
    if np.max(np.abs(rho - 1.0)) < 100.0 * tol:
        decay = float("nan")  # identity change, no tail to fit
    else:
        decay = fit_decay_exponent(bg.grid, np.abs(rho - 1.0) + 1e-300,
                                   (bg.grid.r_max / 10.0, bg.grid.r_max / 2.0))
    return EllipticSolution(rho, res, decay, iters, "prescribed_curvature")
