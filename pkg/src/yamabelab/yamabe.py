"""Sign and bracket of the Yamabe quotient from discrete Rayleigh minimization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .background import Background


class MinimizationFailure(RuntimeError):
    """Inner quotient minimization did not converge within the iteration cap."""


@dataclass
class YamabeEstimate:
    sign: str                 # negative / zero_band / positive
    lower: float
    upper: float
    witness: np.ndarray       # test function attaining `upper`
    ball_radii: list[float]

    def __post_init__(self):
        if self.lower > self.upper + 1e-12 * max(1.0, abs(self.upper)):
            raise ValueError("lower bracket end exceeds upper")
        if self.sign not in ("negative", "zero_band", "positive"):
            raise ValueError(f"unknown sign {self.sign!r}")


class _BallQuotient:
    """Discrete conformal energy over test functions vanishing outside a ball."""

    def __init__(self, bg: Background, radius: float):
        op = bg.operator
        nodes = bg.grid.nodes
        self.idx = np.nonzero(nodes < radius)[0]
        if self.idx.size < 8:
            raise ValueError(f"ball of radius {radius} holds too few nodes")
        k = self.idx[-1] + 1
        # Stiffness restricted to Dirichlet data: faces 0..k-1 reach node k once.
        self.cond = op.cond[:k]
        self.vol = op.vol[:k]
        self.R0 = op.R0[:k]
        self.p = 2.0 * bg.n_dim / (bg.n_dim - 2.0)

    def energy(self, v):
        dv = np.diff(np.concatenate([v, [0.0]]))  # Dirichlet face into node k
        return float(np.sum(self.cond * dv * dv) + np.sum(self.vol * self.R0 * v * v))

    def normalize(self, v):
        p_mass = np.sum(self.vol * np.abs(v) ** self.p)
        if p_mass <= 0.0:
            raise ValueError("test function vanishes")
        return v / p_mass ** (1.0 / self.p)

    def quotient(self, v):
        v = self.normalize(v)
        return self.energy(v)

    def gradient(self, v):
        """Gradient of the quotient at a p-normalized v."""
        g = self.vol * self.R0 * v
        dv = np.diff(np.concatenate([v, [0.0]]))
        flux = self.cond * dv
        g[0] -= flux[0]
        g[1:] += flux[:-1] - flux[1:]
        # g now equals the volume-weighted operator applied to v on the ball
        q = self.energy(v)
        return 2.0 * (g - q * self.vol * np.abs(v) ** (self.p - 2.0) * v)


def _ball_operator(bg: Background, radius: float):
    """Symmetric tridiagonal of the volume-weighted operator on nodes r < radius."""
    op = bg.operator
    nodes = bg.grid.nodes
    idx = np.nonzero(nodes < radius)[0]
    k = idx.size
    if k < 8:
        raise ValueError(f"ball of radius {radius} holds too few nodes")
    cond = op.cond
    vol = op.vol[:k]
    dia = op.R0[:k].copy()
    dia[0] += cond[0] / vol[0]
    dia[1:] += (cond[: k - 1] + cond[1:k]) / vol[1:]
    off = -cond[: k - 1] / np.sqrt(vol[:-1] * vol[1:])
    return dia, off, vol


def _smallest_dirichlet_eigen(bg: Background, radius: float):
    dia, off, vol = _ball_operator(bg, radius)
    vals, vecs = eigh_tridiagonal(dia, off, select="i", select_range=(0, 0))
    vec = vecs[:, 0] / np.sqrt(vol)
    vec = vec * np.sign(vec[np.argmax(np.abs(vec))])
    return float(vals[0]), vec


def _minimize_quotient(quot: _BallQuotient, seeds, stall_tol: float = 1e-9,
                       max_iter: int = 300):
    """Normalized gradient descent with backtracking from several seeds.

    Any iterate gives a valid upper bound, so termination is by stall: the
    line search finding no decrease, or the decrease rate flattening out.
    A run that is still descending fast at the iteration cap is reported
    as a failure rather than silently truncated.
    """
    best_q, best_v = np.inf, None
    for seed in seeds:
        v = quot.normalize(np.array(seed, dtype=float))
        q = quot.energy(v)
        step_scale = 1.0
        converged = False
        recent = q
        for it in range(max_iter):
            g = quot.gradient(v)
            gnorm = float(np.max(np.abs(g)))
            if gnorm <= 1e-13 * max(1.0, abs(q)):
                converged = True
                break
            alpha = step_scale / max(gnorm, 1e-30)
            improved = False
            for _ in range(60):
                cand = quot.normalize(v - alpha * g)
                qc = quot.quotient(cand)
                if qc < q - 1e-15 * max(1.0, abs(q)):
                    v, q = cand, qc
                    improved = True
                    step_scale = min(max(step_scale, alpha * gnorm) * 2.0, 1e8)
                    break
                alpha *= 0.5
            if not improved:
                converged = True  # stationary to line-search resolution
                break
            if (it + 1) % 25 == 0:
                if recent - q <= stall_tol * max(1.0, abs(q)):
                    converged = True
                    break
                recent = q
        if not converged and recent - q > 1e-2 * max(1.0, abs(q)):
            raise MinimizationFailure(
                f"quotient minimization still descending after {max_iter} iterations"
            )
        if q < best_q:
            best_q, best_v = q, v
    return best_q, best_v


def estimate_yamabe(bg: Background, tol: float, ball_radii=None,
                    rng_seed: int = 0) -> YamabeEstimate:
    """Bracket the sign of the Yamabe quotient.

    Minimizes the critical-norm Rayleigh quotient over radial test
    functions vanishing outside growing balls (gradient descent, gaussian
    seeds of three widths plus the running witness and the ground
    Dirichlet eigenvector).  The smallest Dirichlet eigenvalue on the
    largest ball certifies the sign: a nonnegative ground state makes the
    quotient form nonnegative on the tested class (lower = 0), a negative
    one forces a negative quotient at its eigenvector.
    """
    if tol <= 0.0:
        raise ValueError("tolerance must be positive")
    r_max = bg.grid.r_max
    if ball_radii is None:
        ball_radii = []
        radius = max(bg.k_radius, 5.0)
        while radius <= r_max / 2.0:
            ball_radii.append(radius)
            radius *= 2.0
        if not ball_radii:
            ball_radii = [r_max / 2.0]
    ball_radii = sorted(float(r) for r in ball_radii)

    rng = np.random.default_rng(rng_seed)
    nodes = bg.grid.nodes
    upper = np.inf
    witness_full = None
    uppers = []
    for radius in ball_radii:
        quot = _BallQuotient(bg, radius)
        sub_nodes = nodes[quot.idx]
        widths = [radius / 8.0, radius / 3.0, radius / 1.5]
        seeds = [np.exp(-((sub_nodes / w) ** 2)) for w in widths]
        if witness_full is not None:
            seeds.append(witness_full[quot.idx])
        lam_ball, vec_ball = _smallest_dirichlet_eigen(bg, radius)
        seeds.append(vec_ball)
        order = rng.permutation(len(seeds))
        q_ball, v_ball = _minimize_quotient(quot, [seeds[i] for i in order])
        uppers.append(q_ball)
        if q_ball < upper:
            upper = q_ball
            witness_full = np.zeros_like(nodes)
            witness_full[quot.idx] = v_ball

    lam_largest, _ = _smallest_dirichlet_eigen(bg, ball_radii[-1])
    if lam_largest >= 0.0:
        lower = 0.0
        certified_nonnegative = True
    else:
        lower = upper
        certified_nonnegative = False

    if upper < -tol:
        sign = "negative"
    elif certified_nonnegative and upper > tol:
        sign = "positive"
    else:
        sign = "zero_band"
    estimate = YamabeEstimate(sign=sign, lower=min(lower, upper), upper=upper,
                              witness=witness_full, ball_radii=list(ball_radii))
    estimate.per_ball_upper = uppers
    estimate.ground_eigenvalue = lam_largest
    return estimate


def quotient_value(bg: Background, v, radius: float | None = None) -> float:
    """Rayleigh quotient of a radial test function (optionally ball-restricted)."""
    radius = bg.grid.r_max / 2.0 if radius is None else radius
    quot = _BallQuotient(bg, radius)
    return quot.quotient(np.asarray(v, dtype=float)[quot.idx])
