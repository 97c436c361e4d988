"""Radial conformally flat backgrounds and their discrete conformal Laplacians.

A background is the pair (U0, R0) on a radial grid: U0 is the conformal
factor of the base metric over flat space and R0 the scalar-curvature
potential entering the operator -a_n*Lap + R0.  Catalog entries either
derive R0 from U0 (consistent backgrounds) or prescribe R0 directly
(synthetic backgrounds used to realize nonpositive Yamabe quotients,
which no globally positive radial factor can produce).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .grid import RadialGrid


def sphere_area(n_dim: int) -> float:
    """Surface measure of the unit (n-1)-sphere."""
    return 2.0 * math.pi ** (n_dim / 2.0) / math.gamma(n_dim / 2.0)


def conformal_coupling(n_dim: int) -> float:
    """a_n = 4(n-1)/(n-2)."""
    return 4.0 * (n_dim - 1) / (n_dim - 2)


def critical_exponent(n_dim: int) -> float:
    """N = (n+2)/(n-2)."""
    return (n_dim + 2.0) / (n_dim - 2.0)


def _flat_face_weights(grid: RadialGrid) -> np.ndarray:
    """Flat-metric face weights r^(n-1) at cell interfaces.

    Midpoint weights are exact on quadratics, which is what regularity at
    the origin needs; the box-integral weights are exact on the decaying
    harmonic r^(2-n), which keeps far fields clean on coarse graded tails
    but degrades where h ~ r.  A smooth morph uses midpoint below r = 1
    and the harmonic-exact weight from r = 2 outward.
    """
    r = grid.nodes
    n = grid.n_dim
    h = np.diff(r)
    mid = 0.5 * (r[:-1] + r[1:])
    w_mid = mid ** (n - 1)
    w_harm = w_mid.copy()
    inner, outer = r[1:-1], r[2:]
    w_harm[1:] = (n - 2.0) * h[1:] / (inner ** (2.0 - n) - outer ** (2.0 - n))
    s = _smoothstep(mid - 1.0)
    return w_mid + s * (w_harm - w_mid)


def _flat_cell_volumes(grid: RadialGrid) -> np.ndarray:
    """Exact integrals of r^(n-1) over the finite-volume cells."""
    r = grid.nodes
    n = grid.n_dim
    mid = 0.5 * (r[:-1] + r[1:])
    edges = np.concatenate([[0.0], mid, [r[-1]]])
    return (edges[1:] ** n - edges[:-1] ** n) / n


class ConformalLaplacian:
    """Tridiagonal form of L = -a_n * Lap_{g0} + R0 on a radial grid.

    Rows are finite-volume flux balances, self-adjoint with respect to the
    g0 cell volumes; row 0 encodes the zero-flux regularity condition at
    r=0.  The last row treats the exterior flux as zero and is replaced by
    every solver with its own boundary condition; operator evaluations at
    r_max extrapolate instead (see conformal_scalar_curvature).
    """

    def __init__(self, grid, cond, vol, R0, robin_coeff):
        self.grid = grid
        self.cond = np.asarray(cond, dtype=float)          # a_n-weighted face conductances
        self.vol = np.asarray(vol, dtype=float)            # g0 cell volumes
        self.R0 = np.asarray(R0, dtype=float)
        self.robin_coeff = float(robin_coeff)              # decaying-mode flux coefficient
        self.a_n = conformal_coupling(grid.n_dim)
        self.N = critical_exponent(grid.n_dim)

        nn = grid.num_nodes
        sub = np.zeros(nn)
        sup = np.zeros(nn)
        sub[1:] = -self.cond / self.vol[1:]
        sup[:-1] = -self.cond / self.vol[:-1]
        flux = np.zeros(nn)
        flux[:-1] += self.cond
        flux[1:] += self.cond
        dia = flux / self.vol + self.R0
        self._sub, self._dia, self._sup = sub, dia, sup

    @classmethod
    def assemble(cls, grid: RadialGrid, U0, R0) -> "ConformalLaplacian":
        a_n = conformal_coupling(grid.n_dim)
        N = critical_exponent(grid.n_dim)
        omega = sphere_area(grid.n_dim)
        U0 = np.asarray(U0, dtype=float)
        face_u = 0.5 * (U0[:-1] + U0[1:])
        cond = a_n * omega * face_u**2 * _flat_face_weights(grid) / np.diff(grid.nodes)
        vol = omega * U0 ** (N + 1.0) * _flat_cell_volumes(grid)
        robin = a_n * omega * (grid.n_dim - 2.0) * grid.r_max ** (grid.n_dim - 2.0) * U0[-1] ** 2
        return cls(grid, cond, vol, R0, robin)

    def apply(self, f) -> np.ndarray:
        """L f nodewise; the last row assumes zero exterior flux."""
        f = np.asarray(f, dtype=float)
        out = self._dia * f
        out[:-1] += self._sup[:-1] * f[1:]
        out[1:] += self._sub[1:] * f[:-1]
        return out

    def tridiagonal(self):
        """Copies of (sub, dia, sup) for solver-side row surgery."""
        return self._sub.copy(), self._dia.copy(), self._sup.copy()

    def robin_system(self):
        """Rows of L with the decaying-mode Robin condition at r_max.

        The exterior flux is set to the r^(2-n) mode value, which kills the
        constant mode exactly in the linear problem.
        """
        sub, dia, sup = self.tridiagonal()
        dia[-1] += self.robin_coeff / self.vol[-1]
        return sub, dia, sup

    def dirichlet_system(self):
        """Rows of L with an identity last row (value set via the RHS)."""
        sub, dia, sup = self.tridiagonal()
        sub[-1] = 0.0
        dia[-1] = 1.0
        return sub, dia, sup

    def energy(self, v) -> float:
        """Quadratic form: a_n * integral |grad v|^2 + integral R0 v^2."""
        v = np.asarray(v, dtype=float)
        return float(np.sum(self.cond * np.diff(v) ** 2) + np.sum(self.vol * self.R0 * v * v))

    def conjugate(self, rho) -> "ConformalLaplacian":
        """Discrete conformal change: rho^-N L (rho .) as the same structure.

        The conjugated operator is the conformal Laplacian of the
        rho-composed background with curvature rho^-N (L rho); building it
        by conjugation keeps the flow transplant identity exact at the
        discrete level.
        """
        rho = np.asarray(rho, dtype=float)
        R0c = self.apply(rho) / rho**self.N
        R0c[-1] = 2.0 * R0c[-2] - R0c[-3]
        return ConformalLaplacian(
            self.grid,
            self.cond * rho[:-1] * rho[1:],
            self.vol * rho ** (self.N + 1.0),
            R0c,
            self.robin_coeff * rho[-1] ** 2,
        )


@dataclass
class Background:
    """Discrete base geometry (M, g0): conformal factor, curvature, decay data.

    Treated as immutable after construction; arrays are read-only.
    `consistent` records whether R0 is the curvature of U0 over the flat
    base or an independently prescribed potential.
    """

    grid: RadialGrid
    U0: np.ndarray
    R0: np.ndarray
    tau: float
    k_radius: float
    kind: str = "custom"
    params: dict = field(default_factory=dict)
    consistent: bool = True
    operator: ConformalLaplacian | None = None

    def __post_init__(self):
        self.U0 = np.asarray(self.U0, dtype=float)
        self.R0 = np.asarray(self.R0, dtype=float)
        for name, arr in (("U0", self.U0), ("R0", self.R0)):
            if arr.shape != self.grid.nodes.shape:
                raise ValueError(f"{name} needs one sample per grid node")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
        if np.any(self.U0 <= 0):
            raise ValueError("conformal factor U0 must be strictly positive")
        if abs(self.U0[-1] - 1.0) > 1e-6:
            raise ValueError("U0 must equal 1 at the outer boundary to 1e-6")
        self.U0.setflags(write=False)
        self.R0.setflags(write=False)
        if self.operator is None:
            self.operator = ConformalLaplacian.assemble(self.grid, self.U0, self.R0)

    @property
    def n_dim(self) -> int:
        return self.grid.n_dim

    @property
    def a_n(self) -> float:
        return conformal_coupling(self.n_dim)

    @property
    def N(self) -> float:
        return critical_exponent(self.n_dim)

    def spec(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}


def assemble_conformal_laplacian(bg: Background) -> ConformalLaplacian:
    """The background's discrete conformal Laplacian."""
    return bg.operator


def conformal_scalar_curvature(bg: Background, u) -> np.ndarray:
    """Scalar curvature of u^(4/(n-2)) g0, i.e. u^-N (L_{g0} u) nodewise.

    The value at r_max is linearly extrapolated: the finite-volume last row
    carries no exterior flux and is not a consistent operator row.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != bg.grid.nodes.shape:
        raise ValueError("need one sample per grid node")
    if np.any(u <= 0):
        raise ValueError("conformal factor must be strictly positive")
    R = bg.operator.apply(u) / u**bg.N
    R[-1] = 2.0 * R[-2] - R[-3]
    return R


def conformal_background(bg: Background, rho) -> Background:
    """Background conformally changed by rho (the rho-composed base metric)."""
    rho = np.asarray(rho, dtype=float)
    op = bg.operator.conjugate(rho)
    return Background(
        grid=bg.grid,
        U0=bg.U0 * rho,
        R0=op.R0,
        tau=bg.tau,
        k_radius=bg.k_radius,
        kind=bg.kind + "+conformal",
        params=dict(bg.params),
        consistent=False,
        operator=op,
    )


def _fit_tail_order(grid: RadialGrid, deviation: np.ndarray) -> float:
    """Least-squares decay order of |deviation| over its resolvable tail."""
    dev = np.abs(deviation)
    top = dev.max()
    if top == 0.0:
        return float(grid.n_dim - 2)
    mask = (grid.nodes >= 2.0) & (dev > 1e-13 * top)
    if mask.sum() < 4:
        return float(grid.n_dim - 2)
    x = np.log(grid.nodes[mask])
    y = np.log(dev[mask])
    slope = np.polyfit(x, y, 1)[0]
    return float(-slope)


def _smoothstep(x: np.ndarray) -> np.ndarray:
    """C^2 ramp from 0 to 1 on [0, 1]."""
    t = np.clip(x, 0.0, 1.0)
    return t**3 * (10.0 + t * (-15.0 + 6.0 * t))


def _flat(grid: RadialGrid, params: dict) -> Background:
    ones = np.ones(grid.num_nodes)
    return Background(
        grid=grid,
        U0=ones,
        R0=np.zeros(grid.num_nodes),
        tau=float(grid.n_dim - 2),
        k_radius=float(params.get("k_radius", 5.0)),
        kind="flat",
        params=dict(params),
    )


def _gaussian_well(grid: RadialGrid, params: dict) -> Background:
    amplitude = float(params["amplitude"])
    width = float(params["width"])
    if amplitude == 0.0 or width <= 0.0:
        raise ValueError("gaussian_well needs a nonzero amplitude and positive width")
    U0 = 1.0 + amplitude * np.exp(-((grid.nodes / width) ** 2))
    if np.any(U0 <= 0):
        raise ValueError("gaussian_well parameters make U0 nonpositive")
    flat = _flat(grid, {})
    R0 = conformal_scalar_curvature(flat, U0)
    return Background(
        grid=grid,
        U0=U0,
        R0=R0,
        tau=_fit_tail_order(grid, U0 - 1.0),
        k_radius=float(params.get("k_radius", max(2.0 * width, 5.0))),
        kind="gaussian_well",
        params=dict(params),
    )


def _harmonic_tail(grid: RadialGrid, params: dict) -> Background:
    c = float(params["c"])
    r_lo = float(params.get("smooth_from", 1.0))
    r_hi = float(params.get("smooth_to", 2.0))
    r = grid.nodes
    chi = _smoothstep((r - r_lo) / (r_hi - r_lo))
    tail = np.zeros_like(r)
    away = r > 0
    tail[away] = r[away] ** (2.0 - grid.n_dim)
    U0 = 1.0 + c * chi * tail
    if np.any(U0 <= 0):
        raise ValueError("harmonic_tail coefficient makes U0 nonpositive")
    flat = _flat(grid, {})
    R0 = conformal_scalar_curvature(flat, U0)
    return Background(
        grid=grid,
        U0=U0,
        R0=R0,
        tau=_fit_tail_order(grid, U0 - 1.0),
        k_radius=float(params.get("k_radius", 5.0)),
        kind="harmonic_tail",
        params=dict(params),
    )


def _curvature_well(grid: RadialGrid, params: dict) -> Background:
    """Prescribed negative curvature well over a flat conformal factor.

    The potential is independent of U0, which is what makes a genuinely
    negative Yamabe quotient reachable in the radial model.
    """
    depth = float(params["depth"])
    width = float(params["width"])
    if depth <= 0.0 or width <= 0.0:
        raise ValueError("curvature_well needs positive depth and width")
    R0 = -depth * np.exp(-((grid.nodes / width) ** 2))
    return Background(
        grid=grid,
        U0=np.ones(grid.num_nodes),
        R0=R0,
        tau=float(grid.n_dim - 2),
        k_radius=float(params.get("k_radius", max(2.0 * width, 10.0))),
        kind="curvature_well",
        params=dict(params),
        consistent=False,
    )


def _zero_yamabe(grid: RadialGrid, params: dict) -> Background:
    """Background whose conformal Laplacian has an exact decaying kernel.

    Solve the flat Robin problem -a_n Lap phi = m for a compactly
    supported bump m >= 0, then set R0 = -m/phi.  By construction phi > 0,
    phi ~ r^(2-n), and (-a_n Lap + R0) phi = 0 holds exactly in the
    discrete rows, so the generalized Yamabe quotient is exactly zero
    (ground-state representation) with compactly supported R0 <= 0.
    """
    core_width = float(params.get("core_width", 12.0))
    strength = float(params.get("strength", 1.0))
    if core_width <= 0.0 or strength <= 0.0:
        raise ValueError("zero_yamabe needs positive core_width and strength")
    r = grid.nodes
    m = strength * np.clip(1.0 - (r / core_width) ** 2, 0.0, None) ** 3
    flat = _flat(grid, {})
    sub, dia, sup = flat.operator.robin_system()
    ab = np.zeros((3, grid.num_nodes))
    ab[0, 1:] = sup[:-1]
    ab[1] = dia
    ab[2, :-1] = sub[1:]
    phi = solve_banded((1, 1), ab, m)
    if np.any(phi <= 0):
        raise ValueError("zero_yamabe kernel construction produced a nonpositive profile")
    scale = phi[0]
    phi = phi / scale
    m = m / scale
    R0 = np.zeros_like(r)
    support = m > 0
    R0[support] = -m[support] / phi[support]
    return Background(
        grid=grid,
        U0=np.ones(grid.num_nodes),
        R0=R0,
        tau=float(grid.n_dim - 2),
        k_radius=float(params.get("k_radius", 2.0 * core_width)),
        kind="zero_yamabe",
        params=dict(params),
        consistent=False,
    )


_CATALOG = {
    "flat": _flat,
    "gaussian_well": _gaussian_well,
    "harmonic_tail": _harmonic_tail,
    "curvature_well": _curvature_well,
    "zero_yamabe": _zero_yamabe,
}


def make_background(grid: RadialGrid, kind: str, params: dict | None = None) -> Background:
    """Instantiate a catalog background on the given grid."""
    if kind not in _CATALOG:
        raise ValueError(f"unknown background kind {kind!r}; have {sorted(_CATALOG)}")
    return _CATALOG[kind](grid, dict(params or {}))
