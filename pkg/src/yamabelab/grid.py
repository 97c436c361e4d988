"""Graded radial meshes standing in for rotationally symmetric AF manifolds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# The refined core [0, CORE_RADIUS] must always be resolved at least this
# finely, independent of the grading parameter.
CORE_RADIUS = 2.0
CORE_SPACING = 0.05
MIN_NODES = 64

_RATIO_SLACK = 1.0 + 1e-9


@dataclass(frozen=True)
class RadialGrid:
    """Radii r_0 = 0 < r_1 < ... < r_M = r_max with monotone graded spacing."""

    n_dim: int
    nodes: np.ndarray
    grading: float

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        if self.n_dim < 3 or self.n_dim != int(self.n_dim):
            raise ValueError(f"spatial dimension must be an integer >= 3, got {self.n_dim}")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("grid nodes must be finite")
        if nodes.size < MIN_NODES:
            raise ValueError(f"grid needs at least {MIN_NODES} nodes, got {nodes.size}")
        if nodes[0] != 0.0:
            raise ValueError("first node must sit at r = 0")
        if nodes[-1] <= 1.0:
            raise ValueError("outer radius must exceed 1")
        h = np.diff(nodes)
        if np.any(h <= 0):
            raise ValueError("nodes must be strictly increasing")
        ratio = h[1:] / h[:-1]
        if ratio.size and (ratio.min() < 1.0 / _RATIO_SLACK or ratio.max() > self.grading * _RATIO_SLACK):
            raise ValueError("spacing ratios must lie in [1, grading]")

    @property
    def num_nodes(self) -> int:
        return self.nodes.size

    @property
    def r_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.nodes)

    def mask_within(self, radius: float) -> np.ndarray:
        """Boolean mask of the nodes with r <= radius."""
        return self.nodes <= radius


def _tail_span(h: float, count: int, ratio: float) -> float:
    """Length covered by `count` spacings h*ratio, h*ratio^2, ..."""
    if count <= 0:
        return 0.0
    if ratio == 1.0:
        return h * count
    log_top = count * math.log(ratio)
    if log_top > 700.0:
        return math.inf
    return h * ratio * math.expm1(log_top) / (ratio - 1.0)


def build_grid(n_dim: int, num_nodes: int, r_max: float, grading: float) -> RadialGrid:
    """Build a graded radial mesh on [0, r_max].

    A uniform block of spacing <= CORE_SPACING covers [0, CORE_RADIUS]; the
    remaining intervals grow geometrically with a ratio <= grading chosen so
    the last node lands exactly on r_max.  Rejects parameter combinations
    that cannot keep the core dense.
    """
    for name, value in (("num_nodes", num_nodes), ("r_max", r_max), ("grading", grading)):
        if not np.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value}")
    if n_dim < 3 or int(n_dim) != n_dim:
        raise ValueError(f"spatial dimension must be an integer >= 3, got {n_dim}")
    if num_nodes < MIN_NODES or int(num_nodes) != num_nodes:
        raise ValueError(f"num_nodes must be an integer >= {MIN_NODES}, got {num_nodes}")
    if r_max <= 1.0:
        raise ValueError(f"r_max must exceed 1, got {r_max}")
    if grading < 1.0:
        raise ValueError(f"grading must be >= 1, got {grading}")

    intervals = int(num_nodes) - 1

    if r_max <= CORE_RADIUS or grading == 1.0:
        h = r_max / intervals
        if h > CORE_SPACING * _RATIO_SLACK:
            raise ValueError(
                f"uniform spacing {h:.4g} violates the core density bound {CORE_SPACING}"
            )
        nodes = np.linspace(0.0, r_max, int(num_nodes))
        return RadialGrid(int(n_dim), nodes, float(grading))

    gap = r_max - CORE_RADIUS
    n_core_min = math.ceil(CORE_RADIUS / CORE_SPACING)

    # Largest core count whose geometric tail can reach r_max without the
    # ratio-1 floor overshooting it.  Both the reachable span and the floor
    # grow as n_core shrinks, so the first reachable n_core is the answer.
    chosen = None
    for n_core in range(intervals - 1, n_core_min - 1, -1):
        h = CORE_RADIUS / n_core
        tail = intervals - n_core
        if _tail_span(h, tail, grading) >= gap:
            if h * tail <= gap:
                chosen = n_core
            break
    if chosen is None:
        if r_max / intervals <= CORE_SPACING * _RATIO_SLACK:
            nodes = np.linspace(0.0, r_max, int(num_nodes))
            return RadialGrid(int(n_dim), nodes, float(grading))
        raise ValueError(
            "cannot mesh [0, r_max] with the requested node count while keeping "
            f"spacing <= {CORE_SPACING} on [0, {CORE_RADIUS}]"
        )

    n_core = chosen
    h = CORE_RADIUS / n_core
    tail = intervals - n_core

    # Solve for the exact tail ratio in (1, grading] by bisection.
    lo, hi = 1.0, grading
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _tail_span(h, tail, mid) < gap:
            lo = mid
        else:
            hi = mid
    ratio = hi

    core = np.linspace(0.0, CORE_RADIUS, n_core + 1)
    steps = h * ratio ** np.arange(1, tail + 1)
    nodes = np.concatenate([core, CORE_RADIUS + np.cumsum(steps)])
    nodes[-1] = r_max
    return RadialGrid(int(n_dim), nodes, float(grading))


def weighted_sup_norm(grid: RadialGrid, f, beta: float) -> float:
    """sup over nodes of max(r, 1)^(-beta) * |f(r)|."""
    f = np.asarray(f, dtype=float)
    if f.shape != grid.nodes.shape:
        raise ValueError("need one sample per grid node")
    if not np.all(np.isfinite(f)):
        raise ValueError("samples must be finite")
    weight = np.maximum(grid.nodes, 1.0) ** (-beta)
    return float(np.max(weight * np.abs(f)))
