"""Brute-force duality-gap estimation for scalar-per-node toy problems.

The primal problem is

    minimise   sum_i a_i F_i((1 - a_i) s_i + a_i w_i)
    subject to sum_i a_i r(w_i) <= sum_i a_i K_i,   w_i in [lo_i, hi_i]

with one shared resource constraint (the sum of weighted regularizer
values). The dual relaxes that constraint with a single multiplier
``lam >= 0``. Every quantity is computed on the same finite grid, so the
primal optimum, the dual optimum and the per-node non-convexity are exact
for the discretised problem.

Per-node non-convexity ``Delta_i`` is the largest vertical distance
between the sampled graph of

    F_hat_i(w) = min { g_i(x) : r(x) <= r(w) },   g_i(x) = F_i((1 - a_i) s_i + a_i x)

and its lower convex hull.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError

Loss = Callable[[np.ndarray], np.ndarray]


def _r_value(kind: str, w: np.ndarray) -> np.ndarray:
    if kind == "l1":
        return np.abs(w)
    if kind == "l2":
        return 0.5 * w * w
    raise ConfigError(f"unknown regularizer {kind!r}")


@dataclass(frozen=True)
class ToyNode:
    """One node of a scalar toy problem."""

    loss: Loss
    fraction: float
    shared: float = 0.0
    lower: float = -0.5
    upper: float = 0.5
    bound: float = 0.25

    def objective(self, w: np.ndarray) -> np.ndarray:
        a = self.fraction
        return self.loss((1.0 - a) * self.shared + a * w)


@dataclass
class DualityGapEstimate:
    inf_P1: float
    sup_P2: float
    delta_worst: float
    normalized_gap: float
    bound_2amax: float
    resolution: float
    deltas: list = field(default_factory=list)
    best_lambda: float = 0.0
    degenerate: bool = False

    @property
    def gap(self) -> float:
        return self.inf_P1 - self.sup_P2

    def within_bound(self, slack: float | None = None) -> bool:
        slack = 2 * self.resolution if slack is None else slack
        return -self.resolution <= self.normalized_gap <= self.bound_2amax + slack

    def as_row(self) -> dict:
        return {"inf_P1": self.inf_P1, "sup_P2": self.sup_P2, "delta_worst": self.delta_worst,
                "normalized_gap": self.normalized_gap, "bound_2amax": self.bound_2amax,
                "degenerate": self.degenerate}


def lower_hull(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices of the lower convex hull of points sorted by ``x`` (monotone chain)."""
    hull: list[int] = []
    for k in range(len(x)):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            cross = (x[j] - x[i]) * (y[k] - y[i]) - (y[j] - y[i]) * (x[k] - x[i])
            if cross > 0:
                break
            hull.pop()
        hull.append(k)
    return np.asarray(hull)


def convex_envelope(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Greatest convex minorant of the sampled graph, evaluated on ``x``."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    h = lower_hull(xs, ys)
    env = np.interp(xs, xs[h], ys[h])
    out = np.empty_like(env)
    out[order] = env
    return out


def monotone_restriction(r: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``min { g[k] : r[k] <= r[j] }`` for every grid index ``j``."""
    order = np.argsort(r, kind="stable")
    running = np.minimum.accumulate(g[order])
    # ties in r must share the same value, so take the last entry of each tie run
    rs = r[order]
    last = np.searchsorted(rs, rs, side="right") - 1
    out = np.empty_like(g)
    out[order] = running[last]
    return out


def _pareto(r: np.ndarray, g: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Points not dominated in (smaller r, smaller g)."""
    order = np.lexsort((g, r))
    keep_r, keep_g = [], []
    best = math.inf
    for k in order:
        if g[k] < best - tol:
            keep_r.append(r[k])
            keep_g.append(g[k])
            best = g[k]
    return np.asarray(keep_r), np.asarray(keep_g)


def _minkowski_pareto(a, b, tol):
    r = (a[0][:, None] + b[0][None, :]).ravel()
    g = (a[1][:, None] + b[1][None, :]).ravel()
    # merge points whose budgets agree up to rounding so the frontier stays small
    r = np.round(r / tol) * tol
    return _pareto(r, g, 0.0)


def primal_optimum(r_sets, g_sets, budget: float, tol: float = 1e-12) -> float:
    """Exact minimum of ``sum g`` subject to ``sum r <= budget`` over the grids.

    Each node contributes one (r, g) pair; the frontier of achievable
    (total r, total g) pairs is built by successive Pareto-pruned sums.
    """
    front = _pareto(np.asarray(r_sets[0]), np.asarray(g_sets[0]), 0.0)
    for r, g in zip(r_sets[1:], g_sets[1:]):
        front = _minkowski_pareto(front, _pareto(np.asarray(r), np.asarray(g), 0.0), tol)
    feasible = front[0] <= budget + tol
    if not np.any(feasible):
        raise ConfigError("the toy problem is infeasible for the chosen bounds")
    return float(front[1][feasible].min())


def dual_value(lam: float, r_sets, g_sets, budget: float) -> float:
    return math.fsum(float(np.min(g + lam * r)) for r, g in zip(r_sets, g_sets)) - lam * budget


def dual_optimum(r_sets, g_sets, budget: float, lambda_grid: np.ndarray | None = None):
    """Maximise the concave piecewise-linear dual function.

    It is evaluated on ``lambda_grid`` and on every breakpoint, i.e. the
    negated slopes of each node's lower hull in the (r, g) plane, so the
    returned maximum is exact.
    """
    candidates = [0.0]
    for r, g in zip(r_sets, g_sets):
        rr, gg = _pareto(np.asarray(r), np.asarray(g), 0.0)
        if rr.size > 1:
            h = lower_hull(rr, gg)
            slopes = -np.diff(gg[h]) / np.diff(rr[h])
            candidates.extend(float(s) for s in slopes if s > 0)
    if lambda_grid is not None:
        candidates.extend(float(x) for x in lambda_grid if x >= 0)
    values = [dual_value(lam, r_sets, g_sets, budget) for lam in candidates]
    k = int(np.argmax(values))
    return values[k], candidates[k]


def estimate_duality_gap(nodes: Sequence[ToyNode], regularizer: str = "l1",
                         resolution: float = 1e-3, max_points: int = 1001,
                         lambda_grid: np.ndarray | None = None) -> DualityGapEstimate:
    if not 1 <= len(nodes) <= 6:
        raise ConfigError("brute force supports between 1 and 6 nodes")
    total = sum(n.fraction for n in nodes)
    if abs(total - 1.0) > 1e-12:
        raise ConfigError(f"fractions sum to {total}")
    r_sets, g_sets, deltas = [], [], []
    for k, node in enumerate(nodes):
        if not (math.isfinite(node.lower) and math.isfinite(node.upper)) or node.upper <= node.lower:
            raise ConfigError(f"nodes[{k}]: parameter interval must be bounded and non-empty")
        npts = int(round((node.upper - node.lower) / resolution)) + 1
        if npts > max_points:
            raise ConfigError(f"nodes[{k}]: {npts} grid points exceed the limit {max_points}")
        w = np.linspace(node.lower, node.upper, npts)
        g = np.asarray(node.objective(w), dtype=float)
        r = _r_value(regularizer, w)
        f_hat = monotone_restriction(r, g)
        deltas.append(float(np.max(f_hat - convex_envelope(w, f_hat))))
        r_sets.append(node.fraction * r)
        g_sets.append(node.fraction * g)
    budget = math.fsum(n.fraction * n.bound for n in nodes)
    p = primal_optimum(r_sets, g_sets, budget)
    d, lam = dual_optimum(r_sets, g_sets, budget, lambda_grid)
    worst = max(deltas)
    amax = max(n.fraction for n in nodes)
    degenerate = worst <= resolution ** 2
    gap = 0.0 if degenerate else (p - d) / worst
    return DualityGapEstimate(p, d, worst, gap, 2 * amax, resolution, deltas, lam, degenerate)


def double_well(depth: float = 1.0, centre: float = 0.0, width: float = 0.3,
                tilt: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
    """``depth * (((w - centre) / width)^2 - 1)^2 + tilt * (w - centre)``, shifted to be >= 0."""
    def f(w):
        z = (np.asarray(w, dtype=float) - centre) / width
        return depth * (z * z - 1.0) ** 2 + tilt * (np.asarray(w) - centre) + abs(tilt) * 2 * width
    return f


def double_well_instance(node_count: int, variant: int = 0, bound: float = 0.2,
                         shared: float = 0.0) -> list[ToyNode]:
    """Uniform-fraction toy problem whose nodes see the same double well.

    ``variant`` perturbs depth, width and tilt deterministically so that a
    family of distinct instances can be generated. The loss is expressed
    in the node's own coordinate: ``F_i`` is chosen such that
    ``F_i((1 - a) s + a w)`` is the double well in ``w``.
    """
    rng = np.random.default_rng(1000 + variant)
    a = 1.0 / node_count
    depth = 1.0 + 0.5 * rng.random()
    width = 0.25 + 0.15 * rng.random()
    tilt = 0.4 * (rng.random() - 0.5)
    well = double_well(depth, 0.0, width, tilt)

    def loss(x, _a=a):
        return well((np.asarray(x) - (1.0 - _a) * shared) / _a)

    return [ToyNode(loss, a, shared, -0.5, 0.5, bound) for _ in range(node_count)]
