"""Breakdown frontiers, the common breakdown point and duality bounds.

The frontier value at ``(rx_bar, b_low)`` is the largest ``ry_bar`` such that
every element of the identified set under ``(rx_bar, ry_bar, c_low, c_high)``
is at least ``b_low``.  It is the minimum of ``underline_r_y(z, c, b)`` over
``(z, c, b)`` with ``c`` in ``span{Cov(W1, Y), Cov(W1, X)}``, ``b <= b_low``
and two side constraints.

Solver
------
Writing ``t = 1 / (beta_med - b)``, the reciprocal of the objective is

    || t z s u + z s sigma_X / k0 - c ||,     s = sqrt(1 - ||c||^2),

with ``u = (sigma_Y - beta_med sigma_X) / k0``.  This norm is convex in
``t``, so the best ``b`` is one of the two ends of its feasible range.  For
fixed ``(z, ||c||)`` the squared norm is linear in ``c`` on a circle and the
``p >= 0`` constraint is a half-plane, so the best direction of ``c`` has a
closed form.  What remains is a bounded search over ``(z, ||c||)``, done by
a seeding grid followed by multi-start pattern search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.stats import qmc

from ._numerics import BISECT_MAX_ITER, BISECT_TOL, bisect_predicate
from .covkernel import NormalizedModel
from .errors import DomainError, LinearDependence, SolverFailure
from .identify import (
    IdentifiedInterval,
    bounds_rx_c,
    check_c_range,
    check_knife_edge,
)

MARGIN = 1e-9
GRAM_TOL = 1e-10
DEFAULT_RESTARTS = 32
GRID_SIDE = 64  # 64 x 64 = 8**4 seed points
SOBOL_POINTS = 1024
STEP_FLOOR = 1e-14
MAX_PATTERN_ITER = 600

ZERO = "zero"
INFINITE = "infinite"
INTERIOR = "interior"


# ---------------------------------------------------------------------------
# Building blocks


def devsq(nm: NormalizedModel, z: float) -> float:
    """Squared half-width reachable when the omitted index takes value ``z``."""
    z2 = z * z
    if z2 >= nm.k0:
        raise DomainError("devsq requires z**2 < Var(X | W1)")
    return nm.var_y_perp_xw1 / nm.k0 * z2 / (nm.k0 - z2)


def underline_r_y(nm: NormalizedModel, z: float, c: NDArray, b: float) -> float:
    """Smallest ``||r_Y||`` compatible with ``(z, c, b)``."""
    c = np.asarray(c, dtype=float)
    a2 = float(c @ c)
    if a2 >= 1.0:
        raise DomainError("underline_r_y requires ||c|| < 1")
    if b == nm.beta_med:
        return 0.0
    s = math.sqrt(1.0 - a2)
    vec = z * s * (nm.sigma_w1y - b * nm.sigma_w1x) / nm.k0 - (nm.beta_med - b) * c
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        return math.inf
    return abs(nm.beta_med - b) / norm


def p_constraint(nm: NormalizedModel, z: float, c: NDArray, rx_bar: float) -> float:
    """Feasibility polynomial; ``>= 0`` iff some ``||r_X|| <= rx_bar`` gives ``z``."""
    c = np.asarray(c, dtype=float)
    a2 = float(c @ c)
    if a2 >= 1.0:
        raise DomainError("p_constraint requires ||c|| < 1")
    v = nm.sigma_w1x * math.sqrt(1.0 - a2) - c * z
    return rx_bar * rx_bar * float(v @ v) - z * z


def check_linear_independence(nm: NormalizedModel) -> None:
    if nm.d1 < 2:
        return
    sx, sy = nm.sigma_w1x, nm.sigma_w1y
    gram = float((sx @ sx) * (sy @ sy) - (sx @ sy) ** 2)
    if gram < GRAM_TOL:
        raise LinearDependence("Cov(W1, Y) and Cov(W1, X) are linearly dependent")


# ---------------------------------------------------------------------------
# Result types


@dataclass(frozen=True)
class FrontierPoint:
    rx_bar: float
    ry_bf: float
    case_tag: str
    solver_report: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FrontierCurve:
    b_low: float
    c_low: float
    c_high: float
    points: tuple[FrontierPoint, ...]


# ---------------------------------------------------------------------------
# Reduced two-dimensional program


class _Reduced:
    """Objective in the remaining coordinates ``(z, a)`` with ``a = ||c||``."""

    def __init__(self, nm: NormalizedModel, rx_bar: float, b_low: float, c_low: float, c_high: float):
        self.nm = nm
        self.r = float(rx_bar)
        self.delta = nm.beta_med - b_low
        sx = nm.sigma_w1x
        self.nx = float(np.linalg.norm(sx))
        self.e1 = sx / self.nx
        u = (nm.sigma_w1y - nm.beta_med * sx) / nm.k0
        self.u1 = float(u @ self.e1)
        resid = u - self.u1 * self.e1
        rn = float(np.linalg.norm(resid))
        if nm.d1 >= 2 and rn > 0.0:
            self.e2 = resid / rn
            self.u2 = rn
            self.planar = True
        else:
            self.e2 = np.zeros_like(sx)
            self.u2 = 0.0
            self.planar = False
        k0, v = nm.k0, nm.var_y_perp_xw1
        d2 = self.delta ** 2
        self.z_lo = math.sqrt(d2 * k0 / (v / k0 + d2))
        self.z_hi = math.sqrt(k0) * (1.0 - MARGIN)
        self.a_lo = float(c_low)
        self.a_hi = float(min(c_high, 1.0 - MARGIN))

    def z_max(self, a: NDArray) -> NDArray:
        """Largest ``z`` compatible with ``p >= 0`` at ``||c|| = a``.

        Solving ``kappa >= -1`` for ``z`` gives ``r nx sqrt(1 - a^2) / (1 - r a)``
        when ``r a < 1``; otherwise every ``z`` qualifies.
        """
        r = self.r
        with np.errstate(divide="ignore", invalid="ignore"):
            zm = r * self.nx * np.sqrt(1.0 - a * a) / (1.0 - r * a)
        return np.where(r * a < 1.0, np.minimum(zm * (1.0 - 1e-12), self.z_hi), self.z_hi)

    def to_native(self, x: NDArray) -> tuple[NDArray, NDArray]:
        # z is measured along [z_lo, z_max(a)] so that the p constraint is the edge x0 = 1
        a = self.a_lo + (self.a_hi - self.a_lo) * x[..., 1]
        top = self.z_max(a)
        z = self.z_lo + (top - self.z_lo) * x[..., 0]
        z = np.where(top > self.z_lo, z, np.nan)
        return z, a

    def t_ends(self, z: NDArray) -> tuple[NDArray, NDArray]:
        nm = self.nm
        with np.errstate(divide="ignore", invalid="ignore"):
            ds = nm.var_y_perp_xw1 / nm.k0 * z * z / (nm.k0 - z * z)
            t_far = 1.0 / (np.sqrt(ds) * (1.0 - MARGIN))
        t_near = np.full_like(z, 1.0 / self.delta)
        return t_near, t_far

    def evaluate(self, z: NDArray, a: NDArray, full: bool = False):
        """Best squared reciprocal objective; ``-inf`` where infeasible."""
        z = np.asarray(z, dtype=float)
        a = np.asarray(a, dtype=float)
        k0, r, nx = self.nm.k0, self.r, self.nx
        s = np.sqrt(1.0 - a * a)
        with np.errstate(divide="ignore", invalid="ignore"):
            bound = (r * r * nx * nx * s * s + r * r * z * z * a * a - z * z) / (2.0 * s * z * r * r)
            kappa = np.where(a > 0, bound / (a * nx), np.where(bound >= 0, np.inf, -np.inf))
        ok_z = (z > self.z_lo) & (z < math.sqrt(k0)) & (r > 0)
        best = np.full(z.shape, -np.inf)
        best_t = np.full(z.shape, np.nan)
        best_cos = np.full(z.shape, np.nan)
        best_sin = np.full(z.shape, np.nan)
        for t in self.t_ends(z):
            h1 = z * s * (t * self.u1 + nx / k0)
            h2 = z * s * t * self.u2
            val, cos, sin = self._best_direction(h1, h2, a, kappa)
            val = np.where(ok_z & np.isfinite(t), val, -np.inf)
            better = val > best
            best = np.where(better, val, best)
            best_t = np.where(better, t, best_t)
            best_cos = np.where(better, cos, best_cos)
            best_sin = np.where(better, sin, best_sin)
        if full:
            return best, best_t, best_cos, best_sin
        return best

    def _best_direction(self, h1, h2, a, kappa):
        hn = np.hypot(h1, h2)
        feasible = kappa >= -1.0
        if self.planar:
            with np.errstate(divide="ignore", invalid="ignore"):
                cos_free = np.where(hn > 0, -h1 / hn, -1.0)
                sin_free = np.where(hn > 0, -h2 / hn, 0.0)
            free_ok = cos_free <= kappa
            kc = np.clip(kappa, -1.0, 1.0)
            sgn = np.where(h2 > 0, -1.0, 1.0)
            cos_b = kc
            sin_b = sgn * np.sqrt(np.maximum(0.0, 1.0 - kc * kc))
            cos = np.where(free_ok, cos_free, cos_b)
            sin = np.where(free_ok, sin_free, sin_b)
            val = hn * hn - 2.0 * a * (h1 * cos + h2 * sin) + a * a
        else:
            plus = np.where(kappa >= 1.0, (h1 - a) ** 2, -np.inf)
            minus = np.where(kappa >= -1.0, (h1 + a) ** 2, -np.inf)
            use_plus = plus > minus
            val = np.where(use_plus, plus, minus)
            cos = np.where(use_plus, 1.0, -1.0)
            sin = np.zeros_like(val)
        return np.where(feasible, val, -np.inf), cos, sin

    def objective_unit(self, x: NDArray) -> NDArray:
        z, a = self.to_native(x)
        return self.evaluate(z, a)


def _seed_points() -> NDArray:
    g = (np.arange(GRID_SIDE) + 0.5) / GRID_SIDE
    gz, ga = np.meshgrid(g, g, indexing="ij")
    grid = np.column_stack([gz.ravel(), ga.ravel()])
    sob = qmc.Sobol(d=2, scramble=False).random(SOBOL_POINTS)
    edges = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0], [0.5, 1.0], [1.0, 0.5]])
    return np.vstack([grid, sob, edges])


_SEEDS = _seed_points()
_STENCIL = np.array([[dz, da] for dz in (-1, 0, 1) for da in (-1, 0, 1) if (dz, da) != (0, 0)], float)


def _pattern_search(red: _Reduced, starts: NDArray, step0: float) -> tuple[NDArray, NDArray, int]:
    x = starts.copy()
    fx = red.objective_unit(x)
    step = np.full(len(x), step0)
    evals = len(x)
    for _ in range(MAX_PATTERN_ITER):
        active = step > STEP_FLOOR
        if not active.any():
            break
        cand = np.clip(x[:, None, :] + step[:, None, None] * _STENCIL[None, :, :], 0.0, 1.0)
        fc = red.objective_unit(cand.reshape(-1, 2)).reshape(len(x), -1)
        evals += fc.size
        j = np.argmax(fc, axis=1)
        fbest = fc[np.arange(len(x)), j]
        move = active & (fbest > fx)
        x[move] = cand[np.arange(len(x)), j][move]
        fx = np.where(move, fbest, fx)
        step = np.where(active & ~move, step * 0.5, step)
    return x, fx, evals


def _solve_interior(nm, rx_bar, b_low, c_low, c_high, restarts) -> FrontierPoint:
    red = _Reduced(nm, rx_bar, b_low, c_low, c_high)
    if red.z_lo >= red.z_hi:
        raise SolverFailure("no z satisfies the deviation constraint")
    seeds = _SEEDS
    fs = red.objective_unit(seeds)
    order = np.lexsort((np.arange(len(fs)), -fs))
    feasible = order[np.isfinite(fs[order])]
    if feasible.size == 0:
        raise SolverFailure("no feasible point found in the seeding design")
    starts = seeds[feasible[:restarts]]
    x, fx, evals = _pattern_search(red, starts, 1.0 / GRID_SIDE)
    # deterministic argmax: highest objective, ties broken by restart index
    k = int(np.lexsort((np.arange(len(fx)), -fx))[0])
    z, a = red.to_native(x[k])
    g, t, cos, sin = red.evaluate(np.array([z]), np.array([a]), full=True)
    g, t, cos, sin = float(g[0]), float(t[0]), float(cos[0]), float(sin[0])
    if not math.isfinite(g) or g <= 0:
        raise SolverFailure("pattern search ended at an infeasible point")
    ry = 1.0 / math.sqrt(g)
    c = a * (cos * red.e1 + sin * red.e2)
    b = nm.beta_med - 1.0 / t
    report = {
        "restarts": int(len(starts)),
        "evaluations": int(evals + len(seeds)),
        "best_objective": ry,
        "argmin": {"z": float(z), "c": [float(v) for v in c], "b": float(b)},
        "constraint_residuals": {
            "p": p_constraint(nm, z, c, rx_bar),
            "devsq_minus_gap": devsq(nm, z) - (b - nm.beta_med) ** 2,
            "b_low_minus_b": float(b_low - b),
            "c_norm": float(np.linalg.norm(c)),
        },
    }
    return FrontierPoint(float(rx_bar), ry, INTERIOR, report)


# ---------------------------------------------------------------------------
# Public operations


def breakdown_frontier_c(
    nm: NormalizedModel,
    rx_bar: float,
    b_low: float,
    c_low: float = 0.0,
    c_high: float = 1.0,
    restarts: int = DEFAULT_RESTARTS,
) -> FrontierPoint:
    """Frontier value ``ry_bf(rx_bar, b_low)`` with endogeneity range ``[c_low, c_high]``."""
    check_c_range(c_low, c_high)
    check_knife_edge(nm)
    check_linear_independence(nm)
    if rx_bar < 0:
        raise DomainError("rx_bar must be nonnegative")
    if b_low >= nm.beta_med:
        return FrontierPoint(float(rx_bar), 0.0, ZERO, {"restarts": 0})
    lower = bounds_rx_c(nm, rx_bar, c_low, c_high).lower
    if lower > b_low:
        return FrontierPoint(float(rx_bar), math.inf, INFINITE, {"restarts": 0, "lower_bound": lower})
    return _solve_interior(nm, rx_bar, b_low, c_low, c_high, restarts)


def breakdown_frontier(
    nm: NormalizedModel, rx_bar: float, b_low: float, restarts: int = DEFAULT_RESTARTS
) -> FrontierPoint:
    """Frontier value without restrictions on control endogeneity."""
    return breakdown_frontier_c(nm, rx_bar, b_low, 0.0, 1.0, restarts)


def frontier_curve(
    nm: NormalizedModel,
    rx_grid: Sequence[float],
    b_low: float,
    c_low: float = 0.0,
    c_high: float = 1.0,
    restarts: int = DEFAULT_RESTARTS,
    mapper=map,
) -> FrontierCurve:
    """Evaluate the frontier on a sorted grid of ``rx_bar`` values.

    ``mapper`` may be an order-preserving parallel map.
    """
    grid = [float(r) for r in rx_grid]
    pts = list(mapper(lambda r: breakdown_frontier_c(nm, r, b_low, c_low, c_high, restarts), grid))
    return FrontierCurve(float(b_low), float(c_low), float(c_high), tuple(pts))


def common_breakdown(
    nm: NormalizedModel,
    b_low: float,
    c_low: float = 0.0,
    c_high: float = 1.0,
    restarts: int = DEFAULT_RESTARTS,
    tol: float = BISECT_TOL,
    max_iter: int = BISECT_MAX_ITER,
) -> float:
    """Largest ``r`` such that ``rx_bar = ry_bar = r`` keeps every ``b >= b_low``."""
    check_c_range(c_low, c_high)
    if b_low >= nm.beta_med:
        return 0.0

    def pred(r: float) -> bool:
        return breakdown_frontier_c(nm, r, b_low, c_low, c_high, restarts).ry_bf > r

    hi = 1.0
    for _ in range(64):
        if not pred(hi):
            break
        hi *= 2.0
    else:
        return math.inf
    lo, hi = bisect_predicate(pred, 0.0, hi, tol=tol, max_iter=max_iter)
    return 0.5 * (lo + hi)


def _lower_endpoint(nm, rx_bar, ry_bar, c_low, c_high, restarts, tol, max_iter) -> float:
    outer = bounds_rx_c(nm, rx_bar, c_low, c_high).lower
    beta = nm.beta_med
    if ry_bar == 0.0:
        return beta
    if math.isinf(ry_bar):
        return outer

    def pred(b: float) -> bool:
        try:
            return breakdown_frontier_c(nm, rx_bar, b, c_low, c_high, restarts).ry_bf <= ry_bar
        except SolverFailure:
            return False

    if math.isfinite(outer):
        lo = outer
    else:
        width = max(1.0, abs(beta))
        lo = beta - width
        for _ in range(64):
            if not pred(lo):
                break
            width *= 2.0
            lo = beta - width
        else:
            return -math.inf
    # predicate is true at beta and false at lo; bisect on -b so it increases
    neg_lo, neg_hi = bisect_predicate(lambda nb: pred(-nb), -beta, -lo, tol=tol, max_iter=max_iter)
    return -0.5 * (neg_lo + neg_hi)


def bounds_rx_ry(
    nm: NormalizedModel,
    rx_bar: float,
    ry_bar: float,
    c_low: float = 0.0,
    c_high: float = 1.0,
    restarts: int = DEFAULT_RESTARTS,
    tol: float = BISECT_TOL,
    max_iter: int = BISECT_MAX_ITER,
) -> IdentifiedInterval:
    """Identified set under ``(rx_bar, ry_bar, c_low, c_high)`` by duality.

    The lower endpoint is the smallest threshold whose frontier value is at
    most ``ry_bar``; the upper endpoint comes from the sign-flipped outcome.
    """
    if ry_bar < 0:
        raise DomainError("ry_bar must be nonnegative")
    outer = bounds_rx_c(nm, rx_bar, c_low, c_high)
    check_linear_independence(nm)
    lower = _lower_endpoint(nm, rx_bar, ry_bar, c_low, c_high, restarts, tol, max_iter)
    upper = -_lower_endpoint(nm.mirror(), rx_bar, ry_bar, c_low, c_high, restarts, tol, max_iter)
    lower = max(lower, outer.lower)
    upper = min(upper, outer.upper)
    finite = math.isfinite(lower) and math.isfinite(upper)
    half = max(nm.beta_med - lower, upper - nm.beta_med) if finite else math.inf
    return IdentifiedInterval(lower, upper, nm.beta_med, half, finite)
