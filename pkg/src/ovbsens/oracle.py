"""Brute-force checks of the closed forms and of the frontier solver.

Nothing in this module is used on the computational hot path.  The
functions here work directly from the defining equations of the identified
set for given sensitivity vectors ``(r_X, r_Y, c)``.  They share no code
with :mod:`ovbsens.identify` or the reduced solver in
:mod:`ovbsens.frontier`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import minimize

from .covkernel import NormalizedModel
from .identify import IdentifiedInterval, SensitivityBudget

EQ_TOL = 1e-9
STRICT_MARGIN = 1e-12
SHRINK = 1e-9


@dataclass(frozen=True)
class CandidatePoint:
    r_x: NDArray
    r_y: NDArray
    c: NDArray
    b: float
    feasible: bool
    witness_z: float


# ---------------------------------------------------------------------------
# Membership


def z_x(nm: NormalizedModel, r_x: NDArray, c: NDArray) -> float:
    """Value of the omitted index implied by ``(r_X, c)``; NaN when undefined."""
    r_x = np.asarray(r_x, float)
    c = np.asarray(c, float)
    den = 1.0 + float(r_x @ c)
    if abs(den) < 1e-12:
        return math.nan
    return float(r_x @ nm.sigma_w1x) * math.sqrt(max(0.0, 1.0 - float(c @ c))) / den


def membership(nm: NormalizedModel, b: float, r_x: NDArray, r_y: NDArray, c: NDArray) -> bool:
    """Whether ``b`` belongs to the identified set for fixed ``(r_X, r_Y, c)``.

    Checks the six-equation characterization: solve the two linear systems
    for ``(p1, g1)`` and verify the product identity and the three strict
    inequalities.
    """
    r_x = np.asarray(r_x, float)
    r_y = np.asarray(r_y, float)
    c = np.asarray(c, float)
    a2 = float(c @ c)
    if not a2 < 1.0:
        return False
    d = nm.d1
    eye = np.eye(d)
    if abs(1.0 + float(r_x @ c)) < 1e-12 or abs(1.0 + float(r_y @ c)) < 1e-12:
        return False
    p1 = np.linalg.solve(eye + np.outer(c, r_x), nm.sigma_w1x)
    g1 = np.linalg.solve(eye + np.outer(c, r_y), nm.sigma_w1y - b * nm.sigma_w1x)
    s2 = 1.0 - a2
    px = float(p1 @ r_x)
    gy = float(g1 @ r_y)
    target = nm.k1 - b * nm.k0
    if abs(px * gy * s2 - target) > EQ_TOL * max(1.0, abs(target)):
        return False
    rhs4 = nm.k0 * (nm.beta_med - b) ** 2 + nm.var_y_perp_xw1
    if not gy * gy * s2 < rhs4 - STRICT_MARGIN * rhs4:
        return False
    if not px * px * s2 < nm.k0 - STRICT_MARGIN * nm.k0:
        return False
    return True


def min_norm_r_y(nm: NormalizedModel, z: float, c: NDArray, b: float) -> NDArray:
    """Smallest-norm ``r_Y`` solving the outcome-side equation for ``(z, c, b)``."""
    c = np.asarray(c, float)
    s = math.sqrt(1.0 - float(c @ c))
    delta = nm.beta_med - b
    v = z * s * (nm.sigma_w1y - b * nm.sigma_w1x) / nm.k0 - delta * c
    return delta * v / float(v @ v)


# ---------------------------------------------------------------------------
# Sampling helpers


def _span_basis(nm: NormalizedModel) -> NDArray:
    m = np.column_stack([nm.sigma_w1x, nm.sigma_w1y])
    q, r = np.linalg.qr(m)
    keep = np.abs(np.diag(r)) > 1e-12 * max(1.0, np.abs(r).max())
    return q[:, keep]


def _directions(rng: np.random.Generator, n: int, d: int, basis: NDArray) -> NDArray:
    """Unit vectors: a mix of uniform directions and directions in ``basis``.

    A quarter of the draws are uniform on the sphere.  The rest lie in the
    span of ``basis``; half of those get a small random orthogonal component.
    """
    out = rng.standard_normal((n, d))
    mode = rng.integers(0, 4, n)
    k = basis.shape[1]
    coef = rng.standard_normal((n, k))
    inspan = coef @ basis.T
    if d > k:
        noise = rng.standard_normal((n, d))
        noise -= (noise @ basis) @ basis.T
        noise *= 0.05
    else:
        noise = np.zeros((n, d))
    out = np.where((mode == 0)[:, None], out, inspan + np.where((mode == 2)[:, None], noise, 0.0))
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return out / norms


def _sample_rx_c(nm, budget: SensitivityBudget, n: int, rng) -> tuple[NDArray, NDArray]:
    d = nm.d1
    basis = _span_basis(nm)
    rdir = _directions(rng, n, d, basis)
    cdir = _directions(rng, n, d, basis)
    rad = budget.rx_bar * rng.random(n) ** 0.25
    a_hi = min(budget.c_high, 1.0 - 1e-12)
    a = budget.c_low + (a_hi - budget.c_low) * rng.random(n)
    return rdir * rad[:, None], cdir * a[:, None]


def _extreme_t(aa, aw, ww, big_r, t0):
    """Smallest ``t > t0`` with ``aa t^2 + 2 aw t + ww - big_r^2 >= 0``."""
    disc = aw * aw - aa * (ww - big_r * big_r)
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        t_minus = (-aw - sq) / aa
        t_plus = (-aw + sq) / aa
    inside = (disc > 0) & (aa > 0) & (t_minus <= t0) & (t0 < t_plus)
    t = np.where(inside, t_plus, t0)
    degenerate = aa <= 0
    t = np.where(degenerate & (ww - big_r * big_r < 0), np.nan, t)
    return t * (1.0 + SHRINK)


def _project_rx_c(nm, budget: SensitivityBudget, r_x: NDArray, c: NDArray) -> tuple[NDArray, NDArray]:
    """Pull perturbed samples back into ``||r_x|| <= rx_bar`` and the ``||c||`` range."""
    rn = np.linalg.norm(r_x, axis=1, keepdims=True)
    r_x = np.where(rn > budget.rx_bar, r_x * (budget.rx_bar / np.where(rn > 0, rn, 1.0)), r_x)
    a_hi = min(budget.c_high, 1.0 - 1e-12)
    cn = np.linalg.norm(c, axis=1, keepdims=True)
    target = np.clip(cn, budget.c_low, a_hi)
    safe = np.where(cn > 0, cn, 1.0)
    c = np.where(cn > 0, c * (target / safe), c)
    if budget.c_low > 0:
        # a zero vector cannot be rescaled; point it along the first axis
        fallback = np.zeros_like(c)
        fallback[:, 0] = budget.c_low
        c = np.where(cn > 0, c, fallback)
    return r_x, c


def _extremes(nm: NormalizedModel, budget: SensitivityBudget, r_x: NDArray, c: NDArray):
    """Smallest and largest reachable ``b`` for each sampled ``(r_X, c)``.

    For fixed ``(r_X, c)`` the implied index ``z`` is fixed, and the set of
    ``b`` reachable with ``||r_Y|| <= ry_bar`` is an explicit union of at most
    two intervals.  Entries that are infeasible are ``nan``.
    """
    beta = nm.beta_med
    a2 = np.einsum("ij,ij->i", c, c)
    s = np.sqrt(1.0 - a2)
    den = 1.0 + np.einsum("ij,ij->i", r_x, c)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (r_x @ nm.sigma_w1x) * s / den
    ok = (np.abs(den) > 1e-12) & np.isfinite(z) & (z != 0) & (z * z < nm.k0)
    k0, v = nm.k0, nm.var_y_perp_xw1
    with np.errstate(divide="ignore", invalid="ignore"):
        ds = v / k0 * z * z / (k0 - z * z)
        t0 = 1.0 / np.sqrt(ds)
    u = (nm.sigma_w1y - beta * nm.sigma_w1x) / k0
    amat = (z * s)[:, None] * u[None, :]
    wmat = (z * s / k0)[:, None] * nm.sigma_w1x[None, :] - c
    aa = np.einsum("ij,ij->i", amat, amat)
    aw = np.einsum("ij,ij->i", amat, wmat)
    ww = np.einsum("ij,ij->i", wmat, wmat)
    big_r = 0.0 if math.isinf(budget.ry_bar) else 1.0 / budget.ry_bar
    with np.errstate(divide="ignore", invalid="ignore"):
        out = []
        for sign in (1.0, -1.0):
            t = _extreme_t(aa, sign * aw, ww, big_r, t0)
            b = beta - sign / t
            delta = beta - b
            vvec = (z * s / k0)[:, None] * (nm.sigma_w1y[None, :] - b[:, None] * nm.sigma_w1x[None, :]) - delta[:, None] * c
            ry = np.abs(delta) / np.linalg.norm(vvec, axis=1)
            good = ok & np.isfinite(b) & (delta * delta < ds) & (ry <= budget.ry_bar)
            out.append(np.where(good, b, np.nan))
    return z, out[0], out[1]


def brute_force_search(
    nm: NormalizedModel,
    budget: SensitivityBudget,
    n_samples: int = 100_000,
    seed: int = 0,
    refine_fraction: float = 0.25,
    refine_rounds: int = 10,
    n_elite: int = 16,
) -> tuple[IdentifiedInterval, list[CandidatePoint]]:
    """Randomized inner approximation of the identified set with witnesses.

    Most of the ``n_samples`` evaluations go to a global random sample of
    ``(r_X, c)``.  The rest perturb the best samples for each endpoint with a
    shrinking Gaussian step.  The hull of the feasible extremes is returned,
    together with membership-checked witnesses for the two endpoints.
    """
    rng = np.random.default_rng(seed)
    beta = nm.beta_med
    witnesses: list[CandidatePoint] = []
    if budget.rx_bar == 0 or budget.ry_bar == 0:
        return IdentifiedInterval(beta, beta, beta, 0.0, True), witnesses
    n_ref = int(n_samples * refine_fraction) if refine_rounds > 0 else 0
    r_x, c = _sample_rx_c(nm, budget, n_samples - n_ref, rng)
    z, lo, hi = _extremes(nm, budget, r_x, c)
    sides = []
    for vals, sign in ((lo, 1.0), (-hi, -1.0)):
        # score: smaller is better on both sides
        sides.append({"sign": sign, "score": vals, "r_x": r_x, "c": c, "z": z})
    per_round = n_ref // (2 * refine_rounds) if refine_rounds > 0 else 0
    step = 0.1
    for _ in range(refine_rounds):
        if per_round < n_elite:
            break
        for side in sides:
            score = np.where(np.isnan(side["score"]), np.inf, side["score"])
            if not np.isfinite(score).any():
                continue
            elite = np.argsort(score, kind="stable")[:n_elite]
            pick = elite[rng.integers(0, len(elite), per_round)]
            rx_new = side["r_x"][pick] + step * max(budget.rx_bar, 1e-12) * rng.standard_normal((per_round, nm.d1))
            c_new = side["c"][pick] + step * rng.standard_normal((per_round, nm.d1))
            rx_new, c_new = _project_rx_c(nm, budget, rx_new, c_new)
            z_new, lo_new, hi_new = _extremes(nm, budget, rx_new, c_new)
            new_score = lo_new if side["sign"] > 0 else -hi_new
            keep = elite
            side["r_x"] = np.concatenate([side["r_x"][keep], rx_new])
            side["c"] = np.concatenate([side["c"][keep], c_new])
            side["z"] = np.concatenate([side["z"][keep], z_new])
            side["score"] = np.concatenate([side["score"][keep], new_score])
        step *= 0.6
    lo_b, hi_b = beta, beta
    for side in sides:
        score = np.where(np.isnan(side["score"]), np.inf, side["score"])
        if not np.isfinite(score).any():
            continue
        i = int(np.argmin(score))
        b = float(side["sign"] * score[i])
        ry_vec = min_norm_r_y(nm, float(side["z"][i]), side["c"][i], b)
        feas = membership(nm, b, side["r_x"][i], ry_vec, side["c"][i])
        witnesses.append(CandidatePoint(side["r_x"][i].copy(), ry_vec, side["c"][i].copy(), b, feas, float(side["z"][i])))
        if feas:
            lo_b = min(lo_b, b)
            hi_b = max(hi_b, b)
    dev = max(beta - lo_b, hi_b - beta)
    return IdentifiedInterval(lo_b, hi_b, beta, dev, True), witnesses


def brute_force_bounds(
    nm: NormalizedModel, budget: SensitivityBudget, n_samples: int = 100_000, seed: int = 0
) -> IdentifiedInterval:
    """Hull of brute-force feasible values of ``beta_long`` (an inner approximation)."""
    return brute_force_search(nm, budget, n_samples, seed)[0]


# ---------------------------------------------------------------------------
# z-bar oracle


def zbar_oracle(
    nm: NormalizedModel, rx_bar: float, c_low: float, c_high: float, grid_density: int = 48,
    refine_rounds: int = 30,
) -> float:
    """Grid maximization of ``|z_X(r_X, c)|`` over the sensitivity set.

    ``r_X`` and ``c`` are searched in the plane spanned by ``Cov(W1, X)`` and
    an orthogonal direction, on a polar grid that is then zoomed around the
    best point.
    """
    if rx_bar == 0:
        return 0.0
    norm_s = nm.norm_sigma_w1x
    planar = nm.d1 >= 2
    a_hi = min(c_high, 1.0 - 1e-12)
    n = grid_density

    def zval(rho, alpha, a, phi):
        if not planar:
            alpha = np.round(alpha / np.pi) * np.pi
            phi = np.round(phi / np.pi) * np.pi
        den = 1.0 + rho * a * np.cos(alpha - phi)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.abs(rho * np.cos(alpha) * norm_s * np.sqrt(1.0 - a * a) / den)
        return np.where(np.abs(den) > 1e-12, val, 0.0)

    lows = np.array([0.0, -np.pi, c_low, -np.pi])
    highs = np.array([rx_bar, np.pi, a_hi, np.pi])
    axes = [np.linspace(lows[i], highs[i], n) for i in range(4)]
    best, arg = -1.0, None
    for i0 in range(n):
        g = np.meshgrid(axes[0][i0:i0 + 1], axes[1], axes[2], axes[3], indexing="ij")
        val = zval(*g)
        j = int(np.argmax(val))
        if val.flat[j] > best:
            best = float(val.flat[j])
            arg = np.array([gg.flat[j] for gg in g])
    width = (highs - lows) / (n - 1)
    m = 7
    for _ in range(refine_rounds):
        axes = [np.clip(np.linspace(arg[i] - width[i], arg[i] + width[i], m), lows[i], highs[i]) for i in range(4)]
        g = np.meshgrid(*axes, indexing="ij")
        val = zval(*g)
        j = int(np.argmax(val))
        if val.flat[j] >= best:
            best = float(val.flat[j])
            arg = np.array([gg.flat[j] for gg in g])
        width = width / 2.0
    return best


# ---------------------------------------------------------------------------
# Grid oracle for the frontier program


def frontier_grid_oracle(
    nm: NormalizedModel,
    rx_bar: float,
    b_low: float,
    c_low: float = 0.0,
    c_high: float = 1.0,
    n_z: int = 200,
    n_c: int = 40,
    n_b: int = 100,
    refine_rounds: int = 200,
    n_starts: int = 8,
) -> tuple[float, dict]:
    """Dense grid minimization of the frontier program in ``(z, c1, c2, b)``.

    ``c = c1 Cov(W1, Y) + c2 Cov(W1, X)``.  The grid minimum is refined by
    repeatedly zooming a local grid around the incumbent.  Returns the best
    feasible objective (``inf`` if none) and its location.
    """
    sx, sy = nm.sigma_w1x, nm.sigma_w1y
    gyy, gxy, gxx = float(sy @ sy), float(sx @ sy), float(sx @ sx)
    beta, k0, v = nm.beta_med, nm.k0, nm.var_y_perp_xw1
    planar = nm.d1 >= 2
    a_hi = min(c_high, 1.0)
    r2 = rx_bar * rx_bar

    def evaluate(z, c1, c2, b):
        cn2 = c1 * c1 * gyy + 2 * c1 * c2 * gxy + c2 * c2 * gxx
        s = np.sqrt(np.maximum(1.0 - cn2, 0.0))
        delta = beta - b
        ay = z * s / k0 - delta * c1
        ax = -z * s * b / k0 - delta * c2
        vn = np.sqrt(np.maximum(ay * ay * gyy + 2 * ay * ax * gxy + ax * ax * gxx, 0.0))
        py = -z * c1
        px = s - z * c2
        pval = r2 * (py * py * gyy + 2 * py * px * gxy + px * px * gxx) - z * z
        with np.errstate(divide="ignore", invalid="ignore"):
            ds = v / k0 * z * z / (k0 - z * z)
            obj = np.abs(delta) / vn
        cn = np.sqrt(cn2)
        feas = (
            (pval >= 0) & (delta * delta < ds) & (cn >= c_low) & (cn <= a_hi) & (cn < 1.0)
            & (b <= b_low) & (z * z < k0) & (vn > 0)
        )
        return np.where(feas, obj, np.inf)

    sqk0 = math.sqrt(k0)
    z_axis = np.linspace(-sqk0, sqk0, n_z + 2)[1:-1]
    if planar:
        gram = np.array([[gyy, gxy], [gxy, gxx]])
        ginv = np.linalg.inv(gram)
        box = np.sqrt(np.diag(ginv)) * a_hi
        c1_axis = np.linspace(-box[0], box[0], n_c)
        c2_axis = np.linspace(-box[1], box[1], n_c)
    else:
        box = np.array([0.0, a_hi / math.sqrt(gxx)])
        c1_axis = np.zeros(1)
        c2_axis = np.linspace(-box[1], box[1], n_c)
    zmax = z_axis[-1]
    dev_max = math.sqrt(v / k0 * zmax * zmax / (k0 - zmax * zmax))
    b_axis = np.linspace(beta - dev_max, b_low, n_b)
    gc1, gc2, gb = np.meshgrid(c1_axis, c2_axis, b_axis, indexing="ij")
    slice_best = []
    for z in z_axis:
        val = evaluate(z, gc1, gc2, gb)
        j = int(np.argmin(val))
        if np.isfinite(val.flat[j]):
            slice_best.append((float(val.flat[j]), np.array([z, gc1.flat[j], gc2.flat[j], gb.flat[j]])))
    if not slice_best:
        return math.inf, {}
    slice_best.sort(key=lambda item: item[0])
    lows = np.array([-sqk0, -box[0], -box[1], beta - dev_max])
    highs = np.array([sqk0, box[0], box[1], b_low])
    width0 = np.array([
        z_axis[1] - z_axis[0],
        (c1_axis[1] - c1_axis[0]) if planar else 0.0,
        c2_axis[1] - c2_axis[0],
        b_axis[1] - b_axis[0],
    ])
    best, arg = slice_best[0]

    def scalar_obj(x):
        return float(evaluate(*(np.array(v) for v in x)))

    def raw_parts(x):
        z, c1, c2, b = x
        cn2 = c1 * c1 * gyy + 2 * c1 * c2 * gxy + c2 * c2 * gxx
        s = math.sqrt(max(1.0 - cn2, 1e-300))
        delta = beta - b
        ay = z * s / k0 - delta * c1
        ax = -z * s * b / k0 - delta * c2
        vn2 = ay * ay * gyy + 2 * ay * ax * gxy + ax * ax * gxx
        py, px = -z * c1, s - z * c2
        pval = r2 * (py * py * gyy + 2 * py * px * gxy + px * px * gxx) - z * z
        ds = v / k0 * z * z / (k0 - z * z)
        return delta, vn2, pval, ds, cn2

    def smooth_obj(x):
        delta, vn2, *_ = raw_parts(x)
        return delta * delta / max(vn2, 1e-300)

    cons = [
        {"type": "ineq", "fun": lambda x: raw_parts(x)[2]},
        {"type": "ineq", "fun": lambda x: raw_parts(x)[3] - raw_parts(x)[0] ** 2},
        {"type": "ineq", "fun": lambda x: (min(a_hi, 1.0 - 1e-9)) ** 2 - raw_parts(x)[4]},
        {"type": "ineq", "fun": lambda x: raw_parts(x)[4] - c_low ** 2},
        {"type": "ineq", "fun": lambda x: b_low - x[3]},
        {"type": "ineq", "fun": lambda x: k0 * (1 - 1e-9) - x[0] ** 2},
    ]
    m = 7
    for f0, x0 in slice_best[:n_starts]:
        x0 = x0.copy()
        width = width0.copy()
        for _ in range(refine_rounds):
            axes = [np.clip(np.linspace(x0[i] - width[i], x0[i] + width[i], m), lows[i], highs[i]) for i in range(4)]
            g = np.meshgrid(*axes, indexing="ij")
            val = evaluate(*g)
            j = int(np.argmin(val))
            if val.flat[j] < f0:
                f0 = float(val.flat[j])
                x0 = np.array([gg.flat[j] for gg in g])
            else:
                width = width * 0.5
            if np.all(width < 1e-13):
                break
        if f0 < best:
            best, arg = f0, x0
        try:
            res = minimize(smooth_obj, x0, method="SLSQP", constraints=cons,
                           options={"ftol": 1e-15, "maxiter": 500})
        except (ValueError, ArithmeticError):
            continue
        x = np.asarray(res.x, float)
        if not planar:
            x[1] = 0.0
        # the polish is accepted only if the point passes the strict feasibility test
        fx = scalar_obj(x)
        if fx < best:
            best, arg = fx, x
    return best, {"z": float(arg[0]), "c1": float(arg[1]), "c2": float(arg[2]), "b": float(arg[3])}
