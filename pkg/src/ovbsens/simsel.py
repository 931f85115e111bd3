"""Covariate-sampling distributions of selection ratios.

A data generating process (:class:`SelectionDgp`) fixes the coefficients
``pi`` (treatment equation) and ``gamma`` (outcome equation) on ``K``
potentially observable covariates with variance matrix ``var_w``.  A design
``s`` marks which ``d1`` covariates are observed.  For each design we compute

* ``r_X(s)``, the ratio of the standard deviations of the unobserved and
  observed parts of the treatment index;
* ``delta_orig(s)``, the unresidualized coefficient-ratio parameter;
* ``delta_resid(s)``, its version with the unobservables residualized on the
  observables.

Designs are either enumerated exactly (lexicographic ``d1``-subsets) or drawn
uniformly at random with a seeded partial Fisher-Yates shuffle.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping

import numpy as np
from numpy.typing import NDArray

from .covkernel import CovarianceModel, partial_out, solve_checked
from .errors import AllDegenerate, AssumptionViolated, CapExceeded, DomainError

DEFAULT_CAP = 5_000_000
DEGENERATE_TOL = 1e-14
BLOCK = 4096
VARIANCE_BOUND_D = 100.0
LOWER_VARIANCE_EPS = 1e-3
KINDS = ("ma1", "ar1", "exchangeable", "factor", "custom", "delta-nonconv")


@dataclass(frozen=True)
class SelectionDgp:
    """Population coefficients and covariate variance for covariate sampling.

    ``exch_rho`` is set when ``var_w`` is exactly exchangeable with unit
    variances, which enables closed-form evaluation for large ``K``.
    """

    K: int
    pi: NDArray
    gamma: NDArray
    var_w: NDArray
    kind: str = "custom"
    exch_rho: float | None = None
    params: Mapping[str, float] = field(default_factory=dict)
    validity: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise DomainError(f"unknown dgp kind {self.kind!r}")
        pi = np.asarray(self.pi, float)
        gamma = np.asarray(self.gamma, float)
        var_w = np.asarray(self.var_w, float)
        if pi.shape != (self.K,) or gamma.shape != (self.K,) or var_w.shape != (self.K, self.K):
            raise DomainError("pi, gamma and var_w must match K")
        for arr in (pi, gamma, var_w):
            arr.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "var_w", var_w)


@dataclass(frozen=True)
class Design:
    s: NDArray

    @property
    def d1(self) -> int:
        return int(np.count_nonzero(self.s))

    def complement(self) -> "Design":
        return Design(~np.asarray(self.s, bool))


@dataclass(frozen=True)
class SamplingSummary:
    n: int
    mode: str
    prob_le_1: float
    min: float
    p25: float
    median: float
    p75: float
    max: float
    mean: float
    sd: float
    n_degenerate: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# DGP generators


def _coefficients(rng: np.random.Generator, K: int, C: float, scale: float) -> NDArray:
    # magnitudes in [C/2, C] / scale, so the bounded-coefficient condition holds with constant C
    return C * rng.uniform(0.5, 1.0, K) / scale


def _index_variance(pi: NDArray, var_w: NDArray) -> float:
    return float(pi @ var_w @ pi)


def _common_checks(report: dict, pi: NDArray, var_w: NDArray, bound: float, tag: str) -> None:
    if np.max(np.abs(pi)) > bound * (1 + 1e-12):
        raise AssumptionViolated(f"{tag}.2 (bounded coefficients) fails")
    report[f"{tag}.2"] = f"sup|pi| = {np.max(np.abs(pi)):.6g} <= {bound:.6g}"
    var = _index_variance(pi, var_w)
    if not var > LOWER_VARIANCE_EPS:
        raise AssumptionViolated(f"{tag} boundedness from below fails: Var(pi'W) = {var:.3g}")
    report["lower_bound"] = f"Var(pi'W) = {var:.6g} > {LOWER_VARIANCE_EPS}"
    if not (1.0 / VARIANCE_BOUND_D < var < VARIANCE_BOUND_D):
        raise AssumptionViolated(f"B3.1 (nondegenerate and finite variance) fails with D = {VARIANCE_BOUND_D}")
    report["B3.1"] = f"Var(pi'W) in (1/{VARIANCE_BOUND_D:g}, {VARIANCE_BOUND_D:g})"
    report["relative_contribution"] = f"{float(np.sum(pi * pi * np.diag(var_w)) / var):.6g}"


def make_dgp(kind: str, params: Mapping[str, float] | None, K: int, seed: int = 0) -> SelectionDgp:
    """Generate a dgp from one of the structured covariance families.

    Parameters
    ----------
    kind : {"ma1", "ar1", "exchangeable", "factor"}
    params : mapping
        ``rho`` for the first three families; ``R`` (number of factors) and
        ``sigma_e2`` for ``factor``; ``C`` for the coefficient bound in all.
    K : int
        Number of potentially observable covariates.
    seed : int
        Seed for the coefficient magnitudes and factor loadings.

    Notes
    -----
    Coefficients are drawn with magnitudes in ``[C/2, C]`` divided by
    ``sqrt(K)`` (MA and AR) or ``K`` (exchangeable and factor).  The
    validity report records every checked condition; a failed condition
    raises :class:`AssumptionViolated` naming it.
    """
    params = dict(params or {})
    if K < 2:
        raise DomainError("K must be at least 2")
    C = float(params.get("C", 1.0))
    rng = np.random.default_rng(seed)
    idx = np.arange(K)
    gap = np.abs(idx[:, None] - idx[None, :])
    report: dict[str, str] = {}
    exch_rho = None
    if kind == "ma1":
        rho = float(params.get("rho", 0.3))
        if not abs(rho) < 0.5:
            raise AssumptionViolated("C1.1 requires |rho| < 1/2")
        report["C1.1"] = f"|rho| = {abs(rho):g} < 1/2"
        var_w = (gap == 0) + rho * (gap == 1)
        scale, tag = math.sqrt(K), "C1"
    elif kind == "ar1":
        rho = float(params.get("rho", 0.5))
        if not -1.0 < rho < 1.0:
            raise AssumptionViolated("C2.1 requires rho in (-1, 1)")
        report["C2.1"] = f"rho = {rho:g} in (-1, 1)"
        var_w = np.power(rho, gap)  # numpy evaluates 0**0 as 1
        scale, tag = math.sqrt(K), "C2"
    elif kind in ("exchangeable", "exch"):
        kind = "exchangeable"
        rho = float(params.get("rho", 0.5))
        if not 0.0 < rho < 1.0:
            raise AssumptionViolated("C3.1 requires rho in (0, 1)")
        report["C3.1"] = f"rho = {rho:g} in (0, 1)"
        var_w = rho * np.ones((K, K)) + (1.0 - rho) * np.eye(K)
        exch_rho = rho
        scale, tag = float(K), "C3"
    elif kind == "factor":
        R = int(params.get("R", 1))
        sigma_e2 = float(params.get("sigma_e2", 1.0))
        if R < 1:
            raise AssumptionViolated("factor structure requires R >= 1")
        if not sigma_e2 > 0:
            raise AssumptionViolated("factor structure requires sigma_e2 > 0")
        loadings = rng.uniform(0.5, 1.0, (K, R))
        var_w = loadings @ loadings.T + sigma_e2 * np.eye(K)
        report["factor.1"] = f"R = {R}, sigma_e2 = {sigma_e2:g}, loadings in [0.5, 1]"
        scale, tag = float(K), "factor"
    else:
        raise DomainError(f"unknown structured dgp kind {kind!r}")
    var_w = np.asarray(var_w, float)
    pi = _coefficients(rng, K, C, scale)
    gamma = _coefficients(rng, K, C, scale)
    _common_checks(report, pi, var_w, C / scale, tag)
    return SelectionDgp(K, pi, gamma, var_w, kind, exch_rho, params, report)


def make_dgp_delta_nonconv(C: float, r: float, rho: float, K: int) -> SelectionDgp:
    """Exchangeable dgp under which ``delta_resid`` converges to ``C``.

    Uses ``C' = (C (r + 2) - r) / 2``, ``gamma_i = 2/K`` on even positions
    (1-based) and zero elsewhere, and ``pi_i = 2(1 - C')/K`` on odd and
    ``2 C'/K`` on even positions.
    """
    if not 0.0 < rho < 1.0:
        raise AssumptionViolated("C3.1 requires rho in (0, 1)")
    cp = (C * (r + 2.0) - r) / 2.0
    pos = np.arange(1, K + 1)
    even = pos % 2 == 0
    gamma = np.where(even, 2.0 / K, 0.0)
    pi = np.where(even, 2.0 * cp / K, 2.0 * (1.0 - cp) / K)
    var_w = rho * np.ones((K, K)) + (1.0 - rho) * np.eye(K)
    params = {"C": C, "r": r, "rho": rho, "C_prime": cp}
    report = {"C3.1": f"rho = {rho:g} in (0, 1)"}
    return SelectionDgp(K, pi, gamma, var_w, "delta-nonconv", rho, params, report)


def dgp_from_model(model: CovarianceModel) -> SelectionDgp:
    """Population dgp implied by a covariance model over ``(Y, X, W)``.

    Controls are partialled out first.  All calibration covariates form the
    potentially observable set ``W``; ``pi`` is the coefficient vector of
    ``X`` on ``W`` and ``gamma`` the ``W`` coefficients in the regression of
    ``Y`` on ``(X, W)``.
    """
    base = partial_out(model, model.controls)
    w = list(base.calibration)
    x, y = base.treatment, base.outcome
    var_w = base.cov(w, w)
    pi = solve_checked(var_w, base.cov(w, [x])[:, 0])
    xw = [x] + w
    coef = solve_checked(base.cov(xw, xw), base.cov(xw, [y])[:, 0])
    report = {"source": "covariance model with controls partialled out"}
    return SelectionDgp(len(w), pi, coef[1:], var_w, "custom", None, {}, report)


def rx_limit(r: float, c: float) -> float:
    """Probability limit of ``r_X(S)`` when ``d2/d1 -> r``."""
    if not r > 0 or not c >= 0:
        raise DomainError("rx_limit requires r > 0 and c >= 0")
    return math.sqrt(r * (r + c) / (1.0 + r * c))


# ---------------------------------------------------------------------------
# Designs


def n_designs(K: int, d1: int) -> int:
    return math.comb(K, d1)


def _check_d1(K: int, d1: int) -> None:
    if not 0 <= d1 <= K:
        raise DomainError("d1 must lie in [0, K]")


def enumerate_designs(K: int, d1: int, cap: int = DEFAULT_CAP) -> Iterator[Design]:
    """All ``d1``-subsets of ``K`` covariates in lexicographic order."""
    for batch in enumerate_batches(K, d1, cap=cap):
        for row in batch:
            yield Design(row.copy())


def enumerate_batches(K: int, d1: int, cap: int = DEFAULT_CAP, chunk: int = 65536) -> Iterator[NDArray]:
    """Lexicographic enumeration as boolean mask batches of at most ``chunk`` rows."""
    _check_d1(K, d1)
    total = n_designs(K, d1)
    if total > cap:
        raise CapExceeded(f"C({K},{d1}) = {total} exceeds the enumeration cap {cap}; use sampling")
    combos = itertools.combinations(range(K), d1)
    while True:
        block = list(itertools.islice(combos, chunk))
        if not block:
            return
        idx = np.array(block, dtype=np.intp).reshape(len(block), d1)
        masks = np.zeros((len(block), K), dtype=bool)
        np.put_along_axis(masks, idx, True, axis=1)
        yield masks


def _sample_block(K: int, d1: int, n: int, seed: int, block: int) -> NDArray:
    rng = np.random.default_rng([seed, block])
    perm = np.tile(np.arange(K), (n, 1))
    rows = np.arange(n)
    for i in range(d1):
        j = rng.integers(i, K, size=n)
        a = perm[rows, i].copy()
        perm[rows, i] = perm[rows, j]
        perm[rows, j] = a
    masks = np.zeros((n, K), dtype=bool)
    np.put_along_axis(masks, perm[:, :d1], True, axis=1)
    return masks


def sample_batches(K: int, d1: int, n: int, seed: int) -> Iterator[NDArray]:
    """Uniform random ``d1``-subsets as mask batches.

    Draw ``i`` depends only on ``(seed, i)``: draws are generated in fixed
    blocks of 4096, each with its own generator seeded by ``(seed, block)``.
    """
    _check_d1(K, d1)
    if n < 1:
        raise DomainError("n must be at least 1")
    nblocks = -(-n // BLOCK)
    for b in range(nblocks):
        size = min(BLOCK, n - b * BLOCK)
        yield _sample_block(K, d1, size, seed, b)


def sample_designs(K: int, d1: int, n: int, seed: int) -> Iterator[Design]:
    for batch in sample_batches(K, d1, n, seed):
        for row in batch:
            yield Design(row.copy())


# ---------------------------------------------------------------------------
# Per-design quantities (batched)


def _quad(dgp: SelectionDgp, a: NDArray, b: NDArray) -> NDArray:
    """Row-wise ``a_i' Var(W) b_i``."""
    if dgp.exch_rho is not None:
        rho = dgp.exch_rho
        return rho * a.sum(axis=1) * b.sum(axis=1) + (1.0 - rho) * np.einsum("ij,ij->i", a, b)
    return np.einsum("ij,ij->i", a @ dgp.var_w, b)


def r_x_batch(dgp: SelectionDgp, masks: NDArray) -> NDArray:
    """``r_X`` for each design row; ``inf`` or ``nan`` flag degenerate rows."""
    m = masks.astype(float)
    p1 = dgp.pi * m
    p2 = dgp.pi * (1.0 - m)
    q1 = _quad(dgp, p1, p1)
    q2 = _quad(dgp, p2, p2)
    out = np.full(len(m), np.nan)
    fine = q1 >= DEGENERATE_TOL
    with np.errstate(invalid="ignore", divide="ignore"):
        out[fine] = np.sqrt(np.maximum(q2[fine], 0.0) / q1[fine])
    out[~fine & (q2 >= DEGENERATE_TOL)] = np.inf
    return out


def delta_orig_batch(dgp: SelectionDgp, masks: NDArray) -> NDArray:
    m = masks.astype(float)
    g1 = dgp.gamma * m
    g2 = dgp.gamma * (1.0 - m)
    vpi = dgp.var_w @ dgp.pi
    c1, c2 = g1 @ vpi, g2 @ vpi
    v1, v2 = _quad(dgp, g1, g1), _quad(dgp, g2, g2)
    return _ratio_of_ratios(c2, v2, c1, v1)


def _ratio_of_ratios(c_num, v_num, c_den, v_den) -> NDArray:
    scale = max(1.0, float(np.max(np.abs(c_den), initial=0.0)))
    bad = (v_num < DEGENERATE_TOL) | (v_den < DEGENERATE_TOL) | (np.abs(c_den) < DEGENERATE_TOL * scale)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (c_num / v_num) / (c_den / v_den)
    return np.where(bad, np.nan, out)


def _resid_components_exch(dgp: SelectionDgp, masks: NDArray) -> tuple[NDArray, NDArray, NDArray, NDArray]:
    rho = dgp.exch_rho
    m = masks.astype(float)
    d1 = m.sum(axis=1)
    kappa = rho * (1.0 - rho) / ((d1 - 1.0) * rho + 1.0)
    g1, g2 = dgp.gamma * m, dgp.gamma * (1.0 - m)
    p1, p2 = dgp.pi * m, dgp.pi * (1.0 - m)
    sg1, sg2, sp1, sp2 = g1.sum(1), g2.sum(1), p1.sum(1), p2.sum(1)
    dot = lambda a, b: np.einsum("ij,ij->i", a, b)  # noqa: E731
    # projection of W2 onto W1 removes (rho - kappa) sum(a) sum(b) from a'Var(W2)b
    corr_c = (rho - kappa) * sg2 * sp2
    corr_v = (rho - kappa) * sg2 * sg2
    c_num = kappa * sg2 * sp2 + (1.0 - rho) * dot(g2, p2)
    v_num = kappa * sg2 * sg2 + (1.0 - rho) * dot(g2, g2)
    c_den = rho * sg1 * (sp1 + sp2) + (1.0 - rho) * dot(g1, p1) + rho * sg2 * sp1 + corr_c
    v_den = rho * sg1 * sg1 + (1.0 - rho) * dot(g1, g1) + 2.0 * rho * sg2 * sg1 + corr_v
    return c_num, v_num, c_den, v_den


def _resid_components_generic(dgp: SelectionDgp, masks: NDArray) -> tuple[NDArray, NDArray, NDArray, NDArray]:
    V = dgp.var_w
    m = masks.astype(float)
    g1, g2 = dgp.gamma * m, dgp.gamma * (1.0 - m)
    p1, p2 = dgp.pi * m, dgp.pi * (1.0 - m)
    vg = g2 @ V
    vp = p2 @ V
    vpi = V @ dgp.pi
    dot = lambda a, b: np.einsum("ij,ij->i", a, b)  # noqa: E731
    corr_c = np.zeros(len(m))
    corr_v = np.zeros(len(m))
    d1_counts = masks.sum(axis=1)
    for d1 in np.unique(d1_counts):
        if d1 == 0:
            continue
        rows = np.flatnonzero(d1_counts == d1)
        idx = np.nonzero(masks[rows])[1].reshape(len(rows), d1)
        v11 = V[idx[:, :, None], idx[:, None, :]]
        rhs = np.stack([np.take_along_axis(vg[rows], idx, 1), np.take_along_axis(vp[rows], idx, 1)], axis=2)
        sol = np.linalg.solve(v11, rhs)
        corr_c[rows] = np.einsum("ij,ij->i", rhs[:, :, 0], sol[:, :, 1])
        corr_v[rows] = np.einsum("ij,ij->i", rhs[:, :, 0], sol[:, :, 0])
    # numerator and denominator are assembled separately so that exogenous
    # designs (zero cross-covariance) reproduce delta_orig without cancellation
    c_num = dot(vg, p2) - corr_c
    v_num = dot(vg, g2) - corr_v
    c_den = g1 @ vpi + dot(vg, p1) + corr_c
    v_den = dot(g1 @ V, g1) + 2.0 * dot(vg, g1) + corr_v
    return c_num, v_num, c_den, v_den


def delta_resid_batch(dgp: SelectionDgp, masks: NDArray) -> NDArray:
    """``delta_resid`` for each design row; ``nan`` flags degenerate rows."""
    if dgp.exch_rho is not None:
        parts = _resid_components_exch(dgp, masks)
    else:
        parts = _resid_components_generic(dgp, masks)
    return _ratio_of_ratios(*parts)


def _one(fn: Callable[[SelectionDgp, NDArray], NDArray], dgp: SelectionDgp, s: Design | NDArray) -> float:
    s = s.s if isinstance(s, Design) else np.asarray(s, bool)
    return float(fn(dgp, s[None, :])[0])


def r_x_of_s(dgp: SelectionDgp, s: Design | NDArray) -> float:
    """Selection ratio ``r_X`` at design ``s``."""
    return _one(r_x_batch, dgp, s)


def delta_orig_of_s(dgp: SelectionDgp, s: Design | NDArray) -> float:
    return _one(delta_orig_batch, dgp, s)


def delta_resid_of_s(dgp: SelectionDgp, s: Design | NDArray) -> float:
    return _one(delta_resid_batch, dgp, s)


# ---------------------------------------------------------------------------
# Distributions


METRICS: dict[str, Callable[[SelectionDgp, NDArray], NDArray]] = {
    "r_x": r_x_batch,
    "delta_orig": delta_orig_batch,
    "delta_resid": delta_resid_batch,
}


def evaluate_designs(
    dgp: SelectionDgp,
    d1: int,
    draws: int | None = None,
    seed: int = 0,
    threads: int = 1,
    cap: int = DEFAULT_CAP,
    metrics: tuple[str, ...] = ("r_x", "delta_orig", "delta_resid"),
) -> tuple[str, dict[str, NDArray]]:
    """Evaluate metrics over all designs (``draws`` is None) or a random sample.

    Batches may be processed on several threads; results are concatenated in
    batch order, so the output does not depend on ``threads``.
    """
    if draws is None:
        mode, batches = "exact", enumerate_batches(dgp.K, d1, cap=cap)
    else:
        mode, batches = "monte-carlo", sample_batches(dgp.K, d1, draws, seed)

    def work(masks: NDArray) -> dict[str, NDArray]:
        return {name: METRICS[name](dgp, masks) for name in metrics}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, batches))
    else:
        parts = [work(b) for b in batches]
    out = {name: np.concatenate([p[name] for p in parts]) if parts else np.empty(0) for name in metrics}
    return mode, out


def summarize(values: NDArray, mode: str = "exact") -> SamplingSummary:
    """Summary statistics over non-degenerate values.

    Infinite and NaN values are treated as degenerate and counted apart.
    Percentiles interpolate linearly between order statistics; ``sd`` is the
    population standard deviation over designs.
    """
    values = np.asarray(values, float)
    ok = np.isfinite(values)
    v = values[ok]
    if v.size == 0:
        raise AllDegenerate("every design is degenerate")
    p25, med, p75 = np.percentile(v, [25, 50, 75])
    return SamplingSummary(
        n=int(v.size),
        mode=mode,
        prob_le_1=float(np.count_nonzero(v <= 1.0) / v.size),
        min=float(v.min()),
        p25=float(p25),
        median=float(med),
        p75=float(p75),
        max=float(v.max()),
        mean=float(v.mean()),
        sd=float(v.std()),
        n_degenerate=int(values.size - v.size),
    )


def histogram(values: NDArray, bins: int = 20) -> dict:
    v = np.asarray(values, float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return {"edges": [], "counts": []}
    counts, edges = np.histogram(v, bins=bins)
    return {"edges": edges.tolist(), "counts": counts.tolist()}
