"""HTTP service exposing the sensitivity computations.

Run with ``uvicorn ovbsens.service.app:app``.  The command-line client talks
to this application, either in-process or over HTTP.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Callable, Iterator

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..calibrate import calibration_report, rho_k
from ..covkernel import NormalizedModel, normalize
from ..errors import AllDegenerate, DataError, DomainError, OvbError, UsageError
from ..frontier import bounds_rx_ry, common_breakdown, frontier_curve
from ..identify import (
    SensitivityBudget,
    bounds_rx_c,
    breakdown_point_rx,
    breakdown_point_rx_c,
)
from ..oracle import brute_force_search
from .. import simsel
from .schemas import (
    BoundsRequest,
    BoundsResponse,
    BoundsRow,
    BreakdownRequest,
    BreakdownResponse,
    CalibrateRequest,
    CalibrateResponse,
    ErrorOut,
    FrontierCurveOut,
    FrontierPointOut,
    FrontierRequest,
    FrontierResponse,
    Histogram,
    IntervalOut,
    MetricOut,
    ModelSummary,
    SamplingSummaryOut,
    SimselRequest,
    SimselResponse,
    VerifyRequest,
    VerifyResponse,
)

app = FastAPI(title="ovbsens", version=__version__)


@app.exception_handler(OvbError)
async def _ovb_error(request: Request, exc: OvbError) -> JSONResponse:
    if isinstance(exc, UsageError):
        status = 400
    elif isinstance(exc, DataError):
        status = 422
    else:
        status = 409
    body = ErrorOut(error=type(exc).__name__, message=str(exc), exit_code=exc.exit_code)
    return JSONResponse(status_code=status, content=body.model_dump())


@contextmanager
def _mapper(threads: int) -> Iterator[Callable]:
    """Order-preserving map, threaded when ``threads > 1``."""
    if threads <= 1:
        yield map
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        yield pool.map


def _interval(nm: NormalizedModel, rx: float, ry: float, c_low: float, c_high: float):
    if math.isinf(ry):
        return bounds_rx_c(nm, rx, c_low, c_high)
    return bounds_rx_ry(nm, rx, ry, c_low, c_high)


def _summary_out(s: simsel.SamplingSummary) -> SamplingSummaryOut:
    return SamplingSummaryOut(**s.as_dict())


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/bounds", response_model=BoundsResponse)
def bounds(req: BoundsRequest) -> BoundsResponse:
    """Identified sets over a grid of ``rx_bar`` values."""
    nm = normalize(req.model.to_model())

    def row(rx: float) -> BoundsRow:
        iv = _interval(nm, rx, req.ry_bar, req.c_low, req.c_high)
        out = BoundsRow(rx_bar=rx, lower=iv.lower, upper=iv.upper, finite=iv.finite)
        if req.verify:
            budget = SensitivityBudget(rx, req.ry_bar, req.c_low, req.c_high)
            orc, _ = brute_force_search(nm, budget, req.verify_samples, req.seed)
            out.oracle_lower = orc.lower
            out.oracle_upper = orc.upper
            out.oracle_contained = bool(iv.lower <= orc.lower and orc.upper <= iv.upper)
        return out

    with _mapper(req.threads) as m:
        rows = list(m(row, req.rx_grid))
    summary = ModelSummary(
        beta_med=nm.beta_med,
        r2_x_w1=nm.r2_x_w1,
        r2_yx_dot_w1=nm.r2_yx_dot_w1,
        d1=nm.d1,
        breakdown_point_rx=breakdown_point_rx(nm),
        breakdown_point_rx_c=breakdown_point_rx_c(nm, req.c_low, req.c_high),
    )
    return BoundsResponse(summary=summary, rows=rows)


@app.post("/breakdown", response_model=BreakdownResponse)
def breakdown(req: BreakdownRequest) -> BreakdownResponse:
    """Breakdown points for the conclusion ``beta_long > b_low``.

    When ``beta_med`` is negative and ``b_low`` is zero the conclusion is
    read as ``beta_long < 0`` and the outcome is sign-flipped.
    """
    model = req.model.to_model()
    nm = normalize(model)
    b_low = req.b_low
    if nm.beta_med < 0 and b_low == 0.0:
        nm = nm.mirror()
    if b_low == 0.0 and (req.c_low, req.c_high) == (0.0, 1.0):
        rx_bp = breakdown_point_rx(nm)
    else:
        rx_bp = breakdown_point_rx_c(nm, req.c_low, req.c_high, b_low=b_low)
    common = common_breakdown(nm, b_low, req.c_low, req.c_high)
    sampling = None
    if req.sampling_d1 is not None:
        dgp = simsel.dgp_from_model(model)
        mode, values = simsel.evaluate_designs(dgp, req.sampling_d1, req.draws, req.seed, req.threads)
        sampling = {}
        for name, vals in values.items():
            try:
                sampling[name] = _summary_out(simsel.summarize(vals, mode))
            except AllDegenerate:
                continue
    return BreakdownResponse(
        beta_med=normalize(model).beta_med,
        b_low=b_low,
        rx_bp=rx_bp,
        rx_bp_percent=100.0 * rx_bp,
        common_bp=common,
        common_bp_percent=100.0 * common,
        rx_bp_le_common_bp=bool(rx_bp <= common + 1e-8),
        sampling=sampling,
    )


@app.post("/frontier", response_model=FrontierResponse)
def frontier(req: FrontierRequest) -> FrontierResponse:
    """Breakdown frontier curves, one per value of ``c_high``."""
    nm = normalize(req.model.to_model())
    curves = []
    with _mapper(req.threads) as m:
        for ch in req.c_high:
            cur = frontier_curve(nm, req.rx_grid, req.b_low, req.c_low, ch, req.restarts, mapper=m)
            pts = [FrontierPointOut(rx_bar=p.rx_bar, ry_bf=p.ry_bf, case_tag=p.case_tag) for p in cur.points]
            curves.append(FrontierCurveOut(b_low=cur.b_low, c_low=cur.c_low, c_high=cur.c_high, points=pts))
    return FrontierResponse(curves=curves)


@app.post("/calibrate", response_model=CalibrateResponse)
def calibrate(req: CalibrateRequest) -> CalibrateResponse:
    model = req.model.to_model()
    rep = calibration_report(model)
    nm = normalize(model)
    group_rho = {name: rho_k(nm, labels) for name, labels in req.groups.items()}
    return CalibrateResponse(
        rho=rep.rho,
        c=rep.c,
        c_sq=rep.c_sq,
        group_rho=group_rho,
        breakdown_reference=rep.breakdown_reference,
        suggested_c_range=rep.suggested_c_range,
    )


def _build_dgp(req: SimselRequest) -> simsel.SelectionDgp:
    if req.model is not None:
        return simsel.dgp_from_model(req.model.to_model())
    d = req.dgp
    if d.kind == "delta-nonconv":
        p = d.params
        return simsel.make_dgp_delta_nonconv(p.get("C", 1.0), p.get("r", 1.0), p.get("rho", 0.5), d.K)
    return simsel.make_dgp(d.kind, d.params, d.K, d.seed)


@app.post("/simsel", response_model=SimselResponse)
def simsel_endpoint(req: SimselRequest) -> SimselResponse:
    """Covariate-sampling distributions of ``r_X``, ``delta_orig`` and ``delta_resid``."""
    dgp = _build_dgp(req)
    if not 1 <= req.d1 <= dgp.K - 1:
        raise DomainError("d1 must lie in [1, K - 1]")
    mode, values = simsel.evaluate_designs(dgp, req.d1, req.draws, req.seed, req.threads, req.cap)
    metrics = {}
    for name, vals in values.items():
        try:
            summ = simsel.summarize(vals, mode)
        except AllDegenerate:
            if name == "r_x":
                raise
            continue
        metrics[name] = MetricOut(summary=_summary_out(summ), histogram=Histogram(**simsel.histogram(vals, req.bins)))
    r = (dgp.K - req.d1) / req.d1
    rx_lim = simsel.rx_limit(r, 0.0) if dgp.exch_rho is not None else None
    dr_lim, note = None, None
    if dgp.kind == "delta-nonconv":
        dr_lim = dgp.params["C"]
        note = f"delta_resid converges to C when d2/d1 = {dgp.params['r']:g}"
    return SimselResponse(
        mode=mode,
        K=dgp.K,
        d1=req.d1,
        n_designs=len(values["r_x"]),
        kind=dgp.kind,
        validity=dict(dgp.validity),
        metrics=metrics,
        rx_limit=rx_lim,
        delta_resid_limit=dr_lim,
        note=note,
    )


@app.post("/verify", response_model=VerifyResponse)
def verify(req: VerifyRequest) -> VerifyResponse:
    """Compare the computed identified set with the brute-force oracle."""
    nm = normalize(req.model.to_model())
    iv = _interval(nm, req.rx_bar, req.ry_bar, req.c_low, req.c_high)
    budget = SensitivityBudget(req.rx_bar, req.ry_bar, req.c_low, req.c_high)
    orc, wit = brute_force_search(nm, budget, req.samples, req.seed)
    contained = bool(iv.lower <= orc.lower and orc.upper <= iv.upper)
    if iv.finite and iv.dev > 0:
        gap = (iv.dev - orc.dev) / iv.dev
    else:
        gap = 0.0 if iv.dev == 0 else math.inf
    method = "closed form" if math.isinf(req.ry_bar) else "frontier duality"
    return VerifyResponse(
        method=method,
        computed=IntervalOut(lower=iv.lower, upper=iv.upper, dev=iv.dev, finite=iv.finite),
        oracle=IntervalOut(lower=orc.lower, upper=orc.upper, dev=orc.dev, finite=orc.finite),
        contained=contained,
        relative_half_width_gap=gap,
        witnesses_feasible=all(w.feasible for w in wit),
        n_witnesses=len(wit),
    )
