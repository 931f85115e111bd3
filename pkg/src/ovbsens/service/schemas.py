"""Request and response models for the HTTP service.

Reals in responses go through :func:`ovbsens.numfmt.encode_real`, so they
carry at most 12 significant digits and infinities travel as ``"inf"``.
Requests accept the same string spellings.
"""

from __future__ import annotations

from typing import Annotated, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, PlainSerializer, field_validator, model_validator

from ..covkernel import CovarianceModel
from ..numfmt import encode_real

Real = Annotated[float, PlainSerializer(encode_real, return_type=float | str, when_used="json")]
Prob = Annotated[float, Field(ge=0.0, le=1.0)]
NonNeg = Annotated[float, Field(ge=0.0)]


class CovarianceIn(BaseModel):
    """A labelled covariance matrix together with the role of every label."""

    labels: list[str]
    sigma: list[list[float]]
    roles: dict[str, Literal["outcome", "treatment", "calibration", "control"]]

    @model_validator(mode="after")
    def _square(self) -> "CovarianceIn":
        p = len(self.labels)
        if len(self.sigma) != p or any(len(row) != p for row in self.sigma):
            raise ValueError("sigma must be a square matrix matching labels")
        return self

    def to_model(self) -> CovarianceModel:
        keep = [i for i, lab in enumerate(self.labels) if lab in self.roles]
        labels = tuple(self.labels[i] for i in keep)
        sigma = np.asarray(self.sigma, float)[np.ix_(keep, keep)]
        return CovarianceModel(sigma, labels, {lab: self.roles[lab] for lab in labels})

    @classmethod
    def from_model(cls, model: CovarianceModel) -> "CovarianceIn":
        return cls(labels=list(model.labels), sigma=model.sigma.tolist(), roles=dict(model.roles))


class ErrorOut(BaseModel):
    error: str
    message: str
    exit_code: int


# -- bounds ----------------------------------------------------------------


class BoundsRequest(BaseModel):
    model: CovarianceIn
    rx_grid: list[NonNeg] = Field(min_length=1)
    ry_bar: NonNeg = float("inf")
    c_low: Prob = 0.0
    c_high: Prob = 1.0
    verify: bool = False
    verify_samples: int = Field(100_000, ge=100)
    seed: int = 0
    threads: int = Field(1, ge=1)

    @field_validator("rx_grid")
    @classmethod
    def _sorted(cls, v: list[float]) -> list[float]:
        if any(b < a for a, b in zip(v, v[1:])):
            raise ValueError("rx_grid must be sorted")
        return v


class BoundsRow(BaseModel):
    rx_bar: Real
    lower: Real
    upper: Real
    finite: bool
    oracle_lower: Optional[Real] = None
    oracle_upper: Optional[Real] = None
    oracle_contained: Optional[bool] = None


class ModelSummary(BaseModel):
    beta_med: Real
    r2_x_w1: Real
    r2_yx_dot_w1: Real
    d1: int
    breakdown_point_rx: Real
    breakdown_point_rx_c: Real


class BoundsResponse(BaseModel):
    summary: ModelSummary
    rows: list[BoundsRow]


# -- breakdown -------------------------------------------------------------


class BreakdownRequest(BaseModel):
    model: CovarianceIn
    b_low: float = 0.0
    c_low: Prob = 0.0
    c_high: Prob = 1.0
    sampling_d1: Optional[int] = Field(None, ge=1)
    draws: Optional[int] = Field(None, ge=1)
    seed: int = 0
    threads: int = Field(1, ge=1)


class SamplingSummaryOut(BaseModel):
    n: int
    mode: str
    prob_le_1: Real
    min: Real
    p25: Real
    median: Real
    p75: Real
    max: Real
    mean: Real
    sd: Real
    n_degenerate: int


class BreakdownResponse(BaseModel):
    beta_med: Real
    b_low: Real
    rx_bp: Real
    rx_bp_percent: Real
    common_bp: Real
    common_bp_percent: Real
    rx_bp_le_common_bp: bool
    sampling: Optional[dict[str, SamplingSummaryOut]] = None


# -- frontier --------------------------------------------------------------


class FrontierRequest(BaseModel):
    model: CovarianceIn
    rx_grid: list[NonNeg] = Field(min_length=1)
    b_low: float = 0.0
    c_low: Prob = 0.0
    c_high: list[Prob] = Field(default_factory=lambda: [1.0], min_length=1)
    restarts: int = Field(32, ge=1)
    threads: int = Field(1, ge=1)


class FrontierPointOut(BaseModel):
    rx_bar: Real
    ry_bf: Real
    case_tag: str


class FrontierCurveOut(BaseModel):
    b_low: Real
    c_low: Real
    c_high: Real
    points: list[FrontierPointOut]


class FrontierResponse(BaseModel):
    curves: list[FrontierCurveOut]


# -- calibrate -------------------------------------------------------------


class CalibrateRequest(BaseModel):
    model: CovarianceIn
    groups: dict[str, list[str]] = Field(default_factory=dict)


class CalibrateResponse(BaseModel):
    rho: dict[str, Real]
    c: dict[str, Real]
    c_sq: dict[str, Real]
    group_rho: dict[str, Real]
    breakdown_reference: Optional[Real]
    suggested_c_range: tuple[Real, Real]


# -- simsel ----------------------------------------------------------------


class DgpIn(BaseModel):
    kind: Literal["ma1", "ar1", "exchangeable", "factor", "delta-nonconv"]
    K: int = Field(ge=2)
    params: dict[str, float] = Field(default_factory=dict)
    seed: int = 0


class SimselRequest(BaseModel):
    dgp: Optional[DgpIn] = None
    model: Optional[CovarianceIn] = None
    d1: int = Field(ge=0)
    draws: Optional[int] = Field(None, ge=1)
    seed: int = 0
    threads: int = Field(1, ge=1)
    bins: int = Field(20, ge=1)
    cap: int = Field(5_000_000, ge=1)

    @model_validator(mode="after")
    def _one_source(self) -> "SimselRequest":
        if (self.dgp is None) == (self.model is None):
            raise ValueError("exactly one of dgp and model must be given")
        return self


class Histogram(BaseModel):
    edges: list[Real]
    counts: list[int]


class MetricOut(BaseModel):
    summary: SamplingSummaryOut
    histogram: Histogram


class SimselResponse(BaseModel):
    mode: str
    K: int
    d1: int
    n_designs: int
    kind: str
    validity: dict[str, str]
    metrics: dict[str, MetricOut]
    rx_limit: Optional[Real] = None
    delta_resid_limit: Optional[Real] = None
    note: Optional[str] = None


# -- verify ----------------------------------------------------------------


class VerifyRequest(BaseModel):
    model: CovarianceIn
    rx_bar: NonNeg
    ry_bar: NonNeg = float("inf")
    c_low: Prob = 0.0
    c_high: Prob = 1.0
    samples: int = Field(100_000, ge=100)
    seed: int = 0


class IntervalOut(BaseModel):
    lower: Real
    upper: Real
    dev: Real
    finite: bool


class VerifyResponse(BaseModel):
    method: str
    computed: IntervalOut
    oracle: IntervalOut
    contained: bool
    relative_half_width_gap: Real
    witnesses_feasible: bool
    n_witnesses: int
