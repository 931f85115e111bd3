"""Calibration diagnostics for the calibration covariates ``W1``.

``rho_k`` compares the treatment-index contribution of one covariate (or a
group of covariates) with that of the remaining calibration covariates.  It
gives a reference scale for ``rx_bar``.  ``c_k`` is the square root of the
partial R-squared of one calibration covariate on the others given the
controls; its range across ``k`` suggests values for ``[c_low, c_high]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .covkernel import DEGENERATE_VAR, CovarianceModel, NormalizedModel, normalize, partial_r2, solve_checked
from .errors import DegenerateIndex, RoleMismatch
from .identify import breakdown_point_rx


def _calibration_labels(model: CovarianceModel, group: Iterable[str]) -> tuple[list[str], list[str]]:
    w1 = list(model.calibration)
    grp = list(dict.fromkeys(group))
    if len(w1) < 2:
        raise RoleMismatch("at least two calibration covariates are required")
    missing = [g for g in grp if g not in w1]
    if missing:
        raise RoleMismatch(f"not calibration covariates: {', '.join(missing)}")
    rest = [lab for lab in w1 if lab not in grp]
    if not grp or not rest:
        raise RoleMismatch("the group must be a nonempty proper subset of the calibration covariates")
    return grp, rest


def treatment_coefficients(nm: NormalizedModel) -> dict[str, float]:
    """Coefficients of ``W1`` in the regression of ``X`` on ``W1`` (controls partialled out)."""
    base = nm.base
    w1 = list(base.calibration)
    pi = solve_checked(base.cov(w1, w1), base.cov(w1, [base.treatment])[:, 0])
    return dict(zip(w1, (float(v) for v in pi)))


def rho_k(nm: NormalizedModel, k: str | Iterable[str]) -> float:
    """Relative importance of covariate ``k`` in the treatment equation.

    Parameters
    ----------
    nm : NormalizedModel
    k : str or iterable of str
        A calibration label, or a set of labels for the grouped version.

    Returns
    -------
    float
        ``sd(pi_k' W_k) / sd(pi_{-k}' W_{-k})``; ``inf`` if only the
        denominator index is degenerate.

    Raises
    ------
    DegenerateIndex
        If both indices have (numerically) zero variance.
    """
    base = nm.base
    group = [k] if isinstance(k, str) else list(k)
    grp, rest = _calibration_labels(base, group)
    coef = treatment_coefficients(nm)
    pg = np.array([coef[g] for g in grp])
    pr = np.array([coef[r] for r in rest])
    num = float(pg @ base.cov(grp, grp) @ pg)
    den = float(pr @ base.cov(rest, rest) @ pr)
    if den <= DEGENERATE_VAR:
        if num <= DEGENERATE_VAR:
            raise DegenerateIndex("both treatment indices are degenerate")
        return math.inf
    return math.sqrt(max(num, 0.0) / den)


def c_k(model: CovarianceModel, k: str) -> float:
    """Square root of the partial R-squared of ``W1k`` on ``W1,-k`` given ``W0``."""
    _, rest = _calibration_labels(model, [k])
    return math.sqrt(partial_r2(model, k, rest, model.controls))


@dataclass(frozen=True)
class CalibrationReport:
    rho: dict[str, float]
    c: dict[str, float]
    c_sq: dict[str, float]
    breakdown_reference: float | None = None
    suggested_c_range: tuple[float, float] = field(default=(0.0, 1.0))

    def as_dict(self) -> dict:
        return {
            "rho": dict(self.rho),
            "c": dict(self.c),
            "c_sq": dict(self.c_sq),
            "breakdown_reference": self.breakdown_reference,
            "suggested_c_range": list(self.suggested_c_range),
        }


def calibration_report(model: CovarianceModel, with_breakdown: bool = True) -> CalibrationReport:
    """Compute ``rho_k`` and ``c_k`` for every calibration covariate."""
    nm = normalize(model)
    labels = list(model.calibration)
    rho = {k: rho_k(nm, k) for k in labels}
    c = {k: c_k(model, k) for k in labels}
    c_sq = {k: v * v for k, v in c.items()}
    ref = breakdown_point_rx(nm) if with_breakdown else None
    return CalibrationReport(rho, c, c_sq, ref, (min(c.values()), max(c.values())))

