"""Closed-form identified sets and breakdown points.

Two families of results live here.  The first restricts only the selection
ratio ``r_X`` and gives an interval centered at ``beta_med`` whose half-width
has a closed form.  The second additionally bounds the endogeneity of the
controls, measured by ``R_{W2 ~ W1}``, to lie in ``[c_low, c_high]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._numerics import BISECT_MAX_ITER, BISECT_TOL, bisect_predicate
from .covkernel import NormalizedModel
from .errors import DomainError, EmptyConstraint, KnifeEdgeViolated

KNIFE_EDGE_TOL = 1e-12


@dataclass(frozen=True)
class SensitivityBudget:
    """Bundle of sensitivity parameters ``(rx_bar, ry_bar, c_low, c_high)``."""

    rx_bar: float
    ry_bar: float = math.inf
    c_low: float = 0.0
    c_high: float = 1.0

    def __post_init__(self) -> None:
        if not self.rx_bar >= 0 or not self.ry_bar >= 0:
            raise DomainError("rx_bar and ry_bar must be nonnegative")
        check_c_range(self.c_low, self.c_high)


@dataclass(frozen=True)
class IdentifiedInterval:
    """Interval ``[lower, upper]`` for the long-regression coefficient.

    ``finite`` is false when either endpoint is infinite.
    """

    lower: float
    upper: float
    center: float
    dev: float
    finite: bool

    @classmethod
    def symmetric(cls, center: float, dev: float) -> "IdentifiedInterval":
        if math.isinf(dev):
            return cls(-math.inf, math.inf, center, math.inf, False)
        return cls(center - dev, center + dev, center, dev, True)

    def contains(self, b: float) -> bool:
        return self.lower <= b <= self.upper

    def as_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "center": self.center,
            "dev": self.dev,
            "finite": self.finite,
        }


def check_c_range(c_low: float, c_high: float) -> None:
    """Validate an endogeneity range ``[c_low, c_high]``."""
    if not (0.0 <= c_low <= 1.0 and 0.0 <= c_high <= 1.0):
        raise DomainError("c_low and c_high must lie in [0, 1]")
    if c_low > c_high or c_low >= 1.0:
        raise EmptyConstraint("[c_low, c_high] must meet [0, 1) in a nonempty set")


def check_knife_edge(nm: NormalizedModel) -> None:
    """Reject models where the treatment is unrelated to ``W1``.

    Also rejects the case ``Cov(W1, Y) = Cov(W1, X) Cov(X, Y)``.
    """
    nx = nm.norm_sigma_w1x
    if nx < KNIFE_EDGE_TOL:
        raise KnifeEdgeViolated("Cov(W1, X) is zero; the calibration covariates carry no information")
    gap = np.linalg.norm(nm.sigma_w1y - nm.sigma_w1x * nm.cov_xy)
    if gap < KNIFE_EDGE_TOL * max(1.0, float(np.linalg.norm(nm.sigma_w1y))):
        raise KnifeEdgeViolated("Cov(W1, Y) equals Cov(W1, X) Cov(X, Y)")


def dev_from_z(nm: NormalizedModel, z: float) -> float:
    """Half-width implied by a bound ``z`` on the omitted-variable index.

    Infinite when ``z**2 >= k0`` (and when ``z`` is infinite).
    """
    if math.isinf(z):
        return math.inf
    z2 = z * z
    if z2 >= nm.k0:
        return math.inf
    return math.sqrt(nm.var_y_perp_xw1 / nm.k0 * z2 / (nm.k0 - z2))


def dev_rx(nm: NormalizedModel, rx_bar: float) -> float:
    """Half-width of the identified set when only ``r_X <= rx_bar`` is imposed."""
    if rx_bar < 0:
        raise DomainError("rx_bar must be nonnegative")
    r2 = rx_bar * rx_bar
    room = nm.k0 - r2
    if room <= 0:
        return math.inf
    return math.sqrt(nm.var_y_perp_xw1 / nm.k0 * r2 * nm.r2_x_w1 / room)


def bounds_rx(nm: NormalizedModel, rx_bar: float) -> IdentifiedInterval:
    """Sharp bounds on ``beta_long`` under ``r_X <= rx_bar``."""
    check_knife_edge(nm)
    return IdentifiedInterval.symmetric(nm.beta_med, dev_rx(nm, rx_bar))


def zbar_x(rx_bar: float, c_low: float, c_high: float, norm_sigma_w1x: float) -> float:
    """Largest attainable ``|z_X(r_X, c)|`` over the sensitivity set.

    The set is ``||r_X|| <= rx_bar`` and ``||c|| in [c_low, c_high]``.
    """
    if rx_bar < 0:
        raise DomainError("rx_bar must be nonnegative")
    if rx_bar * c_high >= 1.0:
        return math.inf
    m = max(min(c_high, rx_bar), c_low)
    return rx_bar * norm_sigma_w1x * math.sqrt(1.0 - m * m) / (1.0 - rx_bar * m)


def dev_rx_c(nm: NormalizedModel, rx_bar: float, c_low: float, c_high: float) -> float:
    return dev_from_z(nm, zbar_x(rx_bar, c_low, c_high, nm.norm_sigma_w1x))


def bounds_rx_c(
    nm: NormalizedModel, rx_bar: float, c_low: float, c_high: float
) -> IdentifiedInterval:
    """Sharp bounds under ``r_X <= rx_bar`` and ``R_{W2~W1} in [c_low, c_high]``."""
    check_c_range(c_low, c_high)
    check_knife_edge(nm)
    return IdentifiedInterval.symmetric(nm.beta_med, dev_rx_c(nm, rx_bar, c_low, c_high))


def breakdown_point_rx(nm: NormalizedModel) -> float:
    """Largest ``rx_bar`` whose identified set excludes sign changes.

    Closed form in the two R-squared values; zero when ``beta_med = 0``.
    """
    check_knife_edge(nm)
    ry = nm.r2_yx_dot_w1
    if ry == 0.0:
        return 0.0
    rx = nm.r2_x_w1
    return math.sqrt(ry / (rx / (1.0 - rx) + ry))


def breakdown_point_rx_c(
    nm: NormalizedModel,
    c_low: float,
    c_high: float,
    b_low: float | None = None,
    tol: float = BISECT_TOL,
    max_iter: int = BISECT_MAX_ITER,
) -> float:
    """Breakdown point for ``rx_bar`` with endogeneity range ``[c_low, c_high]``.

    Found by bisection on the monotone predicate ``dev < |beta_med|``.  With
    ``b_low`` given, the conclusion is ``beta_long > b_low`` instead and the
    predicate becomes ``dev < beta_med - b_low``.
    """
    check_c_range(c_low, c_high)
    check_knife_edge(nm)
    target = abs(nm.beta_med) if b_low is None else nm.beta_med - b_low
    if target <= 0.0:
        return 0.0

    def pred(r: float) -> bool:
        return dev_rx_c(nm, r, c_low, c_high) < target

    hi = 1.0 / c_high if c_high > 0 else 1.0
    for _ in range(max_iter):
        if not pred(hi):
            break
        hi *= 2.0
    lo, hi = bisect_predicate(pred, 0.0, hi, tol=tol, max_iter=max_iter)
    return 0.5 * (lo + hi)
