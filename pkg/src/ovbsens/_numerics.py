"""Small numerical helpers shared across modules."""

from __future__ import annotations

from typing import Callable

BISECT_TOL = 1e-10
BISECT_MAX_ITER = 200


def bisect_predicate(
    pred: Callable[[float], bool],
    lo: float,
    hi: float,
    tol: float = BISECT_TOL,
    max_iter: int = BISECT_MAX_ITER,
) -> tuple[float, float]:
    """Shrink ``[lo, hi]`` around the switch point of a monotone predicate.

    Requires ``pred(lo)`` true and ``pred(hi)`` false.  Returns the final
    bracket, whose width is at most ``tol`` unless ``max_iter`` ran out.
    """
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo, hi
