"""Number encoding for emitted reports.

Every real is rounded to 12 significant digits (round half to even) and
infinities become the strings ``"inf"`` and ``"-inf"`` so that the output is
valid JSON for any parser.
"""

from __future__ import annotations

import math
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Any

SIG_DIGITS = 12


def round_sig(x: float, digits: int = SIG_DIGITS) -> float:
    if x == 0.0 or not math.isfinite(x):
        return x
    d = Decimal(repr(float(x)))
    exp = d.adjusted() - digits + 1
    return float(d.quantize(Decimal(1).scaleb(exp), rounding=ROUND_HALF_EVEN))


def encode_real(x: float) -> float | str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return round_sig(x) + 0.0  # normalizes -0.0


def decode_real(x: Any) -> float:
    """Inverse of :func:`encode_real` for values read back from a report."""
    return float(x)


def format_csv_real(x: float) -> str:
    v = encode_real(x)
    return v if isinstance(v, str) else repr(v)
