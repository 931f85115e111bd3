"""Build covariance models from CSV datasets or covariance files."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from .covkernel import (
    CALIBRATION,
    CONTROL,
    OUTCOME,
    TREATMENT,
    CovarianceModel,
)
from .errors import (
    ConstantColumn,
    MissingColumn,
    NotSymmetric,
    ParseError,
    RoleMismatch,
    TooFewRows,
)

COV_SYMMETRY_ATOL = 1e-8


@dataclass(frozen=True)
class DatasetSpec:
    """Which CSV columns play which role.

    An intercept is always included, which at the covariance level means the
    columns are demeaned.
    """

    path: str | Path
    outcome: str
    treatment: str
    calibration: Sequence[str]
    controls: Sequence[str] = field(default_factory=tuple)
    add_intercept: bool = True

    @property
    def columns(self) -> list[str]:
        return [self.outcome, self.treatment, *self.calibration, *self.controls]

    @property
    def roles(self) -> dict[str, str]:
        roles = {self.outcome: OUTCOME, self.treatment: TREATMENT}
        roles.update({c: CALIBRATION for c in self.calibration})
        roles.update({c: CONTROL for c in self.controls})
        return roles


@dataclass(frozen=True)
class SampleSummary:
    n_rows_read: int
    n_rows_used: int
    means: NDArray
    sigma_hat: NDArray


def _read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ParseError("file is empty; a header row is required") from None
            rows = [row for row in reader if row]
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    return [h.strip() for h in header], rows


def _parse_cell(text: str, row: int, column: str) -> float:
    text = text.strip()
    if text == "":
        return np.nan
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"cannot parse {text!r} as a number", row=row, column=column) from None


def load_dataset(spec: DatasetSpec) -> tuple[CovarianceModel, SampleSummary]:
    """Read a CSV file and return the sample covariance model.

    Rows with a missing value in any selected column are dropped.  The
    covariance uses the ``n - 1`` denominator.
    """
    cols = spec.columns
    if len(set(cols)) != len(cols):
        raise RoleMismatch("selected column names must be distinct")
    header, rows = _read_csv(spec.path)
    pos = {name: i for i, name in enumerate(header)}
    missing = [c for c in cols if c not in pos]
    if missing:
        raise MissingColumn(f"columns not found in header: {missing}")
    data = np.empty((len(rows), len(cols)))
    for r, row in enumerate(rows):
        for j, name in enumerate(cols):
            k = pos[name]
            cell = row[k] if k < len(row) else ""
            # header is line 1, so data row r lives on line r + 2
            data[r, j] = _parse_cell(cell, r + 2, name)
    keep = ~np.isnan(data).any(axis=1)
    used = data[keep]
    n_used = used.shape[0]
    if n_used < len(cols) + 2:
        raise TooFewRows(f"{n_used} complete rows for {len(cols)} variables; need {len(cols) + 2}")
    means = used.mean(axis=0)
    sigma = np.cov(used, rowvar=False, ddof=1)
    const = [cols[j] for j in range(len(cols)) if sigma[j, j] <= 0.0]
    if const:
        raise ConstantColumn(f"constant columns: {const}")
    model = CovarianceModel(sigma, tuple(cols), spec.roles)
    return model, SampleSummary(len(rows), n_used, means, sigma)


def load_covariance(path: str | Path, roles: Mapping[str, str]) -> CovarianceModel:
    """Read a square covariance CSV whose header row holds the labels.

    Only the labels named in ``roles`` are kept.
    """
    header, rows = _read_csv(path)
    p = len(header)
    if len(rows) != p:
        raise ParseError(f"expected {p} numeric rows after the header, found {len(rows)}")
    mat = np.empty((p, p))
    for r, row in enumerate(rows):
        if len(row) != p:
            raise ParseError(f"expected {p} fields, found {len(row)}", row=r + 2)
        for j in range(p):
            val = _parse_cell(row[j], r + 2, header[j])
            if np.isnan(val):
                raise ParseError("covariance entries may not be empty", row=r + 2, column=header[j])
            mat[r, j] = val
    if np.max(np.abs(mat - mat.T)) > COV_SYMMETRY_ATOL:
        raise NotSymmetric("covariance matrix is not symmetric within 1e-8")
    unknown = [lab for lab in roles if lab not in header]
    if unknown:
        raise RoleMismatch(f"roles refer to labels missing from the file: {unknown}")
    keep = [i for i, lab in enumerate(header) if lab in roles]
    labels = tuple(header[i] for i in keep)
    return CovarianceModel(mat[np.ix_(keep, keep)], labels, {lab: roles[lab] for lab in labels})


def write_covariance(model: CovarianceModel, path: str | Path) -> None:
    """Write ``model.sigma`` as a square CSV with a label header.

    Values are written with ``repr`` so that reading them back is lossless.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(model.labels)
        for row in model.sigma:
            w.writerow([repr(float(v)) for v in row])


def roles_from_columns(
    y: str, x: str, w1: Sequence[str], w0: Sequence[str] = ()
) -> dict[str, str]:
    """Role map from the usual outcome/treatment/covariate lists."""
    roles = {y: OUTCOME, x: TREATMENT}
    for c in w1:
        roles[c] = CALIBRATION
    for c in w0:
        roles[c] = CONTROL
    if len(roles) != 2 + len(w1) + len(w0):
        raise RoleMismatch("each column may play only one role")
    return roles
