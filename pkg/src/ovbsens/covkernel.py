"""Covariance-level linear algebra.

All estimands in this package are functions of the joint covariance matrix
of the outcome ``Y``, the treatment ``X``, the calibration covariates ``W1``
and the control covariates ``W0``.  This module holds that matrix
(:class:`CovarianceModel`), partials out conditioning sets through Schur
complements, and builds the normalized representation
(:class:`NormalizedModel`) in which ``Var(X) = 1`` and ``Var(W1) = I``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import (
    DegenerateTargetVariance,
    NotPositiveDefinite,
    NotSymmetric,
    RoleMismatch,
    SingularConditionerBlock,
)

OUTCOME = "outcome"
TREATMENT = "treatment"
CALIBRATION = "calibration"
CONTROL = "control"
ROLES = (OUTCOME, TREATMENT, CALIBRATION, CONTROL)

SYMMETRY_RTOL = 1e-10
PD_FLOOR = 1e-12
COND_CAP = 1e12
DEGENERATE_VAR = 1e-14


def check_pd(sigma: NDArray, what: str = "covariance matrix") -> None:
    """Raise :class:`NotPositiveDefinite` unless the eigenvalue floor holds.

    The smallest eigenvalue must exceed ``1e-12`` times the largest one.
    """
    if sigma.size == 0:
        return
    eig = np.linalg.eigvalsh(sigma)
    if not np.all(np.isfinite(eig)) or eig[-1] <= 0 or eig[0] <= PD_FLOOR * eig[-1]:
        raise NotPositiveDefinite(
            f"{what} is not positive definite (eigenvalues in [{eig[0]:.3g}, {eig[-1]:.3g}])"
        )


def solve_checked(a: NDArray, b: NDArray) -> NDArray:
    """Solve ``a x = b`` after checking the condition number of ``a``."""
    if a.size == 0:
        return np.zeros((0,) + b.shape[1:])
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > COND_CAP:
        raise SingularConditionerBlock(f"conditioner block is singular (condition number {cond:.3g})")
    return np.linalg.solve(a, b)


def schur_complement(sigma: NDArray, keep: Sequence[int], cond: Sequence[int]) -> NDArray:
    """Covariance of the ``keep`` variables after projecting out ``cond``."""
    keep = list(keep)
    cond = list(cond)
    s_kk = sigma[np.ix_(keep, keep)]
    if not cond:
        return s_kk.copy()
    s_kc = sigma[np.ix_(keep, cond)]
    s_cc = sigma[np.ix_(cond, cond)]
    out = s_kk - s_kc @ solve_checked(s_cc, s_kc.T)
    return 0.5 * (out + out.T)


def inv_sqrt_sym(a: NDArray) -> NDArray:
    """Symmetric inverse square root via an eigendecomposition."""
    vals, vecs = np.linalg.eigh(a)
    if vals[0] <= PD_FLOOR * vals[-1]:
        raise NotPositiveDefinite("matrix to be whitened is not positive definite")
    return (vecs / np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class CovarianceModel:
    """Labeled positive definite covariance matrix with role assignments.

    Parameters
    ----------
    sigma : ndarray of shape (p, p)
        Covariance matrix.
    labels : sequence of str
        Variable names, one per row of ``sigma``.
    roles : mapping
        Maps every label to one of ``"outcome"``, ``"treatment"``,
        ``"calibration"`` or ``"control"``.

    Notes
    -----
    Construction validates symmetry (relative tolerance ``1e-10``), positive
    definiteness and the role counts: one outcome, one treatment and at least
    one calibration covariate.  Calibration and control covariates keep the
    order in which they appear in ``labels``.
    """

    sigma: NDArray
    labels: tuple[str, ...]
    roles: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        sigma = np.array(self.sigma, dtype=float)
        labels = tuple(str(x) for x in self.labels)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise NotSymmetric("covariance matrix must be square")
        if sigma.shape[0] != len(labels):
            raise RoleMismatch("number of labels does not match the matrix size")
        if len(set(labels)) != len(labels):
            raise RoleMismatch("labels must be distinct")
        scale = max(np.max(np.abs(sigma)), np.finfo(float).tiny)
        if np.max(np.abs(sigma - sigma.T)) > SYMMETRY_RTOL * scale:
            raise NotSymmetric("covariance matrix is not symmetric")
        sigma = 0.5 * (sigma + sigma.T)
        roles = dict(self.roles)
        _validate_roles(labels, roles)
        check_pd(sigma)
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "roles", roles)

    # -- role accessors ---------------------------------------------------
    def _with_role(self, role: str) -> tuple[str, ...]:
        return tuple(lab for lab in self.labels if self.roles[lab] == role)

    @property
    def outcome(self) -> str:
        return self._with_role(OUTCOME)[0]

    @property
    def treatment(self) -> str:
        return self._with_role(TREATMENT)[0]

    @property
    def calibration(self) -> tuple[str, ...]:
        return self._with_role(CALIBRATION)

    @property
    def controls(self) -> tuple[str, ...]:
        return self._with_role(CONTROL)

    def index(self, labels: Iterable[str]) -> list[int]:
        lookup = {lab: i for i, lab in enumerate(self.labels)}
        out = []
        for lab in labels:
            if lab not in lookup:
                raise RoleMismatch(f"unknown label {lab!r}")
            out.append(lookup[lab])
        return out

    def cov(self, a: Iterable[str], b: Iterable[str]) -> NDArray:
        return self.sigma[np.ix_(self.index(a), self.index(b))]


def _validate_roles(labels: Sequence[str], roles: Mapping[str, str]) -> None:
    missing = [lab for lab in labels if lab not in roles]
    if missing:
        raise RoleMismatch(f"no role given for {missing}")
    extra = [lab for lab in roles if lab not in labels]
    if extra:
        raise RoleMismatch(f"roles given for unknown labels {extra}")
    bad = [r for r in roles.values() if r not in ROLES]
    if bad:
        raise RoleMismatch(f"unknown roles {bad}")
    counts = {r: sum(1 for v in roles.values() if v == r) for r in ROLES}
    if counts[OUTCOME] != 1 or counts[TREATMENT] != 1:
        raise RoleMismatch("exactly one outcome and one treatment label are required")
    if counts[CALIBRATION] < 1:
        raise RoleMismatch("at least one calibration covariate is required")


def partial_out(model: CovarianceModel, conditioners: Iterable[str]) -> CovarianceModel:
    """Replace every remaining variable by its residual on ``conditioners``.

    Returns the Schur complement of the conditioner block.  Conditioners are
    dropped from the returned model.
    """
    cond = list(dict.fromkeys(conditioners))
    if not cond:
        return model
    cidx = model.index(cond)
    keep = [lab for lab in model.labels if lab not in cond]
    kidx = model.index(keep)
    reduced = schur_complement(model.sigma, kidx, cidx)
    check_pd(reduced, "partialled covariance matrix")
    roles = {lab: model.roles[lab] for lab in keep}
    return CovarianceModel(reduced, tuple(keep), roles)


def partial_r2(
    model: CovarianceModel,
    target: str,
    regressors: Iterable[str],
    conditioners: Iterable[str] = (),
) -> float:
    """Partial R-squared of ``target`` on ``regressors`` given ``conditioners``.

    Computed from covariances only: ``1 - Var(T | R, C) / Var(T | C)``.
    """
    regs = list(regressors)
    cond = list(conditioners)
    if target in regs or target in cond or set(regs) & set(cond):
        raise RoleMismatch("target, regressors and conditioners must be disjoint")
    sub = [target] + regs
    s = schur_complement(model.sigma, model.index(sub), model.index(cond))
    v = s[0, 0]
    if v <= DEGENERATE_VAR:
        raise DegenerateTargetVariance(f"Var({target}) after conditioning is {v:.3g}")
    if not regs:
        return 0.0
    c = s[0, 1:]
    explained = float(c @ solve_checked(s[1:, 1:], c))
    return float(min(max(explained / v, 0.0), 1.0))


@dataclass(frozen=True)
class NormalizedModel:
    """Normalized covariance representation used by every bound and breakdown computation.

    Attributes
    ----------
    base : CovarianceModel
        The model after controls were partialled out, before whitening.
    sigma_w1x, sigma_w1y : ndarray
        ``Cov(W1, X)`` and ``Cov(W1, Y)`` after whitening ``W1`` and scaling
        ``X`` and ``Y`` by ``1/sd(X)``.
    k0, k1, k2 : float
        ``Var(X|W1)``, ``Cov(Y|W1, X|W1)`` and ``Var(Y|W1)`` in normalized units.
    beta_med : float
        Coefficient on ``X`` in the regression of ``Y`` on ``(X, W1)``.
    var_y_perp_xw1 : float
        Residual variance ``Var(Y|X, W1)`` in normalized units.
    r2_x_w1, r2_yx_dot_w1 : float
        ``R^2`` of ``X`` on ``W1`` and partial ``R^2`` of ``Y`` on ``X`` given ``W1``.
    var_y, cov_xy : float
        ``Var(Y)`` and ``Cov(X, Y)`` in normalized units.
    """

    base: CovarianceModel
    sigma_w1x: NDArray
    sigma_w1y: NDArray
    k0: float
    k1: float
    k2: float
    beta_med: float
    var_y_perp_xw1: float
    r2_x_w1: float
    r2_yx_dot_w1: float
    var_y: float
    cov_xy: float
    x_scale: float
    whitener: NDArray

    @property
    def d1(self) -> int:
        return int(self.sigma_w1x.shape[0])

    @property
    def norm_sigma_w1x(self) -> float:
        return float(np.linalg.norm(self.sigma_w1x))

    def mirror(self) -> "NormalizedModel":
        """The same model with the outcome replaced by its negative."""
        return _from_moments(
            self.base, self.sigma_w1x, -self.sigma_w1y, self.var_y, -self.cov_xy,
            self.x_scale, self.whitener,
        )


def _from_moments(base, sx, sy, var_y, cov_xy, x_scale, whitener) -> NormalizedModel:
    sx = np.asarray(sx, dtype=float)
    sy = np.asarray(sy, dtype=float)
    r2x = float(sx @ sx)
    k0 = 1.0 - r2x
    k1 = float(cov_xy - sx @ sy)
    k2 = float(var_y - sy @ sy)
    if k0 <= 0 or k2 <= 0:
        raise NotPositiveDefinite("residual variances must be positive")
    beta = k1 / k0
    vperp = k2 - k1 * k1 / k0
    if vperp <= 0:
        raise NotPositiveDefinite("Var(Y | X, W1) must be positive")
    r2y = k1 * k1 / (k0 * k2)
    for arr in (sx, sy):
        arr.setflags(write=False)
    return NormalizedModel(
        base=base, sigma_w1x=sx, sigma_w1y=sy, k0=k0, k1=k1, k2=k2,
        beta_med=beta, var_y_perp_xw1=vperp, r2_x_w1=r2x, r2_yx_dot_w1=r2y,
        var_y=float(var_y), cov_xy=float(cov_xy), x_scale=float(x_scale),
        whitener=whitener,
    )


def normalize(model: CovarianceModel) -> NormalizedModel:
    """Build the normalized representation of ``model``.

    Controls, if any, are partialled out first.  ``W1`` is whitened by the
    symmetric inverse square root of ``Var(W1)``.  ``X`` and ``Y`` are both
    divided by ``sd(X)``, so ``Var(X) = 1`` while ``beta_med`` and every bound
    stay in the units of the input.
    """
    if model.controls:
        model = partial_out(model, model.controls)
    y, x, w1 = model.outcome, model.treatment, list(model.calibration)
    s = model.sigma
    iy, ix = model.index([y, x])
    iw = model.index(w1)
    vx = s[ix, ix]
    sx_scale = float(np.sqrt(vx))
    whitener = inv_sqrt_sym(s[np.ix_(iw, iw)])
    sigma_w1x = whitener @ s[iw, ix] / sx_scale
    sigma_w1y = whitener @ s[iw, iy] / sx_scale
    whitener.setflags(write=False)
    return _from_moments(
        model, sigma_w1x, sigma_w1y, s[iy, iy] / vx, s[iy, ix] / vx, sx_scale, whitener
    )
