"""Shared fixtures and the acceptance-report hook."""

from __future__ import annotations

import numpy as np
import pytest

from ovbsens.covkernel import CovarianceModel, normalize

REF_LABELS = ("Y", "X", "W11", "W12")
REF_SIGMA = np.array(
    [
        [1.0, 0.5, 0.3, 0.2],
        [0.5, 1.0, 0.4, 0.1],
        [0.3, 0.4, 1.0, 0.0],
        [0.2, 0.1, 0.0, 1.0],
    ]
)
REF_ROLES = {"Y": "outcome", "X": "treatment", "W11": "calibration", "W12": "calibration"}

ACCEPTANCE_LINES: dict[int, str] = {}


def ref_model() -> CovarianceModel:
    return CovarianceModel(REF_SIGMA.copy(), REF_LABELS, dict(REF_ROLES))


def random_model(rng: np.random.Generator, d1: int, d0: int = 0) -> CovarianceModel:
    """A random positive definite model with ``d1`` calibration and ``d0`` control covariates."""
    p = 2 + d1 + d0
    a = rng.normal(size=(p, p))
    sigma = a @ a.T / p + 0.5 * np.eye(p)
    labels = ("Y", "X") + tuple(f"W1_{i}" for i in range(d1)) + tuple(f"W0_{i}" for i in range(d0))
    roles = {"Y": "outcome", "X": "treatment"}
    roles.update({lab: "calibration" for lab in labels[2 : 2 + d1]})
    roles.update({lab: "control" for lab in labels[2 + d1 :]})
    return CovarianceModel(sigma, labels, roles)


def random_models(n: int, seed: int, d1_choices=(2, 3, 5)) -> list[CovarianceModel]:
    rng = np.random.default_rng(seed)
    return [random_model(rng, d1_choices[i % len(d1_choices)]) for i in range(n)]


@pytest.fixture
def ref():
    return ref_model()


@pytest.fixture
def ref_nm():
    return normalize(ref_model())


@pytest.fixture
def acceptance_record():
    """Record a one-line verdict for an acceptance criterion."""

    def record(number: int, passed: bool | None, detail: str) -> None:
        verdict = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {verdict}  {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
