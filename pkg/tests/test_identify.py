import math

import numpy as np
import pytest

from conftest import REF_SIGMA, random_models
from hand_oracles import dev_rx_raw, reference_quantities
from ovbsens.covkernel import CovarianceModel, normalize
from ovbsens.errors import DomainError, EmptyConstraint, KnifeEdgeViolated
from ovbsens.identify import (
    SensitivityBudget,
    bounds_rx,
    bounds_rx_c,
    breakdown_point_rx,
    breakdown_point_rx_c,
    dev_rx,
    dev_rx_c,
    zbar_x,
)
from ovbsens.oracle import zbar_oracle

# values frozen from the elimination oracle in hand_oracles.py
REF_BETA = 0.433734939759
REF_BOUNDS_02 = (0.347693633391, 0.519776246127)
REF_BP = 0.683393756942


def test_ref_bounds_frozen(ref_nm):
    iv = bounds_rx(ref_nm, 0.2)
    assert iv.lower == pytest.approx(REF_BOUNDS_02[0], abs=1e-11)
    assert iv.upper == pytest.approx(REF_BOUNDS_02[1], abs=1e-11)
    assert iv.center == pytest.approx(REF_BETA, abs=1e-11)


def test_frozen_values_agree_with_elimination_oracle():
    q = reference_quantities(REF_SIGMA, 0, 1, [2, 3])
    d = dev_rx_raw(q, 0.2)
    assert q["beta_med"] - d == pytest.approx(REF_BOUNDS_02[0], abs=1e-11)
    assert q["beta_med"] + d == pytest.approx(REF_BOUNDS_02[1], abs=1e-11)


@pytest.mark.parametrize("model", random_models(8, seed=99), ids=lambda m: f"d1={len(m.calibration)}")
def test_dev_rx_matches_raw_unit_formula(model):
    nm = normalize(model)
    idx = model.index
    q = reference_quantities(model.sigma, idx(["Y"])[0], idx(["X"])[0], idx(model.calibration))
    for rx in np.linspace(0, 1.2, 13):
        a, b = dev_rx(nm, rx), dev_rx_raw(q, rx)
        if math.isinf(b):
            assert math.isinf(a)
        else:
            assert a == pytest.approx(b, rel=1e-10, abs=1e-13)


def test_infinite_beyond_threshold(ref_nm):
    edge = math.sqrt(1 - ref_nm.r2_x_w1)
    assert bounds_rx(ref_nm, edge * (1 - 1e-9)).finite
    iv = bounds_rx(ref_nm, edge)
    assert not iv.finite and iv.lower == -math.inf and iv.upper == math.inf


def test_breakdown_point_closed_form_and_self_consistency(ref_nm):
    bp = breakdown_point_rx(ref_nm)
    assert bp == pytest.approx(REF_BP, abs=1e-11)
    assert abs(dev_rx(ref_nm, bp) - abs(ref_nm.beta_med)) < 1e-10
    assert breakdown_point_rx_c(ref_nm, 0.0, 1.0) == pytest.approx(bp, abs=1e-9)


def test_breakdown_zero_when_beta_zero():
    # Cov(Y, X | W1) = 0 gives beta_med = 0
    s = np.array([[1.0, 0.12, 0.3], [0.12, 1.0, 0.4], [0.3, 0.4, 1.0]])
    nm = normalize(CovarianceModel(s, ("Y", "X", "W"), {"Y": "outcome", "X": "treatment", "W": "calibration"}))
    assert nm.beta_med == pytest.approx(0.0, abs=1e-15)
    assert breakdown_point_rx(nm) == pytest.approx(0.0, abs=1e-7)


def test_zbar_closed_form_vs_grid_oracle(ref_nm):
    for rx, cl, ch in [(0.5, 0.0, 1.0), (0.3, 0.2, 0.6), (0.8, 0.5, 0.9), (1.5, 0.0, 0.5)]:
        closed = zbar_x(rx, cl, ch, ref_nm.norm_sigma_w1x)
        assert zbar_oracle(ref_nm, rx, cl, ch) == pytest.approx(closed, rel=1e-6)


def test_zbar_infinite_when_rx_times_chigh_reaches_one(ref_nm):
    assert math.isinf(zbar_x(2.0, 0.0, 0.5, ref_nm.norm_sigma_w1x))


def test_rx_c_monotone_in_c_range(ref_nm):
    wide = dev_rx_c(ref_nm, 0.5, 0.0, 1.0)
    narrow = dev_rx_c(ref_nm, 0.5, 0.2, 0.4)
    exogenous = dev_rx_c(ref_nm, 0.5, 0.0, 0.0)
    assert exogenous <= narrow <= wide


def test_exogenous_controls_reduce_to_rx_times_norm(ref_nm):
    assert zbar_x(0.4, 0.0, 0.0, ref_nm.norm_sigma_w1x) == pytest.approx(0.4 * ref_nm.norm_sigma_w1x)


def test_c_range_validation(ref_nm):
    with pytest.raises(EmptyConstraint):
        bounds_rx_c(ref_nm, 0.5, 0.6, 0.4)
    with pytest.raises(EmptyConstraint):
        bounds_rx_c(ref_nm, 0.5, 1.0, 1.0)
    with pytest.raises(DomainError):
        bounds_rx_c(ref_nm, 0.5, -0.1, 0.4)
    with pytest.raises(DomainError):
        SensitivityBudget(-1.0)


def test_knife_edge_rejected():
    s = np.array([[1.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 1.0]])
    nm = normalize(CovarianceModel(s, ("Y", "X", "W"), {"Y": "outcome", "X": "treatment", "W": "calibration"}))
    with pytest.raises(KnifeEdgeViolated):
        bounds_rx(nm, 0.1)
