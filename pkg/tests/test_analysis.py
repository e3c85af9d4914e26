import math

import numpy as np
import pytest

from nullctl import DualParameters, ValidationError, build_heat1d, from_matrices, make_propagator
from nullctl.analysis import observability_constant, rate_fit, sweep_rows, uniformity_sweep


def test_scalar_constant(scalar, no_penalty):
    s, prop = scalar
    rec = observability_constant(s, prop, no_penalty(2.0))
    # |e^{-1} psi|^2 <= C int e^{-2t} |psi|^2 dt
    assert rec.constant_estimate == pytest.approx((math.e ** 2 - 1) / 2, rel=1e-8)
    assert rec.certificate_norm == pytest.approx(1.0)


@pytest.mark.parametrize("p", [2.0, 1.2])
def test_no_observation_leaves_penalty(p):
    s = from_matrices(np.diag([-1.0, -2.0]), np.zeros((2, 1)), 1.0, h=0.5)
    rec = observability_constant(s, make_propagator(s), DualParameters(p=p, beta=2.0))
    assert rec.constant_estimate == pytest.approx(0.25 / math.exp(-1) ** p, rel=1e-6)
    assert rec.constant_estimate >= rec.crude_lower_bound * (1 - 1e-12)


def test_degenerate_flag():
    s = from_matrices(np.diag([-1.0, -2.0]), np.zeros((2, 1)), 1.0)
    rec = observability_constant(s, make_propagator(s), DualParameters(p=2.0, beta=math.inf))
    assert rec.degenerate and rec.constant_estimate == 0.0


def test_sweep_is_seeded_and_bounded():
    par = DualParameters(p=1.2, beta=0.16)
    a = uniformity_sweep([8, 12], par, n_random=200, seed=7)
    b = uniformity_sweep([8, 12], par, n_random=200, seed=7)
    assert [r.constant_estimate for r in a] == [r.constant_estimate for r in b]
    for r in a:
        assert r.constant_estimate > 0
        assert r.constant_estimate * r.terminal_norm ** r.p <= r.upper_estimate * (1 + 1e-9)
    header, rows = sweep_rows(a)
    assert header[0] == "n" and len(rows) == 2


def test_p2_eigen_matches_descent():
    s = build_heat1d(12)
    rec = observability_constant(s, make_propagator(s), DualParameters(p=2.0, beta=0.16), n_random=0)
    assert rec.method == "eig-p2"
    s2 = build_heat1d(12)
    near = observability_constant(s2, make_propagator(s2), DualParameters(p=1.999, beta=0.16), n_random=0)
    assert near.constant_estimate == pytest.approx(rec.constant_estimate, rel=0.05)


def test_rate_validation():
    par = DualParameters()
    with pytest.raises(ValidationError):
        rate_fit("semigroup-consistency", [10, 20], 0.5, par)
    with pytest.raises(ValidationError):
        rate_fit("semigroup-consistency", [10, 20, 40], 2.0, par)
    with pytest.raises(ValidationError):
        rate_fit("speed", [10, 20, 40], 0.5, par)


def test_observation_bound_ratio():
    fit = rate_fit("dual-observation-bound", [10, 20, 40], 0.25, DualParameters())
    assert fit.passed and fit.ratio < 10
