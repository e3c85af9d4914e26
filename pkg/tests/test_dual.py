import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nullctl import (DualObjective, DualParameters, ValidationError, evaluate_j, gradient_j,
                     gramian_apply, p_power_map)
from nullctl.dual import _power_difference


def scalar_j(phi, y0, p):
    # y' = -y + u on [0, 1]: J = |phi|^p (1 - e^{-p}) / p^2 + phi e^{-1} y0
    return abs(phi) ** p * (1 - math.exp(-p)) / p ** 2 + phi * math.exp(-1) * y0


def test_scalar_value_p2(scalar, no_penalty):
    s, prop = scalar
    assert evaluate_j(s, prop, no_penalty(2), [0.0], [1.0]) == pytest.approx(0.2161661792, rel=1e-10)
    assert gramian_apply(s, prop, no_penalty(2), [1.0])[0] == pytest.approx(0.4323323584, rel=1e-10)


@pytest.mark.parametrize("p", [2.0, 1.5, 1.2])
@pytest.mark.parametrize("phi, y0", [(0.7, 0.0), (-1.3, 2.0), (2.5, -0.4)])
def test_scalar_value_any_p(scalar, no_penalty, p, phi, y0):
    s, prop = scalar
    assert evaluate_j(s, prop, no_penalty(p), [y0], [phi]) == pytest.approx(scalar_j(phi, y0, p), rel=1e-10)


def test_penalty_term(scalar):
    s, prop = scalar
    par = DualParameters(p=1.5, beta=2.0)
    pen = 0.5 ** 2 * 2.0 ** 1.5 / 1.5
    assert evaluate_j(s, prop, par, [0.0], [2.0]) == pytest.approx(scalar_j(2.0, 0.0, 1.5) + pen, rel=1e-10)


def test_p_power_map_values():
    np.testing.assert_allclose(p_power_map([3.0, 4.0], 1.2), [0.827837, 1.103783], rtol=1e-6)
    np.testing.assert_array_equal(p_power_map([0.0, 0.0], 1.2), [0.0, 0.0])
    np.testing.assert_allclose(p_power_map([3.0, 4.0], 2.0), [3.0, 4.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6), st.floats(1.05, 2.0))
def test_p_power_map_norm_identity(v, p):
    v = np.array(v)
    out = p_power_map(v, p)
    n = np.linalg.norm(v)
    assert np.linalg.norm(out) == pytest.approx(n ** (p - 1), rel=1e-9, abs=1e-300)
    # <v, |v|^{p-2} v> = |v|^p
    assert v @ out == pytest.approx(n ** p, rel=1e-9, abs=1e-300)


@pytest.mark.parametrize("p", [2.0, 1.2])
def test_gradient_matches_central_differences(heat20, rng, p):
    s, prop, y0 = heat20
    obj = DualObjective(s, prop, DualParameters(p=p, beta=0.16), y0)
    for _ in range(3):
        phi, d = rng.standard_normal((2, s.n_x))
        eps = 1e-6
        fd = (obj.value(phi + eps * d) - obj.value(phi - eps * d)) / (2 * eps)
        an = s.inner(obj.gradient(phi), d)
        assert abs(fd - an) <= 1e-5 * abs(an)


def test_difference_is_accurate(heat20, rng):
    s, prop, y0 = heat20
    obj = DualObjective(s, prop, DualParameters(p=1.2, beta=2.0), y0)
    phi, d = rng.standard_normal((2, s.n_x))
    for eps in (1e-3, 1e-6):
        direct = obj.value(phi + eps * d) - obj.value(phi)
        assert obj.difference(phi + eps * d, phi) == pytest.approx(direct, rel=1e-5)


def test_power_difference_branches():
    a = np.array([1.0 + 1e-12, 3.0, 1e-300])
    b = np.array([1.0, 1.0, 2.0])
    sq = a * a - b * b
    got = _power_difference(a, b, sq, 1.2)
    np.testing.assert_allclose(got[1:], a[1:] ** 1.2 - b[1:] ** 1.2)
    assert got[0] == pytest.approx(1.2e-12, rel=1e-6)


def test_quadrature_doubling(heat20, rng):
    s, prop, y0 = heat20
    phi = rng.standard_normal(s.n_x)
    for p in (2.0, 1.2):
        par = DualParameters(p=p, beta=0.16)
        j1 = evaluate_j(s, prop, par, y0, phi)
        j2 = evaluate_j(s, prop, par.doubled(), y0, phi)
        assert abs(j1 - j2) <= 1e-8 * abs(j1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([2.0, 1.5, 1.2]))
def test_convex_along_segments(seed, p):
    from nullctl import build_heat1d, make_propagator
    s = build_heat1d(6)
    prop = make_propagator(s)
    obj = DualObjective(s, prop, DualParameters(p=p, beta=0.16), np.ones(6))
    x, y = np.random.default_rng(seed).standard_normal((2, 6))
    mid = obj.value(0.5 * (x + y))
    assert mid <= 0.5 * (obj.value(x) + obj.value(y)) + 1e-12


def test_gradient_wrapper_shape_check(heat20):
    s, prop, y0 = heat20
    with pytest.raises(ValidationError):
        gradient_j(s, prop, DualParameters(), y0, np.ones(3))


@pytest.mark.parametrize("kwargs, field", [
    ({"p": 2.5}, "p"), ({"p": 0.9}, "p"), ({"p": 1.5, "q": 4.0}, "q"), ({"beta": -1.0}, "beta"),
    ({"quad_nodes": 0}, "quad_nodes"), ({"gamma": 1.0}, "gamma"), ({"theta": 0.0}, "theta"),
])
def test_parameter_validation(kwargs, field):
    with pytest.raises(ValidationError) as err:
        DualParameters(**kwargs)
    assert err.value.field == field


def test_conjugate_and_admissible():
    assert DualParameters(p=1.5).q == pytest.approx(3.0)
    assert DualParameters(p=1.0).q == math.inf
    assert DualParameters(p=1.2, gamma=0.75, theta=0.32, beta=0.16).admissible
    assert not DualParameters(p=1.2, beta=2.0).admissible
    assert not DualParameters(p=2.0, beta=0.16).admissible
