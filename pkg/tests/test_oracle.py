import math

import numpy as np
import pytest

from nullctl import DualParameters, NotControllableError, ValidationError, from_matrices
from nullctl.oracle import (diagonal_system, dual_value, duality_gap, p2_gramian_solve,
                            random_stable_system)


def test_scalar_p2_solve(no_penalty):
    s = from_matrices([[-1.0]], [[1.0]], 1.0)
    phi = p2_gramian_solve(s, no_penalty(2.0), [1.0])
    assert phi[0] == pytest.approx(-math.exp(-1) / ((1 - math.exp(-2)) / 2), rel=1e-10)
    assert phi[0] == pytest.approx(-0.850918, rel=1e-6)


def test_diagonal_closed_form(no_penalty):
    g = np.diag([(1 - math.exp(-2)) / 2, (1 - math.exp(-4)) / 4])
    z = np.array([math.exp(-1), math.exp(-2)])
    value, _ = dual_value(diagonal_system(), no_penalty(2.0), [1.0, 1.0])
    assert value == pytest.approx(-0.5 * z @ np.linalg.solve(g, z), rel=1e-9)
    assert value == pytest.approx(-0.193832, rel=1e-5)


@pytest.mark.parametrize("p", [2.0, 1.5, 1.2])
def test_gap_and_steering(no_penalty, p):
    for system in (diagonal_system(), random_stable_system()):
        rep = duality_gap(system, no_penalty(p), np.ones(system.n_x))
        assert abs(rep.gap) <= 1e-6 * (1 + abs(rep.dual_value))
        assert rep.steering_ok
        assert rep.young_equality_residual <= 1e-10


def test_uncontrollable(no_penalty):
    s = from_matrices(np.diag([-1.0, -2.0]), [[1.0], [0.0]], 1.0)
    with pytest.raises(NotControllableError):
        dual_value(s, no_penalty(2.0), [1.0, 1.0])
    with pytest.raises(NotControllableError):
        p2_gramian_solve(s, no_penalty(2.0), [1.0, 1.0])


def test_p2_solve_needs_p2():
    with pytest.raises(ValidationError) as err:
        p2_gramian_solve(diagonal_system(), DualParameters(p=1.5), [1.0, 1.0])
    assert err.value.field == "p"


def test_random_system_is_stable():
    s = random_stable_system(5, seed=42)
    assert np.max(np.linalg.eigvals(s.a_matrix).real) == pytest.approx(-1.0)
