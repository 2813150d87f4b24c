import math

import numpy as np
import pytest

from alfg import (
    SE2,
    ContractError,
    Euclidean,
    FunctionErrorFactor,
    LinearFactor,
    PriorFactor,
    linearize,
    numerical_jacobians,
)
from alfg.apps.pose_estimation import KinematicsConstraint


def test_linear_factor_residual_and_jacobian():
    f = LinearFactor((0,), [np.eye(2)], [1.0, 2.0])
    r, (J,) = linearize(f, [np.array([3.0, 5.0])], [Euclidean(2)])
    np.testing.assert_allclose(r, [2.0, 3.0])
    np.testing.assert_array_equal(J, np.eye(2))


def test_kinematics_constraint_on_circle():
    c = KinematicsConstraint(0, 1.0, 1.0)
    np.testing.assert_allclose(c.error([np.array([1.0, 0.0, 0.0])]), [0.0, 0.0], atol=1e-15)


def test_numerical_jacobian_fallback():
    f = FunctionErrorFactor((0,), 1, lambda x: np.array([x[0] ** 2 + x[1]]))
    r, (J,) = linearize(f, [np.array([3.0, 1.0])], [Euclidean(2)])
    assert r[0] == pytest.approx(10.0)
    np.testing.assert_allclose(J, [[6.0, 1.0]], atol=1e-6)


def test_numerical_jacobian_uses_retraction():
    # d/d(delta) of x after a body-frame step equals cos(theta)
    f = FunctionErrorFactor((0,), 1, lambda p: np.array([p[0]]))
    (J,) = numerical_jacobians(f, [np.array([0.0, 0.0, math.pi / 3])], [SE2()])
    np.testing.assert_allclose(J, [[0.5, -math.sqrt(3) / 2, 0.0]], atol=1e-8)


def test_prior_se2_jacobian_matches_differences():
    f = PriorFactor(0, SE2(), [1.0, 2.0, 3.0])
    x = np.array([0.3, -0.2, 2.9])
    (J,) = f.jacobians([x])
    (Jn,) = numerical_jacobians(f, [x], [SE2()])
    np.testing.assert_allclose(J, Jn, atol=1e-8)


def test_prior_wraps_heading_error():
    f = PriorFactor(0, SE2(), [0.0, 0.0, math.pi - 0.1])
    assert f.error([np.array([0.0, 0.0, -math.pi + 0.1])])[2] == pytest.approx(0.2)


def test_information_forms():
    assert np.array_equal(FunctionErrorFactor((0,), 2, None, 3.0).information, 3 * np.eye(2))
    assert np.array_equal(FunctionErrorFactor((0,), 2, None, [1, 2]).information, np.diag([1, 2]))
    with pytest.raises(ContractError):
        FunctionErrorFactor((0,), 2, None, np.eye(3))


def test_chi2():
    f = LinearFactor((0,), [np.eye(2)], [0.0, 0.0], information=np.diag([1.0, 4.0]))
    assert f.chi2([np.array([1.0, 1.0])]) == pytest.approx(5.0)


def test_factor_needs_keys():
    with pytest.raises(ContractError):
        LinearFactor((), [], [0.0])
