import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alfg import (
    ContractError,
    Euclidean,
    Formulation,
    FunctionEquality,
    FunctionInequality,
    contrib_equality,
    contrib_inequality,
    dual_update_equality,
    dual_update_inequality,
    g_plus,
    slack_qstar,
    update_penalty,
)
from alfg.selftest import slack_objective

E1 = [Euclidean(1)]


def scalar_eq(fn, jac, lam=0.0, rho=1.0):
    f = FunctionEquality((0,), 1, lambda x: [fn(x[0])], lambda x: [[[jac(x[0])]]])
    f.lam = [lam]
    f.rho = np.array([rho])
    return f


def scalar_ineq(fn, jac, mu=0.0, rho=1.0, formulation="slack"):
    f = FunctionInequality((0,), 1, lambda x: [fn(x[0])], lambda x: [[[jac(x[0])]]],
                           formulation=formulation)
    f.mu = [mu]
    f.rho = np.array([rho])
    return f


class TestSlackClosedForm:
    @pytest.mark.parametrize("args, expected", [((0, 1, -2), 2), ((4, 1, 0), 0), ((1, 0.5, -3), 2)])
    def test_examples(self, args, expected):
        assert slack_qstar(*args) == pytest.approx(expected)

    def test_grid_scan(self):
        grid = np.arange(0.0, 10.0 + 1e-4, 1e-4)
        q = grid[np.argmin(slack_objective(grid, 1.0, 0.5, -3.0))]
        assert abs(q - slack_qstar(1.0, 0.5, -3.0)) <= 1e-4

    @given(st.floats(0, 5), st.floats(0.1, 5), st.floats(-5, 5))
    def test_nonnegative_and_stationary(self, mu, rho, g):
        q = slack_qstar(mu, rho, g)
        assert q >= 0
        if q > 0:
            assert mu + 2 * rho * (g + q) == pytest.approx(0.0, abs=1e-9)

    def test_rejects_nonpositive_rho(self):
        with pytest.raises(ContractError):
            slack_qstar(1.0, 0.0, 1.0)


class TestGPlus:
    def test_active(self):
        np.testing.assert_allclose(g_plus([0.0], [1.0], [0.5]), [0.5])

    def test_clamped(self):
        np.testing.assert_allclose(g_plus([1.0], [1.0], [-5.0]), [-0.5])

    def test_componentwise(self):
        np.testing.assert_allclose(g_plus([1.0, 0.0], np.eye(2), [-5.0, 0.5]), [-0.5, 0.5])

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            g_plus([1.0], [1.0, 1.0], [0.0])


class TestEqualityContribution:
    def test_identity_constraint(self):
        f = FunctionEquality((0,), 2, lambda x: x, lambda x: [np.eye(2)])
        f.rho = np.array([1.0, 2.0])
        c = contrib_equality(f, [np.zeros(2)], [Euclidean(2)])
        np.testing.assert_array_equal(c.b, [0.0, 0.0])
        np.testing.assert_array_equal(c.H, np.diag([1.0, 2.0]))

    def test_multiplier_cancels_residual(self):
        c = contrib_equality(scalar_eq(lambda x: x - 1, lambda x: 1.0, lam=2.0), [np.zeros(1)], E1)
        np.testing.assert_allclose(c.b, [0.0])
        np.testing.assert_allclose(c.H, [[1.0]])

    def test_quadratic(self):
        c = contrib_equality(scalar_eq(lambda x: x ** 2, lambda x: 2 * x), [np.array([3.0])], E1)
        np.testing.assert_allclose(c.b, [54.0])
        np.testing.assert_allclose(c.H, [[36.0]])


class TestInequalityContribution:
    @pytest.mark.parametrize("form", list(Formulation))
    def test_violated(self, form):
        c = contrib_inequality(scalar_ineq(lambda x: x - 1, lambda x: 1.0, formulation=form),
                               [np.array([2.0])], E1)
        np.testing.assert_allclose(c.b, [1.0])
        np.testing.assert_allclose(c.H, [[1.0]])

    def test_inactive_slack(self):
        c = contrib_inequality(scalar_ineq(lambda x: x - 6, lambda x: 1.0), [np.array([1.0])], E1)
        np.testing.assert_array_equal(c.b, [0.0])
        np.testing.assert_array_equal(c.H, [[0.0]])

    @pytest.mark.parametrize("form", list(Formulation))
    def test_boundary(self, form):
        c = contrib_inequality(scalar_ineq(lambda x: x - 1, lambda x: 1.0, formulation=form),
                               [np.array([1.0])], E1)
        np.testing.assert_array_equal(c.b, [0.0])

    def test_maxpen_keeps_multiplier_term_when_inactive(self):
        c = contrib_inequality(scalar_ineq(lambda x: x - 6, lambda x: 1.0, mu=2.0, formulation="maxpen"),
                               [np.array([1.0])], E1)
        np.testing.assert_allclose(c.b, [1.0])
        np.testing.assert_allclose(c.H, [[0.0]])

    def test_slack_inactive_at_clamp(self):
        # g = -5 below -mu/2rho = -0.5: constant branch, no gradient
        c = contrib_inequality(scalar_ineq(lambda x: x - 6, lambda x: 1.0, mu=1.0), [np.array([1.0])], E1)
        np.testing.assert_array_equal(c.b, [0.0])


class TestDualUpdates:
    def test_equality_scalar(self):
        f = scalar_eq(lambda x: x, lambda x: 1.0)
        np.testing.assert_allclose(dual_update_equality(f, [np.array([0.3])]), [0.6])

    def test_equality_feasible(self):
        f = scalar_eq(lambda x: x, lambda x: 1.0, lam=1.7)
        np.testing.assert_allclose(dual_update_equality(f, [np.array([0.0])]), [1.7])

    def test_equality_componentwise(self):
        f = FunctionEquality((0,), 2, lambda x: x)
        f.lam = [1.0, -1.0]
        f.rho = np.array([0.5, 2.0])
        np.testing.assert_allclose(dual_update_equality(f, [np.array([0.2, 0.1])]), [1.2, -0.6])

    def test_inequality_projection(self):
        f = scalar_ineq(lambda x: x, lambda x: 1.0, mu=0.2)
        np.testing.assert_allclose(dual_update_inequality(f, [np.array([-0.5])]), [0.0])

    def test_inequality_violated(self):
        f = scalar_ineq(lambda x: x, lambda x: 1.0, rho=2.0)
        np.testing.assert_allclose(dual_update_inequality(f, [np.array([0.1])]), [0.4])

    def test_inequality_componentwise(self):
        f = FunctionInequality((0,), 2, lambda x: x)
        f.mu = [0.0, 1.0]
        np.testing.assert_allclose(dual_update_inequality(f, [np.array([-3.0, 0.0])]), [0.0, 1.0])

    def test_negative_mu_rejected(self):
        with pytest.raises(ContractError):
            scalar_ineq(lambda x: x, lambda x: 1.0, mu=-1.0)


class TestPenaltySchedule:
    def make(self):
        return scalar_eq(lambda x: x, lambda x: 1.0)

    def test_first_call_records_only(self):
        f = self.make()
        np.testing.assert_array_equal(update_penalty(f, [np.array([1.0])]), [1.0])
        np.testing.assert_array_equal(f.prev_violation, [1.0])

    def test_decreasing_violation(self):
        f = self.make()
        update_penalty(f, [np.array([1.0])])
        np.testing.assert_allclose(update_penalty(f, [np.array([0.5])]), [1.5])
        np.testing.assert_allclose(f.rho_bar, [1.5])

    def test_stationary(self):
        f = self.make()
        update_penalty(f, [np.array([0.7])])
        np.testing.assert_allclose(update_penalty(f, [np.array([-0.7])]), [1.0])
        np.testing.assert_allclose(f.rho_bar, [1.0])

    def test_increasing_violation(self):
        f = self.make()
        update_penalty(f, [np.array([0.5])])
        np.testing.assert_allclose(update_penalty(f, [np.array([1.0])]), [0.75])
        np.testing.assert_allclose(f.rho_bar, [1.0])

    def test_zero_violations_guarded(self):
        f = self.make()
        update_penalty(f, [np.array([0.0])])
        np.testing.assert_allclose(update_penalty(f, [np.array([0.0])]), [1.0])

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=30))
    def test_stays_in_box(self, seq):
        f = self.make()
        for v in seq:
            rho = update_penalty(f, [np.array([v])])
            assert 0.5 <= rho[0] <= 2.0
            assert 0.5 <= f.rho_bar[0] <= 2.0

    def test_bad_bounds(self):
        with pytest.raises(ContractError):
            FunctionEquality((0,), 1, lambda x: x, rho_bar0=3.0)
