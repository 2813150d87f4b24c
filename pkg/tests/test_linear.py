import numpy as np
import pytest

from alfg import ContractError, NotPositiveDefiniteError, SparseBlockSystem, accumulate, solve_damped


def test_single_block_accumulation():
    s = SparseBlockSystem([1])
    accumulate(s, ((0,), [[2.0]], [-4.0]))
    np.testing.assert_array_equal(s.H, [[2.0]])
    np.testing.assert_array_equal(s.b, [-4.0])


def test_linearity_doubles_entries():
    s = SparseBlockSystem([2, 1])
    H = np.array([[2.0, 1.0, 0.5], [1.0, 3.0, 0.0], [0.5, 0.0, 1.0]])
    b = np.array([1.0, -1.0, 2.0])
    s.add((0, 1), H, b)
    s.add((0, 1), H, b)
    np.testing.assert_array_equal(s.H, 2 * H)
    np.testing.assert_array_equal(s.b, 2 * b)
    assert s.pattern == {(0, 0), (0, 1), (1, 0), (1, 1)}


def test_blocks_land_at_offsets():
    s = SparseBlockSystem([2, 3])
    s.add((1,), np.eye(3), np.ones(3))
    np.testing.assert_array_equal(s.block(1, 1), np.eye(3))
    assert not s.block(0, 0).any()
    np.testing.assert_array_equal(s.segment(1), np.ones(3))


def test_index_out_of_range():
    with pytest.raises(ContractError):
        SparseBlockSystem([1]).add((1,), [[1.0]], [1.0])


def test_shape_mismatch():
    with pytest.raises(ContractError):
        SparseBlockSystem([2]).add((0,), np.eye(3), np.ones(3))


def test_scalar_solve():
    s = SparseBlockSystem([1])
    s.add((0,), [[2.0]], [-4.0])
    np.testing.assert_allclose(solve_damped(s, 0.0), [2.0])


def test_damped_identity():
    s = SparseBlockSystem([3])
    s.add((0,), np.eye(3), np.ones(3))
    np.testing.assert_allclose(solve_damped(s, 1.0), [-0.5, -0.5, -0.5])


def test_random_spd_residual():
    rng = np.random.default_rng(4)
    M = rng.normal(size=(20, 20))
    s = SparseBlockSystem([5, 5, 10])
    s.add((0, 1, 2), M @ M.T + np.eye(20), rng.normal(size=20))
    dx = solve_damped(s, 0.3)
    assert np.max(np.abs((s.H + 0.3 * np.eye(20)) @ dx + s.b)) < 1e-10


def test_indefinite_raises():
    s = SparseBlockSystem([2])
    s.add((0,), np.diag([1.0, -2.0]), np.ones(2))
    with pytest.raises(NotPositiveDefiniteError):
        solve_damped(s, 0.0)
    # enough damping makes it definite
    assert np.all(np.isfinite(solve_damped(s, 3.0)))


def test_nonfinite_raises():
    s = SparseBlockSystem([1])
    s.add((0,), [[np.nan]], [1.0])
    with pytest.raises(NotPositiveDefiniteError):
        solve_damped(s)


def test_negative_damping_rejected():
    with pytest.raises(ContractError):
        solve_damped(SparseBlockSystem([1]), -1.0)
