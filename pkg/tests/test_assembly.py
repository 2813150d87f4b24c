import numpy as np
import pytest

from alfg import Euclidean, FactorGraph, FunctionEquality, FunctionInequality, LinearFactor, build_system, dual_phase
from alfg.apps import mpc, pose_estimation as pe, rotation_sync as rs
from alfg.assembly import Assembler


def perturbed_mpc_graph(rng, formulation):
    cfg = mpc.MpcConfig(horizon=5, goal=(1.0, 0.5, 0.3), formulation=formulation)
    states = rng.normal(size=(6, 6))
    controls = rng.normal(size=(5, 3))
    graph, _, _ = mpc.build_graph(cfg, np.zeros(6), states, controls)
    for f in graph.constraint_factors:
        f._multiplier = np.abs(rng.normal(size=f.dim))
        f.rho = rng.uniform(0.5, 2.0, size=f.dim)
    return graph


def rotation_graph(rng):
    problem = rs.generate_problem(6, 100.0, rng)
    graph = rs.build_graph(problem, True, rs.initial_guess(problem, "random", rng))
    for f in graph.eq_factors:
        f.lam = rng.normal(size=f.dim)
    return graph


def pose_graph(rng):
    graph, _ = pe.build_graph(pe.PoseEstimationProblem(z_gps=rng.normal(size=2)), True)
    graph.eq_factors[0].lam = rng.normal(size=2)
    return graph


GRAPHS = {
    "mpc-slack": lambda rng: perturbed_mpc_graph(rng, "slack"),
    "mpc-maxpen": lambda rng: perturbed_mpc_graph(rng, "maxpen"),
    "rotation": rotation_graph,
    "pose": pose_graph,
}


@pytest.mark.parametrize("name", sorted(GRAPHS))
def test_batched_matches_reference(name):
    rng = np.random.default_rng(3)
    graph = GRAPHS[name](rng)
    est = graph.initial_estimate()
    ref = build_system(graph, est)
    asm = Assembler(graph)
    H, b = asm.normal_equations(asm.layout.pack(est))
    np.testing.assert_allclose(H, ref.H, atol=1e-10)
    np.testing.assert_allclose(b, ref.b, atol=1e-10)


def test_objective_scale_only_scales_errors():
    rng = np.random.default_rng(5)
    graph = perturbed_mpc_graph(rng, "slack")
    asm = Assembler(graph)
    x = asm.layout.pack(graph.initial_estimate())
    H1, b1 = asm.normal_equations(x, 1.0)
    H2, b2 = asm.normal_equations(x, 0.5)
    H0, b0 = asm.normal_equations(x, 1.0, constraints=False)
    np.testing.assert_allclose(H1 - H2, 0.5 * H0, atol=1e-9)
    np.testing.assert_allclose(b1 - b2, 0.5 * b0, atol=1e-9)


def test_dual_update_matches_reference():
    rng = np.random.default_rng(7)
    ref_graph = perturbed_mpc_graph(np.random.default_rng(7), "maxpen")
    graph = perturbed_mpc_graph(rng, "maxpen")
    asm = Assembler(graph)
    est = graph.initial_estimate()
    x = asm.layout.pack(est)
    for _ in range(2):
        asm.dual_update(asm.constraint_errors(x))
        dual_phase(ref_graph, est)
    asm.store_state()
    for f, r in zip(graph.constraint_factors, ref_graph.constraint_factors):
        np.testing.assert_allclose(f._multiplier, r._multiplier)
        np.testing.assert_allclose(f.rho, r.rho)
        np.testing.assert_allclose(f.rho_bar, r.rho_bar)


def test_state_round_trip():
    graph = perturbed_mpc_graph(np.random.default_rng(1), "slack")
    before = [f._multiplier.copy() for f in graph.constraint_factors]
    asm = Assembler(graph)
    asm.store_state()
    for f, m in zip(graph.constraint_factors, before):
        np.testing.assert_array_equal(f._multiplier, m)


def test_layout_pack_unpack_retract():
    graph = perturbed_mpc_graph(np.random.default_rng(2), "slack")
    asm = Assembler(graph)
    est = graph.initial_estimate()
    x = asm.layout.pack(est)
    for k, v in asm.layout.unpack(x).items():
        np.testing.assert_array_equal(v, est[k])
    dx = np.random.default_rng(0).normal(size=graph.tangent_dim)
    moved = asm.layout.unpack(asm.layout.retract(x, dx))
    ref = graph.retract(est, dx)
    for k in ref:
        np.testing.assert_allclose(moved[k], ref[k])


def test_mixed_dimension_function_factors():
    g = FactorGraph()
    a = g.add_variable(Euclidean(2), [0.5, -0.2])
    g.add(LinearFactor((a,), [np.eye(2)], [1.0, 1.0]))
    g.add(FunctionEquality((a,), 1, lambda x: [x[0] * x[1] - 0.3]))
    g.add(FunctionInequality((a,), 2, lambda x: x ** 2 - 1.0))
    g.finalize()
    est = g.initial_estimate()
    ref = build_system(g, est)
    H, b = Assembler(g).normal_equations(Assembler(g).layout.pack(est))
    np.testing.assert_allclose(H, ref.H, atol=1e-12)
    np.testing.assert_allclose(b, ref.b, atol=1e-12)
