"""Release-gate property suites, runnable as ``alfg selftest``.

Each suite checks the library against an independent oracle:

* ``kkt``: random equality-constrained convex QPs against a direct KKT solve.
* ``finite-difference``: analytic Jacobians of the shipped factors against
  central differences over the retraction.
* ``slack-grid``: the closed-form slack minimizer against a dense grid scan.
* ``rk4-substep``: one RK4 step against ten RK4 substeps.

All randomness comes from a fixed seed, so reports are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .constraints import FunctionEquality, slack_qstar
from .factors import Factor, LinearFactor, numerical_jacobians
from .graph import FactorGraph
from .manifold import SE2, Euclidean, Matrix3
from .solver import SolverConfig, solve


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{self.name}: {'PASS' if self.passed else 'FAIL'} ({self.detail})"


# --- equality-constrained QPs ------------------------------------------------


@dataclass
class RandomQP:
    A: np.ndarray
    z: np.ndarray
    omega: np.ndarray
    C: np.ndarray
    d: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def kkt_solution(self) -> np.ndarray:
        """Minimizer of ``||Ax - z||^2_Omega`` subject to ``Cx = d``."""
        n, m = self.n, self.C.shape[0]
        Q = self.A.T @ self.omega @ self.A
        K = np.block([[2 * Q, self.C.T], [self.C, np.zeros((m, m))]])
        rhs = np.concatenate([2 * self.A.T @ self.omega @ self.z, self.d])
        return np.linalg.solve(K, rhs)[:n]


def random_qp(rng: np.random.Generator, max_dim: int = 10) -> RandomQP:
    """Strictly convex objective, full-row-rank constraints with ``m < n``."""
    n = int(rng.integers(2, max_dim + 1))
    m = int(rng.integers(1, n))
    while True:
        A = rng.normal(size=(n, n))
        if np.linalg.cond(A) < 1e3:
            break
    while True:
        C = rng.normal(size=(m, n))
        if np.linalg.matrix_rank(C) == m and np.linalg.cond(C) < 1e3:
            break
    z = rng.normal(size=n)
    d = rng.normal(size=m)
    omega = np.diag(rng.uniform(0.5, 2.0, size=n))
    return RandomQP(A, z, omega, C, d)


def qp_graph(qp: RandomQP) -> FactorGraph:
    graph = FactorGraph()
    k = graph.add_variable(Euclidean(qp.n), np.zeros(qp.n))
    graph.add(LinearFactor((k,), [qp.A], qp.z, qp.omega))
    C, d = qp.C, qp.d
    graph.add(FunctionEquality((k,), C.shape[0], lambda x: C @ x - d, lambda x: [C]))
    return graph.finalize()


KKT_CONFIG = SolverConfig(eps_x=1e-4, eps_f=1e-6, eps_g=1e-6,
                          objective_scale="auto", auto_scale_target=0.01)


def kkt_suite(trials: int = 20, seed: int = 0, tol: float = 1e-3,
              config: SolverConfig | None = None) -> SuiteResult:
    """AL solutions of random QPs against the KKT solve.

    When ``C Q^-1 C^T`` is ill-conditioned a violation of 1e-3 allows a much
    larger error in ``x``, so the default config terminates on a violation of
    1e-6. It also shrinks the objective so its Hessian diagonal peaks at 0.01;
    this leaves the minimizer unchanged and lets the bounded penalties drive
    the multipliers to convergence in few outer iterations.
    """
    config = config or KKT_CONFIG
    rng = np.random.default_rng(seed)
    worst = 0.0
    failures = 0
    for _ in range(trials):
        qp = random_qp(rng)
        est, report = solve(qp_graph(qp), config)
        err = float(np.max(np.abs(est[0] - qp.kkt_solution())))
        worst = max(worst, err)
        if not report.converged or err > tol or report.max_eq_violation > tol:
            failures += 1
    return SuiteResult("kkt", failures == 0,
                       f"{trials - failures}/{trials} within {tol:g}, worst {worst:.2e}")


# --- Jacobians ---------------------------------------------------------------


def _shipped_factor_cases(rng: np.random.Generator) -> list[tuple[Factor, list, list]]:
    """``(factor, values, kinds)`` for every shipped factor type with analytic Jacobians."""
    from .apps import mpc, pose_estimation as pe, rotation_sync as rs
    from .factors import PriorFactor

    se2, m3 = SE2(), Matrix3()
    xs, xu = mpc.state_kind(), mpc.control_kind()

    def pose():
        return np.array([rng.normal(), rng.normal(), rng.uniform(-3, 3)])

    def state():
        s = rng.normal(size=6)
        s[[2, 4]] = rng.uniform(-3, 3, size=2)
        return s

    def control():
        return rng.uniform(-1, 1, size=3)

    Z = rs.svd_project(rng.normal(size=(3, 3)))
    return [
        (pe.GpsFactor(0, rng.normal(size=2), 20 * np.eye(2)), [pose()], [se2]),
        (pe.OdometryFactor(0, pose(), 10 * np.eye(3)), [pose()], [se2]),
        (pe.KinematicsConstraint(0, 1.0, 1.0), [pose()], [se2]),
        (PriorFactor(0, se2, pose()), [pose()], [se2]),
        (rs.RelativeRotationFactor(0, 1, Z, np.eye(9)),
         [rng.normal(size=9), rng.normal(size=9)], [m3, m3]),
        (rs.RotationConstraint(0), [rng.normal(size=9)], [m3]),
        (mpc.DynamicsConstraint(0, 1, 2, 0.1), [state(), control(), state()], [xs, xu, xs]),
        (mpc.VelocityConstraint(0, 1.0, 0.5), [state()], [xs]),
        (mpc.AccelerationConstraint(0, np.ones(3)), [control()], [xu]),
        (mpc.GoalFactor(0, pose(), np.eye(3)), [state()], [xs]),
        (mpc.EffortFactor(0, np.eye(3)), [control()], [xu]),
        (mpc.JerkFactor(0, 1, np.eye(3)), [control(), control()], [xu, xu]),
    ]


def jacobian_suite(points: int = 5, seed: int = 0, rtol: float = 1e-5,
                   cases: Callable[[np.random.Generator], Iterable] | None = None) -> SuiteResult:
    """Analytic Jacobians against central differences.

    ``cases`` yields ``(factor, values, kinds)`` triples; it defaults to every shipped
    factor type and exists so a faulty factor can be injected.
    """
    rng = np.random.default_rng(seed)
    make = cases or _shipped_factor_cases
    worst, worst_name = 0.0, ""
    checked = 0
    for _ in range(points):
        for factor, values, kinds in make(rng):
            jacs = factor.evaluate(values)[1]
            if jacs is None:
                continue
            num = numerical_jacobians(factor, values, kinds)
            for J, Jn in zip(jacs, num):
                err = float(np.max(np.abs(np.asarray(J) - Jn)) / max(1.0, np.max(np.abs(Jn))))
                if err > worst:
                    worst, worst_name = err, type(factor).__name__
            checked += 1
    passed = worst <= rtol
    detail = f"{checked} factor evaluations, worst relative error {worst:.1e}"
    if not passed:
        detail += f" in {worst_name}"
    return SuiteResult("finite-difference", passed, detail)


# --- slack closed form -------------------------------------------------------


def slack_objective(q, mu, rho, g):
    return mu * (g + q) + rho * (g + q) ** 2


def slack_grid_suite(trials: int = 1000, seed: int = 0, resolution: float = 1e-4) -> SuiteResult:
    """Closed-form slack against a grid scan of ``q`` over ``[0, 2 q_max]``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        mu = rng.uniform(0.0, 4.0)
        rho = rng.uniform(0.5, 2.0)
        g = rng.uniform(-2.0, 2.0)
        q_star = slack_qstar(mu, rho, g)
        hi = max(2.0 * q_star, 1.0)
        grid = np.arange(0.0, hi + resolution, resolution)
        q_grid = grid[np.argmin(slack_objective(grid, mu, rho, g))]
        worst = max(worst, abs(q_grid - q_star))
    return SuiteResult("slack-grid", worst <= resolution,
                       f"{trials} triples, worst |q* - q_grid| {worst:.1e}")


# --- RK4 ---------------------------------------------------------------------


def rk4_substep_suite(trials: int = 200, seed: int = 0, tol: float = 1e-6) -> SuiteResult:
    from .apps.mpc import rk4_step

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        s = rng.normal(size=6)
        u = rng.uniform(-1.0, 1.0, size=3)
        dt = rng.uniform(0.01, 0.1)
        fine = s.copy()
        for _ in range(10):
            fine = rk4_step(fine, u, dt / 10)
        worst = max(worst, float(np.max(np.abs(rk4_step(s, u, dt) - fine))))
    return SuiteResult("rk4-substep", worst <= tol,
                       f"{trials} steps, worst deviation {worst:.1e}")


SUITES = {
    "kkt": kkt_suite,
    "finite-difference": jacobian_suite,
    "slack-grid": slack_grid_suite,
    "rk4-substep": rk4_substep_suite,
}


def run_selftest(seed: int = 0, suites: Iterable[str] | None = None) -> list[SuiteResult]:
    names = list(SUITES) if suites is None else list(suites)
    return [SUITES[name](seed=seed) for name in names]


def main(seed: int = 0, out=None) -> int:
    results = run_selftest(seed)
    for r in results:
        print(r.line(), file=out)
    return 0 if all(r.passed for r in results) else 1


__all__ = [
    "KKT_CONFIG",
    "RandomQP",
    "SuiteResult",
    "jacobian_suite",
    "kkt_suite",
    "qp_graph",
    "random_qp",
    "rk4_substep_suite",
    "run_selftest",
    "slack_grid_suite",
]
