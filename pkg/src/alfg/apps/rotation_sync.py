"""Rotation synchronization over unconstrained 3x3 matrix variables.

Relative measurements ``Z_ij ~ R_i^T R_j`` give residuals
``flatten(A_i Z_ij - A_j)``. The baseline solves the unconstrained least
squares problem and projects each ``A_i`` onto SO(3) by SVD; the constrained
variant adds ``A^T A = I`` and ``det A = 1`` as equality constraint factors so
that the optimum is already a set of rotations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from ..constraints import EqualityConstraintFactor
from ..factors import ErrorFactor, PriorFactor
from ..graph import FactorGraph
from ..linear import SolverError
from ..manifold import Matrix3
from ..solver import SolverConfig, solve

ANCHOR_INFORMATION = 1e6
CSV_COLUMNS = (
    "run", "seed", "omega", "method", "dalpha_x", "dalpha_y", "dalpha_z",
    "orth_violation", "det_violation", "converged", "outer_iterations",
)


def relative_rotation_residual(A_i, A_j, Z) -> np.ndarray:
    A_i = np.asarray(A_i, dtype=float).reshape(3, 3)
    A_j = np.asarray(A_j, dtype=float).reshape(3, 3)
    return (A_i @ np.asarray(Z, dtype=float) - A_j).reshape(-1)


def rotation_constraint(A) -> np.ndarray:
    A = np.asarray(A, dtype=float).reshape(3, 3)
    return np.concatenate([(A.T @ A - np.eye(3)).reshape(-1), [np.linalg.det(A) - 1.0]])


def rotation_constraint_jacobian(A) -> np.ndarray:
    """10x9 Jacobian of :func:`rotation_constraint` wrt row-major ``A``."""
    A = np.asarray(A, dtype=float).reshape(3, 3)
    J = np.zeros((10, 9))
    # d(A^T A)_{kl} / dA_{pq} = delta_{qk} A_{pl} + A_{pk} delta_{ql}
    for k in range(3):
        for l in range(3):
            row = 3 * k + l
            for p in range(3):
                J[row, 3 * p + k] += A[p, l]
                J[row, 3 * p + l] += A[p, k]
    cof = np.array([
        [A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1], A[1, 2] * A[2, 0] - A[1, 0] * A[2, 2], A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]],
        [A[0, 2] * A[2, 1] - A[0, 1] * A[2, 2], A[0, 0] * A[2, 2] - A[0, 2] * A[2, 0], A[0, 1] * A[2, 0] - A[0, 0] * A[2, 1]],
        [A[0, 1] * A[1, 2] - A[0, 2] * A[1, 1], A[0, 2] * A[1, 0] - A[0, 0] * A[1, 2], A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]],
    ])
    J[9] = cof.reshape(-1)
    return J


def svd_project(A) -> np.ndarray:
    """Closest rotation in Frobenius norm, ``U diag(1, 1, det(U V^T)) V^T``."""
    A = np.asarray(A, dtype=float).reshape(3, 3)
    U, S, Vt = np.linalg.svd(A)
    if S[-1] <= 1e-12 * max(S[0], 1.0):
        raise np.linalg.LinAlgError("cannot project a singular matrix onto SO(3)")
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


class RelativeRotationFactor(ErrorFactor):
    def __init__(self, i, j, Z, information):
        super().__init__((i, j), 9, information)
        self.Z = np.asarray(Z, dtype=float).reshape(3, 3)
        # row-major vec(A Z) = (I kron Z^T) vec(A)
        self._Ji = np.kron(np.eye(3), self.Z.T)
        self._Jj = -np.eye(9)

    def error(self, values):
        return relative_rotation_residual(values[0], values[1], self.Z)

    def jacobians(self, values):
        return [self._Ji, self._Jj]


class RotationConstraint(EqualityConstraintFactor):
    """``flatten(A^T A - I)`` and ``det(A) - 1``."""

    def __init__(self, key, **penalty):
        super().__init__((key,), 10, **penalty)

    def error(self, values):
        return rotation_constraint(values[0])

    def jacobians(self, values):
        return [rotation_constraint_jacobian(values[0])]


@dataclass
class RotationSyncProblem:
    n: int
    measurements: list = field(default_factory=list)  # (i, j, Z, Omega 9x9)
    gauge_index: int = 0
    gauge_value: np.ndarray = field(default_factory=lambda: np.eye(3))
    ground_truth: np.ndarray | None = None  # (n, 3, 3)

    def check_connected(self):
        parent = list(range(self.n))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, j, *_ in self.measurements:
            parent[find(i)] = find(j)
        if len({find(i) for i in range(self.n)}) != 1:
            raise ValueError("measurement graph is not connected")


def ring_with_chords(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Cycle over ``0..n-1`` plus ``n // 4`` random non-adjacent chords."""
    if n < 3:
        raise ValueError("need n >= 3")
    edges = [(i, (i + 1) % n) for i in range(n)]
    existing = {frozenset(e) for e in edges}
    target = n // 4
    while target and len(edges) < n + target:
        i, j = (int(v) for v in rng.choice(n, size=2, replace=False))
        if frozenset((i, j)) in existing:
            if len(existing) >= n * (n - 1) // 2:
                break
            continue
        existing.add(frozenset((i, j)))
        edges.append((min(i, j), max(i, j)))
    return edges


def generate_problem(n: int, omega: float, rng: np.random.Generator) -> RotationSyncProblem:
    """Random ground truth and noisy relative rotations.

    Each measurement is ``R_i^T R_j Exp(eps)`` with ``eps ~ N(0, I / omega)``
    and information ``omega * I_9``; ``omega <= 0`` or ``inf`` means noise-free.
    """
    truth = Rotation.random(n, random_state=rng).as_matrix()
    edges = ring_with_chords(n, rng)
    noisy = np.isfinite(omega) and omega > 0
    sigma = 1.0 / np.sqrt(omega) if noisy else 0.0
    info = (omega if noisy else 1.0) * np.eye(9)
    meas = []
    for i, j in edges:
        Z = truth[i].T @ truth[j]
        if sigma > 0:
            Z = Z @ Rotation.from_rotvec(rng.normal(0.0, sigma, 3)).as_matrix()
        meas.append((i, j, Z, info.copy()))
    problem = RotationSyncProblem(n, meas, 0, truth[0].copy(), truth)
    problem.check_connected()
    return problem


INIT_MODES = ("zeros", "identity", "random")


def initial_guess(problem: RotationSyncProblem, mode: str = "zeros",
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Starting matrices, ``(n, 3, 3)``, with the gauge variable at its anchor.

    ``zeros`` starts every matrix at 0. There the orthonormality constraint
    Jacobians vanish, so the first step is the unconstrained least-squares
    solution and the constraints act from a consistent point onwards.
    """
    n = problem.n
    if mode == "zeros":
        init = np.zeros((n, 3, 3))
    elif mode == "identity":
        init = np.tile(np.eye(3), (n, 1, 1))
    elif mode == "random":
        init = Rotation.random(n, random_state=rng).as_matrix()
    else:
        raise ValueError(f"init must be one of {INIT_MODES}")
    init[problem.gauge_index] = problem.gauge_value
    return init


def build_graph(problem: RotationSyncProblem, constrained: bool, initial=None,
                normalize_information: bool = True) -> FactorGraph:
    """Graph over ``n`` Matrix3 variables with the gauge variable anchored.

    With ``normalize_information`` every measurement information matrix is
    divided by the largest ``||Omega||_inf``; scaling the whole objective by a
    constant leaves its minimizer unchanged.
    """
    graph = FactorGraph()
    if initial is None:
        initial = initial_guess(problem)
    for i in range(problem.n):
        graph.add_variable(Matrix3(), np.asarray(initial[i]).reshape(-1))
    scale = 1.0
    if normalize_information and problem.measurements:
        scale = max(np.abs(np.asarray(m[3])).sum(axis=1).max() for m in problem.measurements)
    for i, j, Z, Omega in problem.measurements:
        graph.add(RelativeRotationFactor(i, j, Z, np.asarray(Omega) / scale))
    graph.add(PriorFactor(problem.gauge_index, Matrix3(), problem.gauge_value.reshape(-1),
                          ANCHOR_INFORMATION))
    if constrained:
        for i in range(problem.n):
            graph.add(RotationConstraint(i))
    return graph.finalize()


def mean_angular_errors(estimates, truth, skip=(0,)) -> np.ndarray:
    """Mean absolute fixed-axis XYZ angles of ``R_gt^T R_est`` per axis."""
    errs = []
    for i, (R_est, R_gt) in enumerate(zip(estimates, truth)):
        if i in skip:
            continue
        E = Rotation.from_matrix(R_gt.T @ R_est).as_euler("xyz")
        errs.append(np.abs(E))
    return np.mean(errs, axis=0)


@dataclass
class SyncResult:
    method: str
    rotations: np.ndarray
    raw: np.ndarray
    errors: np.ndarray
    orth_violation: float
    det_violation: float
    converged: bool
    outer_iterations: int
    wall_time: float


def _violations(mats):
    orth = max(float(np.max(np.abs(A.T @ A - np.eye(3)))) for A in mats)
    det = max(abs(float(np.linalg.det(A)) - 1.0) for A in mats)
    return orth, det


def solve_sync(problem: RotationSyncProblem, constrained: bool, config: SolverConfig | None = None,
               initial=None, normalize_information: bool = True) -> SyncResult:
    """Solve the synchronization problem.

    ``constrained=False`` is the SVD baseline: unconstrained solve, then
    projection. The constrained result is reported without projection.
    """
    if config is None:
        config = SolverConfig(eps_f=1e-4)
    graph = build_graph(problem, constrained, initial, normalize_information)
    est, report = solve(graph, config)
    raw = np.array([est[i].reshape(3, 3) for i in range(problem.n)])
    rotations = raw if constrained else np.array([svd_project(A) for A in raw])
    orth, det = _violations(rotations)
    errors = (mean_angular_errors(rotations, problem.ground_truth, skip=(problem.gauge_index,))
              if problem.ground_truth is not None else np.full(3, np.nan))
    return SyncResult("constrained" if constrained else "svd", rotations, raw, errors,
                      orth, det, report.converged, report.outer_iterations, report.wall_time)


def run_sync_experiment(n: int, omega: float, seed: int, runs: int = 1, random_init: bool = False,
                        config: SolverConfig | None = None, init: str | None = None) -> list[dict]:
    """Solve ``runs`` random instances with both methods; one row per (run, method).

    ``init`` picks the initial guess (see :func:`initial_guess`);
    ``random_init=True`` is shorthand for ``init="random"``.
    """
    if n < 3:
        raise ValueError("need n >= 3")
    if init is None:
        init = "random" if random_init else "zeros"
    rows = []
    for run in range(runs):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(run)]))
        problem = generate_problem(n, omega, rng)
        initial = initial_guess(problem, init, rng)
        for constrained in (False, True):
            try:
                res = solve_sync(problem, constrained, config, initial)
            except SolverError:
                rows.append(dict(run=run, seed=seed, omega=omega,
                                 method="constrained" if constrained else "svd",
                                 dalpha_x=np.nan, dalpha_y=np.nan, dalpha_z=np.nan,
                                 orth_violation=np.nan, det_violation=np.nan,
                                 converged=False, outer_iterations=0))
                continue
            rows.append(dict(
                run=run, seed=seed, omega=omega, method=res.method,
                dalpha_x=float(res.errors[0]), dalpha_y=float(res.errors[1]),
                dalpha_z=float(res.errors[2]), orth_violation=res.orth_violation,
                det_violation=res.det_violation, converged=res.converged,
                outer_iterations=res.outer_iterations,
            ))
    return rows


def read_measurements(path) -> RotationSyncProblem:
    """Parse ``i j a00 a01 ... a22 w`` lines into a problem with ``Omega = w I_9``.

    Blank lines and lines starting with ``#`` are ignored. Variable 0 is the gauge,
    anchored at the identity.
    """
    meas = []
    n = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 12:
                raise ValueError(f"{path}:{lineno}: expected 12 fields, got {len(parts)}")
            i, j = int(parts[0]), int(parts[1])
            Z = np.array([float(v) for v in parts[2:11]]).reshape(3, 3)
            w = float(parts[11])
            if np.max(np.abs(Z.T @ Z - np.eye(3))) > 1e-6:
                raise ValueError(f"{path}:{lineno}: measurement is not orthogonal")
            meas.append((i, j, Z, w * np.eye(9)))
            n = max(n, i + 1, j + 1)
    problem = RotationSyncProblem(n, meas)
    problem.check_connected()
    return problem


def write_measurements(problem: RotationSyncProblem, path):
    with open(path, "w") as fh:
        for i, j, Z, Omega in problem.measurements:
            vals = " ".join(repr(float(v)) for v in np.asarray(Z).reshape(-1))
            fh.write(f"{i} {j} {vals} {float(np.max(np.abs(Omega).sum(axis=1)))!r}\n")
