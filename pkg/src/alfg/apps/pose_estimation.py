"""Planar pose estimation from one GPS fix and odometry, optionally constrained.

A unicycle starts at the origin with unknown heading, drives straight at
speed ``v`` for time ``T`` and then gets a GPS fix. Driving straight means
the final pose lies on the circle of radius ``vT`` with a radial heading,
which is added as a two-dimensional equality constraint.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..constraints import EqualityConstraintFactor
from ..factors import ErrorFactor
from ..graph import FactorGraph
from ..linear import SolverError
from ..manifold import SE2, wrap_angle
from ..solver import SolverConfig, solve

GROUND_TRUTH = np.array([1.0, 0.0, 0.0])
CSV_COLUMNS = ("trial", "e_t_free", "e_rot_free", "e_t_constrained", "e_rot_constrained")


def gps_factor_residual(pose, z_gps) -> np.ndarray:
    return np.asarray(pose[:2], dtype=float) - np.asarray(z_gps, dtype=float)


def odom_factor_residual(pose, Z_odom) -> np.ndarray:
    """Relative pose ``X^-1 Z`` as ``(dx, dy, wrap(dtheta))``."""
    x, y, th = pose
    c, s = math.cos(th), math.sin(th)
    dx, dy = Z_odom[0] - x, Z_odom[1] - y
    return np.array([c * dx + s * dy, -s * dx + c * dy, wrap_angle(Z_odom[2] - th)])


def kinematics_constraint(pose, v, T) -> np.ndarray:
    x, y, th = pose
    return np.array([x * x + y * y - (v * T) ** 2, x * math.sin(th) - y * math.cos(th)])


class GpsFactor(ErrorFactor):
    def __init__(self, key, z_gps, information):
        super().__init__((key,), 2, information)
        self.z = np.asarray(z_gps, dtype=float)

    def error(self, values):
        return gps_factor_residual(values[0], self.z)

    def jacobians(self, values):
        c, s = math.cos(values[0][2]), math.sin(values[0][2])
        return [np.array([[c, -s, 0.0], [s, c, 0.0]])]

    @classmethod
    def batch_params(cls, factors):
        return np.array([f.z for f in factors])

    @classmethod
    def batch_error(cls, z, values):
        return values[0][:, :2] - z

    @classmethod
    def batch_evaluate(cls, z, values):
        X = values[0]
        c, s = np.cos(X[:, 2]), np.sin(X[:, 2])
        J = np.zeros((X.shape[0], 2, 3))
        J[:, 0, 0], J[:, 0, 1] = c, -s
        J[:, 1, 0], J[:, 1, 1] = s, c
        return X[:, :2] - z, J


class OdometryFactor(ErrorFactor):
    def __init__(self, key, Z_odom, information):
        super().__init__((key,), 3, information)
        self.Z = np.asarray(Z_odom, dtype=float)

    def error(self, values):
        return odom_factor_residual(values[0], self.Z)

    def jacobians(self, values):
        x, y, th = values[0]
        c, s = math.cos(th), math.sin(th)
        dx, dy = self.Z[0] - x, self.Z[1] - y
        # body-frame perturbation: d(R^T (t_z - t - R dt)) / d dt = -I
        return [np.array([
            [-1.0, 0.0, -s * dx + c * dy],
            [0.0, -1.0, -c * dx - s * dy],
            [0.0, 0.0, -1.0],
        ])]

    @classmethod
    def batch_params(cls, factors):
        return np.array([f.Z for f in factors])

    @classmethod
    def batch_error(cls, Z, values):
        X = values[0]
        c, s = np.cos(X[:, 2]), np.sin(X[:, 2])
        dx, dy = Z[:, 0] - X[:, 0], Z[:, 1] - X[:, 1]
        return np.stack([c * dx + s * dy, -s * dx + c * dy, wrap_angle(Z[:, 2] - X[:, 2])], axis=1)

    @classmethod
    def batch_evaluate(cls, Z, values):
        X = values[0]
        c, s = np.cos(X[:, 2]), np.sin(X[:, 2])
        dx, dy = Z[:, 0] - X[:, 0], Z[:, 1] - X[:, 1]
        J = np.zeros((X.shape[0], 3, 3))
        J[:, 0, 0] = J[:, 1, 1] = J[:, 2, 2] = -1.0
        J[:, 0, 2] = -s * dx + c * dy
        J[:, 1, 2] = -c * dx - s * dy
        return cls.batch_error(Z, values), J


class KinematicsConstraint(EqualityConstraintFactor):
    """Pose on the circle of radius ``vT`` with radial heading."""

    def __init__(self, key, v, T, **penalty):
        super().__init__((key,), 2, **penalty)
        self.v, self.T = float(v), float(T)

    def error(self, values):
        return kinematics_constraint(values[0], self.v, self.T)

    def jacobians(self, values):
        x, y, th = values[0]
        c, s = math.cos(th), math.sin(th)
        R = np.array([[c, -s], [s, c]])
        J = np.zeros((2, 3))
        J[0, :2] = np.array([2 * x, 2 * y]) @ R
        J[1, :2] = np.array([s, -c]) @ R
        J[1, 2] = x * c + y * s
        return [J]

    @classmethod
    def batch_params(cls, factors):
        return np.array([f.v * f.T for f in factors])

    @classmethod
    def batch_error(cls, radius, values):
        x, y, th = values[0].T
        return np.stack([x * x + y * y - radius ** 2, x * np.sin(th) - y * np.cos(th)], axis=1)

    @classmethod
    def batch_evaluate(cls, radius, values):
        x, y, th = values[0].T
        c, s = np.cos(th), np.sin(th)
        J = np.zeros((x.shape[0], 2, 3))
        # rows of the world-frame gradient rotated by R(theta)
        J[:, 0, 0] = 2 * x * c + 2 * y * s
        J[:, 0, 1] = -2 * x * s + 2 * y * c
        J[:, 1, 0] = s * c - c * s
        J[:, 1, 1] = -s * s - c * c
        J[:, 1, 2] = x * c + y * s
        return cls.batch_error(radius, values), J


@dataclass
class PoseEstimationProblem:
    z_gps: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    Z_odom: np.ndarray | None = None
    Omega_gps: np.ndarray = field(default_factory=lambda: 20.0 * np.eye(2))
    Omega_odom: np.ndarray = field(default_factory=lambda: 10.0 * np.eye(3))
    v: float = 1.0
    T: float = 1.0
    theta0: float = 0.5

    def __post_init__(self):
        if self.v <= 0 or self.T <= 0:
            raise ValueError("v and T must be positive")
        self.z_gps = np.asarray(self.z_gps, dtype=float)
        self.Omega_gps = _information(self.Omega_gps, 2)
        self.Omega_odom = _information(self.Omega_odom, 3)
        if self.Z_odom is None:
            self.Z_odom = integrate_straight_line(self.theta0, self.v, self.T)
        self.Z_odom = np.asarray(self.Z_odom, dtype=float)

    @property
    def initial_guess(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.theta0])


def _information(omega, n):
    omega = np.asarray(omega, dtype=float)
    if omega.ndim == 0:
        return float(omega) * np.eye(n)
    if not np.allclose(omega, omega.T) or np.any(np.linalg.eigvalsh(omega) <= 0):
        raise ValueError("information matrix must be symmetric positive definite")
    return omega


def integrate_straight_line(theta0, v, T) -> np.ndarray:
    """Unicycle driven straight from ``(0, 0, theta0)`` with zero turn rate."""
    return np.array([v * T * math.cos(theta0), v * T * math.sin(theta0), wrap_angle(theta0)])


def build_graph(problem: PoseEstimationProblem, constrained: bool) -> tuple[FactorGraph, int]:
    graph = FactorGraph()
    k = graph.add_variable(SE2(), problem.initial_guess)
    graph.add(GpsFactor(k, problem.z_gps, problem.Omega_gps))
    graph.add(OdometryFactor(k, problem.Z_odom, problem.Omega_odom))
    if constrained:
        graph.add(KinematicsConstraint(k, problem.v, problem.T))
    return graph.finalize(), k


def estimate_pose(problem: PoseEstimationProblem, constrained: bool,
                  config: SolverConfig | None = None):
    graph, k = build_graph(problem, constrained)
    est, report = solve(graph, config)
    return est[k], report


def pose_errors(pose, truth=GROUND_TRUTH) -> tuple[float, float]:
    """Translational (m) and absolute rotational (rad) error against ``truth``."""
    return (float(np.hypot(pose[0] - truth[0], pose[1] - truth[1])),
            abs(wrap_angle(pose[2] - truth[2])))


def sample_gps(rng: np.random.Generator, Omega_gps, truth=GROUND_TRUTH) -> np.ndarray:
    """GPS fix drawn with covariance ``Omega_gps^-1`` around the true position."""
    cov = np.linalg.inv(Omega_gps)
    return rng.multivariate_normal(truth[:2], cov)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(trial)]))


@dataclass
class TrialResult:
    trial: int
    e_t_free: float
    e_rot_free: float
    e_t_constrained: float
    e_rot_constrained: float
    converged_free: bool
    converged_constrained: bool
    constraint_violation: float
    pose_free: np.ndarray
    pose_constrained: np.ndarray

    def row(self):
        return (self.trial, self.e_t_free, self.e_rot_free,
                self.e_t_constrained, self.e_rot_constrained)


def run_trial(trial: int, seed: int, template: PoseEstimationProblem,
              config: SolverConfig | None = None, noise: bool = True) -> TrialResult:
    rng = trial_rng(seed, trial)
    z = sample_gps(rng, template.Omega_gps) if noise else GROUND_TRUTH[:2].copy()
    problem = PoseEstimationProblem(z, template.Z_odom, template.Omega_gps,
                                    template.Omega_odom, template.v, template.T, template.theta0)
    nan3 = np.full(3, np.nan)
    try:
        free, rep_free = estimate_pose(problem, False, config)
    except SolverError:
        free, rep_free = nan3, None
    try:
        cons, rep_cons = estimate_pose(problem, True, config)
    except SolverError:
        cons, rep_cons = nan3, None
    et_f, er_f = pose_errors(free)
    et_c, er_c = pose_errors(cons)
    viol = float(np.max(np.abs(kinematics_constraint(cons, problem.v, problem.T))))
    return TrialResult(
        trial, et_f, er_f, et_c, er_c,
        bool(rep_free and rep_free.converged), bool(rep_cons and rep_cons.converged),
        viol, free, cons,
    )


def _run_chunk(args):
    trials, seed, template, config, noise = args
    return [run_trial(t, seed, template, config, noise) for t in trials]


def run_monte_carlo(trials: int, seed: int, template: PoseEstimationProblem | None = None,
                    config: SolverConfig | None = None, noise: bool = True,
                    workers: int | None = None) -> list[TrialResult]:
    """Solve the free and constrained problems for ``trials`` GPS draws.

    Each trial has its own generator derived from ``(seed, trial)`` so results
    do not depend on ``workers``. ``workers`` defaults to the
    ``CFG_SOLVER_THREADS`` environment variable (0 = sequential).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    template = template or PoseEstimationProblem()
    if workers is None:
        workers = int(os.environ.get("CFG_SOLVER_THREADS", "0") or 0)
    if workers <= 1:
        return [run_trial(t, seed, template, config, noise) for t in range(trials)]
    chunks = [list(range(i, trials, workers)) for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(_run_chunk, [(c, seed, template, config, noise) for c in chunks])
        results = [r for part in parts for r in part]
    return sorted(results, key=lambda r: r.trial)


def summarize(results: list[TrialResult]) -> dict:
    arr = np.array([r.row()[1:] for r in results], dtype=float)
    conv = [r for r in results if r.converged_constrained]
    ok = sum(r.constraint_violation <= 1e-3 for r in conv)
    return {
        "trials": len(results),
        "mean_e_t_free": float(np.nanmean(arr[:, 0])),
        "mean_e_rot_free": float(np.nanmean(arr[:, 1])),
        "mean_e_t_constrained": float(np.nanmean(arr[:, 2])),
        "mean_e_rot_constrained": float(np.nanmean(arr[:, 3])),
        "converged_constrained": len(conv),
        "constraint_satisfied_fraction": ok / len(conv) if conv else 0.0,
    }
