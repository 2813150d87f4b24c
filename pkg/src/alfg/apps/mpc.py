"""Receding-horizon control of a pseudo-omnidirectional platform.

The state is ``X = (x, y, theta, v, phi, omega)`` where ``phi`` is the
direction of the body-frame velocity, and the platform is driven in
acceleration by ``u = (dv, dphi, domega)``. Each epoch solves a factor graph
over ``X_0..X_T`` and ``u_0..u_{T-1}`` with RK4 dynamics as equality
constraints and velocity/acceleration limits as inequality constraints, then
actuates ``u_0`` for one step.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..constraints import EqualityConstraintFactor, Formulation, InequalityConstraintFactor
from ..factors import ErrorFactor, PriorFactor
from ..graph import FactorGraph
from ..linear import SolverError
from ..manifold import Euclidean, wrap_angle
from ..solver import EpochState, SolverConfig, SolverReport, solve

STATE_ANGLES = (2, 4)
STATE_DIM = 6
CONTROL_DIM = 3
ANCHOR_INFORMATION = 1e6
CSV_COLUMNS = (
    "epoch", "time", "x", "y", "theta", "v", "phi", "omega", "dv", "dphi", "domega",
    "iterations", "zeta", "solve_ms", "goal_index",
)


def state_kind() -> Euclidean:
    return Euclidean(STATE_DIM, angles=STATE_ANGLES)


def control_kind() -> Euclidean:
    return Euclidean(CONTROL_DIM)


def kinematics_derivative(state) -> np.ndarray:
    """Pose rates ``(xdot, ydot, thetadot)``: body velocity rotated into the world."""
    _, _, th, v, phi, om = state
    return np.array([v * math.cos(th + phi), v * math.sin(th + phi), om])


def _f_and_jac(s, u):
    """6-state derivative and its state Jacobian, batched over leading axis."""
    th, v, phi, om = s[:, 2], s[:, 3], s[:, 4], s[:, 5]
    c, sn = np.cos(th + phi), np.sin(th + phi)
    f = np.stack([v * c, v * sn, om, u[:, 0], u[:, 1], u[:, 2]], axis=1)
    A = np.zeros((s.shape[0], 6, 6))
    A[:, 0, 2] = A[:, 0, 4] = -v * sn
    A[:, 0, 3] = c
    A[:, 1, 2] = A[:, 1, 4] = v * c
    A[:, 1, 3] = sn
    A[:, 2, 5] = 1.0
    return f, A


_B = np.zeros((6, 3))
_B[3:, :] = np.eye(3)


def rk4_batch(states, controls, dt, jacobians: bool = False):
    """RK4 over stacked ``(N, 6)`` states and ``(N, 3)`` controls.

    ``dt`` is a scalar or ``(N,)``. With ``jacobians=True`` also returns
    ``(N, 6, 6)`` state and ``(N, 6, 3)`` control Jacobians.
    """
    s = np.asarray(states, dtype=float)
    u = np.asarray(controls, dtype=float)
    h = np.broadcast_to(np.asarray(dt, dtype=float), (s.shape[0],))
    if np.any(h <= 0):
        raise ValueError("dt must be positive")
    hc = h[:, None]
    k1, A1 = _f_and_jac(s, u)
    k2, A2 = _f_and_jac(s + 0.5 * hc * k1, u)
    k3, A3 = _f_and_jac(s + 0.5 * hc * k2, u)
    k4, A4 = _f_and_jac(s + hc * k3, u)
    out = s + (hc / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not jacobians:
        return out
    hm = h[:, None, None]
    eye = np.eye(6)
    dk1s, dk1u = A1, np.broadcast_to(_B, A1.shape[:1] + _B.shape)
    dk2s = A2 @ (eye + 0.5 * hm * dk1s)
    dk2u = A2 @ (0.5 * hm * dk1u) + _B
    dk3s = A3 @ (eye + 0.5 * hm * dk2s)
    dk3u = A3 @ (0.5 * hm * dk2u) + _B
    dk4s = A4 @ (eye + hm * dk3s)
    dk4u = A4 @ (hm * dk3u) + _B
    Fs = eye + (hm / 6.0) * (dk1s + 2 * dk2s + 2 * dk3s + dk4s)
    Fu = (hm / 6.0) * (dk1u + 2 * dk2u + 2 * dk3u + dk4u)
    return out, Fs, Fu


def rk4_step(state, control, dt, jacobians: bool = False):
    """One classical RK4 step of the platform ODE under constant acceleration.

    With ``jacobians=True`` also returns ``(dF/dstate, dF/dcontrol)``.
    Angles in the returned state are not wrapped.
    """
    res = rk4_batch(np.asarray(state, dtype=float)[None], np.asarray(control, dtype=float)[None],
                    dt, jacobians)
    if not jacobians:
        return res[0]
    return tuple(r[0] for r in res)


def wrap_state(state) -> np.ndarray:
    s = np.array(state, dtype=float)
    s[list(STATE_ANGLES)] = wrap_angle(s[list(STATE_ANGLES)])
    return s


def dynamics_residual(X_t, u_t, X_next, dt) -> np.ndarray:
    r = rk4_step(X_t, u_t, dt) - np.asarray(X_next, dtype=float)
    r[list(STATE_ANGLES)] = wrap_angle(r[list(STATE_ANGLES)])
    return r


def velocity_residuals(state, omega_max, d) -> np.ndarray:
    """``|omega -/+ v/d| <= omega_max`` as four ``g <= 0`` rows."""
    if d <= 0:
        raise ValueError("d must be positive")
    v, om = state[3], state[5]
    a, b = om - v / d, om + v / d
    return np.array([a - omega_max, -a - omega_max, b - omega_max, -b - omega_max])


def acceleration_residuals(control, limits) -> np.ndarray:
    """``|u_k| <= limit_k`` as six rows ``(+u0, -u0, +u1, -u1, +u2, -u2) - limit``."""
    u = np.asarray(control, dtype=float)
    lim = np.asarray(limits, dtype=float)
    out = np.empty(6)
    out[0::2] = u - lim
    out[1::2] = -u - lim
    return out


class DynamicsConstraint(EqualityConstraintFactor):
    """``F(X_t, u_t) - X_{t+1} = 0`` with wrapped angle rows."""

    def __init__(self, k_state, k_control, k_next, dt, **penalty):
        super().__init__((k_state, k_control, k_next), STATE_DIM, **penalty)
        self.dt = float(dt)

    def error(self, values):
        return dynamics_residual(values[0], values[1], values[2], self.dt)

    def evaluate(self, values):
        nxt, Fs, Fu = rk4_step(values[0], values[1], self.dt, jacobians=True)
        r = nxt - values[2]
        r[list(STATE_ANGLES)] = wrap_angle(r[list(STATE_ANGLES)])
        return r, [Fs, Fu, -np.eye(STATE_DIM)]

    @classmethod
    def batch_params(cls, factors):
        return np.array([f.dt for f in factors])

    @classmethod
    def batch_error(cls, dt, values):
        r = rk4_batch(values[0], values[1], dt) - values[2]
        r[:, STATE_ANGLES] = wrap_angle(r[:, STATE_ANGLES])
        return r

    @classmethod
    def batch_evaluate(cls, dt, values):
        nxt, Fs, Fu = rk4_batch(values[0], values[1], dt, jacobians=True)
        r = nxt - values[2]
        r[:, STATE_ANGLES] = wrap_angle(r[:, STATE_ANGLES])
        n = r.shape[0]
        J = np.concatenate([Fs, Fu, np.broadcast_to(-np.eye(STATE_DIM), (n, 6, 6))], axis=2)
        return r, J


class VelocityConstraint(InequalityConstraintFactor):
    def __init__(self, key, omega_max, d, formulation=Formulation.SLACK, **penalty):
        super().__init__((key,), 4, formulation, **penalty)
        self.omega_max, self.d = float(omega_max), float(d)
        J = np.zeros((4, STATE_DIM))
        J[:, 3] = np.array([-1.0, 1.0, 1.0, -1.0]) / self.d
        J[:, 5] = np.array([1.0, -1.0, 1.0, -1.0])
        self._J = [J]

    def error(self, values):
        return velocity_residuals(values[0], self.omega_max, self.d)

    def jacobians(self, values):
        return self._J

    @classmethod
    def batch_params(cls, factors):
        return (np.array([f.omega_max for f in factors])[:, None],
                np.array([f.d for f in factors])[:, None],
                np.array([f._J[0] for f in factors]))

    @classmethod
    def batch_error(cls, params, values):
        om_max, d, _ = params
        s = values[0]
        a = s[:, 5:6] - s[:, 3:4] / d
        b = s[:, 5:6] + s[:, 3:4] / d
        return np.hstack([a, -a, b, -b]) - om_max

    @classmethod
    def batch_evaluate(cls, params, values):
        return cls.batch_error(params, values), params[2]


class AccelerationConstraint(InequalityConstraintFactor):
    def __init__(self, key, limits, formulation=Formulation.SLACK, **penalty):
        super().__init__((key,), 6, formulation, **penalty)
        self.limits = np.asarray(limits, dtype=float)
        J = np.zeros((6, CONTROL_DIM))
        for k in range(CONTROL_DIM):
            J[2 * k, k] = 1.0
            J[2 * k + 1, k] = -1.0
        self._J = [J]

    def error(self, values):
        return acceleration_residuals(values[0], self.limits)

    def jacobians(self, values):
        return self._J

    @classmethod
    def batch_params(cls, factors):
        return (np.array([f.limits for f in factors]), np.array([f._J[0] for f in factors]))

    @classmethod
    def batch_error(cls, params, values):
        lim, _ = params
        u = values[0]
        out = np.empty((u.shape[0], 6))
        out[:, 0::2] = u - lim
        out[:, 1::2] = -u - lim
        return out

    @classmethod
    def batch_evaluate(cls, params, values):
        return cls.batch_error(params, values), params[1]


class GoalFactor(ErrorFactor):
    """``(g_x - x, g_y - y, wrap(g_theta - theta))`` on a state."""

    _J = np.hstack([-np.eye(3), np.zeros((3, 3))])

    def __init__(self, key, goal, information):
        super().__init__((key,), 3, information)
        self.goal = np.asarray(goal, dtype=float)

    def error(self, values):
        s = values[0]
        return np.array([self.goal[0] - s[0], self.goal[1] - s[1], wrap_angle(self.goal[2] - s[2])])

    def jacobians(self, values):
        return [self._J]

    @classmethod
    def batch_params(cls, factors):
        return np.array([f.goal for f in factors])

    @classmethod
    def batch_error(cls, goal, values):
        e = goal - values[0][:, :3]
        e[:, 2] = wrap_angle(e[:, 2])
        return e

    @classmethod
    def batch_evaluate(cls, goal, values):
        e = cls.batch_error(goal, values)
        return e, np.broadcast_to(cls._J, (e.shape[0],) + cls._J.shape)


class EffortFactor(ErrorFactor):
    def __init__(self, key, information):
        super().__init__((key,), CONTROL_DIM, information)

    def error(self, values):
        return values[0].copy()

    def jacobians(self, values):
        return [np.eye(CONTROL_DIM)]

    @classmethod
    def batch_params(cls, factors):
        return None

    @classmethod
    def batch_error(cls, params, values):
        return values[0].copy()

    @classmethod
    def batch_evaluate(cls, params, values):
        n = values[0].shape[0]
        return values[0].copy(), np.broadcast_to(np.eye(CONTROL_DIM), (n, 3, 3))


class JerkFactor(ErrorFactor):
    """``u_{t+1} - u_t``."""

    def __init__(self, k_u, k_next, information):
        super().__init__((k_u, k_next), CONTROL_DIM, information)

    def error(self, values):
        return values[1] - values[0]

    def jacobians(self, values):
        return [-np.eye(CONTROL_DIM), np.eye(CONTROL_DIM)]

    _J = np.hstack([-np.eye(CONTROL_DIM), np.eye(CONTROL_DIM)])

    @classmethod
    def batch_params(cls, factors):
        return None

    @classmethod
    def batch_error(cls, params, values):
        return values[1] - values[0]

    @classmethod
    def batch_evaluate(cls, params, values):
        e = values[1] - values[0]
        return e, np.broadcast_to(cls._J, (e.shape[0],) + cls._J.shape)


def default_solver_config() -> SolverConfig:
    """Solver settings for the MPC graph.

    The objective is scaled by 0.1, which leaves the plan unchanged but keeps
    it commensurate with penalties bounded by ``rho_max``; at scale 1 cold
    starts far from the goal diverge at the smallest damping.
    """
    return SolverConfig(objective_scale=0.1)


@dataclass
class MpcConfig:
    horizon: int = 20
    dt: float = 0.1
    goal: tuple = (0.0, 0.0, 0.0)
    goal_weight: tuple = (1.0, 1.0, 1.0)
    terminal_scale: float = 10.0
    effort_weight: float = 0.1
    jerk_weight: float = 0.1
    omega_max: float = 1.0
    dv_max: float = 1.0
    dphi_max: float = 1.0
    domega_max: float = 1.0
    d: float = 0.5
    goal_tolerance: tuple = (0.05, 0.05)
    formulation: Formulation = Formulation.SLACK
    # carry shifted multipliers between epochs instead of restarting from zero
    warm_multipliers: bool = False
    solver: SolverConfig = field(default_factory=lambda: default_solver_config())

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if min(self.omega_max, self.dv_max, self.dphi_max, self.domega_max, self.d) <= 0:
            raise ValueError("limits and d must be positive")
        self.formulation = Formulation(self.formulation)
        self.goal = tuple(float(g) for g in self.goal)

    @property
    def accel_limits(self) -> np.ndarray:
        return np.array([self.dv_max, self.dphi_max, self.domega_max])


def objective_factors(config: MpcConfig, state_keys, control_keys) -> list[ErrorFactor]:
    """Goal terms on every state, effort on every control, jerk between controls."""
    T = config.horizon
    goal_info = np.diag(config.goal_weight)
    factors: list[ErrorFactor] = []
    for t in range(T + 1):
        info = goal_info * (config.terminal_scale if t == T else 1.0)
        factors.append(GoalFactor(state_keys[t], config.goal, info))
    for t in range(T):
        factors.append(EffortFactor(control_keys[t], config.effort_weight * np.eye(CONTROL_DIM)))
    for t in range(T - 1):
        factors.append(JerkFactor(control_keys[t], control_keys[t + 1],
                                  config.jerk_weight * np.eye(CONTROL_DIM)))
    return factors


def build_graph(config: MpcConfig, x0, states, controls):
    """The horizon graph with ``X_0`` anchored to ``x0``.

    Velocity limits apply to ``X_1..X_T``; ``X_0`` is the measured state and
    cannot be changed by the plan.
    """
    graph = FactorGraph()
    T = config.horizon
    sk = [graph.add_variable(state_kind(), states[t]) for t in range(T + 1)]
    ck = [graph.add_variable(control_kind(), controls[t]) for t in range(T)]
    graph.add(PriorFactor(sk[0], state_kind(), x0, ANCHOR_INFORMATION))
    graph.add(*objective_factors(config, sk, ck))
    sc = config.solver
    penalty = dict(rho_bar0=sc.rho_bar0, rho_min=sc.rho_min, rho_max=sc.rho_max)
    for t in range(T):
        graph.add(DynamicsConstraint(sk[t], ck[t], sk[t + 1], config.dt, **penalty))
    for t in range(1, T + 1):
        graph.add(VelocityConstraint(sk[t], config.omega_max, config.d, config.formulation, **penalty))
    for t in range(T):
        graph.add(AccelerationConstraint(ck[t], config.accel_limits, config.formulation, **penalty))
    return graph.finalize(), sk, ck


@dataclass
class MpcEpochResult:
    states: np.ndarray  # (T+1, 6)
    controls: np.ndarray  # (T, 3)
    report: SolverReport | None
    zeta: float
    failed: bool = False
    rho_range: tuple = (float("nan"), float("nan"))
    # final multipliers per constraint family, one row per knot
    multipliers: dict | None = None

    @property
    def u0(self) -> np.ndarray:
        return self.controls[0].copy()


def cold_start(config: MpcConfig, plant_state=None):
    """All knots at the robot's pose with zero velocities and controls.

    Without ``plant_state`` the knots sit at the world origin.
    """
    T = config.horizon
    states = np.zeros((T + 1, STATE_DIM))
    if plant_state is not None:
        states[:, :3] = np.asarray(plant_state, dtype=float)[:3]
    return states, np.zeros((T, CONTROL_DIM))


def _shift(a):
    return np.vstack([a[1:], a[-1:]])


def shift_solution(previous: MpcEpochResult):
    """Drop the first knot and duplicate the last one."""
    return _shift(previous.states), _shift(previous.controls)


def _constraint_families(graph):
    return {
        "dynamics": [f for f in graph.eq_factors if isinstance(f, DynamicsConstraint)],
        "velocity": [f for f in graph.ineq_factors if isinstance(f, VelocityConstraint)],
        "acceleration": [f for f in graph.ineq_factors if isinstance(f, AccelerationConstraint)],
    }


def _seed_multipliers(graph, config: MpcConfig, multipliers: dict | None):
    """Reset penalties; start multipliers from the shifted previous epoch if given."""
    sc = config.solver
    for name, factors in _constraint_families(graph).items():
        rows = None if multipliers is None else _shift(multipliers[name])
        for t, f in enumerate(factors):
            f.reset(sc.rho_bar0, sc.rho_min, sc.rho_max)
            if rows is not None:
                f._multiplier = rows[t].copy()


def mpc_epoch(plant_state, previous: MpcEpochResult | None, config: MpcConfig,
              epoch_state: EpochState) -> MpcEpochResult:
    """Solve one horizon and return the plan; ``u0`` is the control to apply.

    ``previous=None`` triggers a cold start at the plant pose with zero
    velocities and controls. A previous epoch that failed or did not converge
    is not used for warm starting. On solver failure the result is flagged
    and the caller decides which control to apply.
    """
    zeta = epoch_state.zeta
    cold = previous is None or previous.failed or not previous.report.converged
    if cold:
        states, controls = cold_start(config, plant_state)
    else:
        states, controls = shift_solution(previous)
    graph, sk, ck = build_graph(config, plant_state, states, controls)
    warm_duals = config.warm_multipliers and not cold
    _seed_multipliers(graph, config, previous.multipliers if warm_duals else None)
    try:
        est, report = solve(graph, replace(config.solver, reset_multipliers=False), zeta=zeta)
    except SolverError:
        epoch_state.record(config.solver.max_outer_iterations, config.solver)
        return MpcEpochResult(states, controls, None, zeta, failed=True)
    epoch_state.record(report.outer_iterations, config.solver)
    rho = np.concatenate([f.rho for f in graph.constraint_factors])
    rho_bar = np.concatenate([f.rho_bar for f in graph.constraint_factors])
    return MpcEpochResult(
        np.array([est[k] for k in sk]), np.array([est[k] for k in ck]), report, zeta,
        rho_range=(float(min(rho.min(), rho_bar.min())), float(max(rho.max(), rho_bar.max()))),
        multipliers={name: np.array([f._multiplier for f in fs])
                     for name, fs in _constraint_families(graph).items()},
    )


def goal_reached(state, goal, tolerance) -> bool:
    return (math.hypot(state[0] - goal[0], state[1] - goal[1]) <= tolerance[0]
            and abs(wrap_angle(state[2] - goal[2])) <= tolerance[1])


@dataclass
class SimulationLog:
    rows: list = field(default_factory=list)
    travel_times: list = field(default_factory=list)  # per goal; nan when abandoned
    goals_completed: list = field(default_factory=list)
    epoch_results: list = field(default_factory=list)
    solve_ms: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    zetas: list = field(default_factory=list)
    rhos: list = field(default_factory=list)  # (min, max) over rho and rho_bar per epoch

    @property
    def all_goals_completed(self) -> bool:
        return bool(self.goals_completed) and all(self.goals_completed)


def run_simulation(goals, config: MpcConfig, seed: int = 0, initial_state=None,
                   noise: float = 0.0, max_epochs_per_goal: int = 600,
                   keep_plans: bool = False) -> SimulationLog:
    """Drive the simulated plant through ``goals`` in order.

    Each epoch plans from the measured state, applies ``u0`` for one step of
    ``dt`` with :func:`rk4_step`, and advances to the next goal once the pose
    is within tolerance. ``noise`` adds Gaussian perturbation (std per state
    component) to the plant after each step.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    plant = wrap_state(np.zeros(STATE_DIM) if initial_state is None else initial_state)
    log = SimulationLog()
    epoch_state = EpochState(zeta=config.solver.zeta_min)
    epoch = 0
    sim_time = 0.0
    last_u = np.zeros(CONTROL_DIM)
    for gi, goal in enumerate(goals):
        cfg = replace(config, goal=tuple(goal))
        epoch_state.reset(config.solver)
        previous = None
        failures = 0
        t_start = sim_time
        reached = False
        for _ in range(max_epochs_per_goal):
            t0 = time.perf_counter()
            result = mpc_epoch(plant, previous, cfg, epoch_state)
            solve_ms = 1000.0 * (time.perf_counter() - t0)
            if result.failed:
                failures += 1
                u = last_u if failures < 3 else np.zeros(CONTROL_DIM)
                previous = None
            else:
                failures = 0
                # actuator saturation; only binds for unconverged plans
                u = np.clip(result.u0, -cfg.accel_limits, cfg.accel_limits)
                previous = result
            plant = wrap_state(rk4_step(plant, u, cfg.dt))
            if noise > 0:
                plant = wrap_state(plant + rng.normal(0.0, noise, STATE_DIM))
            sim_time += cfg.dt
            last_u = u
            iters = result.report.outer_iterations if result.report else -1
            log.rows.append((epoch, round(sim_time, 10), *plant, *u, iters, result.zeta, solve_ms, gi))
            log.solve_ms.append(solve_ms)
            log.iterations.append(iters)
            log.zetas.append(result.zeta)
            log.rhos.append(result.rho_range)
            if keep_plans:
                log.epoch_results.append(result)
            epoch += 1
            if goal_reached(plant, goal, cfg.goal_tolerance):
                reached = True
                break
        log.goals_completed.append(reached)
        log.travel_times.append(round(sim_time - t_start, 10) if reached else float("nan"))
    return log


def load_goals(path) -> list[tuple[float, float, float]]:
    """Read ``g_x g_y g_theta`` lines; ``#`` starts a comment."""
    goals = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'g_x g_y g_theta'")
            goals.append(tuple(float(p) for p in parts))
    if not goals:
        raise ValueError(f"{path}: no goals")
    return goals
