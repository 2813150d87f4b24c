"""Augmented Lagrangian iterative least squares.

The outer loop alternates ``inner_gn_iterations`` damped Gauss-Newton steps on
the augmented Lagrangian (multipliers and penalties frozen) with a dual phase
that updates every constraint factor's multipliers and penalties.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .constraints import (
    Formulation,
    contrib_equality,
    contrib_inequality,
    dual_update_equality,
    dual_update_inequality,
    g_plus,
    update_penalty,
)
from .assembly import Assembler
from .factors import linearize
from .graph import FactorGraph
from .linear import NotPositiveDefiniteError, SolverError, SparseBlockSystem, solve_damped
from .manifold import ContractError

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    inner_gn_iterations: int = 3
    max_outer_iterations: int = 1000
    eps_x: float = 1e-3
    eps_f: float = 1e-3
    eps_g: float = 1e-3
    rho_min: float = 0.5
    rho_max: float = 2.0
    rho_bar0: float = 1.0
    zeta_min: float = 0.1
    zeta_max: float = 1.0
    ibar_min: float = 20.0
    ibar_max: float = 500.0
    # start every solve from zero multipliers and rho_bar0 penalties
    reset_multipliers: bool = True
    # constant factor on every error term; "auto" maps the largest diagonal
    # entry of the objective Hessian at the initial estimate to auto_scale_target
    objective_scale: float | str = 1.0
    auto_scale_target: float = 1.0

    def __post_init__(self):
        if self.inner_gn_iterations < 1:
            raise ContractError("inner_gn_iterations must be >= 1")
        if self.max_outer_iterations < 1:
            raise ContractError("max_outer_iterations must be >= 1")
        if not 0 < self.rho_min <= self.rho_bar0 <= self.rho_max:
            raise ContractError("need 0 < rho_min <= rho_bar0 <= rho_max")
        if not 0 <= self.zeta_min <= self.zeta_max:
            raise ContractError("need 0 <= zeta_min <= zeta_max")
        if not self.ibar_min < self.ibar_max:
            raise ContractError("need ibar_min < ibar_max")
        if isinstance(self.objective_scale, str):
            if self.objective_scale != "auto":
                raise ContractError("objective_scale must be a positive number or 'auto'")
        elif not self.objective_scale > 0:
            raise ContractError("objective_scale must be positive")
        if not self.auto_scale_target > 0:
            raise ContractError("auto_scale_target must be positive")


@dataclass
class SolverReport:
    outer_iterations: int
    final_dx_norm: float
    max_eq_violation: float
    max_ineq_violation: float
    converged: bool
    wall_time: float
    gn_iterations: int = 0
    zeta: float = 0.0
    objective_scale: float = 1.0


@dataclass
class EpochState:
    """Iteration history across receding-horizon epochs, driving the damping."""

    iteration_history: list = field(default_factory=list)
    zeta: float = 0.1

    @property
    def ibar(self) -> float:
        if not self.iteration_history:
            return 0.0
        return float(np.mean(self.iteration_history))

    def record(self, iterations: int, config: SolverConfig | None = None) -> float:
        self.iteration_history.append(int(iterations))
        self.zeta = update_zeta(self, config)
        return self.zeta

    def reset(self, config: SolverConfig | None = None):
        config = config or SolverConfig()
        self.iteration_history.clear()
        self.zeta = config.zeta_min


def update_zeta(epoch_state: EpochState, config: SolverConfig | None = None) -> float:
    """Damping as a clamped linear function of the mean iteration count."""
    c = config or SolverConfig()
    if not epoch_state.iteration_history:
        return c.zeta_min
    ibar = epoch_state.ibar
    if ibar <= c.ibar_min:
        return c.zeta_min
    if ibar > c.ibar_max:
        return c.zeta_max
    slope = (c.zeta_max - c.zeta_min) / (c.ibar_max - c.ibar_min)
    return float(np.clip(c.zeta_min + slope * (ibar - c.ibar_min), c.zeta_min, c.zeta_max))


def _require_finalized(graph: FactorGraph):
    if not graph.finalized:
        raise ContractError("graph must be finalized before solving")


def build_system(graph: FactorGraph, estimate, system: SparseBlockSystem | None = None):
    """Accumulate the error and constraint contributions at ``estimate``."""
    _require_finalized(graph)
    if system is None:
        system = SparseBlockSystem(graph.block_dims)
    else:
        system.reset()
    H, b = system.H, system.b
    for f in graph.error_factors:
        values = graph.values_of(f, estimate)
        r, jacs = linearize(f, values, f._kinds)
        J = jacs[0] if len(jacs) == 1 else np.hstack(jacs)
        WJ = f.information @ J
        idx = f._index
        H[np.ix_(idx, idx)] += J.T @ WJ
        b[idx] += WJ.T @ r
    for f in graph.eq_factors:
        c = contrib_equality(f, graph.values_of(f, estimate), f._kinds)
        H[np.ix_(f._index, f._index)] += c.H
        b[f._index] += c.b
    for f in graph.ineq_factors:
        c = contrib_inequality(f, graph.values_of(f, estimate), f._kinds)
        H[np.ix_(f._index, f._index)] += c.H
        b[f._index] += c.b
    return system


def primal_step(graph: FactorGraph, estimate, zeta: float = 0.0, zeta_retry: float | None = 1.0,
                system: SparseBlockSystem | None = None):
    """One damped Gauss-Newton step on the augmented Lagrangian.

    This is the per-factor reference path; :func:`solve` uses the batched
    :class:`~alfg.assembly.Assembler`, which must agree with it.

    Returns ``(new_estimate, dx)``. If ``H + zeta I`` is not positive definite
    the solve is retried once with ``zeta_retry``.
    """
    system = build_system(graph, estimate, system)
    dx = _damped_step(system, zeta, zeta_retry)
    return graph.retract(estimate, dx), dx


def dual_phase(graph: FactorGraph, estimate):
    """Multiplier ascent on every constraint factor, then penalty adaptation."""
    for f in graph.eq_factors:
        dual_update_equality(f, graph.values_of(f, estimate))
    for f in graph.ineq_factors:
        dual_update_inequality(f, graph.values_of(f, estimate))
    for f in graph.constraint_factors:
        update_penalty(f, graph.values_of(f, estimate))


def constraint_violations(graph: FactorGraph, estimate) -> tuple[float, float]:
    """``(max |f|, max max(g, 0))`` over all constraint factors."""
    eq = 0.0
    for f in graph.eq_factors:
        eq = max(eq, float(np.max(np.abs(f.error(graph.values_of(f, estimate))))))
    ineq = 0.0
    for f in graph.ineq_factors:
        ineq = max(ineq, float(np.max(f.error(graph.values_of(f, estimate)))))
    return eq, ineq


def check_termination(graph: FactorGraph, estimate, dx, config: SolverConfig | None = None) -> bool:
    config = config or SolverConfig()
    if float(np.linalg.norm(dx)) >= config.eps_x:
        return False
    eq, ineq = constraint_violations(graph, estimate)
    return eq < config.eps_f and ineq < config.eps_g


def lagrangian_value(graph: FactorGraph, estimate) -> float:
    """Value of the augmented Lagrangian at ``estimate`` for the current multipliers."""
    total = 0.0
    for f in graph.error_factors:
        total += f.chi2(graph.values_of(f, estimate))
    for f in graph.eq_factors:
        v = f.error(graph.values_of(f, estimate))
        total += f.lam @ v + v @ (f.rho * v)
    for f in graph.ineq_factors:
        g = f.error(graph.values_of(f, estimate))
        if f.formulation is Formulation.SLACK:
            gp = g_plus(f.mu, f.rho, g)
            total += f.mu @ gp + gp @ (f.rho * gp)
        else:
            gp = np.maximum(g, 0.0)
            total += f.mu @ g + gp @ (f.rho * gp)
    return float(total)


def resolve_objective_scale(asm: Assembler, x, config: SolverConfig) -> float:
    if config.objective_scale != "auto":
        return float(config.objective_scale)
    H, _ = asm.normal_equations(x, constraints=False)
    top = float(np.max(np.diag(H))) if H.size else 0.0
    return config.auto_scale_target / top if top > 0 else 1.0


def _damped_step(system: SparseBlockSystem, zeta: float, zeta_retry: float | None):
    try:
        return solve_damped(system, zeta)
    except NotPositiveDefiniteError:
        if zeta_retry is None:
            raise
        log.debug("factorization failed at zeta=%g, retrying with %g", zeta, zeta_retry)
        return solve_damped(system, max(zeta_retry, zeta))


def solve(graph: FactorGraph, config: SolverConfig | None = None, initial=None,
          zeta: float = 0.0, callback=None):
    """Run the outer augmented-Lagrangian loop until termination.

    ``initial`` defaults to the values stored in the graph. ``callback`` is
    invoked as ``callback(outer_iteration, estimate)`` after each dual phase,
    with the factors' multipliers and penalties already updated.
    Returns ``(estimate, SolverReport)``. Final multipliers and penalties are
    left on the constraint factors; they refer to the scaled objective when
    ``config.objective_scale`` is not 1.
    """
    _require_finalized(graph)
    config = config or SolverConfig()
    t0 = time.perf_counter()
    estimate = graph.check_estimate(graph.initial_estimate() if initial is None else initial)
    if config.reset_multipliers:
        for f in graph.constraint_factors:
            f.reset(config.rho_bar0, config.rho_min, config.rho_max)
    asm = Assembler(graph)
    layout = asm.layout
    x = layout.pack(estimate)
    scale = resolve_objective_scale(asm, x, config)
    system = SparseBlockSystem(graph.block_dims)
    dx = np.full(graph.tangent_dim, np.inf)
    converged = False
    outer = gn = 0
    try:
        while outer < config.max_outer_iterations:
            for _ in range(config.inner_gn_iterations):
                system.H, system.b = asm.normal_equations(x, scale)
                dx = _damped_step(system, zeta, config.zeta_max)
                x = layout.retract(x, dx)
                gn += 1
            errors = asm.constraint_errors(x)
            asm.dual_update(errors)
            outer += 1
            if callback is not None:
                asm.store_state()
                callback(outer, layout.unpack(x))
            eq, ineq = asm.violations(errors)
            if (float(np.linalg.norm(dx)) < config.eps_x
                    and eq < config.eps_f and ineq < config.eps_g):
                converged = True
                break
    finally:
        asm.store_state()
    eq, ineq = asm.violations(asm.constraint_errors(x))
    report = SolverReport(
        outer_iterations=outer,
        final_dx_norm=float(np.linalg.norm(dx)),
        max_eq_violation=eq,
        max_ineq_violation=ineq,
        converged=converged,
        wall_time=time.perf_counter() - t0,
        gn_iterations=gn,
        zeta=float(zeta),
        objective_scale=scale,
    )
    return layout.unpack(x), report


__all__ = [
    "EpochState",
    "SolverConfig",
    "SolverError",
    "SolverReport",
    "build_system",
    "check_termination",
    "constraint_violations",
    "dual_phase",
    "lagrangian_value",
    "primal_step",
    "resolve_objective_scale",
    "solve",
    "update_zeta",
]
