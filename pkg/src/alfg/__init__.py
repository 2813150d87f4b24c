"""Constrained factor-graph optimization with augmented-Lagrangian constraint factors."""

from .assembly import Assembler, VariableLayout
from .constraints import (
    Contribution,
    EqualityConstraintFactor,
    Formulation,
    FunctionEquality,
    FunctionInequality,
    InequalityConstraintFactor,
    contrib_equality,
    contrib_inequality,
    dual_update_equality,
    dual_update_inequality,
    g_plus,
    slack_qstar,
    update_penalty,
)
from .factors import (
    ErrorFactor,
    Factor,
    FunctionErrorFactor,
    LinearFactor,
    PriorFactor,
    linearize,
    numerical_jacobians,
)
from .graph import FactorGraph
from .linear import NotPositiveDefiniteError, SolverError, SparseBlockSystem, accumulate, solve_damped
from .manifold import SE2, ContractError, Euclidean, ManifoldVariable, Matrix3, boxplus, wrap_angle
from .solver import (
    EpochState,
    SolverConfig,
    SolverReport,
    build_system,
    check_termination,
    constraint_violations,
    dual_phase,
    lagrangian_value,
    primal_step,
    resolve_objective_scale,
    solve,
    update_zeta,
)

__version__ = "0.1.0"
