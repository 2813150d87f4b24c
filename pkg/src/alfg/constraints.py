"""Augmented-Lagrangian constraint factors.

Equality constraints ``f(x) = 0`` and inequality constraints ``g(x) <= 0`` are
factors carrying their own multipliers and a diagonal penalty ``P``. During
the primal phase they contribute to the Gauss-Newton system like any error
factor; between primal phases the solver calls the dual and penalty updates
below.

Two inequality formulations are available:

``SLACK``
    The slack variable of ``g + q = 0`` is eliminated in closed form, which
    replaces ``g`` by the active-set residual ``g+ = max(g, -mu / 2 rho)``.
``MAXPEN``
    The penalty is applied to ``max(0, g)`` while the multiplier term keeps
    the raw constraint Jacobian.
"""

from __future__ import annotations

import enum
from typing import Callable, NamedTuple

import numpy as np

from .factors import Factor, linearize
from .manifold import ContractError

# below this magnitude a violation counts as zero in the penalty update
VIOLATION_FLOOR = 1e-12


class Formulation(str, enum.Enum):
    SLACK = "slack"
    MAXPEN = "maxpen"


class Contribution(NamedTuple):
    """Hessian and gradient terms of one factor over its stacked tangent space."""

    keys: tuple
    H: np.ndarray
    b: np.ndarray


class ConstraintFactor(Factor):
    """Shared multiplier and penalty state."""

    def __init__(self, keys, dim, rho_bar0: float = 1.0, rho_min: float = 0.5, rho_max: float = 2.0):
        super().__init__(keys, dim)
        self.reset(rho_bar0, rho_min, rho_max)

    def reset(self, rho_bar0=1.0, rho_min=0.5, rho_max=2.0):
        if not 0 < rho_min <= rho_bar0 <= rho_max:
            raise ContractError("penalty bounds must satisfy 0 < rho_min <= rho_bar0 <= rho_max")
        self.rho_min = float(rho_min)
        self.rho_max = float(rho_max)
        self.rho = np.full(self.dim, float(rho_bar0))
        self.rho_bar = np.full(self.dim, float(rho_bar0))
        self.prev_violation = None
        self._multiplier = np.zeros(self.dim)

    @property
    def P(self) -> np.ndarray:
        return np.diag(self.rho)

    def violation(self, value: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class EqualityConstraintFactor(ConstraintFactor):
    """Constraint ``f(x) = 0`` with multiplier ``lam``."""

    @property
    def lam(self) -> np.ndarray:
        return self._multiplier

    @lam.setter
    def lam(self, value):
        self._multiplier = np.asarray(value, dtype=float).reshape(self.dim).copy()

    def violation(self, value):
        return np.abs(value)


class InequalityConstraintFactor(ConstraintFactor):
    """Constraint ``g(x) <= 0`` with multiplier ``mu >= 0``."""

    def __init__(self, keys, dim, formulation=Formulation.SLACK, **penalty):
        super().__init__(keys, dim, **penalty)
        self.formulation = Formulation(formulation)

    @property
    def mu(self) -> np.ndarray:
        return self._multiplier

    @mu.setter
    def mu(self, value):
        value = np.asarray(value, dtype=float).reshape(self.dim).copy()
        if np.any(value < 0):
            raise ContractError("inequality multipliers must be non-negative")
        self._multiplier = value

    def violation(self, value):
        return np.maximum(value, 0.0)


class FunctionEquality(EqualityConstraintFactor):
    """Equality constraint from a callable ``fn(*values)``; ``jac`` is optional."""

    def __init__(self, keys, dim, fn: Callable, jac: Callable | None = None, **penalty):
        super().__init__(keys, dim, **penalty)
        self.fn = fn
        self.jac = jac

    def error(self, values):
        return np.asarray(self.fn(*values), dtype=float).reshape(-1)

    def jacobians(self, values):
        if self.jac is None:
            return None
        return [np.atleast_2d(np.asarray(J, dtype=float)) for J in self.jac(*values)]


class FunctionInequality(InequalityConstraintFactor):
    """Inequality constraint from a callable ``fn(*values)``; ``jac`` is optional."""

    def __init__(self, keys, dim, fn: Callable, jac: Callable | None = None,
                 formulation=Formulation.SLACK, **penalty):
        super().__init__(keys, dim, formulation, **penalty)
        self.fn = fn
        self.jac = jac

    error = FunctionEquality.error
    jacobians = FunctionEquality.jacobians


def _diag(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    return np.diag(P).copy() if P.ndim == 2 else P.reshape(-1)


def slack_qstar(mu_i: float, rho_i: float, g_i: float) -> float:
    """Minimizer over ``q >= 0`` of ``mu (g + q) + rho (g + q)^2``."""
    if rho_i <= 0:
        raise ContractError("penalty coefficient must be positive")
    return max(0.0, -(mu_i / (2.0 * rho_i) + g_i))


def g_plus(mu, P, g_value) -> np.ndarray:
    """Active-set residual ``max(g, -mu / (2 rho))``, componentwise."""
    mu = np.asarray(mu, dtype=float).reshape(-1)
    rho = _diag(P)
    g_value = np.asarray(g_value, dtype=float).reshape(-1)
    if not (mu.shape == rho.shape == g_value.shape):
        raise ContractError("mu, P and g must have matching dimensions")
    if np.any(rho <= 0):
        raise ContractError("penalty coefficients must be positive")
    return np.maximum(g_value, -mu / (2.0 * rho))


def _stack(jacs, dim):
    if len(jacs) == 1:
        return jacs[0]
    return np.hstack(jacs) if jacs else np.zeros((dim, 0))


def equality_terms(f, F, lam, rho):
    """Batched ``H = F^T P F`` and ``b = F^T P f + F^T lam / 2``.

    Shapes: ``f, lam, rho`` are ``(N, m)`` and ``F`` is ``(N, m, D)``.
    """
    PF = rho[..., None] * F
    Ft = np.swapaxes(F, -1, -2)
    H = Ft @ PF
    b = (Ft @ (rho * f + 0.5 * lam)[..., None])[..., 0]
    return H, b


def inequality_terms(g, G, mu, rho, formulation):
    """Batched inequality contribution, same shapes as :func:`equality_terms`."""
    if Formulation(formulation) is Formulation.SLACK:
        threshold = -mu / (2.0 * rho)
        # ties at the breakpoint are treated as active
        active = g >= threshold
        gp = np.where(active, g, threshold)
        Gp = G * active[..., None]
        Gpt = np.swapaxes(Gp, -1, -2)
        b = (Gpt @ (rho * gp + 0.5 * mu)[..., None])[..., 0]
    else:
        active = g >= 0.0
        gp = np.maximum(g, 0.0)
        Gp = G * active[..., None]
        Gpt = np.swapaxes(Gp, -1, -2)
        b = (Gpt @ (rho * gp)[..., None])[..., 0]
        b += (np.swapaxes(G, -1, -2) @ (0.5 * mu)[..., None])[..., 0]
    H = Gpt @ (rho[..., None] * Gp)
    return H, b


def contrib_equality(factor: EqualityConstraintFactor, values, kinds) -> Contribution:
    f, jacs = linearize(factor, values, kinds)
    F = _stack(jacs, factor.dim)
    H, b = equality_terms(f[None], F[None], factor.lam[None], factor.rho[None])
    return Contribution(factor.keys, H[0], b[0])


def contrib_inequality(factor: InequalityConstraintFactor, values, kinds) -> Contribution:
    g, jacs = linearize(factor, values, kinds)
    G = _stack(jacs, factor.dim)
    H, b = inequality_terms(g[None], G[None], factor.mu[None], factor.rho[None],
                            factor.formulation)
    return Contribution(factor.keys, H[0], b[0])


def contrib_constraint(factor: ConstraintFactor, values, kinds) -> Contribution:
    if isinstance(factor, EqualityConstraintFactor):
        return contrib_equality(factor, values, kinds)
    return contrib_inequality(factor, values, kinds)


def dual_update_equality(factor: EqualityConstraintFactor, values) -> np.ndarray:
    """``lam <- lam + 2 P f(x)``."""
    f = np.asarray(factor.error(values), dtype=float)
    factor.lam = factor.lam + 2.0 * factor.rho * f
    return factor.lam


def dual_update_inequality(factor: InequalityConstraintFactor, values) -> np.ndarray:
    """``mu <- max(0, mu + 2 P g(x))``, using the raw constraint value."""
    g = np.asarray(factor.error(values), dtype=float)
    factor.mu = np.maximum(0.0, factor.mu + 2.0 * factor.rho * g)
    return factor.mu


def penalty_step(prev, curr, rho_bar, rho_min, rho_max):
    """One application of the relative-violation penalty schedule.

    Returns ``(rho, rho_bar)``; all arrays are per constraint component.
    """
    prev = np.asarray(prev, dtype=float)
    curr = np.asarray(curr, dtype=float)
    rho_bar = np.asarray(rho_bar, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        dec = np.where(prev < VIOLATION_FLOOR, 0.0, (prev - curr) / prev)
        inc = np.where(curr < VIOLATION_FLOOR, 0.0, (curr - prev) / curr)
    f_minus = np.maximum(0.0, dec)
    f_plus = np.maximum(0.0, inc)
    rho = rho_bar + f_minus * (rho_max - rho_bar) + f_plus * (rho_min - rho_bar)
    new_bar = rho_bar + f_minus * (rho_max - rho_bar)
    return np.clip(rho, rho_min, rho_max), np.clip(new_bar, rho_min, rho_max)


def update_penalty(factor: ConstraintFactor, values) -> np.ndarray:
    """Adapt the diagonal penalty from the change in violation since last call.

    The first call only records the violation.
    """
    curr = factor.violation(np.asarray(factor.error(values), dtype=float))
    if factor.prev_violation is not None:
        factor.rho, factor.rho_bar = penalty_step(
            factor.prev_violation, curr, factor.rho_bar, factor.rho_min, factor.rho_max
        )
    factor.prev_violation = curr
    return factor.rho
