"""Factor graph container."""

from __future__ import annotations

import numpy as np

from .constraints import EqualityConstraintFactor, InequalityConstraintFactor
from .factors import ErrorFactor, Factor
from .manifold import ContractError, Manifold, ManifoldVariable


class FactorGraph:
    """Variables plus error, equality and inequality factors.

    Keys are assigned densely in insertion order. Call :meth:`finalize`
    after construction; it validates factor keys and fixes the tangent
    layout used by the linear system.
    """

    def __init__(self):
        self.variables: dict[int, ManifoldVariable] = {}
        self.error_factors: list[ErrorFactor] = []
        self.eq_factors: list[EqualityConstraintFactor] = []
        self.ineq_factors: list[InequalityConstraintFactor] = []
        self._finalized = False
        self.offsets: np.ndarray | None = None

    def add_variable(self, kind: Manifold, value=None) -> int:
        if self._finalized:
            raise ContractError("graph already finalized")
        key = len(self.variables)
        self.variables[key] = ManifoldVariable(kind, value)
        return key

    def add_factor(self, factor: Factor) -> Factor:
        if self._finalized:
            raise ContractError("graph already finalized")
        if isinstance(factor, EqualityConstraintFactor):
            self.eq_factors.append(factor)
        elif isinstance(factor, InequalityConstraintFactor):
            self.ineq_factors.append(factor)
        elif isinstance(factor, ErrorFactor):
            self.error_factors.append(factor)
        else:
            raise ContractError(f"unsupported factor type {type(factor).__name__}")
        return factor

    def add(self, *factors: Factor):
        for f in factors:
            self.add_factor(f)

    @property
    def constraint_factors(self):
        return self.eq_factors + self.ineq_factors

    @property
    def factors(self):
        return self.error_factors + self.eq_factors + self.ineq_factors

    def kind(self, key: int) -> Manifold:
        return self.variables[key].kind

    @property
    def block_dims(self) -> list[int]:
        return [self.variables[k].tangent_dim for k in range(len(self.variables))]

    @property
    def tangent_dim(self) -> int:
        return int(sum(self.block_dims))

    def finalize(self) -> "FactorGraph":
        n = len(self.variables)
        for f in self.factors:
            for k in f.keys:
                if not 0 <= k < n:
                    raise ContractError(f"{f!r} references unknown variable {k}")
            if len(set(f.keys)) != len(f.keys):
                raise ContractError(f"{f!r} lists a variable twice")
            # cache per-factor layout for linearization
            f._kinds = [self.variables[k].kind for k in f.keys]
        dims = self.block_dims
        self.offsets = np.concatenate([[0], np.cumsum(dims)]).astype(int)
        for f in self.factors:
            f._index = np.concatenate(
                [np.arange(self.offsets[k], self.offsets[k + 1]) for k in f.keys]
            )
        self._finalized = True
        return self

    @property
    def finalized(self) -> bool:
        return self._finalized

    def initial_estimate(self) -> dict[int, np.ndarray]:
        return {k: v.value.copy() for k, v in self.variables.items()}

    def check_estimate(self, estimate) -> dict[int, np.ndarray]:
        out = {}
        for k, var in self.variables.items():
            if k not in estimate:
                raise ContractError(f"estimate is missing variable {k}")
            out[k] = var.kind.check(estimate[k])
        return out

    def values_of(self, factor: Factor, estimate) -> list[np.ndarray]:
        try:
            return [estimate[k] for k in factor.keys]
        except KeyError as exc:
            raise ContractError(f"estimate is missing variable {exc.args[0]}") from None

    def retract(self, estimate, dx: np.ndarray) -> dict[int, np.ndarray]:
        """Apply ``estimate ⊞ dx`` with ``dx`` laid out by :attr:`offsets`."""
        dx = np.asarray(dx, dtype=float).reshape(-1)
        if dx.shape[0] != self.tangent_dim:
            raise ContractError(
                f"perturbation has {dx.shape[0]} entries, graph needs {self.tangent_dim}"
            )
        off = self.offsets
        return {
            k: var.kind.boxplus(estimate[k], dx[off[k]:off[k + 1]])
            for k, var in self.variables.items()
        }
