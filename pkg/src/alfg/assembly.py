"""Vectorized assembly of the augmented-Lagrangian normal equations.

Factors of the same class over the same variable kinds are evaluated as one
group through the ``batch_*`` classmethods of :class:`~alfg.factors.Factor`.
The estimate is held as one flat value vector; each group gathers its inputs
by precomputed index arrays and scatters ``H`` and ``b`` with ``bincount``.
Multiplier and penalty state lives in per-group arrays during a solve and is
copied back to the factor objects by :meth:`Assembler.store_state`.
"""

from __future__ import annotations

import numpy as np

from .constraints import (
    Formulation,
    equality_terms,
    inequality_terms,
    penalty_step,
)
from .graph import FactorGraph
from .manifold import ContractError

ERROR, EQUALITY, INEQUALITY = "error", "eq", "ineq"


class VariableLayout:
    """Flat value vector over all variables, with batched retraction."""

    def __init__(self, graph: FactorGraph):
        keys = range(len(graph.variables))
        kinds = [graph.kind(k) for k in keys]
        sizes = [k.size for k in kinds]
        self.value_offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.tangent_offsets = graph.offsets
        self.size = int(self.value_offsets[-1])
        self.tangent_dim = graph.tangent_dim
        self.kinds = kinds
        by_kind: dict[tuple, list[int]] = {}
        for k, kind in enumerate(kinds):
            by_kind.setdefault((type(kind), repr(kind)), []).append(k)
        self.kind_groups = []
        for members in by_kind.values():
            kind = kinds[members[0]]
            vi = np.array([self.value_index(k) for k in members])
            ti = np.array([self.tangent_index(k) for k in members])
            self.kind_groups.append((kind, vi, ti))

    def value_index(self, key: int) -> np.ndarray:
        return np.arange(self.value_offsets[key], self.value_offsets[key + 1])

    def tangent_index(self, key: int) -> np.ndarray:
        return np.arange(self.tangent_offsets[key], self.tangent_offsets[key + 1])

    def pack(self, estimate) -> np.ndarray:
        return np.concatenate([np.asarray(estimate[k], dtype=float)
                               for k in range(len(self.kinds))])

    def unpack(self, x) -> dict[int, np.ndarray]:
        o = self.value_offsets
        return {k: x[o[k]:o[k + 1]].copy() for k in range(len(self.kinds))}

    def retract(self, x, dx) -> np.ndarray:
        dx = np.asarray(dx, dtype=float).reshape(-1)
        if dx.shape[0] != self.tangent_dim:
            raise ContractError(
                f"perturbation has {dx.shape[0]} entries, graph needs {self.tangent_dim}"
            )
        out = np.empty_like(x)
        for kind, vi, ti in self.kind_groups:
            out[vi] = kind.boxplus_batch(x[vi], dx[ti])
        return out


class FactorGroup:
    """Same-class factors evaluated together."""

    def __init__(self, role, factors, layout: VariableLayout):
        self.role = role
        self.factors = list(factors)
        self.cls = type(self.factors[0])
        self.params = self.cls.batch_params(self.factors)
        nslots = len(self.factors[0].keys)
        self.value_idx = [
            np.array([layout.value_index(f.keys[s]) for f in self.factors]) for s in range(nslots)
        ]
        self.index = np.array([f._index for f in self.factors])
        self.dim = self.factors[0].dim
        if role == ERROR:
            self.information = np.array([f.information for f in self.factors])
        else:
            self.formulation = getattr(self.factors[0], "formulation", None)
            self.rho_min = np.array([[f.rho_min] for f in self.factors])
            self.rho_max = np.array([[f.rho_max] for f in self.factors])
            self.load_state()

    def values(self, x):
        return [x[vi] for vi in self.value_idx]

    def error(self, x) -> np.ndarray:
        r = np.asarray(self.cls.batch_error(self.params, self.values(x)), dtype=float)
        return r.reshape(len(self.factors), self.dim)

    def terms(self, x):
        r, J = self.cls.batch_evaluate(self.params, self.values(x))
        r = np.asarray(r, dtype=float).reshape(len(self.factors), self.dim)
        J = np.asarray(J, dtype=float)
        if self.role == ERROR:
            WJ = self.information @ J
            H = np.swapaxes(J, 1, 2) @ WJ
            b = (np.swapaxes(WJ, 1, 2) @ r[..., None])[..., 0]
        elif self.role == EQUALITY:
            H, b = equality_terms(r, J, self.multiplier, self.rho)
        else:
            H, b = inequality_terms(r, J, self.multiplier, self.rho, self.formulation)
        return H, b

    # constraint state

    def load_state(self):
        fs = self.factors
        self.multiplier = np.array([f._multiplier for f in fs], dtype=float)
        self.rho = np.array([f.rho for f in fs], dtype=float)
        self.rho_bar = np.array([f.rho_bar for f in fs], dtype=float)
        prev = [f.prev_violation for f in fs]
        self.prev = None if any(p is None for p in prev) else np.array(prev, dtype=float)

    def store_state(self):
        for n, f in enumerate(self.factors):
            f._multiplier = self.multiplier[n].copy()
            f.rho = self.rho[n].copy()
            f.rho_bar = self.rho_bar[n].copy()
            f.prev_violation = None if self.prev is None else self.prev[n].copy()

    def violation(self, err) -> np.ndarray:
        return np.abs(err) if self.role == EQUALITY else np.maximum(err, 0.0)

    def dual_update(self, err):
        """Multiplier ascent then penalty adaptation, from one constraint evaluation."""
        if self.role == EQUALITY:
            self.multiplier = self.multiplier + 2.0 * self.rho * err
        else:
            self.multiplier = np.maximum(0.0, self.multiplier + 2.0 * self.rho * err)
        curr = self.violation(err)
        if self.prev is not None:
            self.rho, self.rho_bar = penalty_step(
                self.prev, curr, self.rho_bar, self.rho_min, self.rho_max
            )
        self.prev = curr


def _group_key(f, role):
    kinds = tuple(repr(k) for k in f._kinds)
    form = getattr(f, "formulation", None)
    return (role, type(f), f.dim, kinds, None if form is None else Formulation(form).value)


class Assembler:
    """Batched linearization, dual updates and violation checks for one graph."""

    def __init__(self, graph: FactorGraph):
        if not graph.finalized:
            raise ContractError("graph must be finalized before solving")
        self.graph = graph
        self.layout = VariableLayout(graph)
        buckets: dict[tuple, list] = {}
        for role, factors in ((ERROR, graph.error_factors), (EQUALITY, graph.eq_factors),
                              (INEQUALITY, graph.ineq_factors)):
            for f in factors:
                buckets.setdefault(_group_key(f, role), []).append(f)
        self.groups = [FactorGroup(key[0], fs, self.layout) for key, fs in buckets.items()]
        self.constraint_groups = [g for g in self.groups if g.role != ERROR]
        n = self.layout.tangent_dim
        self.n = n
        h_idx, b_idx = [], []
        for g in self.groups:
            idx = g.index
            h_idx.append((idx[:, :, None] * n + idx[:, None, :]).ravel())
            b_idx.append(idx.ravel())
        self._h_idx = np.concatenate(h_idx) if h_idx else np.zeros(0, dtype=int)
        self._b_idx = np.concatenate(b_idx) if b_idx else np.zeros(0, dtype=int)

    def load_state(self):
        for g in self.constraint_groups:
            g.load_state()

    def store_state(self):
        for g in self.constraint_groups:
            g.store_state()

    def normal_equations(self, x, objective_scale: float = 1.0,
                         constraints: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Undamped ``H`` and ``b`` of the augmented Lagrangian at ``x``.

        Error-factor terms are multiplied by ``objective_scale``. With
        ``constraints=False`` only the objective is assembled.
        """
        hs, bs = [], []
        for g in self.groups:
            if g.role == ERROR:
                H, b = g.terms(x)
                if objective_scale != 1.0:
                    H, b = objective_scale * H, objective_scale * b
            elif constraints:
                H, b = g.terms(x)
            else:
                H, b = np.zeros((len(g.factors),) + (g.index.shape[1],) * 2), np.zeros(g.index.shape)
            hs.append(H.ravel())
            bs.append(b.ravel())
        n = self.n
        if not hs:
            return np.zeros((n, n)), np.zeros(n)
        H = np.bincount(self._h_idx, np.concatenate(hs), minlength=n * n).reshape(n, n)
        b = np.bincount(self._b_idx, np.concatenate(bs), minlength=n)
        return H, b

    def constraint_errors(self, x) -> list[np.ndarray]:
        return [g.error(x) for g in self.constraint_groups]

    def dual_update(self, errors):
        for g, err in zip(self.constraint_groups, errors):
            g.dual_update(err)

    def violations(self, errors) -> tuple[float, float]:
        """``(max |f|, max max(g, 0))`` from :meth:`constraint_errors` output."""
        eq = ineq = 0.0
        for g, err in zip(self.constraint_groups, errors):
            if err.size == 0:
                continue
            if g.role == EQUALITY:
                eq = max(eq, float(np.max(np.abs(err))))
            else:
                ineq = max(ineq, float(np.max(err)))
        return eq, ineq


__all__ = ["Assembler", "FactorGroup", "VariableLayout"]
