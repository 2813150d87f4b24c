"""Damped Gauss-Newton normal equations."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.linalg

from .manifold import ContractError


class SolverError(RuntimeError):
    """Raised when the optimizer cannot continue."""


class NotPositiveDefiniteError(SolverError):
    """``H + zeta I`` failed the Cholesky factorization."""


class SparseBlockSystem:
    """Block-structured ``H`` and ``b`` over the graph's tangent layout.

    Blocks are laid out in natural key order. Storage is a dense array; the
    set of touched block pairs is tracked in :attr:`pattern`.
    """

    def __init__(self, block_dims: Sequence[int], zeta: float = 0.0):
        self.block_dims = [int(d) for d in block_dims]
        self.offsets = np.concatenate([[0], np.cumsum(self.block_dims)]).astype(int)
        self.size = int(self.offsets[-1])
        self.zeta = float(zeta)
        self.H = np.zeros((self.size, self.size))
        self.b = np.zeros(self.size)
        self.pattern: set[tuple[int, int]] = set()

    def reset(self):
        self.H[:] = 0.0
        self.b[:] = 0.0
        self.pattern.clear()

    def index_of(self, keys) -> np.ndarray:
        nblocks = len(self.block_dims)
        for k in keys:
            if not 0 <= k < nblocks:
                raise ContractError(f"block index {k} out of range")
        return np.concatenate([np.arange(self.offsets[k], self.offsets[k + 1]) for k in keys])

    def block(self, i: int, j: int) -> np.ndarray:
        o = self.offsets
        return self.H[o[i]:o[i + 1], o[j]:o[j + 1]]

    def segment(self, i: int) -> np.ndarray:
        o = self.offsets
        return self.b[o[i]:o[i + 1]]

    def add(self, keys, H_k, b_k, index=None):
        """Scatter-add a contribution given over the stacked tangent space of ``keys``."""
        if index is None:
            index = self.index_of(keys)
        H_k = np.asarray(H_k, dtype=float)
        b_k = np.asarray(b_k, dtype=float).reshape(-1)
        if H_k.shape != (index.size, index.size) or b_k.shape[0] != index.size:
            raise ContractError("contribution shape does not match its keys")
        self.H[np.ix_(index, index)] += H_k
        self.b[index] += b_k
        for ki in keys:
            for kj in keys:
                self.pattern.add((ki, kj))
        return self


def accumulate(system: SparseBlockSystem, contribution) -> SparseBlockSystem:
    """Add ``(keys, H_k, b_k)`` into ``system``."""
    keys, H_k, b_k = contribution[:3]
    return system.add(keys, H_k, b_k)


def solve_damped(system: SparseBlockSystem, zeta: float | None = None) -> np.ndarray:
    """Solve ``(H + zeta I) dx = -b`` by Cholesky factorization."""
    zeta = system.zeta if zeta is None else float(zeta)
    if zeta < 0:
        raise ContractError("damping must be non-negative")
    A = system.H.copy()
    A.flat[:: system.size + 1] += zeta
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(system.b)):
        raise NotPositiveDefiniteError("linear system contains non-finite entries")
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"H + {zeta:g} I is not positive definite") from exc
    return scipy.linalg.cho_solve(factor, -system.b, check_finite=False)
