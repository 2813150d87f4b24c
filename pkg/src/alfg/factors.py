"""Error factors and the linearization interface shared by every factor type."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .manifold import SE2, ContractError, Manifold, wrap_angle


class Factor:
    """A residual over a subset of variables.

    Subclasses implement :meth:`error` and may implement :meth:`jacobians`
    (one ``dim x tangent_dim`` block per key, derivatives taken with respect
    to a ``⊞`` perturbation at zero). Without analytic Jacobians the factor
    is linearized by central differences.
    """

    def __init__(self, keys: Sequence[int], dim: int):
        keys = tuple(int(k) for k in keys)
        if not keys:
            raise ContractError("a factor must touch at least one variable")
        self.keys = keys
        self.dim = int(dim)

    def error(self, values: list[np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def jacobians(self, values: list[np.ndarray]) -> list[np.ndarray] | None:
        return None

    def evaluate(self, values):
        return self.error(values), self.jacobians(values)

    # Vectorized evaluation over a group of factors of the same class. ``values``
    # holds one ``(N, size)`` array per key slot. The defaults loop over the
    # factors; subclasses override all three together when they vectorize.

    @classmethod
    def batch_params(cls, factors):
        return list(factors)

    @classmethod
    def batch_error(cls, params, values) -> np.ndarray:
        return np.array([f.error([v[n] for v in values]) for n, f in enumerate(params)])

    @classmethod
    def batch_evaluate(cls, params, values):
        """Return residuals ``(N, dim)`` and stacked Jacobians ``(N, dim, sum of tangent dims)``."""
        rs, Js = [], []
        for n, f in enumerate(params):
            r, jacs = linearize(f, [v[n] for v in values], f._kinds)
            rs.append(r)
            Js.append(jacs[0] if len(jacs) == 1 else np.hstack(jacs))
        return np.array(rs), np.array(Js)

    def __repr__(self):
        return f"{type(self).__name__}(keys={self.keys})"


def numerical_jacobians(
    factor: Factor,
    values: list[np.ndarray],
    kinds: list[Manifold],
    eps: float = 1e-6,
) -> list[np.ndarray]:
    """Central-difference Jacobians of ``factor.error`` over the ⊞ retraction."""
    jacs = []
    for slot, kind in enumerate(kinds):
        J = np.zeros((factor.dim, kind.dim))
        for c in range(kind.dim):
            d = np.zeros(kind.dim)
            d[c] = eps
            plus = list(values)
            minus = list(values)
            plus[slot] = kind.boxplus(values[slot], d)
            minus[slot] = kind.boxplus(values[slot], -d)
            diff = factor.error(plus) - factor.error(minus)
            J[:, c] = diff / (2 * eps)
        jacs.append(J)
    return jacs


def linearize(factor: Factor, values: list[np.ndarray], kinds: list[Manifold]):
    """Residual and per-variable Jacobian blocks of ``factor`` at ``values``."""
    r, jacs = factor.evaluate(values)
    r = np.asarray(r, dtype=float).reshape(-1)
    if jacs is None:
        jacs = numerical_jacobians(factor, values, kinds)
    return r, jacs


class ErrorFactor(Factor):
    """A least-squares term ``e(x)^T Omega e(x)``."""

    def __init__(self, keys, dim, information=None):
        super().__init__(keys, dim)
        if information is None:
            information = np.eye(self.dim)
        information = np.asarray(information, dtype=float)
        if information.ndim == 0:
            information = float(information) * np.eye(self.dim)
        elif information.ndim == 1:
            information = np.diag(information)
        if information.shape != (self.dim, self.dim):
            raise ContractError(
                f"information matrix must be {self.dim}x{self.dim}, got {information.shape}"
            )
        self.information = information

    def chi2(self, values) -> float:
        e = self.error(values)
        return float(e @ self.information @ e)


class FunctionErrorFactor(ErrorFactor):
    """Error factor from a plain callable ``fn(*values) -> residual``.

    ``jac`` optionally returns the list of Jacobian blocks for the same args.
    """

    def __init__(self, keys, dim, fn: Callable, information=None, jac: Callable | None = None):
        super().__init__(keys, dim, information)
        self.fn = fn
        self.jac = jac

    def error(self, values):
        return np.asarray(self.fn(*values), dtype=float).reshape(-1)

    def jacobians(self, values):
        if self.jac is None:
            return None
        return [np.atleast_2d(np.asarray(J, dtype=float)) for J in self.jac(*values)]


class LinearFactor(ErrorFactor):
    """``e(x) = sum_i A_i x_i - z`` over Euclidean variables."""

    def __init__(self, keys, matrices, z, information=None):
        self.matrices = [np.atleast_2d(np.asarray(A, dtype=float)) for A in matrices]
        self.z = np.asarray(z, dtype=float).reshape(-1)
        super().__init__(keys, self.z.shape[0], information)

    def error(self, values):
        e = -self.z.copy()
        for A, v in zip(self.matrices, values):
            e += A @ v
        return e

    def jacobians(self, values):
        return self.matrices


class PriorFactor(ErrorFactor):
    """Anchors one variable to a target value.

    The residual is ``x - target`` componentwise, with angular components
    wrapped. For SE2 the Jacobian accounts for the body-frame retraction.
    """

    def __init__(self, key: int, kind: Manifold, target, information=None):
        super().__init__((key,), kind.dim, information)
        self.kind = kind
        self.target = kind.check(target)
        self._angles = list(getattr(kind, "angles", ()))
        if isinstance(kind, SE2):
            self._angles = [2]

    def error(self, values):
        e = values[0] - self.target
        if self._angles:
            e[self._angles] = wrap_angle(e[self._angles])
        return e

    def jacobians(self, values):
        if isinstance(self.kind, SE2):
            c, s = np.cos(values[0][2]), np.sin(values[0][2])
            return [np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])]
        return [np.eye(self.kind.dim)]
