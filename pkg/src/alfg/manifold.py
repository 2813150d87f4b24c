"""Variable manifolds and the boxplus retraction.

Three kinds of state block are supported:

* ``SE2``: planar pose stored as ``(x, y, theta)``; perturbations are applied
  in the body frame, ``t' = t + R(theta) dt`` and ``theta' = wrap(theta + dtheta)``.
* ``Euclidean(n)``: plain vector, optionally with some components treated as
  angles and wrapped after every update.
* ``Matrix3``: a 3x3 matrix stored row-major as 9 reals, updated additively.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ContractError(ValueError):
    """Raised when an operation is called with inputs violating its contract."""


def wrap_angle(a):
    """Wrap an angle (or array of angles) to ``(-pi, pi]``."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    # mod maps +pi to -pi; move it to the closed end of the interval
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


def rot2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


class Manifold:
    """Base class of the variable kinds. Subclasses define ``dim`` and ``size``."""

    name = "manifold"
    dim: int
    size: int

    def boxplus(self, value: np.ndarray, delta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def boxplus_batch(self, values: np.ndarray, deltas: np.ndarray) -> np.ndarray:
        """Row-wise :meth:`boxplus` over stacked values ``(N, size)``."""
        return np.array([self.boxplus(v, d) for v, d in zip(values, deltas)])

    def check(self, value) -> np.ndarray:
        v = np.array(value, dtype=float).reshape(-1)
        if v.shape[0] != self.size:
            raise ContractError(
                f"{self.name} value must have {self.size} entries, got {v.shape[0]}"
            )
        return v

    def __repr__(self):
        return f"{type(self).__name__}()"


class SE2(Manifold):
    name = "SE2"
    dim = 3
    size = 3

    def check(self, value) -> np.ndarray:
        v = super().check(value)
        v[2] = wrap_angle(v[2])
        return v

    def boxplus(self, value, delta):
        c, s = np.cos(value[2]), np.sin(value[2])
        return np.array(
            [
                value[0] + c * delta[0] - s * delta[1],
                value[1] + s * delta[0] + c * delta[1],
                wrap_angle(value[2] + delta[2]),
            ]
        )

    def boxplus_batch(self, values, deltas):
        c, s = np.cos(values[:, 2]), np.sin(values[:, 2])
        out = np.empty_like(values)
        out[:, 0] = values[:, 0] + c * deltas[:, 0] - s * deltas[:, 1]
        out[:, 1] = values[:, 1] + s * deltas[:, 0] + c * deltas[:, 1]
        out[:, 2] = wrap_angle(values[:, 2] + deltas[:, 2])
        return out


class Euclidean(Manifold):
    """R^n with optional angle components wrapped to (-pi, pi] on update."""

    name = "Euclidean"

    def __init__(self, n: int, angles: tuple[int, ...] = ()):
        if n < 1:
            raise ContractError("Euclidean dimension must be positive")
        self.dim = self.size = int(n)
        self.angles = tuple(int(i) for i in angles)

    def check(self, value):
        v = super().check(value)
        if self.angles:
            v[list(self.angles)] = wrap_angle(v[list(self.angles)])
        return v

    def boxplus(self, value, delta):
        out = value + delta
        if self.angles:
            idx = list(self.angles)
            out[idx] = wrap_angle(out[idx])
        return out

    def boxplus_batch(self, values, deltas):
        out = values + deltas
        if self.angles:
            idx = list(self.angles)
            out[:, idx] = wrap_angle(out[:, idx])
        return out

    def __repr__(self):
        if self.angles:
            return f"Euclidean({self.dim}, angles={self.angles})"
        return f"Euclidean({self.dim})"


class Matrix3(Manifold):
    """3x3 matrix as a row-major 9-vector. No projection is ever applied."""

    name = "Matrix3"
    dim = 9
    size = 9

    def boxplus(self, value, delta):
        return value + delta

    def boxplus_batch(self, values, deltas):
        return values + deltas


@dataclass
class ManifoldVariable:
    """A state block: its manifold kind and current value."""

    kind: Manifold
    value: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.value is None:
            self.value = np.zeros(self.kind.size)
        self.value = self.kind.check(self.value)

    @property
    def tangent_dim(self) -> int:
        return self.kind.dim


def boxplus(var: ManifoldVariable, delta) -> ManifoldVariable:
    """Return ``var ⊞ delta`` as a new variable."""
    delta = np.asarray(delta, dtype=float).reshape(-1)
    if delta.shape[0] != var.tangent_dim:
        raise ContractError(
            f"perturbation has {delta.shape[0]} entries, variable needs {var.tangent_dim}"
        )
    return ManifoldVariable(var.kind, var.kind.boxplus(var.value, delta))
