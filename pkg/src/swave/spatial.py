"""Finite-difference discretization of the interval (0, L).

The state lives on the ``M`` interior nodes ``x_i = i * dx``; Dirichlet data
sit at ``x_0 = 0`` and ``x_{M+1} = L``.  The elliptic part ``(a z_x)_x`` uses
the conservative three-point stencil with midpoint-averaged coefficients, so
the zero-boundary matrix is symmetric negative definite.  All inner products
carry the factor ``dx``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.linalg
from numpy.polynomial import Polynomial

from .errors import NumericalFailure, PreconditionError

SIDES = ("left", "right")
OUTWARD_NORMAL = {"left": -1.0, "right": 1.0}


def as_polynomial(value) -> Polynomial:
    if isinstance(value, Polynomial):
        return value
    coef = np.atleast_1d(np.asarray(value, dtype=float))
    return Polynomial(coef)


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform grid with ``M`` interior points and elliptic coefficient ``a(x)``.

    ``a`` is a polynomial in ``x`` (a float means a constant); its exact
    derivatives feed the weight-function checks.
    """

    L: float = 1.0
    M: int = 7
    a: Polynomial = field(default_factory=lambda: Polynomial([1.0]))

    def __post_init__(self):
        object.__setattr__(self, "a", as_polynomial(self.a))
        if int(self.M) != self.M or self.M < 3:
            raise PreconditionError(f"need at least 3 interior points, got M={self.M}")
        if not self.L > 0:
            raise PreconditionError(f"interval length must be positive, got {self.L}")
        if self.s0 <= 0:
            raise PreconditionError(f"coefficient a is not uniformly positive (min {self.s0:.3g})")

    @property
    def dx(self) -> float:
        return self.L / (self.M + 1)

    @cached_property
    def x(self) -> np.ndarray:
        return np.arange(1, self.M + 1) * self.dx

    @cached_property
    def x_ext(self) -> np.ndarray:
        """Nodes including the two boundary points."""
        return np.arange(self.M + 2) * self.dx

    @cached_property
    def a_nodes(self) -> np.ndarray:
        return self.a(self.x)

    @cached_property
    def a_half(self) -> np.ndarray:
        """``a_{i+1/2}`` for ``i = 0..M`` as the average of neighbouring node values."""
        ae = self.a(self.x_ext)
        return 0.5 * (ae[:-1] + ae[1:])

    @cached_property
    def s0(self) -> float:
        # sample finely between nodes as well; a is a polynomial
        xs = np.linspace(0.0, self.L, 8 * (self.M + 1) + 1)
        return float(np.min(self.a(xs)))

    @property
    def a_max(self) -> float:
        xs = np.linspace(0.0, self.L, 8 * (self.M + 1) + 1)
        return float(np.max(self.a(xs)))

    @property
    def boundary_weight(self) -> np.ndarray:
        """Conormal weights ``(a_{1/2}, a_{M+1/2})`` of the boundary fluxes."""
        return np.array([self.a_half[0], self.a_half[-1]])

    @cached_property
    def elliptic_matrix(self) -> np.ndarray:
        """Dense ``(M, M)`` zero-boundary matrix of ``z -> (a z_x)_x``."""
        ah = self.a_half
        main = -(ah[:-1] + ah[1:])
        off = ah[1:-1]
        A = np.diag(main) + np.diag(off, 1) + np.diag(off, -1)
        return A / self.dx**2

    @cached_property
    def difference_matrix(self) -> np.ndarray:
        """Central first difference with zero extension; antisymmetric."""
        M = self.M
        D = np.diag(np.ones(M - 1), 1) - np.diag(np.ones(M - 1), -1)
        return D / (2.0 * self.dx)

    @cached_property
    def _neg_elliptic_cholesky(self):
        try:
            return scipy.linalg.cho_factor(-self.elliptic_matrix)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - A is SPD by construction
            raise NumericalFailure("elliptic matrix factorization failed") from exc

    def solve_neg_elliptic(self, u: np.ndarray) -> np.ndarray:
        """``(-A)^{-1} u`` along the last axis."""
        u = np.asarray(u, dtype=float)
        flat = u.reshape(-1, self.M).T
        return scipy.linalg.cho_solve(self._neg_elliptic_cholesky, flat).T.reshape(u.shape)

    def boundary_source(self, values) -> np.ndarray:
        """Contribution of Dirichlet data ``(left, right)`` to the stencil rows."""
        values = np.asarray(values, dtype=float)
        out = np.zeros(values.shape[:-1] + (self.M,))
        out[..., 0] = self.a_half[0] * values[..., 0] / self.dx**2
        out[..., -1] = self.a_half[-1] * values[..., 1] / self.dx**2
        return out

    def _check(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1:] != (self.M,):
            raise ValueError(f"expected trailing length {self.M}, got shape {z.shape}")
        return z


def apply_elliptic(grid: Grid, z, boundary_values=(0.0, 0.0)) -> np.ndarray:
    """Conservative ``(a z_x)_x`` on the interior nodes, batched over leading axes."""
    z = grid._check(z)
    out = z @ grid.elliptic_matrix.T
    bv = np.asarray(boundary_values, dtype=float)
    if np.any(bv):
        out = out + grid.boundary_source(np.broadcast_to(bv, z.shape[:-1] + (2,)))
    return out


def central_difference(grid: Grid, z) -> np.ndarray:
    return grid._check(z) @ grid.difference_matrix.T


def inner(grid: Grid, u, v) -> np.ndarray:
    """dx-weighted Euclidean product along the last axis."""
    return grid.dx * np.sum(np.asarray(u) * np.asarray(v), axis=-1)


class Norms(NamedTuple):
    l2: float
    h01: float
    hneg1: float


def l2_norm(grid: Grid, u) -> np.ndarray:
    u = grid._check(u)
    return np.sqrt(grid.dx * np.sum(u * u, axis=-1))


def h01_norm(grid: Grid, u) -> np.ndarray:
    u = grid._check(u)
    pad = np.zeros(u.shape[:-1] + (1,))
    ue = np.concatenate([pad, u, pad], axis=-1)
    grad = np.diff(ue, axis=-1) / grid.dx
    return np.sqrt(grid.dx * np.sum(grid.a_half * grad * grad, axis=-1))


def hneg1_norm(grid: Grid, u) -> np.ndarray:
    u = grid._check(u)
    return np.sqrt(np.maximum(grid.dx * np.sum(u * grid.solve_neg_elliptic(u), axis=-1), 0.0))


def norms(grid: Grid, u) -> Norms:
    """Discrete ``L^2``, ``H^1_0`` and ``H^{-1}`` norms of a grid vector."""
    return Norms(float(l2_norm(grid, u)), float(h01_norm(grid, u)), float(hneg1_norm(grid, u)))


def normal_trace(grid: Grid, z) -> tuple:
    """Outward normal derivative at both ends for a state with zero Dirichlet data."""
    z = grid._check(z)
    return -z[..., 0] / grid.dx, -z[..., -1] / grid.dx


def normal_trace_array(grid: Grid, z) -> np.ndarray:
    left, right = normal_trace(grid, z)
    return np.stack([left, right], axis=-1)


@dataclass(frozen=True)
class BoundarySpec:
    """Which endpoints of (0, L) are controlled/observed."""

    gamma0: frozenset = frozenset()

    def __post_init__(self):
        g = frozenset(self.gamma0)
        bad = g - set(SIDES)
        if bad:
            raise ValueError(f"unknown boundary side(s): {sorted(bad)}")
        object.__setattr__(self, "gamma0", g)

    @property
    def mask(self) -> np.ndarray:
        return np.array([s in self.gamma0 for s in SIDES], dtype=float)

    @property
    def is_empty(self) -> bool:
        return not self.gamma0

    def label(self) -> str:
        return "{" + ",".join(s for s in SIDES if s in self.gamma0) + "}"

    @classmethod
    def parse(cls, text: str) -> "BoundarySpec":
        parts = [p.strip() for p in text.strip().strip("{}").split(",") if p.strip()]
        return cls(frozenset(parts))


def _field_values(value, grid: Grid) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.M, float(arr))
    if arr.shape[-1] != grid.M or arr.ndim > 2:
        raise ValueError(f"coefficient must be scalar, (M,) or (K, M); got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Lower-order coefficients ``a1 .. a5`` on the interior nodes.

    Each entry is deterministic: a scalar, an ``(M,)`` profile, or a
    ``(K, M)`` table giving one profile per time step.  ``a5`` is taken to
    vanish at the two boundary nodes (its zero extension).
    """

    grid: Grid
    a1: np.ndarray = 0.0
    a2: np.ndarray = 0.0
    a3: np.ndarray = 0.0
    a4: np.ndarray = 0.0
    a5: np.ndarray = 0.0

    def __post_init__(self):
        for name in ("a1", "a2", "a3", "a4", "a5"):
            object.__setattr__(self, name, _field_values(getattr(self, name), self.grid))

    @classmethod
    def zero(cls, grid: Grid) -> "CoefficientSet":
        return cls(grid)

    def at(self, name: str, k: int) -> np.ndarray:
        arr = getattr(self, name)
        if arr.ndim == 1:
            return arr
        if not 0 <= k < arr.shape[0]:
            raise ValueError(f"coefficient {name} has no row for step {k}")
        return arr[k]

    def div_a1(self, k: int) -> np.ndarray:
        return np.gradient(self.at("a1", k), self.grid.dx) if self.grid.M > 1 else 0.0 * self.at("a1", k)

    def sup(self, name: str) -> float:
        return float(np.max(np.abs(getattr(self, name))))

    def _w1inf(self, name: str) -> float:
        arr = np.atleast_2d(getattr(self, name))
        if name == "a5":
            pad = np.zeros((arr.shape[0], 1))
            arr = np.concatenate([pad, arr, pad], axis=1)
        slope = np.max(np.abs(np.gradient(arr, self.grid.dx, axis=1)))
        return float(np.max(np.abs(arr)) + slope)

    @property
    def r2(self) -> float:
        """Squared sup-norm budget with ``W^{1,inf}`` norms for ``a1`` and ``a5``."""
        return (self._w1inf("a1") ** 2 + sum(self.sup(n) ** 2 for n in ("a2", "a3", "a4"))
                + self._w1inf("a5") ** 2)

    def time_dependent(self) -> bool:
        return any(getattr(self, n).ndim == 2 for n in ("a1", "a2", "a3", "a4", "a5"))

    def check_steps(self, K: int) -> None:
        for n in ("a1", "a2", "a3", "a4", "a5"):
            arr = getattr(self, n)
            if arr.ndim == 2 and arr.shape[0] != K:
                raise ValueError(f"coefficient {n} has {arr.shape[0]} time rows, tree has K={K}")

    def replace(self, **changes) -> "CoefficientSet":
        data = {n: getattr(self, n) for n in ("a1", "a2", "a3", "a4", "a5")}
        data.update(changes)
        return CoefficientSet(self.grid, **data)
