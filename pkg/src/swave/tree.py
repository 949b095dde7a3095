"""Exhaustive binary-tree model of a discrete Brownian filtration.

Level ``k`` of a tree with ``K`` steps holds ``2**k`` nodes, addressed by the
integer whose binary digits are the path taken so far.  Node ``n`` at level
``k`` has children ``2n`` (up move, increment ``+sqrt(dt)``) and ``2n + 1``
(down move, increment ``-sqrt(dt)``).  Every path carries probability
``2**-K``, so expectations are plain averages over a level.

Values are stored level-major: level ``k`` of a process is an array of shape
``(2**k, *shape)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_STEPS = 16


@dataclass(frozen=True)
class BinaryTree:
    """Full (non-recombining) binary tree with ``K`` steps over ``[0, T]``."""

    K: int
    T: float

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K!r}")
        if self.K > MAX_STEPS:
            raise ValueError(f"K={self.K} exceeds the tree budget of {MAX_STEPS} steps")
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T!r}")

    @property
    def dt(self) -> float:
        return self.T / self.K

    @property
    def sqrt_dt(self) -> float:
        return float(np.sqrt(self.dt))

    def n_nodes(self, k: int) -> int:
        self._check_level(k)
        return 1 << k

    def times(self) -> np.ndarray:
        return np.arange(self.K + 1) * self.dt

    def increments(self, k: int) -> np.ndarray:
        """Brownian increment on each branch leaving level ``k``.

        Indexed by the child at level ``k + 1``: ``+sqrt(dt)`` for even
        children, ``-sqrt(dt)`` for odd ones.
        """
        if not 0 <= k < self.K:
            raise ValueError(f"branch level {k} outside 0..{self.K - 1}")
        return np.tile([self.sqrt_dt, -self.sqrt_dt], 1 << k)

    def _check_level(self, k: int) -> None:
        if not 0 <= k <= self.K:
            raise ValueError(f"level {k} outside 0..{self.K}")


def spread(values: np.ndarray) -> np.ndarray:
    """Copy node values to both children (``F_k``-measurable data seen at level k+1)."""
    return np.repeat(values, 2, axis=0)


def child_mean(values: np.ndarray) -> np.ndarray:
    """Conditional expectation one level up: average of sibling pairs."""
    return 0.5 * (values[0::2] + values[1::2])


def child_half_diff(values: np.ndarray) -> np.ndarray:
    """Half the up-minus-down difference of sibling pairs."""
    return 0.5 * (values[0::2] - values[1::2])


@dataclass(frozen=True)
class AdaptedField:
    """Per-node values of an adapted process on levels ``0 .. len(levels) - 1``.

    Adaptedness is structural: the value at a node is indexed by the path
    prefix only.  Processes living on levels ``0..K`` (states) and on levels
    ``0..K-1`` (integrands, controls) are both represented.
    """

    tree: BinaryTree
    levels: tuple

    def __post_init__(self):
        if not 1 <= len(self.levels) <= self.tree.K + 1:
            raise ValueError("number of levels must lie in 1..K+1")
        shape = None
        for k, arr in enumerate(self.levels):
            arr = np.asarray(arr)
            if arr.shape[0] != 1 << k:
                raise ValueError(f"level {k} has {arr.shape[0]} nodes, expected {1 << k}")
            if shape is None:
                shape = arr.shape[1:]
            elif arr.shape[1:] != shape:
                raise ValueError("inconsistent value shapes across levels")

    @classmethod
    def zeros(cls, tree: BinaryTree, shape: Sequence[int] | int = (), n_levels: int | None = None):
        shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
        n_levels = tree.K + 1 if n_levels is None else n_levels
        return cls(tree, tuple(np.zeros((1 << k, *shape)) for k in range(n_levels)))

    @classmethod
    def deterministic(cls, tree: BinaryTree, value, n_levels: int | None = None):
        """The same value at every node (time-constant, path-independent)."""
        value = np.asarray(value, dtype=float)
        n_levels = tree.K + 1 if n_levels is None else n_levels
        return cls(tree, tuple(np.broadcast_to(value, (1 << k, *value.shape)).copy()
                               for k in range(n_levels)))

    @classmethod
    def from_function(cls, tree: BinaryTree, fn, n_levels: int | None = None):
        """Build from ``fn(k) -> array of shape (2**k, ...)``."""
        n_levels = tree.K + 1 if n_levels is None else n_levels
        return cls(tree, tuple(np.asarray(fn(k), dtype=float) for k in range(n_levels)))

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def shape(self) -> tuple:
        return np.asarray(self.levels[0]).shape[1:]

    @property
    def leaves(self) -> np.ndarray:
        if self.n_levels != self.tree.K + 1:
            raise ValueError("field is not defined on the leaf level")
        return self.levels[-1]

    def __getitem__(self, k: int) -> np.ndarray:
        return self.levels[k]

    def expectation(self, k: int) -> np.ndarray:
        return expectation(self, k)

    def max_path_deviation(self) -> float:
        """Largest spread of values across the nodes of any level."""
        return max(float(np.max(np.abs(arr - arr[:1]))) if arr.size else 0.0
                   for arr in self.levels)


def expectation(X: AdaptedField | np.ndarray, k: int | None = None) -> np.ndarray:
    """Mean of ``X`` over the ``2**k`` equally likely nodes of level ``k``.

    ``X`` may be an :class:`AdaptedField` or a bare level array, in which case
    ``k`` is inferred from its length.
    """
    if isinstance(X, AdaptedField):
        if k is None or not 0 <= k < X.n_levels:
            raise ValueError(f"level {k} outside 0..{X.n_levels - 1}")
        arr = np.asarray(X.levels[k])
    else:
        arr = np.asarray(X, dtype=float)
        n = arr.shape[0]
        if n & (n - 1) or n == 0:
            raise ValueError("level arrays must have a power-of-two node count")
        if k is not None and n != 1 << k:
            raise ValueError(f"array has {n} nodes but level {k} has {1 << k}")
    return arr.mean(axis=0)


def conditional_expectation(xi: np.ndarray, j: int) -> np.ndarray:
    """Project leaf values onto level ``j`` by repeated sibling averaging."""
    out = np.asarray(xi, dtype=float)
    levels = out.shape[0].bit_length() - 1
    if out.shape[0] != 1 << levels:
        raise ValueError("leaf array must have a power-of-two node count")
    if not 0 <= j <= levels:
        raise ValueError(f"level {j} outside 0..{levels}")
    for _ in range(levels - j):
        out = child_mean(out)
    return out


@dataclass(frozen=True)
class MartingaleRepresentation:
    """``xi = alpha + sum_k Z_k dW_k`` with ``means`` the martingale ``E[xi | F_k]``."""

    alpha: np.ndarray
    Z: AdaptedField
    means: AdaptedField

    @property
    def drift(self) -> AdaptedField:
        # on the tree every leaf variable is a pure martingale transform
        return AdaptedField.zeros(self.Z.tree, self.Z.shape, self.Z.n_levels)


def _leaf_array(tree: BinaryTree, xi) -> np.ndarray:
    if isinstance(xi, AdaptedField):
        xi = xi.leaves
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 0 or xi.shape[0] != 1 << tree.K:
        raise ValueError(f"expected {1 << tree.K} leaf values, got shape {xi.shape}")
    return xi


def martingale_representation(tree: BinaryTree, xi) -> MartingaleRepresentation:
    """Backward induction of the integrand: ``Z = (x_up - x_down) / (2 sqrt(dt))``."""
    xi = _leaf_array(tree, xi)
    means = [xi]
    Z = []
    for _ in range(tree.K):
        child = means[-1]
        Z.append(child_half_diff(child) / tree.sqrt_dt)
        means.append(child_mean(child))
    means.reverse()
    Z.reverse()
    return MartingaleRepresentation(alpha=means[0][0].copy(),
                                    Z=AdaptedField(tree, tuple(Z)),
                                    means=AdaptedField(tree, tuple(means)))

def reconstruct(tree: BinaryTree, alpha, Z: AdaptedField) -> np.ndarray:
    """Forward pass ``x_{k+1} = x_k + Z_k dW_k`` returning the leaf values."""
    x = np.asarray(alpha, dtype=float)[None, ...]
    for k in range(tree.K):
        dw = tree.increments(k).reshape((-1,) + (1,) * (x.ndim - 1))
        x = spread(x) + spread(Z[k]) * dw
    return x


def conditional_variance_last_step(tree: BinaryTree, xi) -> np.ndarray:
    """``Var(xi | F_{K-1})`` at each level ``K-1`` node, componentwise."""
    xi = _leaf_array(tree, xi)
    return child_half_diff(xi) ** 2
