"""Time stepping on the tree-times-grid product.

Four schemes are provided:

* ``solve_forward_classical``: explicit stepping of the second-order
  controlled equation written as a first-order system.  Only the velocity
  receives noise, so the displacement at each level is measurable one level
  earlier.
* ``solve_forward_dual``: explicit stepping of the forward adjoint system.
* ``solve_backward_controlled``: backward induction for the controlled
  backward system.  One step is the exact transpose of a
  ``solve_forward_dual`` step under the pairing
  ``dx * (<yhat, z> - <y, zhat>)``, so the discrete duality identity holds to
  rounding error.
* ``solve_forward_refined``: the exact inverse of one backward-controlled
  step.  It is semi-implicit (one linear solve per level).
* ``solve_backward_reference``: backward induction for the reference system;
  one step is the exact inverse of the explicit dual step.

Coefficients are deterministic; see :class:`swave.spatial.CoefficientSet`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import CFLViolation, NumericalFailure
from .spatial import BoundarySpec, CoefficientSet, Grid, h01_norm, hneg1_norm, l2_norm
from .tree import AdaptedField, BinaryTree, child_half_diff, child_mean, spread


# ---------------------------------------------------------------- containers


@dataclass(frozen=True)
class StatePair:
    y: AdaptedField
    yhat: AdaptedField


@dataclass(frozen=True)
class DualPair:
    z: AdaptedField
    zhat: AdaptedField


@dataclass(frozen=True)
class AdjointQuad:
    z: AdaptedField
    Z: AdaptedField
    zhat: AdaptedField
    Zhat: AdaptedField


@dataclass(frozen=True)
class BackwardQuad:
    y: AdaptedField
    Y: AdaptedField
    yhat: AdaptedField
    Yhat: AdaptedField


@dataclass(frozen=True)
class ControlTriple:
    """Internal controls ``f``, ``g`` (per node, length ``M``) and boundary ``h``.

    ``h`` carries two columns ``(left, right)``; entries off the controlled
    boundary are ignored.  ``None`` means the zero control.
    """

    f: AdaptedField | None = None
    g: AdaptedField | None = None
    h: AdaptedField | None = None


# ---------------------------------------------------------------- helpers


def check_cfl(grid: Grid, tree: BinaryTree) -> None:
    limit = grid.dx / np.sqrt(grid.a_max)
    if tree.dt > limit * (1 + 1e-12):
        raise CFLViolation(f"CFL violated: dt={tree.dt:.6g} > dx/sqrt(max a)={limit:.6g}")


def _prepare(grid: Grid, coeffs: CoefficientSet, tree: BinaryTree) -> None:
    if coeffs.grid is not grid and coeffs.grid.M != grid.M:
        raise ValueError("coefficient set belongs to a different grid")
    coeffs.check_steps(tree.K)
    check_cfl(grid, tree)


def node_values(value, tree: BinaryTree, k: int, shape: tuple) -> np.ndarray:
    """Values at level ``k`` of an adapted input (``None`` / field / deterministic array)."""
    n = 1 << k
    if value is None:
        return np.zeros((n, *shape))
    if isinstance(value, AdaptedField):
        if value.tree.K != tree.K:
            raise ValueError("adapted input lives on a different tree")
        arr = value[k]
        if arr.shape != (n, *shape):
            raise ValueError(f"adapted input has shape {arr.shape} at level {k}, expected {(n, *shape)}")
        return arr
    arr = np.asarray(value, dtype=float)
    return np.broadcast_to(arr, (n, *shape))


def leaf_values(value, tree: BinaryTree, shape: tuple) -> np.ndarray:
    return np.array(node_values(value, tree, tree.K, shape), dtype=float)


def _dw(tree: BinaryTree, k: int) -> np.ndarray:
    return tree.increments(k)[:, None]


def _boundary(grid: Grid, gamma0: BoundarySpec, h, tree: BinaryTree, k: int) -> np.ndarray:
    hk = node_values(h, tree, k, (2,)) * gamma0.mask
    return grid.boundary_source(hk)


def dual_drift_matrix(grid: Grid, coeffs: CoefficientSet, k: int) -> np.ndarray:
    """``A - a1 D + (-div a1 + a2 - a3 a5)`` acting on ``z`` in the dual system."""
    c = -coeffs.div_a1(k) + coeffs.at("a2", k) - coeffs.at("a3", k) * coeffs.at("a5", k)
    return (grid.elliptic_matrix - coeffs.at("a1", k)[:, None] * grid.difference_matrix
            + np.diag(c))


def state_drift_matrix(grid: Grid, coeffs: CoefficientSet, k: int) -> np.ndarray:
    """``A + (a1 .)_x-style transport + a2`` acting on ``y`` in the controlled systems.

    Equal to ``dual_drift_matrix.T + diag(a3 a5)``.
    """
    return (grid.elliptic_matrix + grid.difference_matrix * coeffs.at("a1", k)[None, :]
            + np.diag(-coeffs.div_a1(k) + coeffs.at("a2", k)))


def reference_coefficients(coeffs: CoefficientSet) -> CoefficientSet:
    """Reference-system coefficients ``b1..b5`` that reproduce the dual system."""
    a1, a2, a3, a4, a5 = coeffs.a1, coeffs.a2, coeffs.a3, coeffs.a4, coeffs.a5
    div = np.gradient(a1, coeffs.grid.dx, axis=-1)
    return CoefficientSet(coeffs.grid, a1=-a1, a2=-div + a2 - a3 * a5, a3=a3, a4=-a4, a5=-a5)


# ---------------------------------------------------------------- forward schemes


def solve_forward_classical(grid: Grid, coeffs: CoefficientSet, tree: BinaryTree, y0, y1,
                            g1=None, g2=None, h=None,
                            gamma0: BoundarySpec = BoundarySpec()) -> StatePair:
    """Explicit stepping of the classical controlled equation; ``yhat`` holds the velocity."""
    _prepare(grid, coeffs, tree)
    M, dt = grid.M, tree.dt
    y = [np.array(node_values(y0, tree, 0, (M,)), dtype=float)]
    v = [np.array(node_values(y1, tree, 0, (M,)), dtype=float)]
    for k in range(tree.K):
        yk, vk = y[-1], v[-1]
        drift = (yk @ grid.elliptic_matrix.T + _boundary(grid, gamma0, h, tree, k)
                 + coeffs.at("a1", k) * (yk @ grid.difference_matrix.T)
                 + coeffs.at("a2", k) * yk + node_values(g1, tree, k, (M,)))
        noise = coeffs.at("a3", k) * yk + node_values(g2, tree, k, (M,))
        y.append(spread(yk + dt * vk))
        v.append(spread(vk + dt * drift) + spread(noise) * _dw(tree, k))
    return StatePair(AdaptedField(tree, tuple(y)), AdaptedField(tree, tuple(v)))


def solve_forward_dual(grid: Grid, coeffs: CoefficientSet, tree: BinaryTree, z0, zhat0,
                       f_src=None, fhat_src=None) -> DualPair:
    """Explicit stepping of the forward adjoint system with zero Dirichlet data."""
    _prepare(grid, coeffs, tree)
    M, dt = grid.M, tree.dt
    z = [np.array(node_values(z0, tree, 0, (M,)), dtype=float)]
    zh = [np.array(node_values(zhat0, tree, 0, (M,)), dtype=float)]
    for k in range(tree.K):
        zk, zhk = z[-1], zh[-1]
        F = node_values(f_src, tree, k, (M,))
        Fh = node_values(fhat_src, tree, k, (M,))
        drift = (zk @ dual_drift_matrix(grid, coeffs, k).T + coeffs.at("a3", k) * F
                 - coeffs.at("a4", k) * Fh)
        dw = _dw(tree, k)
        z.append(spread(zk + dt * zhk) + spread(F - coeffs.at("a5", k) * zk) * dw)
        zh.append(spread(zhk + dt * drift) + spread(Fh) * dw)
    return DualPair(AdaptedField(tree, tuple(z)), AdaptedField(tree, tuple(zh)))


def _factor(matrix: np.ndarray, what: str):
    cond = np.linalg.cond(matrix)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericalFailure(f"{what}: node system is singular (condition number {cond:.3g})")
    return scipy.linalg.lu_factor(matrix)


def solve_forward_refined(grid: Grid, coeffs: CoefficientSet, tree: BinaryTree, y0, yhat0,
                          controls: ControlTriple | None = None,
                          gamma0: BoundarySpec = BoundarySpec()) -> StatePair:
    """Stepping of the refined controlled system, inverse to the backward controlled step.

    Per level: solve for the conditional means ``(ybar, yhatbar)`` of the
    children from ``ybar = y + dt yhatbar`` and
    ``yhatbar = yhat + dt (L ybar + boundary(h) + a5 g)``, then branch with
    ``+-sqrt(dt) (a4 ybar + f)`` and ``+-sqrt(dt) (a3 ybar + g)``.
    """
    _prepare(grid, coeffs, tree)
    controls = controls or ControlTriple()
    M, dt, s = grid.M, tree.dt, tree.sqrt_dt
    y = [np.array(node_values(y0, tree, 0, (M,)), dtype=float)]
    yh = [np.array(node_values(yhat0, tree, 0, (M,)), dtype=float)]
    eye = np.eye(M)
    for k in range(tree.K):
        yk, yhk = y[-1], yh[-1]
        f = node_values(controls.f, tree, k, (M,))
        g = node_values(controls.g, tree, k, (M,))
        Ly = state_drift_matrix(grid, coeffs, k)
        lu = _factor(eye - dt * dt * Ly, "refined step")
        rhs = (yhk + dt * (yk @ Ly.T) + dt * _boundary(grid, gamma0, controls.h, tree, k)
               + dt * coeffs.at("a5", k) * g)
        yhbar = scipy.linalg.lu_solve(lu, rhs.T).T
        ybar = yk + dt * yhbar
        dw = _dw(tree, k)
        y.append(spread(ybar) + spread(coeffs.at("a4", k) * ybar + f) * dw)
        yh.append(spread(yhbar) + spread(coeffs.at("a3", k) * ybar + g) * dw)
    return StatePair(AdaptedField(tree, tuple(y)), AdaptedField(tree, tuple(yh)))


# ---------------------------------------------------------------- backward schemes


def solve_backward_controlled(grid: Grid, coeffs: CoefficientSet, tree: BinaryTree, yT, yhatT,
                              h=None, gamma0: BoundarySpec = BoundarySpec()) -> BackwardQuad:
    """Backward induction for the controlled backward system.

    ``Y`` and ``Yhat`` are the martingale integrands of the two equations;
    the boundary control ``h`` at level ``k`` enters the elliptic stencil of
    the conditional mean of ``y``.
    """
    _prepare(grid, coeffs, tree)
    M, dt, s = grid.M, tree.dt, tree.sqrt_dt
    y = [leaf_values(yT, tree, (M,))]
    yh = [leaf_values(yhatT, tree, (M,))]
    Y, Yh = [], []
    for k in range(tree.K - 1, -1, -1):
        ybar, dy = child_mean(y[-1]), child_half_diff(y[-1])
        yhbar, dyh = child_mean(yh[-1]), child_half_diff(yh[-1])
        Yk = dy / s - coeffs.at("a4", k) * ybar
        Yhk = dyh / s - coeffs.at("a3", k) * ybar
        Ly = state_drift_matrix(grid, coeffs, k)
        yk = ybar - dt * yhbar
        yhk = yhbar - dt * (ybar @ Ly.T + _boundary(grid, gamma0, h, tree, k)
                            + coeffs.at("a5", k) * Yhk)
        y.append(yk)
        yh.append(yhk)
        Y.append(Yk)
        Yh.append(Yhk)
    rev = lambda seq: AdaptedField(tree, tuple(seq[::-1]))  # noqa: E731
    return BackwardQuad(rev(y), rev(Y), rev(yh), rev(Yh))


def solve_backward_reference(grid: Grid, coeffs_b: CoefficientSet, tree: BinaryTree, zT,
                             zhatT) -> AdjointQuad:
    """Backward induction for the reference system with coefficients ``b1..b5``.

    ``coeffs_b`` stores ``b_i`` in the slot ``a_i``.  Per level the node
    values solve ``z + dt zhat = zbar`` and
    ``zhat + dt (A z + b1 D z + b2 z + b3 Z + b4 Zhat) = zhatbar`` with
    ``Z = dz / sqrt(dt) - b5 z`` and ``Zhat = dzhat / sqrt(dt)``; one LU
    factorization per level serves every node.
    """
    _prepare(grid, coeffs_b, tree)
    M, dt, s = grid.M, tree.dt, tree.sqrt_dt
    z = [leaf_values(zT, tree, (M,))]
    zh = [leaf_values(zhatT, tree, (M,))]
    Z, Zh = [], []
    eye = np.eye(M)
    for k in range(tree.K - 1, -1, -1):
        b1, b2, b3, b4, b5 = (coeffs_b.at(n, k) for n in ("a1", "a2", "a3", "a4", "a5"))
        zbar, dz = child_mean(z[-1]), child_half_diff(z[-1])
        zhbar, dzh = child_mean(zh[-1]), child_half_diff(zh[-1])
        Zhk = dzh / s
        L = grid.elliptic_matrix + b1[:, None] * grid.difference_matrix + np.diag(b2 - b3 * b5)
        lu = _factor(eye - dt * dt * L, "reference step")
        rhs = zbar - dt * zhbar + dt * dt * (b3 * dz / s + b4 * Zhk)
        zk = scipy.linalg.lu_solve(lu, rhs.T).T
        z.append(zk)
        zh.append((zbar - zk) / dt)
        Z.append(dz / s - b5 * zk)
        Zh.append(Zhk)
    rev = lambda seq: AdaptedField(tree, tuple(seq[::-1]))  # noqa: E731
    return AdjointQuad(rev(z), rev(Z), rev(zh), rev(Zh))


# ---------------------------------------------------------------- diagnostics


@dataclass(frozen=True)
class EnergyReport:
    energies: np.ndarray
    energy_ratio: float
    drift: float
    trace_ratio: float


def _level_energy(grid: Grid, first, second, regularity: str) -> float:
    if regularity == "H1xL2":
        e = h01_norm(grid, first) ** 2 + l2_norm(grid, second) ** 2
    else:
        e = l2_norm(grid, first) ** 2 + hneg1_norm(grid, second) ** 2
    return float(np.mean(e))


def energy_and_hidden_regularity(grid: Grid, solution, reference: str | None = None) -> EnergyReport:
    """Expected energy per level relative to the data, and the boundary trace budget.

    Adjoint-type solutions (``DualPair``, ``AdjointQuad``) are measured in
    ``H^1_0 x L^2``; state-type solutions in ``L^2 x H^{-1}``.  The data level
    is the initial level for forward solutions and the terminal level for
    backward ones (override with ``reference='initial'|'terminal'``).
    """
    if isinstance(solution, (DualPair, AdjointQuad)):
        first, second, reg = solution.z, solution.zhat, "H1xL2"
    else:
        first, second, reg = solution.y, solution.yhat, "L2xH-1"
    if reference is None:
        reference = "terminal" if isinstance(solution, (AdjointQuad, BackwardQuad)) else "initial"
    tree = first.tree
    energies = np.array([_level_energy(grid, first[k], second[k], reg) for k in range(tree.K + 1)])
    ref = energies[-1] if reference == "terminal" else energies[0]
    if ref == 0:
        return EnergyReport(energies, 0.0, 0.0, 0.0)
    trace = 0.0
    if reg == "H1xL2":
        for k in range(tree.K):
            zk = first[k]
            trace += tree.dt * float(np.mean((zk[:, 0] ** 2 + zk[:, -1] ** 2) / grid.dx**2))
    ratio = energies / ref
    return EnergyReport(energies, float(ratio.max()), float(np.max(np.abs(ratio - 1.0))),
                        trace / ref)


def trajectory_rows(state, integrands=None):
    """Rows ``(level, node, x_index, y, yhat[, Z, Zhat])`` for CSV export."""
    if isinstance(state, (DualPair, AdjointQuad)):
        first, second = state.z, state.zhat
        if isinstance(state, AdjointQuad) and integrands is None:
            integrands = (state.Z, state.Zhat)
    else:
        first, second = state.y, state.yhat
        if isinstance(state, BackwardQuad) and integrands is None:
            integrands = (state.Y, state.Yhat)
    rows = []
    for k in range(first.n_levels):
        a, b = first[k], second[k]
        for n in range(a.shape[0]):
            for i in range(a.shape[1]):
                row = [k, n, i + 1, float(a[n, i]), float(b[n, i])]
                if integrands is not None:
                    if k < integrands[0].n_levels:
                        row += [float(integrands[0][k][n, i]), float(integrands[1][k][n, i])]
                    else:
                        row += ["", ""]
                rows.append(row)
    header = ["level", "node", "x_index", "y", "yhat"] + (["Z", "Zhat"] if integrands is not None else [])
    return header, rows
