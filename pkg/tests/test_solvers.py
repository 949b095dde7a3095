import numpy as np
import pytest
from hypothesis import given, strategies as st

from swave.errors import CFLViolation
from swave.presets import profile_coefficients
from swave.solvers import (ControlTriple, energy_and_hidden_regularity, reference_coefficients,
                           solve_backward_controlled, solve_backward_reference,
                           solve_forward_classical, solve_forward_dual, solve_forward_refined,
                           trajectory_rows)
from swave.spatial import BoundarySpec, CoefficientSet, Grid
from swave.tree import AdaptedField, BinaryTree

GRID = Grid(1.0, 7)
ZERO = CoefficientSet.zero(GRID)
SMOOTH = profile_coefficients(GRID, "smooth")
RIGHT = BoundarySpec(frozenset({"right"}))


def sine(grid):
    return np.sin(np.pi * grid.x)


def discrete_eigenvalue(grid):
    return (2 - 2 * np.cos(np.pi * grid.dx)) / grid.dx**2


def random_field(rng, tree, shape, n_levels=None):
    return AdaptedField.from_function(tree, lambda k: rng.standard_normal((1 << k, *shape)), n_levels)


def test_cfl_is_enforced():
    with pytest.raises(CFLViolation):
        solve_forward_dual(GRID, ZERO, BinaryTree(2, 1.0), sine(GRID), 0.0)


def all_solutions(tree, y0, y1):
    return {
        "classical": solve_forward_classical(GRID, ZERO, tree, y0, y1),
        "dual": solve_forward_dual(GRID, ZERO, tree, y0, y1),
        "refined": solve_forward_refined(GRID, ZERO, tree, y0, y1),
        "backward-controlled": solve_backward_controlled(GRID, ZERO, tree, y0, y1),
        "backward-reference": solve_backward_reference(GRID, ZERO, tree, y0, y1),
    }


def test_zero_data_gives_zero_solution():
    tree = BinaryTree(4, 0.4)
    for name, sol in all_solutions(tree, 0.0, 0.0).items():
        first = getattr(sol, "y", None) or sol.z
        assert all(np.all(lvl == 0) for lvl in first.levels), name


def test_path_independence_without_noise():
    tree = BinaryTree(6, 0.5)
    for name, sol in all_solutions(tree, sine(GRID), 0.3 * sine(GRID)).items():
        first = getattr(sol, "y", None) or sol.z
        second = getattr(sol, "yhat", None) or sol.zhat
        assert first.max_path_deviation() <= 1e-12, name
        assert second.max_path_deviation() <= 1e-12, name


def test_classical_displacement_known_one_step_early(rng):
    tree = BinaryTree(5, 0.5)
    sol = solve_forward_classical(GRID, SMOOTH, tree, rng.standard_normal(7), rng.standard_normal(7),
                                  g2=random_field(rng, tree, (7,)))
    for k in range(1, 6):
        y = sol.y[k]
        assert np.array_equal(y[0::2], y[1::2])
    assert sol.yhat.max_path_deviation() > 0


def test_forward_dual_energy_growth_is_exact():
    tree = BinaryTree(8, 0.4)
    lam, dt = discrete_eigenvalue(GRID), tree.dt
    rep = energy_and_hidden_regularity(GRID, solve_forward_dual(GRID, ZERO, tree, sine(GRID), 0.0))
    assert np.allclose(rep.energies / rep.energies[0], (1 + dt * dt * lam) ** np.arange(9), rtol=1e-12)


def test_refined_energy_decay_is_exact():
    tree = BinaryTree(8, 0.4)
    lam, dt = discrete_eigenvalue(GRID), tree.dt
    rep = energy_and_hidden_regularity(GRID, solve_forward_refined(GRID, ZERO, tree, sine(GRID), 0.0))
    assert np.allclose(rep.energies / rep.energies[0], (1 + dt * dt * lam) ** -np.arange(9.0), rtol=1e-12)


def test_refined_one_step_against_dense_solve(rng):
    tree = BinaryTree(1, 0.1)
    coeffs = CoefficientSet(GRID, a2=0.7, a3=0.2, a4=-0.4, a5=0.3)
    y0, yh0 = rng.standard_normal(7), rng.standard_normal(7)
    f, g = rng.standard_normal(7), rng.standard_normal(7)
    h = np.array([0.0, 1.3])
    controls = ControlTriple(AdaptedField.deterministic(tree, f, 1), AdaptedField.deterministic(tree, g, 1),
                             AdaptedField.deterministic(tree, h, 1))
    sol = solve_forward_refined(GRID, coeffs, tree, y0, yh0, controls, RIGHT)
    dt, dx = tree.dt, GRID.dx
    # independent dense assembly of the node system for unit wave speed
    L = (np.diag(-2 * np.ones(7)) + np.diag(np.ones(6), 1) + np.diag(np.ones(6), -1)) / dx**2 + 0.7 * np.eye(7)
    bd = np.zeros(7)
    bd[-1] = 1.3 / dx**2
    I = np.eye(7)
    system = np.block([[I, -dt * I], [-dt * L, I]])
    rhs = np.concatenate([y0, yh0 + dt * bd + dt * 0.3 * g])
    ybar, yhbar = np.split(np.linalg.solve(system, rhs), 2)
    s = np.sqrt(dt)
    assert np.allclose(sol.y[1], [ybar + s * (-0.4 * ybar + f), ybar - s * (-0.4 * ybar + f)], atol=1e-12)
    assert np.allclose(sol.yhat[1], [yhbar + s * (0.2 * ybar + g), yhbar - s * (0.2 * ybar + g)], atol=1e-12)


def test_refined_and_backward_controlled_round_trip(rng):
    tree = BinaryTree(5, 0.5)
    controls = ControlTriple(random_field(rng, tree, (7,), 5), random_field(rng, tree, (7,), 5),
                             random_field(rng, tree, (2,), 5))
    y0, yh0 = rng.standard_normal(7), rng.standard_normal(7)
    fwd = solve_forward_refined(GRID, SMOOTH, tree, y0, yh0, controls, RIGHT)
    back = solve_backward_controlled(GRID, SMOOTH, tree, fwd.y.leaves, fwd.yhat.leaves,
                                     controls.h, RIGHT)
    assert np.allclose(back.y[0][0], y0, atol=1e-11) and np.allclose(back.yhat[0][0], yh0, atol=1e-10)
    for k in range(5):
        assert np.allclose(back.Y[k], controls.f[k], atol=1e-10)
        assert np.allclose(back.Yhat[k], controls.g[k], atol=1e-10)


def test_reference_inverts_forward_dual(rng):
    tree = BinaryTree(5, 0.5)
    zT, zhT = rng.standard_normal((32, 7)), rng.standard_normal((32, 7))
    ref = solve_backward_reference(GRID, reference_coefficients(SMOOTH), tree, zT, zhT)
    fwd = solve_forward_dual(GRID, SMOOTH, tree, ref.z[0][0], ref.zhat[0][0], ref.Z, ref.Zhat)
    assert np.allclose(fwd.z.leaves, zT, atol=1e-10)
    assert np.allclose(fwd.zhat.leaves, zhT, atol=1e-10)


def test_backward_terminal_noise_free_is_deterministic():
    tree = BinaryTree(4, 0.4)
    sol = solve_backward_controlled(GRID, ZERO, tree, sine(GRID), 0.0)
    assert all(np.all(Y == 0) for Y in sol.Y.levels)


@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31 - 1))
def test_solvers_are_linear(c1, c2, seed):
    rng = np.random.default_rng(seed)
    tree = BinaryTree(3, 0.3)
    u, v = rng.standard_normal((2, 8, 7)), rng.standard_normal((2, 8, 7))
    coeffs = reference_coefficients(SMOOTH)
    solve = lambda d: solve_backward_reference(GRID, coeffs, tree, d[0], d[1])  # noqa: E731
    su, sv, sw = solve(u), solve(v), solve(c1 * u + c2 * v)
    for k in range(4):
        assert np.allclose(sw.z[k], c1 * su.z[k] + c2 * sv.z[k], atol=1e-9)
    d0, d1 = rng.standard_normal((2, 7))
    fu = solve_forward_dual(GRID, SMOOTH, tree, d0, d1)
    fw = solve_forward_dual(GRID, SMOOTH, tree, c1 * d0, c1 * d1)
    assert np.allclose(fw.zhat.leaves, c1 * fu.zhat.leaves, atol=1e-9)


def test_energy_drift_first_order_in_dt():
    grid, T = Grid(1.0, 7), 0.2
    drifts = []
    for K in (8, 16):
        sol = solve_forward_dual(grid, CoefficientSet.zero(grid), BinaryTree(K, T), sine(grid), 0.0)
        drifts.append(energy_and_hidden_regularity(grid, sol).drift)
    assert 1.8 <= drifts[0] / drifts[1] <= 2.2


def test_hidden_regularity_trace_bounded_under_refinement():
    ratios = []
    for M in (7, 15):
        grid = Grid(1.0, M)
        K = M + 1
        sol = solve_forward_dual(grid, CoefficientSet.zero(grid), BinaryTree(K, 1.0),
                                 np.sin(np.pi * grid.x), 0.0)
        ratios.append(energy_and_hidden_regularity(grid, sol).trace_ratio)
    # continuous value for z = sin(pi x) cos(pi t) over unit time: pi^2 / (pi^2 / 2) = 2
    assert abs(ratios[1] - 2.0) < abs(ratios[0] - 2.0) < 1.0


def test_trajectory_rows():
    tree = BinaryTree(2, 0.2)
    header, rows = trajectory_rows(solve_backward_controlled(GRID, ZERO, tree, sine(GRID), 0.0))
    assert list(header[:5]) == ["level", "node", "x_index", "y", "yhat"]
    assert len(rows) == (1 + 2 + 4) * 7
