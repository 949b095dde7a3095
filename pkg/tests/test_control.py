import numpy as np
import pytest
from hypothesis import given, strategies as st

from swave.control import (EXHAUSTIVE_LIMIT, conjugate_gradient, duality_check, gramian_apply,
                           gramian_assemble, hum_synthesize, negative_classical, negative_localized,
                           negative_no_boundary, observability_ratio, quadratic_form, reduction_check)
from swave.errors import PreconditionError
from swave.presets import profile_coefficients
from swave.solvers import solve_backward_controlled
from swave.spatial import BoundarySpec, CoefficientSet, Grid
from swave.tree import BinaryTree

RIGHT = BoundarySpec(frozenset({"right"}))
BOTH = BoundarySpec(frozenset({"left", "right"}))
SMALL = Grid(1.0, 3)
TREE12 = BinaryTree(12, 3.0)


@pytest.fixture(scope="module")
def gram():
    return gramian_assemble(SMALL, CoefficientSet.zero(SMALL), TREE12, RIGHT)


def test_gramian_symmetric_and_positive(gram):
    assert gram.asymmetry <= 1e-10
    assert gram.positive_definite
    assert np.allclose(gram.matrix, gram.matrix.T, rtol=0, atol=1e-10 * np.abs(gram.matrix).max())


def test_gramian_quadratic_form_matches_direct_observation(rng):
    grid = Grid(1.0, 5)
    coeffs = profile_coefficients(grid, "smooth")
    tree = BinaryTree(8, 0.6)
    G = gramian_assemble(grid, coeffs, tree, BOTH)
    for _ in range(10):
        x = rng.standard_normal(10)
        direct = quadratic_form(grid, coeffs, tree, BOTH, x)
        assert abs(x @ G.matrix @ x - direct) <= 1e-10 * abs(direct)
    assert np.all(G.eigenvalues >= -1e-12 * G.lambda_max)


def test_empty_boundary_gives_zero_gramian():
    G = gramian_assemble(SMALL, CoefficientSet.zero(SMALL), BinaryTree(6, 1.0), BoundarySpec())
    assert not np.any(G.matrix) and not G.positive_definite
    x = np.ones(6)
    assert not np.any(gramian_apply(SMALL, CoefficientSet.zero(SMALL), BinaryTree(6, 1.0), BoundarySpec(), x))


@given(st.integers(2, 12), st.integers(0, 2**31 - 1))
def test_conjugate_gradient_solves_and_decreases_energy(n, seed):
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((n, n))
    A = Q @ Q.T + n * np.eye(n)
    b = rng.standard_normal(n)
    res = conjugate_gradient(lambda v: A @ v, b, rtol=1e-12, maxiter=4 * n)
    assert res.converged
    assert np.allclose(res.x, np.linalg.solve(A, b), atol=1e-8)
    assert np.all(np.diff(res.functional) <= 1e-12 * (1 + abs(res.functional[-1])))


def test_hum_zero_defect_gives_zero_control(gram, rng):
    coeffs = CoefficientSet.zero(SMALL)
    yT = rng.standard_normal((4096, 3))
    free = solve_backward_controlled(SMALL, coeffs, TREE12, yT, 0.0, None, RIGHT)
    res = hum_synthesize(SMALL, coeffs, TREE12, RIGHT, free.y[0][0], free.yhat[0][0], yT, 0.0, gram)
    assert all(np.all(lvl == 0) for lvl in res.h.levels)
    assert res.cg.iterations == 0


def test_hum_reaches_target_and_scales_linearly(gram, rng):
    coeffs = CoefficientSet.zero(SMALL)
    yT = rng.standard_normal((4096, 3))
    y0 = np.array([0.3, -0.1, 0.2])
    r1 = hum_synthesize(SMALL, coeffs, TREE12, RIGHT, y0, 0.0, yT, 0.0, gram)
    assert r1.relative_residual <= 1e-8 and r1.terminal_residual <= 1e-8
    r2 = hum_synthesize(SMALL, coeffs, TREE12, RIGHT, 3 * y0, 0.0, 3 * yT, 0.0, gram)
    for a, b in zip(r1.h.levels, r2.h.levels):
        assert np.allclose(b, 3 * a, rtol=1e-7, atol=1e-9 * np.abs(a).max())


def test_hum_refuses_unobservable_configuration():
    with pytest.raises(PreconditionError):
        hum_synthesize(SMALL, CoefficientSet.zero(SMALL), BinaryTree(4, 0.3), BoundarySpec(),
                       np.ones(3), 0.0, 0.0, 0.0)


def test_observability_dense_and_lobpcg_agree(gram):
    rep = observability_ratio(SMALL, CoefficientSet.zero(SMALL), TREE12, RIGHT, gram=gram)
    assert rep.observable
    assert abs(rep.lobpcg_constant / rep.constant - 1) <= 0.05
    assert rep.worst_sampled_ratio <= rep.constant * (1 + 1e-9)


def test_short_horizon_observability_is_much_worse():
    coeffs = CoefficientSet.zero(SMALL)
    short = observability_ratio(SMALL, coeffs, BinaryTree(12, 0.6), RIGHT)
    long = observability_ratio(SMALL, coeffs, TREE12, RIGHT)
    assert short.constant >= 10 * long.constant


def test_duality_identity_random_instances(rng):
    grid = Grid(1.0, 7)
    coeffs = profile_coefficients(grid, "smooth")
    for gamma in (RIGHT, BOTH, BoundarySpec()):
        for _ in range(3):
            assert duality_check(grid, coeffs, BinaryTree(6, 0.5), gamma, rng).relative <= 1e-12


def test_reduction_passes_and_detects_fault():
    grid = Grid(1.0, 5)
    coeffs = profile_coefficients(grid, "smooth")
    tree = BinaryTree(5, 0.4)
    ok = reduction_check(grid, coeffs, tree, RIGHT, seed=1, instances=2)
    assert ok.passed, ok.failures
    broken = coeffs.replace(a2=coeffs.a2 + 0.05)
    bad = reduction_check(grid, coeffs, tree, RIGHT, seed=1, instances=2, forward_coeffs=broken)
    assert not bad.passed and bad.failures


def test_negative_classical_matches_bound_exactly():
    grid = Grid(1.0, 7)
    cert = negative_classical(grid, CoefficientSet.zero(grid), BinaryTree(3, 0.3))
    assert abs(cert.bound - 1.0) <= 1e-12
    assert abs(cert.exhaustive_min - cert.bound) <= 1e-12
    assert cert.contrast_min <= 1e-20


@pytest.mark.parametrize("which", ["f", "g"])
def test_negative_localized_bounds(which):
    grid = Grid(1.0, 7)
    mask = grid.x < 0.5
    cert = negative_localized(grid, CoefficientSet.zero(grid), BinaryTree(3, 0.3), mask, which)
    assert cert.bound > 0
    assert cert.exhaustive_min >= cert.bound * (1 - 1e-9)


def test_negative_localized_with_noise_coefficient():
    grid = Grid(1.0, 7)
    tree = BinaryTree(3, 0.3)
    coeffs = CoefficientSet(grid, a4=0.8)
    cert = negative_localized(grid, coeffs, tree, grid.x < 0.5, "f")
    rho = np.where(grid.x < 0.5, 0.0, np.sin(np.pi * grid.x))
    assert np.isclose(cert.bound, grid.dx * np.sum(rho**2) / (1 + tree.dt * 0.64), rtol=1e-13)
    assert cert.exhaustive_min >= cert.bound * (1 - 1e-9)


def test_negative_localized_preconditions():
    grid = Grid(1.0, 7)
    tree = BinaryTree(3, 0.3)
    zero = CoefficientSet.zero(grid)
    with pytest.raises(PreconditionError):
        negative_localized(grid, zero, tree, np.ones(7, bool), "f")
    overlap = negative_localized(grid, zero, tree, grid.x < 0.5, "f", rho=np.ones(7), exhaustive=False)
    assert overlap.bound == 0.0
    with pytest.raises(PreconditionError):
        negative_localized(grid, CoefficientSet(grid, a4=grid.x), tree, grid.x < 0.5, "f")
    with pytest.raises(PreconditionError):
        negative_localized(Grid(1.0, 31), CoefficientSet.zero(Grid(1.0, 31)), BinaryTree(7, 0.2),
                           Grid(1.0, 31).x < 0.5, "f")
    assert EXHAUSTIVE_LIMIT == 4096


def test_negative_no_boundary_kernel():
    grid = Grid(1.0, 7)
    cert = negative_no_boundary(grid, CoefficientSet.zero(grid), BinaryTree(3, 0.3))
    assert cert.image_norm <= 1e-12 * cert.lambda_max
    assert cert.data_norm_sq > 0 and cert.internal_observation <= 1e-24
    assert cert.recovered_initial_error <= 1e-12
    with pytest.raises(PreconditionError):
        negative_no_boundary(grid, CoefficientSet(grid, a5=0.1), BinaryTree(3, 0.3))
