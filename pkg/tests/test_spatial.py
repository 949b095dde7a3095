import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from swave.errors import PreconditionError
from swave.spatial import (BoundarySpec, CoefficientSet, Grid, apply_elliptic, h01_norm, inner,
                           norms, normal_trace)


def sine(grid):
    return np.sin(np.pi * grid.x)


def test_grid_validation():
    with pytest.raises(PreconditionError):
        Grid(1.0, 2)
    with pytest.raises(PreconditionError):
        Grid(1.0, 7, [-1.0])
    with pytest.raises(PreconditionError):
        Grid(0.0, 7)


def test_elliptic_on_sine_converges_second_order():
    errs = []
    for M in (15, 31, 63):
        g = Grid(1.0, M)
        errs.append(np.max(np.abs(apply_elliptic(g, sine(g)) + np.pi**2 * sine(g))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.9)


def test_elliptic_zero_and_affine():
    g = Grid(1.0, 9)
    assert np.all(apply_elliptic(g, np.zeros(9)) == 0)
    lin = 2.0 + 3.0 * g.x
    out = apply_elliptic(g, lin, boundary_values=(2.0, 5.0))
    assert np.max(np.abs(out)) < 1e-10


def test_elliptic_shape_error():
    with pytest.raises(ValueError):
        apply_elliptic(Grid(1.0, 5), np.zeros(4))


def test_first_eigenvalue_closed_form():
    g = Grid(1.0, 31)
    u = sine(g)
    l2, h1, _ = norms(g, u)
    assert np.isclose(h1**2 / l2**2, (2 - 2 * np.cos(np.pi * g.dx)) / g.dx**2, rtol=1e-12)


def test_norms_of_zero():
    assert norms(Grid(1.0, 5), np.zeros(5)) == (0.0, 0.0, 0.0)


def test_normal_trace_sine_converges():
    for M in (31, 127):
        g = Grid(1.0, M)
        left, right = normal_trace(g, sine(g))
        assert abs(left + np.pi) < 5 * g.dx and abs(right + np.pi) < 5 * g.dx
    assert normal_trace(Grid(1.0, 5), np.zeros(5)) == (0.0, 0.0)


variable_a = Grid(1.0, 11, [1.0, 0.5, -0.3])
vec = arrays(np.float64, 11, elements=st.floats(-100, 100))


@given(vec, vec)
def test_elliptic_symmetric(z, w):
    g = variable_a
    assert np.isclose(inner(g, apply_elliptic(g, z), w), inner(g, z, apply_elliptic(g, w)),
                      rtol=1e-10, atol=1e-6)


@given(vec)
def test_elliptic_negative_definite(z):
    g = variable_a
    assert inner(g, apply_elliptic(g, z), z) <= -g.s0 * 0 + 1e-9
    # the energy identity: -<Az, z> equals the a-weighted H1 seminorm
    assert np.isclose(-inner(g, apply_elliptic(g, z), z), h01_norm(g, z) ** 2, rtol=1e-10, atol=1e-8)


@given(vec, vec)
def test_duality_sandwich(u, v):
    g = variable_a
    assert norms(g, u).hneg1 * norms(g, v).h01 >= abs(inner(g, u, v)) - 1e-8


@given(vec, st.floats(-50, 50))
def test_norms_scale(u, c):
    g = variable_a
    n1, n2 = norms(g, u), norms(g, c * u)
    assert np.allclose(n2, np.abs(c) * np.array(n1), rtol=1e-9, atol=1e-9)
    tr1, tr2 = np.array(normal_trace(g, u)), np.array(normal_trace(g, c * u))
    assert np.allclose(tr2, c * tr1)


@given(vec)
def test_poincare_chain(u):
    g = variable_a
    lam1 = np.min(np.linalg.eigvalsh(-g.elliptic_matrix))
    l2, h1, hm1 = norms(g, u)
    assert hm1 <= l2 / np.sqrt(lam1) + 1e-9
    assert l2 <= h1 / np.sqrt(lam1) + 1e-9


def test_boundary_spec():
    b = BoundarySpec.parse("{right}")
    assert b.gamma0 == {"right"} and list(b.mask) == [0.0, 1.0]
    assert BoundarySpec().is_empty
    with pytest.raises(ValueError):
        BoundarySpec(frozenset({"top"}))


def test_coefficient_set_r2_and_shapes():
    g = Grid(1.0, 7)
    c = CoefficientSet(g, a2=2.0, a3=np.arange(7.0), a4=-3.0)
    # constant and monotone profiles: no slope contribution from a1 = a5 = 0
    assert np.isclose(c.r2, 4.0 + 36.0 + 9.0)
    with pytest.raises(ValueError):
        CoefficientSet(g, a1=np.zeros(5))
    t = CoefficientSet(g, a2=np.ones((4, 7)))
    with pytest.raises(ValueError):
        t.check_steps(3)
    assert t.at("a2", 2).shape == (7,)
