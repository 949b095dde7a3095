"""Observability, HUM synthesis and (non-)controllability certificates.

Dual data are the deterministic pair ``x = (z0, zhat0)`` stacked into a
vector of length ``2M``.  A state pair ``(y, yhat)`` acts on ``x`` through
:func:`pairing`; :func:`pairing_vector` gives the representing vector so that
``pairing(y, yhat, z0, zhat0) == x @ pairing_vector(y, yhat)``.  Assembly and
verification both go through these two functions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, lobpcg

from .errors import NumericalFailure, PreconditionError
from .spatial import BoundarySpec, CoefficientSet, Grid, h01_norm, hneg1_norm, l2_norm, normal_trace_array
from .solvers import (BackwardQuad, ControlTriple, check_cfl, reference_coefficients,
                      solve_backward_controlled, solve_backward_reference,
                      solve_forward_classical, solve_forward_dual, solve_forward_refined)
from .tree import AdaptedField, BinaryTree, child_half_diff


# ---------------------------------------------------------------- pairing


def pairing(grid: Grid, y, yhat, z, zhat) -> np.ndarray:
    """``dx * (<yhat, z> - <y, zhat>)`` along the last axis."""
    return grid.dx * (np.sum(np.asarray(yhat) * z, axis=-1) - np.sum(np.asarray(y) * zhat, axis=-1))


def pairing_vector(grid: Grid, y, yhat) -> np.ndarray:
    return grid.dx * np.concatenate([np.asarray(yhat, float), -np.asarray(y, float)], axis=-1)


def split(grid: Grid, x) -> tuple:
    x = np.asarray(x, dtype=float)
    return x[..., : grid.M], x[..., grid.M:]


def energy_mass(grid: Grid) -> np.ndarray:
    """Gram matrix of the ``H^1_0 x L^2`` norm in ``(z0, zhat0)`` coordinates."""
    M = grid.M
    N = np.zeros((2 * M, 2 * M))
    N[:M, :M] = -grid.dx * grid.elliptic_matrix
    N[M:, M:] = grid.dx * np.eye(M)
    return N


def state_norm(grid: Grid, y, yhat) -> float:
    """``L^2 x H^{-1}`` norm of a deterministic state pair."""
    return float(np.sqrt(l2_norm(grid, y) ** 2 + hneg1_norm(grid, yhat) ** 2))


# ---------------------------------------------------------------- boundary observation


def boundary_map(grid: Grid, coeffs: CoefficientSet, tree: BinaryTree, gamma0: BoundarySpec,
                 z0, zhat0) -> AdaptedField:
    """Outward normal trace of the free dual solution on the controlled boundary.

    Levels ``0 .. K-1``; two columns ``(left, right)`` with zeros off ``gamma0``.
    """
    sol = solve_forward_dual(grid, coeffs, tree, z0, zhat0)
    return AdaptedField(tree, tuple(normal_trace_array(grid, sol.z[k]) * gamma0.mask
                                    for k in range(tree.K)))


def observation_product(grid: Grid, tree: BinaryTree, u: AdaptedField, v: AdaptedField) -> float:
    """``E sum_k dt sum_{Gamma0} a_b u v`` with conormal boundary weights ``a_b``."""
    w = grid.boundary_weight
    return float(sum(tree.dt * np.mean(np.sum(w * u[k] * v[k], axis=-1)) for k in range(tree.K)))


def quadratic_form(grid: Grid, coeffs: CoefficientSet, tree: BinaryTree, gamma0: BoundarySpec, x) -> float:
    z0, zh0 = split(grid, x)
    tr = boundary_map(grid, coeffs, tree, gamma0, z0, zh0)
    return observation_product(grid, tree, tr, tr)


def gramian_apply(grid: Grid, coeffs: CoefficientSet, tree: BinaryTree, gamma0: BoundarySpec, x) -> np.ndarray:
    """Matrix-free product: observe, then feed the trace back as boundary control."""
    z0, zh0 = split(grid, x)
    h = boundary_map(grid, coeffs, tree, gamma0, z0, zh0)
    zero = np.zeros(grid.M)
    back = solve_backward_controlled(grid, coeffs, tree, zero, zero, h, gamma0)
    return pairing_vector(grid, back.y[0][0], back.yhat[0][0])


@dataclass(frozen=True)
class Gramian:
    matrix: np.ndarray
    asymmetry: float
    eigenvalues: np.ndarray

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def positive_definite(self) -> bool:
        return self.lambda_max > 0 and self.lambda_min > 1e-12 * self.lambda_max


def gramian_assemble(grid: Grid, coeffs: CoefficientSet, tree: BinaryTree, gamma0: BoundarySpec,
                     sym_tol: float = 1e-10) -> Gramian:
    """Dense ``2M x 2M`` observability Gramian, one column per unit datum.

    Symmetry is checked, not imposed; a relative asymmetry above ``sym_tol``
    means the forward and backward schemes are not adjoint and is fatal.
    """
    check_cfl(grid, tree)
    n = 2 * grid.M
    G = np.zeros((n, n))
    if not gamma0.is_empty:
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            G[:, j] = gramian_apply(grid, coeffs, tree, gamma0, e)
    scale = max(float(np.max(np.abs(G))), np.finfo(float).tiny)
    asym = float(np.max(np.abs(G - G.T))) / scale if np.any(G) else 0.0
    if asym > sym_tol:
        raise NumericalFailure(f"Gramian asymmetry {asym:.3g} exceeds {sym_tol:g}: schemes are not adjoint")
    eig = np.linalg.eigvalsh(0.5 * (G + G.T))
    return Gramian(G, asym, eig)


# ---------------------------------------------------------------- observability


@dataclass(frozen=True)
class ObservabilityReport:
    observable: bool
    constant: float
    lobpcg_constant: float
    worst_sampled_ratio: float
    mu_min: float
    mu_max: float


def observability_ratio(grid: Grid, coeffs: CoefficientSet, tree: BinaryTree, gamma0: BoundarySpec,
                        samples: int = 32, seed: int = 0, gram: Gramian | None = None) -> ObservabilityReport:
    """Discrete observability constant ``sup |x|^2_{H^1_0 x L^2} / x' Gram x``.

    Computed from the dense generalized eigenproblem and, independently, by
    LOBPCG driven by matrix-free Gramian products; random data give a lower
    estimate of the worst ratio.
    """
    gram = gram or gramian_assemble(grid, coeffs, tree, gamma0)
    N = energy_mass(grid)
    mu = scipy.linalg.eigh(gram.matrix, N, eigvals_only=True)
    mu_min, mu_max = float(mu[0]), float(mu[-1])
    observable = mu_max > 0 and mu_min > 1e-12 * mu_max
    constant = 1.0 / mu_min if observable else np.inf

    rng = np.random.default_rng(seed)
    X = rng.standard_normal((2 * grid.M, max(samples, 1)))
    num = np.einsum("ij,ik,kj->j", X, N, X)
    den = np.einsum("ij,ik,kj->j", X, gram.matrix, X)
    with np.errstate(divide="ignore"):
        worst = float(np.max(np.where(den > 0, num / np.where(den > 0, den, 1), np.inf)))

    lob = np.inf
    if observable:
        n = 2 * grid.M
        op = LinearOperator((n, n), matvec=lambda v: gramian_apply(grid, coeffs, tree, gamma0, np.ravel(v)),
                            dtype=float)
        X0 = rng.standard_normal((n, min(2, n)))
        with warnings.catch_warnings():
            # tiny problems make lobpcg fall back to a dense solve on the same operator
            warnings.simplefilter("ignore", UserWarning)
            vals, _ = lobpcg(op, X0, B=N, largest=False, tol=1e-12, maxiter=400)
        lob = 1.0 / float(np.min(vals))
    return ObservabilityReport(bool(observable), float(constant), float(lob), worst, mu_min, mu_max)


# ---------------------------------------------------------------- HUM


@dataclass(frozen=True)
class CGResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residuals: tuple
    functional: tuple


def conjugate_gradient(matvec, b: np.ndarray, rtol: float = 1e-10, maxiter: int | None = None) -> CGResult:
    """Plain CG for an SPD operator; records ``J(x) = x'Ax/2 - b'x`` per iterate."""
    b = np.asarray(b, dtype=float)
    maxiter = maxiter or b.size
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    bnorm = float(np.linalg.norm(b))
    res = [float(np.linalg.norm(r))]
    J = [0.0]
    if bnorm == 0:
        return CGResult(x, 0, True, tuple(res), tuple(J))
    rr = r @ r
    it = 0
    while it < maxiter and res[-1] > rtol * bnorm:
        Ap = matvec(p)
        pAp = p @ Ap
        if pAp <= 0:
            raise NumericalFailure("CG met a non-positive curvature direction")
        alpha = rr / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
        res.append(float(np.sqrt(rr)))
        J.append(float(-0.5 * x @ (b + r)))
    return CGResult(x, it, res[-1] <= rtol * bnorm, tuple(res), tuple(J))


@dataclass(frozen=True)
class HumResult:
    h: AdaptedField
    f: AdaptedField
    g: AdaptedField
    quad: BackwardQuad
    dual_data: np.ndarray
    residual: float
    relative_residual: float
    terminal_residual: float
    cg: CGResult


def hum_synthesize(grid: Grid, coeffs: CoefficientSet, tree: BinaryTree, gamma0: BoundarySpec,
                   y_target0, yhat_target0, yT, yhatT, gram: Gramian | None = None,
                   rtol: float = 1e-10) -> HumResult:
    """Boundary control steering the backward system to prescribed initial data.

    The internal controls are the martingale integrands of the final backward
    solve.  ``terminal_residual`` replays them through the refined forward
    system from the target initial data and measures the miss at the leaves.
    """
    gram = gram or gramian_assemble(grid, coeffs, tree, gamma0)
    if not gram.positive_definite:
        raise PreconditionError("observability fails: Gramian is singular")
    M = grid.M
    y_target0 = np.broadcast_to(np.asarray(y_target0, float), (M,))
    yhat_target0 = np.broadcast_to(np.asarray(yhat_target0, float), (M,))
    free = solve_backward_controlled(grid, coeffs, tree, yT, yhatT, None, gamma0)
    dy = y_target0 - free.y[0][0]
    dyh = yhat_target0 - free.yhat[0][0]
    rhs = -pairing_vector(grid, dy, dyh)
    cg = conjugate_gradient(lambda v: gram.matrix @ v, rhs, rtol=rtol, maxiter=4 * M)
    if not cg.converged:
        raise NumericalFailure(f"CG did not reach rtol={rtol:g} in {4 * M} iterations "
                               f"(last relative residual {cg.residuals[-1] / cg.residuals[0]:.3g})")
    z0, zh0 = split(grid, cg.x)
    trace = boundary_map(grid, coeffs, tree, gamma0, z0, zh0)
    h = AdaptedField(tree, tuple(-lvl for lvl in trace.levels))
    quad = solve_backward_controlled(grid, coeffs, tree, yT, yhatT, h, gamma0)
    miss = state_norm(grid, quad.y[0][0] - y_target0, quad.yhat[0][0] - yhat_target0)
    defect = state_norm(grid, dy, dyh)
    scale = max(defect, state_norm(grid, y_target0, yhat_target0))
    fwd = solve_forward_refined(grid, coeffs, tree, y_target0, yhat_target0,
                                ControlTriple(quad.Y, quad.Yhat, h), gamma0)
    yT_arr = np.broadcast_to(np.asarray(yT, float), fwd.y.leaves.shape)
    yhT_arr = np.broadcast_to(np.asarray(yhatT, float), fwd.yhat.leaves.shape)
    t_scale = max(float(np.max(np.abs(yT_arr))), float(np.max(np.abs(yhT_arr))), 1e-300)
    t_miss = max(float(np.max(np.abs(fwd.y.leaves - yT_arr))),
                 float(np.max(np.abs(fwd.yhat.leaves - yhT_arr)))) / t_scale
    return HumResult(h, quad.Y, quad.Yhat, quad, cg.x, miss, miss / scale if scale > 0 else 0.0,
                     t_miss, cg)


# ---------------------------------------------------------------- duality and reductions


@dataclass(frozen=True)
class DualityResult:
    lhs: float
    rhs: float
    relative: float


def _random_field(rng, tree: BinaryTree, shape, n_levels) -> AdaptedField:
    return AdaptedField.from_function(tree, lambda k: rng.standard_normal((1 << k, *shape)), n_levels)


def duality_check(grid: Grid, coeffs: CoefficientSet, tree: BinaryTree, gamma0: BoundarySpec,
                  rng: np.random.Generator) -> DualityResult:
    """Both sides of the transposition identity for one random instance.

    Terminal data, boundary control, dual initial data and dual sources are
    all random; terminal data and sources are path-dependent.
    """
    M, K = grid.M, tree.K
    yT = rng.standard_normal((1 << K, M))
    yhT = rng.standard_normal((1 << K, M))
    h = _random_field(rng, tree, (2,), K)
    z0, zh0 = rng.standard_normal(M), rng.standard_normal(M)
    F = _random_field(rng, tree, (M,), K)
    Fh = _random_field(rng, tree, (M,), K)
    back = solve_backward_controlled(grid, coeffs, tree, yT, yhT, h, gamma0)
    dual = solve_forward_dual(grid, coeffs, tree, z0, zh0, F, Fh)
    terminal = float(np.mean(pairing(grid, yT, yhT, dual.z[K], dual.zhat[K])))
    initial = float(pairing(grid, back.y[0][0], back.yhat[0][0], z0, zh0))
    internal = sum(tree.dt * grid.dx * float(np.mean(np.sum(-back.Y[k] * Fh[k] + back.Yhat[k] * F[k], axis=-1)))
                   for k in range(K))
    trace = AdaptedField(tree, tuple(normal_trace_array(grid, dual.z[k]) * gamma0.mask for k in range(K)))
    boundary = -observation_product(grid, tree, trace, h)
    lhs = terminal - initial
    rhs = internal + boundary
    scale = abs(terminal) + abs(initial) + abs(internal) + abs(boundary)
    return DualityResult(lhs, rhs, abs(lhs - rhs) / scale if scale else 0.0)


def _max_rel(a_fields, b_fields) -> float:
    num = max(float(np.max(np.abs(a - b))) for fa, fb in zip(a_fields, b_fields)
              for a, b in zip(fa.levels, fb.levels))
    den = max(float(np.max(np.abs(a))) for fa in a_fields for a in fa.levels)
    return num / den if den > 0 else num


@dataclass(frozen=True)
class ReductionReport:
    roundtrip: float
    cross: float
    drive: float
    duality: float
    hum_residual: float | None
    passed: bool
    failures: tuple = field(default_factory=tuple)


def reduction_check(grid: Grid, coeffs: CoefficientSet, tree: BinaryTree, gamma0: BoundarySpec,
                    seed: int = 0, instances: int = 5, forward_coeffs: CoefficientSet | None = None,
                    identity_tol: float = 1e-10, drive_tol: float = 1e-8) -> ReductionReport:
    """Round-trip, cross and drive checks between the forward and backward schemes.

    ``forward_coeffs`` (default ``coeffs``) feeds every forward solve; passing
    a perturbed set breaks the adjoint match on purpose.
    """
    fc = forward_coeffs or coeffs
    rng = np.random.default_rng(seed)
    M, K = grid.M, tree.K
    b = reference_coefficients(coeffs)
    rt = cross = drive = dual = 0.0
    for _ in range(instances):
        zT, zhT = rng.standard_normal((2, 1 << K, M))
        ref = solve_backward_reference(grid, b, tree, zT, zhT)
        fwd = solve_forward_dual(grid, fc, tree, ref.z[0][0], ref.zhat[0][0], ref.Z, ref.Zhat)
        rt = max(rt, _max_rel((ref.z, ref.zhat), (fwd.z, fwd.zhat)))

        y0, yh0 = rng.standard_normal((2, M))
        ctrl = ControlTriple(_random_field(rng, tree, (M,), K), _random_field(rng, tree, (M,), K),
                             _random_field(rng, tree, (2,), K))
        st = solve_forward_refined(grid, fc, tree, y0, yh0, ctrl, gamma0)
        back = solve_backward_controlled(grid, coeffs, tree, st.y.leaves, st.yhat.leaves, ctrl.h, gamma0)
        cross = max(cross, _max_rel((st.y, st.yhat, ctrl.f, ctrl.g), (back.y, back.yhat, back.Y, back.Yhat)))

        yT, yhT = rng.standard_normal((2, 1 << K, M))
        h = _random_field(rng, tree, (2,), K)
        back = solve_backward_controlled(grid, coeffs, tree, yT, yhT, h, gamma0)
        st = solve_forward_refined(grid, fc, tree, back.y[0][0], back.yhat[0][0],
                                   ControlTriple(back.Y, back.Yhat, h), gamma0)
        scale = max(np.max(np.abs(yT)), np.max(np.abs(yhT)))
        drive = max(drive, float(max(np.max(np.abs(st.y.leaves - yT)),
                                     np.max(np.abs(st.yhat.leaves - yhT))) / scale))

        dual = max(dual, duality_check(grid, fc, tree, gamma0, rng).relative
                   if fc is coeffs else _mixed_duality(grid, coeffs, fc, tree, gamma0, rng))

    hum = None
    if not gamma0.is_empty:
        gram = gramian_assemble(grid, coeffs, tree, gamma0) if fc is coeffs else None
        if gram is not None and gram.positive_definite:
            yT = rng.standard_normal((1 << K, M))
            res = hum_synthesize(grid, coeffs, tree, gamma0, np.zeros(M), np.zeros(M), yT, np.zeros_like(yT), gram)
            hum = max(res.relative_residual, res.terminal_residual)
    failures = []
    if rt > identity_tol:
        failures.append(f"reference/dual round trip {rt:.3g}")
    if cross > identity_tol:
        failures.append(f"refined/backward cross identity {cross:.3g}")
    if drive > drive_tol:
        failures.append(f"backward control drives refined system: miss {drive:.3g}")
    if dual > identity_tol:
        failures.append(f"transposition identity {dual:.3g}")
    if hum is not None and hum > drive_tol:
        failures.append(f"HUM endpoint residual {hum:.3g}")
    return ReductionReport(rt, cross, drive, dual, hum, not failures, tuple(failures))


def _mixed_duality(grid, coeffs, fc, tree, gamma0, rng) -> float:
    # transposition identity with the backward solve on coeffs and the forward dual on fc
    M, K = grid.M, tree.K
    yT, yhT = rng.standard_normal((2, 1 << K, M))
    z0, zh0 = rng.standard_normal((2, M))
    back = solve_backward_controlled(grid, coeffs, tree, yT, yhT, None, gamma0)
    dual = solve_forward_dual(grid, fc, tree, z0, zh0)
    terminal = float(np.mean(pairing(grid, yT, yhT, dual.z[K], dual.zhat[K])))
    initial = float(pairing(grid, back.y[0][0], back.yhat[0][0], z0, zh0))
    return abs(terminal - initial) / (abs(terminal) + abs(initial))


# ---------------------------------------------------------------- negative results


def last_step_variance_bound(grid: Grid, tree: BinaryTree, target: np.ndarray) -> float:
    """``E || target - E[target | F_{K-1}] ||^2`` in the dx-weighted norm."""
    target = np.asarray(target, dtype=float)
    return float(np.mean(grid.dx * np.sum(child_half_diff(target) ** 2, axis=-1)))


def last_increment_sign(tree: BinaryTree) -> np.ndarray:
    """``dW_{K-1} / sqrt(dt)`` at every leaf."""
    return tree.increments(tree.K - 1) / tree.sqrt_dt


def _unit_profile(grid: Grid, profile) -> np.ndarray:
    p = np.sin(np.pi * grid.x / grid.L) if profile is None else np.asarray(profile, dtype=float)
    n = float(l2_norm(grid, p))
    if n == 0:
        raise PreconditionError("profile must be nonzero")
    return p / n


EXHAUSTIVE_LIMIT = 4096


class _ControlLayout:
    """Packs per-node control blocks of levels ``0..K-1`` into one flat vector."""

    def __init__(self, tree: BinaryTree, blocks):
        self.tree = tree
        self.blocks = [(name, np.asarray(mask, dtype=bool)) for name, mask in blocks]
        self.size = sum(int(m.sum()) for _, m in self.blocks) * ((1 << tree.K) - 1)
        if self.size > EXHAUSTIVE_LIMIT:
            raise PreconditionError(f"exhaustive minimization over {self.size} controls exceeds "
                                    f"the limit of {EXHAUSTIVE_LIMIT}; use a smaller tree or grid")

    def unpack(self, vec):
        out = {}
        pos = 0
        for name, mask in self.blocks:
            levels = []
            for k in range(self.tree.K):
                n = 1 << k
                arr = np.zeros((n, mask.size))
                cnt = n * int(mask.sum())
                arr[:, mask] = vec[pos:pos + cnt].reshape(n, int(mask.sum()))
                pos += cnt
                levels.append(arr)
            out[name] = AdaptedField(self.tree, tuple(levels))
        return out


def _least_squares(grid: Grid, tree: BinaryTree, layout: _ControlLayout, respond, target) -> tuple:
    """Minimize ``E ||respond(controls) - target||^2`` over the full control basis."""
    base = respond(layout.unpack(np.zeros(layout.size)))
    cols = []
    for j in range(layout.size):
        e = np.zeros(layout.size)
        e[j] = 1.0
        cols.append((respond(layout.unpack(e)) - base).ravel())
    Phi = np.stack(cols, axis=1)
    w = np.sqrt(grid.dx / target.shape[0])
    rhs = (target - base).ravel()
    coef, *_ = np.linalg.lstsq(w * Phi, w * rhs, rcond=None)
    resid = Phi @ coef - rhs
    return float(np.sum(w * w * resid * resid)), coef


@dataclass(frozen=True)
class NegativeCertificate:
    bound: float
    exhaustive_min: float | None
    contrast_min: float | None
    detail: str


def negative_classical(grid: Grid, coeffs: CoefficientSet, tree: BinaryTree, psi=None, xi=None,
                       gamma0: BoundarySpec = BoundarySpec(frozenset({"left", "right"})),
                       exhaustive: bool = True) -> NegativeCertificate:
    """Lower bound on the terminal miss of the classical system for target ``xi * psi``.

    The classical displacement at the leaves is measurable one level earlier,
    so no control removes the last-step conditional variance of the target.
    ``exhaustive`` minimizes over every control (``g1``, ``g2``, ``h`` at every
    node, zero initial data) and, as a contrast, over the refined system's
    controls.
    """
    psi = _unit_profile(grid, psi)
    xi = last_increment_sign(tree) if xi is None else np.asarray(xi, dtype=float)
    target = xi[:, None] * psi[None, :]
    bound = last_step_variance_bound(grid, tree, target)
    if not exhaustive:
        return NegativeCertificate(bound, None, None, "bound only")
    M, zero = grid.M, np.zeros(grid.M)
    full, both = np.ones(M), np.ones(2)
    lay = _ControlLayout(tree, [("g1", full), ("g2", full), ("h", both)])
    best, _ = _least_squares(grid, tree, lay, lambda c: solve_forward_classical(
        grid, coeffs, tree, zero, zero, c["g1"], c["g2"], c["h"], gamma0).y.leaves, target)
    lay2 = _ControlLayout(tree, [("f", full), ("g", full), ("h", both)])
    contrast, _ = _least_squares(grid, tree, lay2, lambda c: solve_forward_refined(
        grid, coeffs, tree, zero, zero, ControlTriple(c["f"], c["g"], c["h"]), gamma0).y.leaves, target)
    return NegativeCertificate(bound, best, contrast,
                               f"classical min {best:.3g} vs bound {bound:.3g}; refined min {contrast:.3g}")


def negative_localized(grid: Grid, coeffs: CoefficientSet, tree: BinaryTree, support_mask,
                       which: str = "f", rho=None,
                       gamma0: BoundarySpec = BoundarySpec(frozenset({"left", "right"})),
                       exhaustive: bool = True) -> NegativeCertificate:
    """Lower bound when ``f`` (or ``g``) is confined to the nodes in ``support_mask``.

    The target is ``xi * rho`` on ``y`` (for ``f``) or on ``yhat`` (for ``g``)
    with ``rho`` supported off the mask.  For ``f`` the bound is
    ``|rho|^2 / (1 + dt a4^2)`` and needs ``a4`` constant on ``supp rho``; for
    ``g`` it is ``|rho|^2`` when ``a3`` vanishes on ``supp rho`` and ``0``
    otherwise.  A ``rho`` meeting the mask gives the trivial bound ``0``.
    """
    if which not in ("f", "g"):
        raise ValueError("which must be 'f' or 'g'")
    mask = np.asarray(support_mask, dtype=bool)
    if mask.shape != (grid.M,):
        raise ValueError(f"support mask must have length {grid.M}")
    if rho is None:
        if mask.all():
            raise PreconditionError("support mask covers the whole domain; no profile outside it")
        rho = np.where(mask, 0.0, np.sin(np.pi * grid.x / grid.L))
    rho = np.asarray(rho, dtype=float)
    supp = rho != 0
    if not supp.any():
        raise PreconditionError("profile rho must be nonzero")
    rho_sq = float(l2_norm(grid, rho) ** 2)
    dt = tree.dt
    if np.any(supp & mask):
        bound = 0.0
    elif which == "f":
        a4 = np.atleast_2d(coeffs.a4)[:, supp]
        if np.ptp(a4) > 0:
            raise PreconditionError("a4 must be constant on the support of rho")
        a4v = float(a4.flat[0]) if a4.size else 0.0
        bound = rho_sq / (1.0 + dt * a4v**2)
    else:
        bound = rho_sq if not np.any(np.atleast_2d(coeffs.a3)[:, supp]) else 0.0
    if not exhaustive:
        return NegativeCertificate(bound, None, None, "bound only")
    xi = last_increment_sign(tree)
    target = xi[:, None] * rho[None, :]
    M, zero = grid.M, np.zeros(grid.M)
    full = np.ones(M)
    fmask = mask if which == "f" else full
    gmask = mask if which == "g" else full
    lay = _ControlLayout(tree, [("f", fmask), ("g", gmask), ("h", np.ones(2))])

    def respond(c):
        st = solve_forward_refined(grid, coeffs, tree, zero, zero, ControlTriple(c["f"], c["g"], c["h"]), gamma0)
        return st.y.leaves if which == "f" else st.yhat.leaves

    best, _ = _least_squares(grid, tree, lay, respond, target)
    return NegativeCertificate(bound, best, None, f"{which} localized: min {best:.6g} vs bound {bound:.6g}")


@dataclass(frozen=True)
class NoBoundaryCertificate:
    kernel_vector: np.ndarray
    image_norm: float
    lambda_max: float
    data_norm_sq: float
    internal_observation: float
    recovered_initial_error: float


def internal_gramian(grid: Grid, coeffs: CoefficientSet, tree: BinaryTree) -> np.ndarray:
    """Gram matrix of the map from leaf terminal data to the integrands ``(Z, Zhat)``.

    Uses the reference system matching the dual coefficients and the weight
    ``E sum_k dt dx``; dimension ``2 M 2^K``.
    """
    b = reference_coefficients(coeffs)
    M, K = grid.M, tree.K
    n = 2 * M * (1 << K)
    if n > EXHAUSTIVE_LIMIT:
        raise PreconditionError(f"internal Gramian of size {n} exceeds the limit of {EXHAUSTIVE_LIMIT}")
    w = np.concatenate([np.full(((1 << k) * M,), tree.dt * grid.dx / (1 << k)) for k in range(K)])
    w = np.concatenate([w, w])
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        zT, zhT = e[: n // 2].reshape(1 << K, M), e[n // 2:].reshape(1 << K, M)
        q = solve_backward_reference(grid, b, tree, zT, zhT)
        cols.append(np.concatenate([np.concatenate([lv.ravel() for lv in q.Z.levels]),
                                    np.concatenate([lv.ravel() for lv in q.Zhat.levels])]))
    O = np.stack(cols, axis=1)
    return O.T @ (w[:, None] * O)


def negative_no_boundary(grid: Grid, coeffs: CoefficientSet, tree: BinaryTree, eta0=None,
                         eta1=None) -> NoBoundaryCertificate:
    """Kernel vector of the internal-only observation when ``h`` is switched off.

    A deterministic wave solution started from ``(eta0, eta1)`` has vanishing
    integrands, so its terminal data are invisible to the internal controls
    while carrying positive energy.
    """
    if np.any(coeffs.a5):
        raise PreconditionError("a5 must vanish: noise would make the dual solution path-dependent")
    M, K = grid.M, tree.K
    eta0 = np.sin(np.pi * grid.x / grid.L) if eta0 is None else np.asarray(eta0, float)
    eta1 = np.zeros(M) if eta1 is None else np.asarray(eta1, float)
    if not (np.any(eta0) or np.any(eta1)):
        raise PreconditionError("initial data must be nonzero")
    wave = solve_forward_dual(grid, coeffs, tree, eta0, eta1)
    zT, zhT = wave.z.leaves, wave.zhat.leaves
    q = solve_backward_reference(grid, reference_coefficients(coeffs), tree, zT, zhT)
    internal = sum(tree.dt * float(np.mean(l2_norm(grid, q.Z[k]) ** 2 + l2_norm(grid, q.Zhat[k]) ** 2))
                   for k in range(K))
    data = float(h01_norm(grid, eta0) ** 2 + l2_norm(grid, eta1) ** 2)
    rec = float(max(np.max(np.abs(q.z[0][0] - eta0)), np.max(np.abs(q.zhat[0][0] - eta1))))
    G = internal_gramian(grid, coeffs, tree)
    v = np.concatenate([zT.ravel(), zhT.ravel()])
    v = v / np.linalg.norm(v)
    lam_max = float(np.linalg.eigvalsh(G)[-1])
    return NoBoundaryCertificate(v, float(np.linalg.norm(G @ v)), lam_max, data, internal, rec)
