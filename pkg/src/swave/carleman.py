"""Carleman weight machinery on the interval.

The weight is ``ell(t, x) = lam * (phi(x) - c1 * (t - T/2)**2)`` with
``phi`` a polynomial (by default ``alpha * (x - x0)**2``).  Since both
``ell`` and the coefficient ``a(x)`` are polynomial, every derived field is
an exact bivariate polynomial and is tabulated without differencing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import numpy.polynomial.polynomial as P
from numpy.polynomial import Polynomial
from scipy.signal import convolve2d

from .spatial import BoundarySpec, CoefficientSet, Grid, OUTWARD_NORMAL, SIDES, as_polynomial


class Poly2:
    """Polynomial in ``(t, x)``; ``coef[i, j]`` multiplies ``t**i * x**j``."""

    __slots__ = ("coef",)

    def __init__(self, coef):
        self.coef = np.atleast_2d(np.asarray(coef, dtype=float))

    @classmethod
    def of_x(cls, p: Polynomial) -> "Poly2":
        return cls(np.asarray(p.coef, dtype=float)[None, :])

    @classmethod
    def of_t(cls, p: Polynomial) -> "Poly2":
        return cls(np.asarray(p.coef, dtype=float)[:, None])

    @classmethod
    def const(cls, c: float) -> "Poly2":
        return cls([[c]])

    def _lift(self, other) -> "Poly2":
        return other if isinstance(other, Poly2) else Poly2.const(float(other))

    def __add__(self, other):
        other = self._lift(other)
        shape = np.maximum(self.coef.shape, other.coef.shape)
        out = np.zeros(shape)
        out[: self.coef.shape[0], : self.coef.shape[1]] += self.coef
        out[: other.coef.shape[0], : other.coef.shape[1]] += other.coef
        return Poly2(out)

    __radd__ = __add__

    def __neg__(self):
        return Poly2(-self.coef)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Poly2):
            return Poly2(self.coef * float(other))
        return Poly2(convolve2d(self.coef, other.coef))

    __rmul__ = __mul__

    def dt(self, n: int = 1) -> "Poly2":
        if self.coef.shape[0] <= n:
            return Poly2.const(0.0)
        return Poly2(P.polyder(self.coef, n, axis=0))

    def dx(self, n: int = 1) -> "Poly2":
        if self.coef.shape[1] <= n:
            return Poly2.const(0.0)
        return Poly2(P.polyder(self.coef, n, axis=1))

    def __call__(self, t, x):
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        return P.polyval2d(t, x, self.coef)


@dataclass(frozen=True, eq=False)
class CarlemanConfig:
    """Weight parameters: ``phi = alpha * (x - x0)**2`` unless ``phi`` is given."""

    x0: float = -1.0
    alpha: float = 4.0
    c0: float = 0.1
    c1: float = 0.5
    lam: float = 1.0
    T: float = 3.0
    mu0: float | None = None
    phi: Polynomial | None = None

    def __post_init__(self):
        if self.phi is not None:
            object.__setattr__(self, "phi", as_polynomial(self.phi))

    @property
    def phi_poly(self) -> Polynomial:
        if self.phi is not None:
            return self.phi
        return self.alpha * Polynomial([-self.x0, 1.0]) ** 2

    def radii(self, grid: Grid) -> tuple:
        """``(R0, R1)`` with ``R0**2 = min phi`` and ``R1**2 = max phi`` on the closed interval."""
        vals = self.phi_poly(_closed_samples(grid))
        return float(np.sqrt(max(vals.min(), 0.0))), float(np.sqrt(max(vals.max(), 0.0)))

    def T0(self, grid: Grid) -> float:
        return 2.0 * self.radii(grid)[1]

    def replace(self, **changes) -> "CarlemanConfig":
        data = dict(x0=self.x0, alpha=self.alpha, c0=self.c0, c1=self.c1, lam=self.lam,
                    T=self.T, mu0=self.mu0, phi=self.phi)
        data.update(changes)
        return CarlemanConfig(**data)


def _closed_samples(grid: Grid) -> np.ndarray:
    return grid.x_ext


# ---------------------------------------------------------------- condition 1


@dataclass(frozen=True)
class Condition1Report:
    holds: bool
    mu0_max: float
    bracket_min: float
    min_abs_dphi: float
    critical_point: float | None

    @property
    def message(self) -> str:
        if self.critical_point is not None:
            return f"(d2) violated: critical point at x={self.critical_point:.6g}"
        if self.mu0_max <= 0:
            return f"(d1) violated: mu0_max={self.mu0_max:.6g} <= 0"
        return f"condition 1 holds with mu0_max={self.mu0_max:.12g}"


def condition1_bracket(grid: Grid, phi: Polynomial) -> Polynomial:
    """``2 a (a phi')' - a' a phi'``, the 1D form of the convexity quadratic form."""
    a = grid.a
    dphi = phi.deriv()
    return 2 * a * (a * dphi).deriv() - a.deriv() * a * dphi


def check_condition1(grid: Grid, cfg: CarlemanConfig, tol: float = 1e-12) -> Condition1Report:
    """Pointwise convexity check on the closed grid.

    ``mu0_max`` is half of ``min(bracket / a)``: the Hessian normalisation under
    which ``a = 1`` and ``phi = alpha |x - x0|^2`` give ``mu0 = 2 alpha``.  The
    un-halved minimum is reported as ``bracket_min``.
    """
    xs = _closed_samples(grid)
    phi = cfg.phi_poly
    ratio = condition1_bracket(grid, phi)(xs) / grid.a(xs)
    bracket_min = float(ratio.min())
    dphi = np.abs(phi.deriv()(xs))
    scale = max(1.0, float(np.max(np.abs(phi(xs)))))
    i = int(np.argmin(dphi))
    critical = float(xs[i]) if dphi[i] <= tol * scale else None
    mu0_max = 0.5 * bracket_min
    holds = critical is None and mu0_max > 0
    if cfg.mu0 is not None:
        holds = holds and cfg.mu0 <= mu0_max * (1 + tol)
    return Condition1Report(holds, mu0_max, bracket_min, float(dphi[i]), critical)


# ---------------------------------------------------------------- condition 2


@dataclass(frozen=True)
class ConditionItem:
    name: str
    holds: bool
    slack: float
    detail: str


@dataclass(frozen=True)
class Condition2Report:
    items: tuple
    R0: float
    R1: float
    T0: float
    mu0: float
    c0: float
    c1: float

    @property
    def holds(self) -> bool:
        return all(it.holds for it in self.items)

    @property
    def strictly_positive(self) -> bool:
        return all(it.slack > 0 for it in self.items)

    def item(self, n: int) -> ConditionItem:
        return self.items[n - 1]


def _a5_cap(coeffs: CoefficientSet | None) -> float:
    a5 = 0.0 if coeffs is None else coeffs.sup("a5")
    return 1.0 if a5 == 0 else min(1.0, 1.0 / (16.0 * a5**4))


def check_condition2(grid: Grid, cfg: CarlemanConfig, coeffs: CoefficientSet | None = None,
                     mu0: float | None = None) -> Condition2Report:
    """Evaluate the four compatibility items, each with its slack.

    ``mu0`` defaults to ``cfg.mu0`` and then to ``mu0_max`` of condition 1.
    """
    xs = _closed_samples(grid)
    phi = cfg.phi_poly
    R0, R1 = cfg.radii(grid)
    T0 = 2 * R1
    if mu0 is None:
        mu0 = cfg.mu0 if cfg.mu0 is not None else check_condition1(grid, cfg).mu0_max
    T, c0, c1 = cfg.T, cfg.c0, cfg.c1

    quarter = 0.25 * grid.a(xs) * phi.deriv()(xs) ** 2
    s1 = float(np.min(quarter) - R1**2)
    item1 = ConditionItem("(1) a phi'^2/4 >= R1^2 >= R0^2", bool(s1 >= 0 and R1 >= R0), s1,
                          f"min a phi'^2/4 = {np.min(quarter):.6g}, R1^2 = {R1**2:.6g}")
    s2 = T - T0
    item2 = ConditionItem("(2) T > T0", bool(s2 > 0), float(s2), f"T = {T:.6g}, T0 = {T0:.6g}")
    lo, hi, cap = (T0 / T) ** 2, T0 / T, _a5_cap(coeffs)
    s3 = min(c1 - lo, hi - c1, cap - c1)
    item3 = ConditionItem("(3) (2R1/T)^2 < c1 < 2R1/T, c1 < min(1, 1/(16|a5|^4))", bool(s3 > 0), float(s3),
                          f"c1 = {c1:.6g} in ({lo:.6g}, {min(hi, cap):.6g})")
    s4 = mu0 - 4 * c1 - c0 - np.sqrt(R1)
    item4 = ConditionItem("(4) mu0 - 4 c1 - c0 > sqrt(R1)", bool(s4 > 0), float(s4),
                          f"mu0 = {mu0:.6g}, sqrt(R1) = {np.sqrt(R1):.6g}")
    return Condition2Report((item1, item2, item3, item4), R0, R1, T0, float(mu0), c0, c1)


def search_constants(grid: Grid, cfg: CarlemanConfig, coeffs: CoefficientSet | None = None,
                     mu0: float | None = None):
    """Pick ``c1`` and ``c0`` satisfying items (3)-(4), or return ``None``.

    ``c1`` is placed a quarter of the way into the admissible open interval
    (small ``c1`` leaves the most room in item (4)) and ``c0`` is the smaller
    of ``c1 / 2`` and half the remaining item-(4) margin.
    """
    R0, R1 = cfg.radii(grid)
    if mu0 is None:
        mu0 = cfg.mu0 if cfg.mu0 is not None else check_condition1(grid, cfg).mu0_max
    T0 = 2 * R1
    lo = (T0 / cfg.T) ** 2
    hi = min(T0 / cfg.T, _a5_cap(coeffs))
    if not hi > lo:
        return None
    c1 = lo + 0.25 * (hi - lo)
    margin = mu0 - 4 * c1 - np.sqrt(R1)
    if margin <= 0:
        return None
    c0 = min(0.5 * c1, 0.5 * margin)
    return float(c0), float(c1)


def compute_gamma0(grid: Grid, cfg: CarlemanConfig) -> BoundarySpec:
    """Endpoints where ``a phi' nu > 0`` with outward normal ``nu``."""
    dphi = cfg.phi_poly.deriv()
    ends = {"left": 0.0, "right": grid.L}
    chosen = {s for s in SIDES
              if grid.a(ends[s]) * dphi(ends[s]) * OUTWARD_NORMAL[s] > 0}
    return BoundarySpec(frozenset(chosen))


# ---------------------------------------------------------------- weight fields


@dataclass(frozen=True, eq=False)
class WeightPolys:
    """Exact polynomial forms of the weight and its derived coefficients."""

    ell: Poly2
    Psi: Poly2
    c11: Poly2
    A: Poly2
    B: Poly2
    a: Poly2


def weight_polys(grid: Grid, cfg: CarlemanConfig, lam: float | None = None) -> WeightPolys:
    lam = cfg.lam if lam is None else lam
    a = Poly2.of_x(grid.a)
    tshift = Polynomial([-cfg.T / 2, 1.0])
    ell = lam * (Poly2.of_x(cfg.phi_poly) - cfg.c1 * Poly2.of_t(tshift**2))
    lt, lx = ell.dt(), ell.dx()
    Psi = ell.dt(2) + (a * lx).dx() - cfg.c0 * lam
    c11 = (a * lt).dt() + 2 * a * (a * lx).dx() - (a * a * lx).dx() + Psi * a
    A = lt * lt - ell.dt(2) - (a * lx * lx - (a * lx).dx()) - Psi
    B = A * Psi + (A * lt).dt() - (A * a * lx).dx() + 0.5 * (Psi.dt(2) - (a * Psi.dx()).dx())
    return WeightPolys(ell, Psi, c11, A, B, a)


@dataclass(frozen=True, eq=False)
class WeightFields:
    """Tabulated weight fields on a ``(t, x)`` mesh of shape ``(nt, nx)``."""

    t: np.ndarray
    x: np.ndarray
    ell: np.ndarray
    theta: np.ndarray
    Psi: np.ndarray
    A: np.ndarray
    B: np.ndarray
    c11: np.ndarray
    eps0: float
    eps1: float

    def rows(self):
        tt, xx = np.meshgrid(self.t, self.x, indexing="ij")
        cols = (tt, xx, self.ell, self.theta, self.Psi, self.A, self.B, self.c11)
        return np.stack([c.ravel() for c in cols], axis=1)

    header = ("t", "x", "ell", "theta", "Psi", "A", "B", "c11")


def level_set_windows(grid: Grid, cfg: CarlemanConfig, t: np.ndarray, n_eps: int = 4001):
    """Grid search for ``(eps0, eps1)``.

    ``eps1`` is the smallest value in ``(0, 1/2)`` for which the level set
    ``{phi - c1 (t - T/2)^2 > R0^2 / 8}`` lies inside the window
    ``|t - T/2| < eps1 T`` and ``ell < 0`` outside it; ``eps0`` is the largest
    value for which the window lies inside ``{... > R0^2 / 4}``.  Either is
    ``nan`` when no admissible value exists on the search grid.
    """
    R0, _ = cfg.radii(grid)
    xs = _closed_samples(grid)
    tt, xx = np.meshgrid(t, xs, indexing="ij")
    g = cfg.phi_poly(xx) - cfg.c1 * (tt - cfg.T / 2) ** 2
    dist = np.abs(tt - cfg.T / 2)
    eps = np.linspace(0.0, 0.5, n_eps)[1:-1]

    need1 = max(float(dist[g > R0**2 / 8].max(initial=0.0)), float(dist[g >= 0].max(initial=0.0)))
    ok1 = eps * cfg.T > need1
    eps1 = float(eps[ok1][0]) if ok1.any() else float("nan")

    bad0 = dist[g <= R0**2 / 4]
    limit = float(bad0.min()) if bad0.size else np.inf
    ok0 = eps * cfg.T <= limit
    eps0 = float(eps[ok0][-1]) if ok0.any() else float("nan")
    return eps0, eps1


def weight_fields(grid: Grid, cfg: CarlemanConfig, t: np.ndarray | int = 31,
                  x: np.ndarray | None = None) -> WeightFields:
    """Tabulate ``ell, theta, Psi, A, B, c11`` on a tensor mesh.

    ``t`` is either an array of times or a number of equispaced samples on
    ``[0, T]``; ``x`` defaults to the closed grid.
    """
    if np.isscalar(t):
        t = np.linspace(0.0, cfg.T, int(t))
    t = np.asarray(t, dtype=float)
    x = grid.x_ext if x is None else np.asarray(x, dtype=float)
    polys = weight_polys(grid, cfg)
    tt, xx = np.meshgrid(t, x, indexing="ij")
    ell = polys.ell(tt, xx)
    eps0, eps1 = level_set_windows(grid, cfg, t)
    return WeightFields(t, x, ell, np.exp(ell), polys.Psi(tt, xx), polys.A(tt, xx),
                        polys.B(tt, xx), polys.c11(tt, xx), eps0, eps1)


def closed_form_A(grid: Grid, cfg: CarlemanConfig, t, x) -> np.ndarray:
    """``lam^2 [c1^2 (2t - T)^2 - a phi'^2] + 4 c1 lam + c0 lam``."""
    lam, c0, c1 = cfg.lam, cfg.c0, cfg.c1
    t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
    dphi = cfg.phi_poly.deriv()(x)
    return lam**2 * (c1**2 * (2 * t - cfg.T) ** 2 - grid.a(x) * dphi**2) + 4 * c1 * lam + c0 * lam


@dataclass(frozen=True)
class CoefficientBounds:
    """Pointwise lower-bound checks on ``c11`` and ``B``.

    ``c11_slack`` is ``min (c11 - lam (mu0 - 4 c1 - c0) a)`` over the mesh;
    ``B_cubic_slack`` is the minimum of the ``lam^3`` coefficient of ``B``
    minus the cubic part of the lower bound, and ``B_remainder`` the fitted
    constant multiplying ``lam^2``.
    """

    c11_slack: float
    B_cubic_slack: float
    B_remainder: float
    lam_certified: float


def coefficient_bounds(grid: Grid, cfg: CarlemanConfig, mu0: float | None = None,
                       nt: int = 41, lam_scan=None) -> CoefficientBounds:
    if mu0 is None:
        mu0 = cfg.mu0 if cfg.mu0 is not None else check_condition1(grid, cfg).mu0_max
    c0, c1 = cfg.c0, cfg.c1
    t = np.linspace(0.0, cfg.T, nt)
    tt, xx = np.meshgrid(t, grid.x_ext, indexing="ij")
    a = grid.a(xx)
    q = a * cfg.phi_poly.deriv()(xx) ** 2
    s = (tt - cfg.T / 2) ** 2

    lam = cfg.lam
    c11 = weight_polys(grid, cfg, lam).c11(tt, xx)
    c11_slack = float(np.min(c11 - lam * (mu0 - 4 * c1 - c0) * a))

    # B is a cubic in lam without constant term; recover its coefficients exactly
    samples = np.array([1.0, 2.0, 3.0])
    vals = np.stack([weight_polys(grid, cfg, L).B(tt, xx) for L in samples])
    V = np.stack([samples, samples**2, samples**3], axis=1)
    b1, b2, b3 = np.tensordot(np.linalg.inv(V), vals, axes=(1, 0))
    cubic_lower = (mu0 + 4 * c1 + c0) * q - 8 * c1**2 * (4 * c1 + c0) * s
    cubic_slack = float(np.min(b3 - cubic_lower))
    remainder = float(np.max(np.abs(b2) + np.abs(b1)))

    if lam_scan is None:
        lam_scan = np.geomspace(1e-2, 1e4, 121)
    certified = np.inf
    for L in lam_scan[::-1]:
        B = L**3 * b3 + L**2 * b2 + L * b1
        if np.min(B - L**3 * cubic_lower + remainder * L**2) < 0 or c11_slack < 0:
            break
        certified = float(L)
    return CoefficientBounds(c11_slack, cubic_slack, remainder, certified)


# ---------------------------------------------------------------- identity residual


@dataclass(frozen=True)
class IdentityResidual:
    residuals: tuple
    steps: tuple
    orders: tuple
    scale: tuple

    @property
    def order(self) -> float:
        return self.orders[-1] if self.orders else float("nan")

    @property
    def smooth(self) -> bool:
        return not self.orders or min(self.orders) >= 1.0


def _identity_terms(grid: Grid, cfg: CarlemanConfig, v: Callable, dx: float, dt: float,
                    ghost: int = 3):
    """Both sides of the pointwise identity on one mesh, interior points only."""
    nx = int(round(grid.L / dx))
    nt = int(round(cfg.T / dt))
    x = (np.arange(-ghost, nx + ghost + 1)) * dx
    t = (np.arange(-ghost, nt + ghost + 1)) * dt
    tt, xx = np.meshgrid(t, x, indexing="ij")
    W = weight_polys(grid, cfg)
    ell = W.ell(tt, xx)
    lt, lx, ltt = W.ell.dt()(tt, xx), W.ell.dx()(tt, xx), W.ell.dt(2)(tt, xx)
    ltx = W.ell.dt().dx()(tt, xx)
    a = W.a(tt, xx)
    Psi, A, B, c11 = W.Psi(tt, xx), W.A(tt, xx), W.B(tt, xx), W.c11(tt, xx)
    Psi_t, Psi_x = W.Psi.dt()(tt, xx), W.Psi.dx()(tt, xx)
    alx_x = (W.a * W.ell.dx()).dx()(tt, xx)
    alx_t = (W.a * W.ell.dx()).dt()(tt, xx)

    def d_t(f):
        return np.gradient(f, dt, axis=0)

    def d_x(f):
        return np.gradient(f, dx, axis=1)

    vv = np.asarray(v(tt, xx), dtype=float)
    vh = d_t(vv)
    vx = d_x(vv)
    z = np.exp(-ell) * vv
    zt = d_t(z)
    Pm = -2 * lt * vh + 2 * a * lx * vx + Psi * vv
    X = (a * a * lx * vx**2 - 2 * lt * a * vx * vh + a * lx * vh**2 + Psi * a * vx * vv
         - 0.5 * Psi_x * a * vv**2 - A * a * lx * vv**2)
    Y = lt * a * vx**2 + lt * vh**2 - 2 * a * lx * vx * vh - Psi * vv * vh + (A * lt + 0.5 * Psi_t) * vv**2
    lhs = np.exp(ell) * Pm * (d_t(zt) - d_x(a * d_x(z))) + d_x(X) + d_t(Y)
    rhs = ((ltt + alx_x - Psi) * vh**2 + c11 * vx**2 - 2 * (alx_t + a * ltx) * vx * vh
           + B * vv**2 + Pm**2)
    cut = (slice(ghost, -ghost), slice(ghost, -ghost))
    return lhs[cut], rhs[cut]


def identity_residual(grid: Grid, cfg: CarlemanConfig, v: Callable,
                      dxs=(1 / 20, 1 / 40, 1 / 80), dt_ratio: float = 1.0) -> IdentityResidual:
    """Discrete L2 mismatch of the weighted identity under mesh refinement.

    ``v(t, x)`` is sampled on each mesh (with ``dt = dt_ratio * dx``) and all
    derivatives of ``v`` are centred differences, so the mismatch measures
    the differencing error; the observed order is reported per halving.
    """
    res, scale = [], []
    for dx in dxs:
        dt = dt_ratio * dx
        lhs, rhs = _identity_terms(grid, cfg, v, dx, dt)
        res.append(float(np.sqrt(dx * dt * np.sum((lhs - rhs) ** 2))))
        scale.append(float(np.sqrt(dx * dt * np.sum(rhs**2))))
    orders = tuple(float(np.log(res[i] / res[i + 1]) / np.log(dxs[i] / dxs[i + 1]))
                   if res[i + 1] > 0 and res[i] > 0 else float("inf")
                   for i in range(len(dxs) - 1))
    return IdentityResidual(tuple(res), tuple(dxs), orders, tuple(scale))
