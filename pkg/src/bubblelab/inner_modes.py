"""Mode-by-mode linear inner theory around the bubble.

Three engines live here:

* :func:`decompose` splits a field on a ball into its spherical mean, its
  first (coordinate) harmonics and a remainder, with a resolution check.
* :func:`mode0_inverse` and :func:`mode1_inverse` invert the linearised
  operator on radial and degree-one data by variation of parameters.
* :func:`mode0_parabolic` time-steps the radial linear parabolic problem on
  ``B_{2R}`` with the projection ``c(tau) Z`` that keeps the solution
  orthogonal to the negative eigenfunction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import roots_jacobi

from ._quadrature import CumulativeIntegral, composite_rule, sphere_area
from .bubble import (_cfg, bubble_d2U, bubble_dU, kernel_Z0, kernel_Z0_prime, potential)
from .profiles import RadialProfile
from .spectral import (RadialOperator, negative_eigenpair, tilde_Z_prime, tilde_Z_values,
                       wronskian_constant)


class SphereResolutionError(ArithmeticError):
    """The sphere lattice does not resolve the field (mode energies unstable)."""


class OrthogonalityError(ValueError):
    """Radial data is not orthogonal to the kernel element it must avoid."""


class QuadratureBreakdown(ArithmeticError):
    """Variation-of-parameters integrals produced non-finite values."""


class StepRejectionError(ArithmeticError):
    """The adaptive parabolic stepper could not meet its error target."""


# --------------------------------------------------------------------------
# Spherical sampling and mode decomposition
# --------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _product_sphere_rule(n: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Product Gauss rule on ``S^(n-1)``: unit vectors ``(m, n)`` and weights.

    ``S^(k)`` is built from ``S^(k-1)`` through ``theta = (t, sqrt(1-t^2) omega)``
    whose measure is ``(1 - t^2)^((k-2)/2) dt d omega``; each polar factor uses
    Gauss-Jacobi in ``t`` and the final circle an equispaced rule.  The rule is
    exact for polynomials of degree ``< 2 * order`` on the sphere.
    """
    m = 2 * order
    phi = 2.0 * np.pi * (np.arange(m) + 0.5) / m
    pts = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    w = np.full(m, 2.0 * np.pi / m)
    for dim in range(3, n + 1):
        a = 0.5 * (dim - 3)
        t, wt = roots_jacobi(order, a, a)
        s = np.sqrt(1.0 - t * t)
        pts = np.concatenate([np.repeat(t, len(pts))[:, None],
                              (s[:, None, None] * pts[None, :, :]).reshape(-1, dim - 1)],
                             axis=1)
        w = (wt[:, None] * w[None, :]).ravel()
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


@lru_cache(maxsize=None)
def _polar_sphere_rule(n: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Polar nodes ``t = cos(theta)`` with weights absorbing ``|S^(n-2)|``."""
    k = 0.5 * (n - 3)
    t, wt = roots_jacobi(order, k, k)
    return t, wt * sphere_area(n - 2)


@dataclass(frozen=True)
class SphereSampling:
    """How a field is sampled on the ``radius x sphere`` lattice.

    Parameters
    ----------
    order : int
        Gauss points per polar angle; the sphere rule is exact for
        polynomial content of degree below ``2 * order``.
    axisymmetric : bool
        When true the field is a callable ``f(y1, yperp)`` of the axial
        coordinate and the distance to the axis, and only the polar angle is
        sampled.  Otherwise ``f(Y)`` takes points of shape ``(..., n)``.
    radial_panels, radial_order : int
        Composite Gauss-Legendre rule on ``[0, R]``.
    rtol : float
        Allowed drift of each mode energy, relative to the total, between the
        rule and a coarser companion.
    """

    order: int = 16
    axisymmetric: bool = True
    radial_panels: int = 12
    radial_order: int = 8
    rtol: float = 1e-2

    def coarse(self) -> "SphereSampling":
        return SphereSampling(max(3, self.order - max(1, self.order // 4)), self.axisymmetric,
                              self.radial_panels, self.radial_order, self.rtol)


@dataclass(frozen=True)
class ModeDecomposition:
    """``h = h0(r) + sum_j h1_j(r) theta_j + h_perp`` on a ball.

    ``h1[j]`` is the coefficient of the coordinate ``theta_{j+1} = y_{j+1}/r``;
    energies are ``L^2(B_R)`` masses of the respective parts.
    """

    h0: RadialProfile
    h1: tuple
    hperp_energy: float
    total_energy: float
    mode0_energy: float
    mode1_energy: float
    radius: float

    @property
    def parseval_defect(self) -> float:
        """Relative mismatch of ``E_total`` and the sum of the mode energies."""
        parts = self.mode0_energy + self.mode1_energy + self.hperp_energy
        return abs(self.total_energy - parts) / max(self.total_energy, np.finfo(float).tiny)


def _radial_nodes(R: float, sampling: SphereSampling):
    edges = np.concatenate([[0.0], np.geomspace(min(0.5, R / 4.0), R, sampling.radial_panels)])
    r, w = composite_rule(edges, sampling.radial_order)
    return r, w


def _sample_modes(field, R, n, sampling):
    """Mode coefficients and energies on one sphere rule."""
    r, wr = _radial_nodes(R, sampling)
    area = sphere_area(n - 1)
    if sampling.axisymmetric:
        t, w = _polar_sphere_rule(n, sampling.order)
        s = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
        vals = np.asarray(field(r[:, None] * t[None, :], r[:, None] * s[None, :]), dtype=float)
        vals = np.broadcast_to(vals, (r.size, t.size))
        theta = np.zeros((t.size, n))
        theta[:, 0] = t
        theta[:, 1] = s  # only used for the residual; its moment is not a mode
        moments = np.zeros((r.size, n))
        moments[:, 0] = vals @ (w * t)
    else:
        theta, w = _product_sphere_rule(n, sampling.order)
        vals = np.empty((r.size, w.size))
        for i, radius in enumerate(r):
            vals[i] = field(radius * theta)
        moments = (vals * w[None, :]) @ theta
    mean = vals @ w / area
    coeff = moments * (n / area)
    total = np.sum(wr * r ** (n - 1) * (vals ** 2 @ w))
    e0 = np.sum(wr * r ** (n - 1) * area * mean ** 2)
    e1 = np.sum(wr * r ** (n - 1) * (area / n) * np.sum(coeff ** 2, axis=1))
    if sampling.axisymmetric:
        recon = mean[:, None] + coeff[:, :1] * theta[None, :, 0]
    else:
        recon = mean[:, None] + coeff @ theta.T
    perp = np.sum(wr * r ** (n - 1) * ((vals - recon) ** 2 @ w))
    return r, mean, coeff, float(total), float(e0), float(e1), float(perp)


def decompose(field, R: float, cfg, sampling: SphereSampling | None = None) -> ModeDecomposition:
    """Split ``field`` on ``B_R`` into modes 0, 1 and the remainder.

    Parameters
    ----------
    field : callable
        ``f(y1, yperp)`` for axisymmetric sampling, ``f(Y)`` with ``Y`` of
        shape ``(..., n)`` otherwise.
    R : float
        Ball radius.
    cfg : DimensionConfig or int
    sampling : SphereSampling, optional

    Returns
    -------
    ModeDecomposition

    Raises
    ------
    SphereResolutionError
        If any mode energy moves by more than ``sampling.rtol`` of the total
        when the sphere rule is coarsened.
    """
    c = _cfg(cfg)
    n = c.n
    sampling = sampling or SphereSampling()
    fine = _sample_modes(field, R, n, sampling)
    coarse = _sample_modes(field, R, n, sampling.coarse())
    r, mean, coeff, total, e0, e1, perp = fine
    scale = max(total, np.finfo(float).tiny)
    drift = max(abs(a - b) for a, b in zip(fine[3:], coarse[3:])) / scale
    if total > 0 and drift > sampling.rtol:
        raise SphereResolutionError(
            f"sphere lattice of order {sampling.order} under-resolves the field "
            f"(mode energies drift by {drift:.2e} of the total)")
    grid = np.concatenate([[0.0], r])
    origin = field(np.zeros(1), np.zeros(1)) if sampling.axisymmetric else field(np.zeros((1, n)))
    h0 = RadialProfile(grid, np.concatenate([np.atleast_1d(origin)[:1], mean]), "h0", n)
    h1 = tuple(RadialProfile(grid, np.concatenate([[0.0], coeff[:, j]]), f"h1_{j + 1}", n)
               for j in range(n))
    return ModeDecomposition(h0, h1, perp, total, e0, e1, float(R))


# --------------------------------------------------------------------------
# Stationary inverses
# --------------------------------------------------------------------------

def _as_radial(h):
    if isinstance(h, RadialProfile):
        return h, float(h.grid[-1])
    if callable(h):
        return h, None
    raise TypeError("radial data must be a RadialProfile or a vectorised callable")


def _knots(support: float, count: int, extra=()) -> np.ndarray:
    pts = np.concatenate([[0.0], np.geomspace(min(1e-4, support / 10), support, count),
                          [e for e in extra if 0 < e < support]])
    return np.unique(pts)


def _relative(residual, solution, data) -> float:
    scale = float(np.max(np.abs(solution)) + np.max(np.abs(data)))
    return float(np.max(np.abs(residual))) / scale if scale > 0 else 0.0


def _weighted_sup(values, r, power: float) -> float:
    return float(np.max((1.0 + r ** power) * np.abs(values)))


@dataclass
class Mode0Inverse:
    """Decaying solution ``H`` of ``Delta H + p U^(p-1) H + h~ = 0``.

    Callable on radii.  ``bound_constant`` is the ratio of the ``a``-weighted
    sup of ``H`` to the ``(2+a)``-weighted sup of the data; ``defect`` the
    relative ``Z0`` pairing of the data.
    """

    cfg: object
    support: float
    forcing: object
    bound_constant: float
    defect: float
    _J1: CumulativeIntegral = field(repr=False)
    _J2: CumulativeIntegral = field(repr=False)

    def value_and_derivative(self, r):
        c = self.cfg
        W = wronskian_constant(c)
        r = np.asarray(r, dtype=float)
        rr = np.clip(r, 0.0, self.support)
        J1 = self._J1.tail(rr)
        # the head integral keeps H regular at the origin; beyond the support it
        # leaves the constant -defect * Z~ / W instead of exact decay
        J2 = -self._J2(rr)
        safe = np.where(r == 0.0, 1.0, r)
        H = (-kernel_Z0(safe, c) * J1 + tilde_Z_values(safe, c) * J2) / W
        dH = (-kernel_Z0_prime(safe, c) * J1 + tilde_Z_prime(safe, c) * J2) / W
        at0 = r == 0.0
        if np.any(at0):
            H = np.where(at0, -kernel_Z0(0.0, c) * self._J1.total / W, H)
            dH = np.where(at0, 0.0, dH)
        return H, dH

    def __call__(self, r):
        return self.value_and_derivative(r)[0]

    def profile(self, grid=None, name: str = "H") -> RadialProfile:
        grid = np.linspace(0.0, self.support, 801) if grid is None else np.asarray(grid, float)
        return RadialProfile(grid, self(grid), name, self.cfg.n)

    def round_trip(self, r, step: float = 1e-3) -> np.ndarray:
        """Finite-difference ``L0 H + h~`` at radii ``r``."""
        from .bubble import fd_radial_operator
        c = self.cfg
        r = np.asarray(r, dtype=float)
        L = fd_radial_operator(self, r, step, c.n, potential_fn=lambda s: potential(s, c),
                               order=4)
        return L + self.forcing(r)

    def round_trip_error(self, r, step: float = 1e-3) -> float:
        """Max round-trip residual relative to ``sup |H| + sup |h~|`` on ``r``."""
        return _relative(self.round_trip(r, step), self(r), self.forcing(r))


def mode0_inverse(h0, cfg, R: float | None = None, *, rtol: float = 1e-6, a: float = 0.3,
                  knots: int = 700) -> Mode0Inverse:
    """Invert ``L0`` on radial data supported in ``B_{2R}``.

    ``H = (Z~(r) int_r^inf h~ Z0 s^(n-1) ds - Z0(r) int_r^inf h~ Z~ s^(n-1) ds) / W``
    with ``W`` the Wronskian constant.  When ``int h~ Z0 = 0`` the first
    integral equals ``-int_0^r``, which is the form evaluated: it is regular at
    the origin, and ``H`` vanishes outside the support up to the pairing
    defect.

    Parameters
    ----------
    h0 : RadialProfile or callable
        Radial data.  Profiles are extended by zero beyond their grid.
    cfg : DimensionConfig or int
    R : float, optional
        Half the support radius; defaults to half the profile's last node.
    rtol : float
        Tolerance of the orthogonality check, relative to ``int |h0 Z0|``.
    a : float
        Weight exponent of the reported bound constant.

    Raises
    ------
    OrthogonalityError
        If the ``Z0`` pairing exceeds ``rtol``.
    """
    c = _cfg(cfg)
    n = c.n
    f, last = _as_radial(h0)
    if R is None:
        if last is None:
            raise ValueError("R is required for callable data")
        support = last
    else:
        support = 2.0 * float(R) if last is None else min(2.0 * float(R), last)

    def forcing(s):
        s = np.asarray(s, dtype=float)
        return np.where(s <= support, f(np.clip(s, 0.0, support)), 0.0)

    k = _knots(support, knots, extra=(1.0,))
    J1 = CumulativeIntegral(lambda s: tilde_Z_values(np.maximum(s, 1e-300), c) * forcing(s)
                            * s ** (n - 1), k)
    J2 = CumulativeIntegral(lambda s: kernel_Z0(s, c) * forcing(s) * s ** (n - 1), k)
    scale = CumulativeIntegral(lambda s: np.abs(kernel_Z0(s, c) * forcing(s)) * s ** (n - 1),
                               k).total
    defect = abs(J2.total) / scale if scale > 0 else 0.0
    if defect > rtol:
        raise OrthogonalityError(f"data pairs with Z0 at relative size {defect:.2e} > {rtol:.1e}")
    out = Mode0Inverse(c, support, forcing, np.nan, defect, J1, J2)
    r = np.concatenate([np.linspace(0.0, min(support, 5.0), 400),
                        np.geomspace(min(support, 5.0), support, 400)])
    H = out(r)
    if not np.all(np.isfinite(H)):
        raise QuadratureBreakdown("mode-0 inverse is not finite")
    denom = _weighted_sup(forcing(r), r, 2.0 + a)
    out.bound_constant = _weighted_sup(H, r, a) / denom if denom > 0 else 0.0
    return out


@dataclass
class Mode1Inverse:
    """Solution of ``L1 phi + h = 0`` on ``[0, 2R]`` with ``phi(2R) = 0``.

    ``L1 = d_rr + (n-1)/r d_r - (n-1)/r^2 + p U^(p-1)``, whose regular kernel
    is ``U'``.  Writing ``phi = U' v`` gives
    ``phi(r) = U'(r) int_r^{2R} rho^(1-n) U'(rho)^-2 int_0^rho h U' s^(n-1) ds d rho``.
    """

    cfg: object
    R: float
    forcing: object
    _inner: CumulativeIntegral = field(repr=False)
    _outer: CumulativeIntegral = field(repr=False)

    def _g(self, rho):
        c = self.cfg
        rho = np.asarray(rho, dtype=float)
        safe = np.maximum(rho, 1e-300)
        Z = bubble_dU(safe, c)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = self._inner(safe) / (safe ** (c.n - 1) * Z * Z)
        return np.where(rho > 0, g, 0.0)

    def value_and_derivative(self, r):
        c = self.cfg
        r = np.asarray(r, dtype=float)
        rr = np.clip(r, 0.0, 2.0 * self.R)
        v = self._outer.tail(rr)
        phi = bubble_dU(rr, c) * v
        dphi = bubble_d2U(rr, c) * v - bubble_dU(rr, c) * self._g(rr)
        outside = r > 2.0 * self.R
        return np.where(outside, 0.0, phi), np.where(outside, 0.0, dphi)

    def __call__(self, r):
        return self.value_and_derivative(r)[0]

    def profile(self, grid=None, name: str = "phi1") -> RadialProfile:
        grid = np.linspace(0.0, 2.0 * self.R, 801) if grid is None else np.asarray(grid, float)
        return RadialProfile(grid, self(grid), name, self.cfg.n)

    def round_trip(self, r, step: float = 1e-3) -> np.ndarray:
        """Finite-difference ``L1 phi + h`` at radii ``r``."""
        from .bubble import fd_radial_operator
        c = self.cfg
        r = np.asarray(r, dtype=float)
        L = fd_radial_operator(self, r, step, c.n, mode=1,
                               potential_fn=lambda s: potential(s, c), order=4)
        return L + self.forcing(r)

    def round_trip_error(self, r, step: float = 1e-3) -> float:
        """Max round-trip residual relative to ``sup |phi| + sup |h|`` on ``r``."""
        return _relative(self.round_trip(r, step), self(r), self.forcing(r))

    def decay_constant(self, a: float = 0.3, samples: int = 2001) -> float:
        """``sup (1 + r^(n-1)) |phi| / R^(n-a)`` over the ball."""
        n = self.cfg.n
        r = np.linspace(0.0, 2.0 * self.R, samples)
        return _weighted_sup(self(r), r, n - 1) / self.R ** (n - a)


def mode1_inverse(h1, R: float, cfg, *, knots: int = 500) -> Mode1Inverse:
    """Invert the degree-one radial operator on ``B_{2R}``.

    Parameters
    ----------
    h1 : RadialProfile or callable
        Radial coefficient ``h_j(r)`` of one coordinate harmonic.
    R : float
    cfg : DimensionConfig or int

    Raises
    ------
    QuadratureBreakdown
        If the reduction-of-order integrals overflow or lose finiteness
        (``U'`` is tiny near the origin and far out).
    """
    c = _cfg(cfg)
    n = c.n
    f, _ = _as_radial(h1)
    support = 2.0 * float(R)

    def forcing(s):
        s = np.asarray(s, dtype=float)
        return np.where(s <= support, f(np.clip(s, 0.0, support)), 0.0)

    k = _knots(support, knots, extra=(1.0,))
    inner = CumulativeIntegral(lambda s: forcing(s) * bubble_dU(s, c) * s ** (n - 1), k)
    out = Mode1Inverse(c, float(R), forcing, inner, None)
    out._outer = CumulativeIntegral(out._g, k)
    if not (np.isfinite(out._outer.total) and np.all(np.isfinite(out._outer.suffix))):
        raise QuadratureBreakdown("mode-1 reduction-of-order integral is not finite")
    return out


# --------------------------------------------------------------------------
# Mode-0 parabolic problem with the c(tau) Z projection
# --------------------------------------------------------------------------

@dataclass
class ParabolicSolve:
    """Trace of the mode-0 parabolic solve.

    ``c`` enforces ``int phi Z = 0`` at every accepted step; ``c_flux`` is
    the same quantity evaluated from the explicit pairing-plus-boundary-flux
    relation and ``c_main`` the pairing alone, both divided by ``int Z^2``.
    """

    r: np.ndarray
    tau: np.ndarray
    c: np.ndarray
    c_flux: np.ndarray
    c_main: np.ndarray
    sup_weighted: np.ndarray
    l2: np.ndarray
    phi: np.ndarray
    mu0: float
    nu: float
    a: float
    rejected: int

    def growth_rate(self, start: float | None = None) -> float:
        """Exponential rate of the weighted sup norm after ``start``.

        The rate is fitted to the logarithm of the norm's time derivative, so
        secular (polynomial) growth reads as zero while an unstable mode
        ``e^(mu tau)`` reads as ``mu``.
        """
        start = self.tau[len(self.tau) // 2] if start is None else start
        norm = self.sup_weighted / self.tau ** self.nu
        slope = np.diff(norm) / np.diff(self.tau)
        mid = 0.5 * (self.tau[1:] + self.tau[:-1])
        sel = (mid >= start) & (np.abs(slope) > 0)
        if np.count_nonzero(sel) < 3:
            return 0.0
        return float(np.polyfit(mid[sel], np.log(np.abs(slope[sel])), 1)[0])

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["tau", "c", "sup_weighted_phi"])
            for row in zip(self.tau, self.c, self.sup_weighted):
                out.writerow([repr(float(x)) for x in row])
        return path


@lru_cache(maxsize=8)
def _eigenfunction(n: int, domain: float, M: int):
    return negative_eigenpair(n, R_domain=domain, M=M)


def mode0_parabolic(h0, R: float, tau0: float, tau_end: float, cfg, *, M: int = 600,
                    nu: float | None = None, a: float = 0.3, rtol: float = 1e-5,
                    dt0: float | None = None, project: bool = True,
                    max_rejections: int = 40) -> ParabolicSolve:
    """Solve ``phi_tau = L0 phi + h0 - c(tau) Z`` on ``B_{2R}`` from zero data.

    Backward Euler on the finite-volume radial operator, with step doubling
    for the local error and a Richardson-extrapolated update.  The scalar
    ``c`` is the Lagrange multiplier that keeps ``int phi Z = 0``: each step
    solves the two linear systems for the forcing and for ``Z`` and combines
    them.

    Parameters
    ----------
    h0 : callable
        ``h0(r, tau)``, vectorised in ``r``.
    R : float
        The ball is ``B_{2R}``.
    tau0, tau_end : float
    cfg : DimensionConfig or int
    M : int
        Radial unknowns.
    nu, a : float
        Exponents of the reported weight ``tau^nu (1 + r^a)``.
    project : bool
        Drop the projection (``c = 0``) when false; the unstable mode then
        grows at the rate ``|mu0|``.

    Raises
    ------
    StepRejectionError
        After ``max_rejections`` consecutive rejected steps.
    """
    c = _cfg(cfg)
    n = c.n
    if nu is None:
        nu = (n - 2 + 0.9) / (n - 2)
    radius = 2.0 * float(R)
    op = RadialOperator(c, radius, M)
    r = op.nodes
    vol = op.volumes
    sq = np.sqrt(vol)
    # the Dirichlet eigenvector of the same discrete operator makes the
    # multiplier exact; the whole-space eigenfunction supplies the wall value
    eig = _eigenfunction(n, radius, M)
    Zr = eig.Z.values[:M]
    z = sq * Zr
    zz = float(z @ z)
    Z_edge = float(_eigenfunction(n, 1.5 * radius, 4000).Z(radius))
    edge_area = sphere_area(n - 1) * radius ** (n - 1)
    mu = abs(eig.mu0)

    def solve(rhs, dt):
        ab = op.banded(-1.0 / dt) * dt
        return solve_banded((1, 1), ab, rhs)

    def advance(w, tau, dt):
        hs = sq * np.asarray(h0(r, tau + dt), dtype=float)
        x = solve(w + dt * hs, dt)
        if not project:
            return x, 0.0
        y = solve(dt * z, dt)
        cval = float(z @ x) / float(z @ y)
        return x - cval * y, cval

    def diagnostics(w, tau):
        phi = w / sq
        h = np.asarray(h0(r, tau), dtype=float)
        main = float(z @ (sq * h))
        # one-sided outward derivative at the Dirichlet wall
        dphi = (0.0 - phi[-1]) / (radius - r[-1])
        flux = edge_area * dphi * Z_edge
        sup = tau ** nu * _weighted_sup(phi, r, a)
        return phi, main / zz, (main + flux) / zz, sup, float(np.linalg.norm(w))

    span = float(tau_end - tau0)
    if span <= 0:
        raise ValueError("tau_end must exceed tau0")
    dt = dt0 if dt0 is not None else span / 200.0
    dt_min = 1e-12 * span
    w = np.zeros(M)
    tau = float(tau0)
    phi, cm, cf, sup, l2 = diagnostics(w, tau)
    taus, cs, cfs, cms = [tau], [cm if project else 0.0], [cf], [cm]
    sups, l2s, phis = [sup], [l2], [phi]
    rejected = streak = 0
    while tau < tau_end * (1 - 1e-14):
        dt = min(dt, tau_end - tau)
        full, c_full = advance(w, tau, dt)
        half, _ = advance(w, tau, 0.5 * dt)
        half, c_half = advance(half, tau + 0.5 * dt, 0.5 * dt)
        scale = max(float(np.max(np.abs(half))), 1e-300)
        err = float(np.max(np.abs(half - full))) / scale
        if err > rtol and dt > dt_min:
            rejected += 1
            streak += 1
            if streak > max_rejections:
                raise StepRejectionError(f"{streak} consecutive rejections at tau = {tau:.6g}")
            dt *= max(0.2, 0.9 * np.sqrt(rtol / err))
            continue
        streak = 0
        w = 2.0 * half - full
        cval = 2.0 * c_half - c_full
        tau += dt
        if not np.all(np.isfinite(w)):
            raise StepRejectionError(f"non-finite state at tau = {tau:.6g}")
        phi, cm, cf, sup, l2 = diagnostics(w, tau)
        taus.append(tau)
        cs.append(cval)
        cfs.append(cf)
        cms.append(cm)
        sups.append(sup)
        l2s.append(l2)
        phis.append(phi)
        grow = 2.0 if err == 0 else min(2.0, 0.9 * np.sqrt(rtol / err))
        dt *= max(grow, 0.2)
    return ParabolicSolve(np.concatenate([r, [radius]]), np.array(taus), np.array(cs),
                          np.array(cfs), np.array(cms), np.array(sups), np.array(l2s),
                          np.array([np.concatenate([p, [0.0]]) for p in phis]), mu, nu, a,
                          rejected)
