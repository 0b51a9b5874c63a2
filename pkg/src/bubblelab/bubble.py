"""The Aubin-Talenti bubble, its kernel elements and attached constants.

All radial functions accept scalars or arrays of radii and are vectorised.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from ._quadrature import QuadResult, integrate_half_line, sphere_area


@dataclass(frozen=True)
class DimensionConfig:
    """Effective dimension ``n`` and the constants derived from it.

    ``n`` is the dimension of the reduced problem (one less than the
    dimension of the original domain) and must satisfy ``n >= 6``.
    """

    n: int

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n:
            raise ValueError(f"dimension must be an integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        if self.n < 6:
            raise ValueError(f"dimension n must be >= 6, got {self.n}")

    @property
    def p_exact(self) -> Fraction:
        return Fraction(self.n + 2, self.n - 2)

    @property
    def p(self) -> float:
        return float(self.p_exact)

    @property
    def alpha_n(self) -> float:
        """Normalisation making ``U`` an exact solution of ``Delta U + U^p = 0``."""
        n = self.n
        return float(n * (n - 2)) ** ((n - 2) / 4.0)

    @property
    def gamma_exact(self) -> Fraction:
        n = self.n
        return Fraction((n - 2) * (n - 3), 2 * (n - 4))

    @property
    def gamma(self) -> float:
        """Type II blow-up rate of the sup norm."""
        return float(self.gamma_exact)

    @property
    def typeI_rate(self) -> float:
        """Self-similar rate ``1/(p-1) = (n-2)/4``."""
        return (self.n - 2) / 4.0

    @property
    def lam0_exponent(self) -> float:
        return 1.0 + 1.0 / (self.n - 4)

    @property
    def omega(self) -> float:
        """Area of the unit sphere ``S^(n-1)``."""
        return sphere_area(self.n - 1)

    def as_dict(self) -> dict:
        return {"n": self.n, "p": str(self.p_exact), "alpha_n": self.alpha_n,
                "gamma": str(self.gamma_exact), "typeI_rate": self.typeI_rate,
                "lam0_exponent": self.lam0_exponent}


def _cfg(cfg) -> DimensionConfig:
    return cfg if isinstance(cfg, DimensionConfig) else DimensionConfig(cfg)


# --------------------------------------------------------------------------
# Profiles
# --------------------------------------------------------------------------

def bubble_U(r, cfg):
    """``U(r) = alpha_n (1 + r^2)^(-(n-2)/2)``."""
    c = _cfg(cfg)
    r = np.asarray(r, dtype=float)
    return c.alpha_n * (1.0 + r * r) ** (-(c.n - 2) / 2.0)


def bubble_dU(r, cfg):
    """Radial derivative ``U'(r)``; also the radial part of the translation kernel."""
    c = _cfg(cfg)
    r = np.asarray(r, dtype=float)
    return -(c.n - 2) * c.alpha_n * r * (1.0 + r * r) ** (-c.n / 2.0)


def bubble_d2U(r, cfg):
    c = _cfg(cfg)
    r = np.asarray(r, dtype=float)
    P = 1.0 + r * r
    return -(c.n - 2) * c.alpha_n * P ** (-c.n / 2.0 - 1.0) * (1.0 - (c.n - 1) * r * r)


def potential(r, cfg):
    """``p U^(p-1)``, written in closed form ``n(n+2)/(1+r^2)^2``."""
    c = _cfg(cfg)
    r = np.asarray(r, dtype=float)
    return c.n * (c.n + 2) / (1.0 + r * r) ** 2


def bubble_U_pm1(r, cfg):
    """``U^(p-1) = n(n-2)/(1+r^2)^2``."""
    c = _cfg(cfg)
    r = np.asarray(r, dtype=float)
    return c.n * (c.n - 2) / (1.0 + r * r) ** 2


def _z0_scale(c: DimensionConfig) -> float:
    return 0.5 * (c.n - 2) * c.alpha_n


def kernel_Z0(r, cfg):
    """Scaling kernel ``(n-2)/2 U + r U'``."""
    c = _cfg(cfg)
    r = np.asarray(r, dtype=float)
    r2 = r * r
    return _z0_scale(c) * (1.0 - r2) * (1.0 + r2) ** (-c.n / 2.0)


def kernel_Z0_prime(r, cfg):
    c = _cfg(cfg)
    r = np.asarray(r, dtype=float)
    r2 = r * r
    return -_z0_scale(c) * r * (1.0 + r2) ** (-c.n / 2.0 - 1.0) * ((c.n + 2) - (c.n - 2) * r2)


def kernel_Z0_second(r, cfg):
    c = _cfg(cfg)
    n = c.n
    r = np.asarray(r, dtype=float)
    r2 = r * r
    P = 1.0 + r2
    g = r * ((n + 2) - (n - 2) * r2)
    dg = (n + 2) - 3 * (n - 2) * r2
    k = n / 2.0 + 1.0
    return -_z0_scale(c) * P ** (-k - 1.0) * (dg * P - 2.0 * k * r * g)


def kernel_Z1(y, cfg):
    """Translation kernel ``dU/dy_1`` at points ``y`` (last axis = coordinates)."""
    c = _cfg(cfg)
    y = np.asarray(y, dtype=float)
    r2 = np.sum(y * y, axis=-1)
    return -(c.n - 2) * c.alpha_n * y[..., 0] * (1.0 + r2) ** (-c.n / 2.0)


def kernel_Z1_axi(y1, yperp, cfg):
    """``Z_1`` in the axisymmetric variables ``(y_1, |(y_2..y_n)|)``."""
    c = _cfg(cfg)
    y1 = np.asarray(y1, dtype=float)
    r2 = y1 * y1 + np.asarray(yperp, dtype=float) ** 2
    return -(c.n - 2) * c.alpha_n * y1 * (1.0 + r2) ** (-c.n / 2.0)


def radial_laplacian(f, df, d2f, r, n):
    """``f'' + (n-1)/r f'`` from analytic derivative values (``r > 0``)."""
    return d2f + (n - 1) * df / r


_FD_STENCILS = {
    2: ((-1, 0, 1), (-0.5, 0.0, 0.5), (1.0, -2.0, 1.0)),
    4: ((-2, -1, 0, 1, 2), (1 / 12, -2 / 3, 0.0, 2 / 3, -1 / 12),
        (-1 / 12, 4 / 3, -2.5, 4 / 3, -1 / 12)),
}


def fd_radial_operator(f, r, step, n, *, mode: int = 0, potential_fn=None, order: int = 2):
    """Finite-difference ``f'' + (n-1)/r f' - k(k+n-2)/r^2 f + V f`` at radii ``r``.

    ``f`` is a vectorised callable sampled at ``r + j * step``; ``mode = k`` is
    the spherical-harmonic degree and ``potential_fn`` the potential ``V``
    (zero when omitted).  Central stencils of ``order`` 2 or 4.  Used as an
    independent oracle for analytic and quadrature-based profiles.
    """
    r = np.asarray(r, dtype=float)
    step = np.broadcast_to(np.asarray(step, dtype=float), r.shape)
    offsets, c1, c2 = _FD_STENCILS[order]
    d1 = np.zeros_like(r)
    d2 = np.zeros_like(r)
    for j, a, b in zip(offsets, c1, c2):
        v = f(r + j * step)
        d1 += a * v
        d2 += b * v
    d1 /= step
    d2 /= step * step
    out = d2 + (n - 1) * d1 / r
    f0 = f(r)
    if mode:
        out -= mode * (mode + n - 2) * f0 / (r * r)
    if potential_fn is not None:
        out += potential_fn(r) * f0
    return out


def fd_kernel_residual(cfg, step: float, *, mode: int = 0, r_min: float = 0.05,
                       r_max: float = 50.0, order: int = 2) -> float:
    """Max of the finite-difference ``|L0 Z|`` for ``Z0`` (mode 0) or ``Z1`` (mode 1).

    ``Z1 = U'(r) y1/r``, so in mode 1 the radial part ``U'`` is tested against
    the degree-one radial operator.
    """
    c = _cfg(cfg)
    f = (lambda s: kernel_Z0(s, c)) if mode == 0 else (lambda s: bubble_dU(s, c))
    r = np.linspace(r_min, r_max, 2001)
    res = fd_radial_operator(f, r, step, c.n, mode=mode,
                             potential_fn=lambda s: potential(s, c), order=order)
    return float(np.max(np.abs(res)))


def bubble_residual(r, cfg, *, relative: bool = False):
    """Analytic residual ``U'' + (n-1)U'/r + U^p`` (identically zero).

    With ``relative=True`` the residual is divided by the sum of the
    magnitudes of the three terms.  For large ``n`` the terms reach ``~1e6``
    at the origin and the two derivative terms cancel to leading order at
    large ``r``, so the unscaled residual sits at the roundoff of the
    individual terms.
    """
    c = _cfg(cfg)
    r = np.asarray(r, dtype=float)
    terms = (bubble_d2U(r, c), (c.n - 1) * bubble_dU(r, c) / r, bubble_U(r, c) ** c.p)
    res = terms[0] + terms[1] + terms[2]
    if relative:
        return res / (np.abs(terms[0]) + np.abs(terms[1]) + terms[2])
    return res


# --------------------------------------------------------------------------
# Integrals
# --------------------------------------------------------------------------

def radial_integral(f, cfg, *, rtol: float = 1e-12, atol: float = 1e-300,
                    raise_on_failure: bool = False) -> QuadResult:
    """``int_{R^n} f(|y|) dy`` for a radial integrand.

    ``f`` is a vectorised callable of the radius or a
    :class:`~bubblelab.profiles.RadialProfile`.  The returned
    :class:`QuadResult` carries an error estimate and a convergence flag;
    ``raise_on_failure`` turns a non-converged result into ``ArithmeticError``.
    """
    c = _cfg(cfg)
    n = c.n
    res = integrate_half_line(lambda r: f(r) * r ** (n - 1), rtol=rtol, atol=atol)
    out = QuadResult(res.value * c.omega, res.error * c.omega, res.converged, res.panels)
    if raise_on_failure and not out.converged:
        raise ArithmeticError(f"radial integral did not converge (error {out.error:.3e})")
    return out


@dataclass(frozen=True)
class BubbleIntegrals:
    """Bubble integrals used by the scaling law and the correction ``pi``."""

    int_Up: float           # int U^p
    int_Upm1_Z0: float      # A0 = int U^(p-1) Z0  (negative)
    int_Z0_sq: float        # A1 = int Z0^2
    int_Z1_sq: float        # int Z1^2
    max_error: float


@lru_cache(maxsize=None)
def _integrals(n: int) -> BubbleIntegrals:
    c = DimensionConfig(n)
    up = radial_integral(lambda r: bubble_U(r, c) ** c.p, c, raise_on_failure=True)
    a0 = radial_integral(lambda r: bubble_U_pm1(r, c) * kernel_Z0(r, c), c, raise_on_failure=True)
    a1 = radial_integral(lambda r: kernel_Z0(r, c) ** 2, c, raise_on_failure=True)
    # Z1 = U'(r) y1/r and the angular mean of (y1/r)^2 is 1/n
    z1 = radial_integral(lambda r: bubble_dU(r, c) ** 2 / n, c, raise_on_failure=True)
    err = max(up.error, a0.error, a1.error, z1.error)
    return BubbleIntegrals(up.value, a0.value, a1.value, z1.value, err)


def bubble_integrals(cfg) -> BubbleIntegrals:
    return _integrals(_cfg(cfg).n)


def pi_coefficient(cfg) -> float:
    """``p alpha_n / 2^(n-2)``, the amplitude of the mirror-bubble interaction."""
    c = _cfg(cfg)
    return c.p * c.alpha_n / 2.0 ** (c.n - 2)


def pi_profile(r, cfg):
    """Radial source ``pi`` whose pairing with ``Z0`` vanishes.

    ``pi = (p alpha_n / 2^(n-2)) [(A0/A1) Z0 - U^(p-1)]`` with
    ``A0 = int U^(p-1) Z0`` and ``A1 = int Z0^2``.
    """
    c = _cfg(cfg)
    ints = bubble_integrals(c)
    return pi_coefficient(c) * (ints.int_Upm1_Z0 / ints.int_Z0_sq * kernel_Z0(r, c)
                                - bubble_U_pm1(r, c))


def constant_ell(cfg) -> float:
    """Scaling-law constant ``ell`` in ``lambda_0 = ell (T-t)^(1+1/(n-4))``."""
    c = _cfg(cfg)
    n = c.n
    ints = bubble_integrals(c)
    base = (n - 3) / (n - 4) * 2.0 ** (n - 1) / (c.alpha_n * (n - 2)) \
        * ints.int_Z0_sq / ints.int_Up
    return base ** (1.0 / (n - 4))
