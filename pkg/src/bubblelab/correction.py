"""Radial correction ``h`` solving ``Delta h + p U^(p-1) h = pi`` on R^n.

The solution is built by variation of parameters from the kernel pair
``(Z0, Z~)``::

    h = (1/W) [ -Z0(r) int_0^r Z~ f s^(n-1) ds + Z~(r) int_0^r Z0 f s^(n-1) ds ]

with ``W = r^(n-1) (Z0 Z~' - Z0' Z~)`` the Abel constant.  This is the only
choice of coefficients that makes ``h`` an exact solution, and it is the
solution that is regular at the origin.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ._quadrature import CumulativeIntegral
from .bubble import _cfg, kernel_Z0, kernel_Z0_prime, pi_profile, potential
from .profiles import RadialProfile, default_grid
from .spectral import (SpectralError, tilde_Z_prime, tilde_Z_values, wronskian_constant,
                       wronskian_profile)


def _default_knots(r_last: float = 1e8, count: int = 900) -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(1e-4, r_last, count)])


class RadialGreenSolver:
    """Regular solution of ``Delta h + p U^(p-1) h = f`` for a radial forcing ``f``.

    Parameters
    ----------
    cfg : DimensionConfig or int
    forcing : callable, optional
        Vectorised radial function; defaults to ``pi``.
    knots : array_like, optional
        Panel breakpoints of the running integrals.  Beyond the last knot
        the solution is continued by the ``r^-2`` law.
    """

    def __init__(self, cfg, forcing=None, knots=None):
        self.cfg = _cfg(cfg)
        c = self.cfg
        n = c.n
        self.forcing = forcing if forcing is not None else (lambda r: pi_profile(r, c))
        self.W = wronskian_constant(c)
        probe = np.array([0.1, 1.0, 3.0, 30.0])
        if np.max(np.abs(wronskian_profile(probe, c) / self.W - 1.0)) > 1e-8:
            raise SpectralError("Wronskian of (Z0, Z~) is not constant; Z~ is defective")
        self.knots = _default_knots() if knots is None else np.asarray(knots, dtype=float)
        f = self.forcing
        self._I1 = CumulativeIntegral(lambda s: tilde_Z_values(s, c) * f(s) * s ** (n - 1),
                                      self.knots)
        self._I2 = CumulativeIntegral(lambda s: kernel_Z0(s, c) * f(s) * s ** (n - 1),
                                      self.knots)

    def integrals(self, r):
        r = np.asarray(r, dtype=float)
        I1 = self._I1(r)
        # past the zero of Z0 the running integral is the total minus a tail
        I2 = np.where(r <= 1.0, self._I2(r), self._I2.total - self._I2.tail(np.maximum(r, 1.0)))
        return I1, I2

    def _inner(self, r):
        c = self.cfg
        I1, I2 = self.integrals(r)
        h = (-kernel_Z0(r, c) * I1 + tilde_Z_values(r, c) * I2) / self.W
        dh = (-kernel_Z0_prime(r, c) * I1 + tilde_Z_prime(r, c) * I2) / self.W
        return h, dh

    def value_and_derivative(self, r):
        r = np.asarray(r, dtype=float)
        last = self.knots[-1]
        # h(0) = h'(0) = 0; evaluate a harmless placeholder there
        rr = np.where(r == 0.0, 1.0, np.minimum(r, last))
        h, dh = self._inner(rr)
        h = np.where(r == 0.0, 0.0, h)
        dh = np.where(r == 0.0, 0.0, dh)
        beyond = r > last
        if np.any(beyond):
            h_end, _ = self._inner(np.array(last))
            scale = np.where(beyond, (last / np.maximum(r, last)) ** 2, 1.0)
            h = np.where(beyond, h_end * scale, h)
            dh = np.where(beyond, -2.0 * h_end * scale / np.maximum(r, last), dh)
        return h, dh

    def __call__(self, r):
        return self.value_and_derivative(r)[0]

    def derivative(self, r):
        return self.value_and_derivative(r)[1]

    def second_derivative(self, r):
        """``h''`` from the equation itself (``r > 0``)."""
        c = self.cfg
        r = np.asarray(r, dtype=float)
        h, dh = self.value_and_derivative(r)
        return self.forcing(r) - (c.n - 1) * dh / r - potential(r, c) * h

    def profile(self, grid=None, name: str = "h") -> RadialProfile:
        grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
        return RadialProfile(grid, self(grid), name, self.cfg.n, decay_exponent=2.0)


def correction_h(cfg, r_max: float = 1e3, nodes: int = 2048, forcing=None) -> RadialProfile:
    """The correction ``h`` (``Delta h + p U^(p-1) h = pi``) sampled on the default grid.

    ``|h(r)| <= C r^-2`` at infinity; the profile carries that tail law.
    """
    return RadialGreenSolver(cfg, forcing).profile(default_grid(r_max, nodes))


@lru_cache(maxsize=None)
def _default_solver(n: int) -> RadialGreenSolver:
    return RadialGreenSolver(n)


def default_correction(cfg) -> RadialGreenSolver:
    """Cached solver for the forcing ``pi`` (the ``h`` used by the ansatz)."""
    return _default_solver(_cfg(cfg).n)
