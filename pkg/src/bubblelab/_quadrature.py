"""Quadrature building blocks shared by the profile, spectral and inner modules.

Everything here is deterministic: fixed node sets, fixed reduction order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import gamma, pi

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1] (cached, read-only)."""
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_rule(edges, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on the panels delimited by ``edges``."""
    edges = np.asarray(edges, dtype=float)
    x, w = gauss_legendre(order)
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    nodes = (a + b) * 0.5 + half * x[None, :]
    weights = half * w[None, :]
    return nodes.ravel(), weights.ravel()


def sphere_area(k: int) -> float:
    """Surface area of the unit sphere S^k embedded in R^(k+1)."""
    return 2.0 * pi ** ((k + 1) / 2) / gamma((k + 1) / 2)


@dataclass(frozen=True)
class QuadResult:
    """Value of a quadrature together with an a-posteriori error estimate."""

    value: float
    error: float
    converged: bool
    panels: int

    def __float__(self) -> float:
        return float(self.value)


def integrate_half_line(g, *, rtol: float = 1e-12, atol: float = 1e-300,
                        order: int = 20, start_panels: int = 8,
                        max_panels: int = 1024) -> QuadResult:
    """Integrate ``g(r)`` over ``[0, inf)``.

    The half line is mapped onto ``[0, 1)`` through ``r = s / (1 - s)``.  For the
    power-law tails met in this package the mapped integrand is smooth up to
    ``s = 1``, so composite Gauss-Legendre panels converge geometrically.  The
    panel count is doubled until two successive values agree.
    """

    def mapped(s):
        one_minus = 1.0 - s
        r = s / one_minus
        return g(r) / one_minus**2

    def value(panels: int) -> float:
        # panels cluster mildly towards s = 0, where the profiles vary fastest
        u = np.linspace(0.0, 1.0, panels + 1)
        edges = u**1.5
        nodes, weights = composite_rule(edges, order)
        return float(np.dot(weights, mapped(nodes)))

    panels = start_panels
    prev = value(panels)
    while panels < max_panels:
        panels *= 2
        cur = value(panels)
        err = abs(cur - prev)
        if err <= max(atol, rtol * abs(cur)):
            return QuadResult(cur, err, True, panels)
        prev = cur
    return QuadResult(prev, err, False, panels)


class CumulativeIntegral:
    """Running integral ``F(r) = int_a^r f(s) ds`` evaluable at arbitrary ``r``.

    ``f`` is integrated panel-by-panel on the breakpoints ``knots`` with a fixed
    Gauss-Legendre rule; evaluation at a point inside a panel adds a local
    Gauss-Legendre integral from the left knot.  This keeps the result a smooth
    function of ``r`` (no interpolation error), which is what finite-difference
    round trips need.
    """

    def __init__(self, f, knots, order: int = 12):
        self.f = f
        self.knots = np.asarray(knots, dtype=float)
        if np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        self.order = order
        nodes, weights = composite_rule(self.knots, order)
        vals = f(nodes).reshape(-1, order)
        panel = np.sum(vals * weights.reshape(-1, order), axis=1)
        self.cumulative = np.concatenate([[0.0], np.cumsum(panel)])
        # suffix sums give tails without subtracting two nearly equal totals
        self.suffix = np.concatenate([np.cumsum(panel[::-1])[::-1], [0.0]])

    @property
    def total(self) -> float:
        return float(self.cumulative[-1])

    def _locate(self, r):
        r = np.asarray(r, dtype=float)
        flat = np.clip(r.ravel(), self.knots[0], self.knots[-1])
        idx = np.clip(np.searchsorted(self.knots, flat, side="right") - 1, 0,
                      len(self.knots) - 2)
        left = self.knots[idx]
        x, w = gauss_legendre(self.order)
        half = 0.5 * (flat - left)
        nodes = (left + half)[:, None] + half[:, None] * x[None, :]
        # zero-length local panels contribute nothing; never sample them
        active = half > 0
        local = np.zeros_like(flat)
        if np.any(active):
            vals = self.f(nodes[active].ravel()).reshape(-1, self.order)
            local[active] = np.sum(vals * w[None, :], axis=1) * half[active]
        return r.shape, idx, local

    def __call__(self, r) -> np.ndarray:
        shape, idx, local = self._locate(r)
        return (self.cumulative[idx] + local).reshape(shape)

    def tail(self, r) -> np.ndarray:
        """``int_r^b f`` with ``b`` the last knot."""
        shape, idx, local = self._locate(r)
        return (self.suffix[idx] - local).reshape(shape)


@lru_cache(maxsize=None)
def _jacobi_cos_rule(n: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    k = (n - 3) / 2.0
    x, w = roots_jacobi(order, k, k)
    return x, w


def ball_rule(n: int, radius: float, radial_panels: int = 16, radial_order: int = 8,
              angular_order: int = 64):
    """Tensor quadrature for integrals over the ball ``B_radius`` in R^n.

    Only integrands that depend on ``(y_1, |y|)`` are supported, which is the
    symmetry class used throughout.  Returns ``(y1, yperp, weights)`` where
    ``yperp = |(y_2, ..., y_n)| >= 0``.

    The polar angle is handled exactly by Gauss-Jacobi in ``t = cos(theta)``
    with weight ``(1 - t^2)^((n-3)/2)``; the radius by Gauss-Legendre panels
    refined geometrically towards the origin.
    """
    edges = np.concatenate([[0.0], np.geomspace(min(0.5, radius / 4), radius, radial_panels)])
    r, wr = composite_rule(edges, radial_order)
    t, wt = _jacobi_cos_rule(n, angular_order)
    rr, tt = np.meshgrid(r, t, indexing="ij")
    weights = (wr * r ** (n - 1))[:, None] * wt[None, :] * sphere_area(n - 2)
    y1 = rr * tt
    yperp = rr * np.sqrt(np.clip(1.0 - tt**2, 0.0, None))
    return y1.ravel(), yperp.ravel(), weights.ravel()
