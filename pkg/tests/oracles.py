"""Independent reference computations used by the tests.

Nothing here shares code with the package beyond the closed-form profiles:
integrals use plain trapezoid sums with Richardson (Romberg) extrapolation,
eigenvalues use shooting with an adaptive Runge-Kutta integrator.
"""

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.special import gamma


def sphere_area(k):
    return 2.0 * np.pi ** ((k + 1) / 2) / gamma((k + 1) / 2)


def romberg_half_line(g, levels=12, base=64):
    """``int_0^inf g`` via ``r = s/(1-s)``, trapezoid sums and Romberg extrapolation."""
    table = []
    for k in range(levels):
        N = base * 2**k
        s = np.linspace(0.0, 1.0, N + 1)[:-1]
        vals = g(s / (1.0 - s)) / (1.0 - s) ** 2
        # the mapped integrand vanishes at s = 1 for the decay rates used here
        row = [np.sum(vals) / N - 0.5 * vals[0] / N]
        for j, prev in enumerate(table[-1] if table else []):
            row.append(row[j] + (row[j] - prev) / (4 ** (j + 1) - 1))
        table.append(row)
    return table[-1][-1]


def _shoot(n, V, mu, radius, r0=1e-4):
    """Regular radial solution of ``phi'' + (n-1)/r phi' + (V + mu) phi = 0`` at ``radius``."""
    v0 = V(0.0) + mu
    y0 = [1.0 - v0 * r0**2 / (2 * n), -v0 * r0 / n]

    def rhs(r, y):
        return [y[1], -(n - 1) / r * y[1] - (V(r) + mu) * y[0]]

    sol = solve_ivp(rhs, (r0, radius), y0, method="DOP853", rtol=1e-12, atol=1e-14)
    return sol.y[0, -1]


def shooting_eigenvalues(n, V, radius, mu_grid, first_only=False):
    """Dirichlet eigenvalues of ``-(Delta + V)`` on the ball, bracketed on ``mu_grid``."""
    roots = []
    prev = _shoot(n, V, mu_grid[0], radius)
    for a, b in zip(mu_grid[:-1], mu_grid[1:]):
        cur = _shoot(n, V, b, radius)
        if np.sign(prev) != np.sign(cur):
            roots.append(brentq(lambda m: _shoot(n, V, m, radius), a, b, xtol=1e-16, rtol=1e-13))
            if first_only:
                break
        prev = cur
    return roots


def bubble_potential(n):
    return lambda r: n * (n + 2) / (1.0 + r * r) ** 2
