"""Spectral data of the linearised operator ``L0 = Delta + p U^(p-1)``.

The radial part of ``-L0`` on a ball with a Dirichlet condition is discretised
by a vertex-centred finite-volume scheme weighted by ``r^(n-1)``.  After the
diagonal similarity ``D^(1/2)`` the matrix is symmetric tridiagonal, so the
spectrum is real and LAPACK's tridiagonal routines apply.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import sympy as sp
from scipy.linalg import eigh_tridiagonal, solve_banded
from scipy.optimize import brentq

from .bubble import DimensionConfig, _cfg, _z0_scale, kernel_Z0, kernel_Z0_prime, potential
from .profiles import RadialProfile


class SpectralError(ArithmeticError):
    """Raised when an eigen-solve cannot deliver the requested structure."""


# --------------------------------------------------------------------------
# Discretisation
# --------------------------------------------------------------------------

def graded_grid(radius: float, M: int, beta: float | None = None) -> np.ndarray:
    """Exponentially graded nodes ``0 = r_0 < ... < r_M = radius``."""
    if beta is None:
        beta = max(2.0, np.log(radius / 0.05))
    s = np.linspace(0.0, 1.0, M + 1)
    r = radius * np.expm1(beta * s) / np.expm1(beta)
    r[-1] = radius
    return r


@dataclass
class RadialOperator:
    """Finite-volume discretisation of ``-L0`` on ``[0, radius]``.

    Unknowns live on nodes ``r_0 .. r_{M-1}``; ``r_M = radius`` carries the
    Dirichlet value.  ``volumes`` include the sphere area so that
    ``volumes @ f`` approximates ``int_{B} f``.
    """

    cfg: DimensionConfig
    radius: float
    M: int
    beta: float | None = None
    with_potential: bool = True
    r: np.ndarray = field(init=False)
    volumes: np.ndarray = field(init=False)
    diag: np.ndarray = field(init=False)
    off: np.ndarray = field(init=False)

    def __post_init__(self):
        n = self.cfg.n
        r = graded_grid(self.radius, self.M, self.beta)
        mid = 0.5 * (r[1:] + r[:-1])
        edges = np.concatenate([[0.0], mid, [self.radius]])
        omega = self.cfg.omega
        vol = omega * (edges[1:] ** n - edges[:-1] ** n) / n
        flux = omega * mid ** (n - 1) / np.diff(r)
        M = self.M
        diag = np.zeros(M)
        diag += flux[:M]
        diag[1:] += flux[: M - 1]
        self.r = r
        self.volumes = vol[:M]
        self._flux = flux
        # symmetric scaling D^-1/2 K D^-1/2
        self.diag = diag / vol[:M]
        if self.with_potential:
            self.diag = self.diag - potential(r[:M], self.cfg)
        self.off = -flux[: M - 1] / np.sqrt(vol[: M - 1] * vol[1:M])

    @property
    def nodes(self) -> np.ndarray:
        return self.r[: self.M]

    def to_sym(self, values) -> np.ndarray:
        return np.sqrt(self.volumes) * np.asarray(values)[: self.M]

    def from_sym(self, w) -> np.ndarray:
        return np.asarray(w) / np.sqrt(self.volumes)

    def apply(self, values) -> np.ndarray:
        """Discrete ``-L0 f`` at the interior nodes (``f(radius) = 0`` implied)."""
        w = self.to_sym(values)
        out = self.diag * w
        out[:-1] += self.off * w[1:]
        out[1:] += self.off * w[:-1]
        return self.from_sym(out)

    def banded(self, shift: float = 0.0) -> np.ndarray:
        ab = np.zeros((3, self.M))
        ab[0, 1:] = self.off
        ab[1] = self.diag - shift
        ab[2, :-1] = self.off
        return ab

    def lowest(self, k: int = 2) -> np.ndarray:
        return eigh_tridiagonal(self.diag, self.off, eigvals_only=True,
                                select="i", select_range=(0, k - 1))


# --------------------------------------------------------------------------
# Negative eigenpair
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EigenPair:
    """Negative eigenvalue ``mu0`` of ``L0 + mu`` and its positive eigenfunction."""

    mu0: float
    Z: RadialProfile
    decay_rate: float
    gap: float
    mu1: float
    residual: float
    iterations: int

    def to_files(self, directory, stem: str = "Z") -> tuple[Path, Path]:
        directory = Path(directory)
        csv = self.Z.to_csv(directory / f"{stem}.csv")
        side = directory / f"{stem}.json"
        side.write_text(json.dumps({"mu0": self.mu0, "decay_rate": self.decay_rate,
                                    "gap": self.gap, "mu1": self.mu1,
                                    "residual": self.residual}, indent=2, sort_keys=True) + "\n")
        return csv, side


def negative_eigenpair(cfg, R_domain: float = 40.0, M: int = 4000, *, tol: float = 1e-12,
                       min_iter: int = 60, max_iter: int = 500) -> EigenPair:
    """Lowest Dirichlet eigenpair of ``-L0`` on ``B_{R_domain}``.

    The two lowest eigenvalues are bracketed by LAPACK bisection; the
    eigenvector is then refined by inverse iteration with a shift just below
    the lowest one, so convergence to the ground state is guaranteed.  At
    least ``min_iter`` steps are taken: the eigenvalue settles long before the
    exponentially small tail of the eigenvector does.  The
    eigenvalue is reported with the sign convention ``L0 Z + mu0 Z = 0``,
    i.e. ``mu0 < 0``.
    """
    c = _cfg(cfg)
    op = RadialOperator(c, R_domain, M)
    lam = op.lowest(2)
    if lam[0] >= 0:
        raise SpectralError("no negative eigenvalue: enlarge the domain or refine the grid")
    r = op.nodes
    w = op.to_sym((1.0 + r * r) ** (-2.0))
    w /= np.linalg.norm(w)
    ab = op.banded(lam[0] * (1.0 + 1e-3))
    mu = lam[0]
    for it in range(1, max_iter + 1):
        x = solve_banded((1, 1), ab, w)
        # eigenvalue from the inverse step avoids applying the stiff matrix
        mu_new = lam[0] * (1.0 + 1e-3) + float(w @ w) / float(w @ x)
        w = x / np.linalg.norm(x)
        done = it >= min_iter and abs(mu_new - mu) <= tol * abs(mu_new)
        mu = mu_new
        if done:
            break
    # bisection is only accurate to eps * ||S||, hence the loose consistency check
    if abs(lam[0] - mu) > 1e-5 * abs(mu):
        raise SpectralError("inverse iteration converged to a non-ground state")
    gap = (lam[1] - lam[0]) / abs(lam[0])
    if gap <= 1e-3:
        raise SpectralError(f"lowest eigenvalue numerically degenerate (gap {gap:.2e})")
    v = op.from_sym(w)
    if v[0] < 0:
        v = -v
    norm = np.sqrt(np.sum(op.volumes * v * v))
    v = v / norm
    resid = np.max(np.abs(op.apply(v) - mu * v)) / np.max(np.abs(v))
    values = np.concatenate([v, [0.0]])
    Z = RadialProfile(op.r, values, "Z", c.n)
    rate = _decay_rate(op.r, values, c.n, R_domain)
    return EigenPair(mu, Z, rate, float(gap), float(lam[1]), float(resid), it)


def _sym_apply(op: RadialOperator, w):
    out = op.diag * w
    out[:-1] += op.off * w[1:]
    out[1:] += op.off * w[:-1]
    return out


def _decay_rate(r, Z, n, R):
    sel = (r >= 0.5 * R) & (r <= 0.9 * R) & (Z > 0)
    y = np.log(Z[sel]) + 0.5 * (n - 1) * np.log(r[sel])
    slope = np.polyfit(r[sel], y, 1)[0]
    return float(-slope)


# --------------------------------------------------------------------------
# Second kernel solution
# --------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _reduction_of_order(n: int):
    """Exact antiderivative pieces for ``int (1+s^2)^n / (s^(n-1) (1-s^2)^2) ds``.

    Partial fractions isolate the double pole at ``s = 1``; its simple-pole
    partner has a zero residue, so ``F = F_reg + a2 / (1 - s)`` with ``F_reg``
    regular at ``s = 1``.
    """
    s = sp.symbols("s", positive=True)
    G = (1 + s**2) ** n / (s ** (n - 1) * (1 - s**2) ** 2)
    parts = sp.apart(sp.together(G), s)
    a2 = sp.Integer(0)
    a1 = sp.Integer(0)
    rest = []
    for term in sp.Add.make_args(parts):
        num, den = sp.fraction(sp.factor(term))
        if den.has(s - 1) or den.has(1 - s):
            power = sp.degree(den, s)
            lead = sp.simplify(term * (s - 1) ** power)
            if power == 2:
                a2 += lead
            elif power == 1:
                a1 += lead
            else:  # pragma: no cover - structure fixed by the algebra
                raise SpectralError("unexpected pole order in reduction of order")
        else:
            rest.append(term)
    if sp.simplify(a1) != 0:
        raise SpectralError("logarithmic term at the kernel zero; reduction of order is defective")
    G_reg = sp.Add(*rest)
    F_reg = sp.integrate(G_reg, s)
    dF = sp.lambdify(s, G_reg, "numpy")
    F = sp.lambdify(s, F_reg, "numpy")
    return F, dF, float(a2)


def tilde_Z_values(r, cfg):
    """Second radial kernel solution ``Z~`` (``Z~ -> 1`` at infinity, ``~ r^(2-n)`` at 0)."""
    c = _cfg(cfg)
    n = c.n
    F, _, a2 = _reduction_of_order(n)
    r = np.asarray(r, dtype=float)
    kappa = -2.0 / c.alpha_n
    Q = (1.0 - r * r) * F(r) + a2 * (1.0 + r)
    return kappa * _z0_scale(c) * (1.0 + r * r) ** (-n / 2.0) * Q


def tilde_Z_prime(r, cfg):
    c = _cfg(cfg)
    n = c.n
    F, dF, a2 = _reduction_of_order(n)
    r = np.asarray(r, dtype=float)
    kappa = -2.0 / c.alpha_n
    P = 1.0 + r * r
    Q = (1.0 - r * r) * F(r) + a2 * (1.0 + r)
    dQ = -2.0 * r * F(r) + (1.0 - r * r) * dF(r) + a2
    return kappa * _z0_scale(c) * (P ** (-n / 2.0) * dQ - n * r * P ** (-n / 2.0 - 1.0) * Q)


def wronskian_constant(cfg) -> float:
    """``r^(n-1) (Z0 Z~' - Z0' Z~)``, constant by Abel's identity."""
    c = _cfg(cfg)
    return -0.5 * (c.n - 2) ** 2 * c.alpha_n


def tilde_Z(cfg, grid) -> RadialProfile:
    """Second kernel solution sampled on ``grid`` (which must avoid ``r = 0``)."""
    c = _cfg(cfg)
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0):
        raise ValueError("Z~ is singular at the origin; use a grid with r > 0")
    return RadialProfile(grid, tilde_Z_values(grid, c), "Ztilde", c.n, decay_exponent=0.0)


def wronskian_profile(r, cfg):
    """``r^(n-1) (Z0 Z~' - Z0' Z~)`` evaluated pointwise (should be constant)."""
    c = _cfg(cfg)
    r = np.asarray(r, dtype=float)
    return r ** (c.n - 1) * (kernel_Z0(r, c) * tilde_Z_prime(r, c)
                             - kernel_Z0_prime(r, c) * tilde_Z_values(r, c))


# --------------------------------------------------------------------------
# Coercivity of the quadratic form on the Z-orthogonal complement
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Coercivity:
    """Constrained and unconstrained minima of ``Q(phi, phi) / int phi^2`` on ``B_{2R}``."""

    R: float
    gamma_R: float
    constrained_min: float
    unconstrained_min: float
    raw: tuple          # (M, constrained minimum) per resolution

    @property
    def extrapolation_shift(self) -> float:
        """Relative change from the finest raw value to the extrapolated one.

        Large values mean the grid is not yet in the asymptotic regime.
        """
        return abs(self.constrained_min - self.raw[-1][1]) / abs(self.constrained_min)


def constrained_minimum(op: RadialOperator, z_sym, *, tol: float = 1e-10,
                        max_iter: int = 500) -> float:
    """Smallest eigenvalue of the symmetric operator restricted to ``z_sym``-perp.

    The constrained minimum interlaces the two lowest eigenvalues.  It is
    first located by the secular equation ``z^T (S - mu)^-1 z = 0`` on that
    bracket, then polished by projected inverse iteration: each step solves
    two banded systems and removes the ``z`` component through the bordered
    multiplier, and the eigenvalue is read off the inverse step.  This keeps
    the absolute accuracy far below the ``eps * ||S||`` floor of bisection,
    which matters because the target can be as small as ``1e-6``.
    """
    lam0, lam1, lam2 = op.lowest(3)
    z = np.asarray(z_sym, dtype=float)
    z = z / np.linalg.norm(z)

    def secular(mu):
        return float(z @ solve_banded((1, 1), op.banded(mu), z))

    eps = 1e-7 * (lam1 - lam0)
    if secular(lam1 - eps) <= 0:
        estimate = lam1
    elif secular(lam0 + eps) >= 0:
        estimate = lam0
    else:
        estimate = brentq(secular, lam0 + eps, lam1 - eps, xtol=eps, rtol=1e-12)
    shift = estimate - 0.25 * (lam2 - estimate)
    ab = op.banded(shift)
    b = solve_banded((1, 1), ab, z)
    zb = float(z @ b)
    # fixed seed: the start vector only needs a component along the target
    y = np.random.default_rng(0).standard_normal(op.M)
    y -= z * (z @ y)
    y /= np.linalg.norm(y)
    mu = np.inf
    for _ in range(max_iter):
        a = solve_banded((1, 1), ab, y)
        x = a - (float(z @ a) / zb) * b
        mu_new = shift + float(y @ y) / float(y @ x)
        y = x / np.linalg.norm(x)
        if abs(mu_new - mu) <= tol * abs(mu_new - shift):
            return float(mu_new)
        mu = mu_new
    raise SpectralError("projected inverse iteration did not converge")


def coercivity_constant(cfg, R: float, M: int = 8000, *, richardson: bool = True) -> Coercivity:
    """``gamma_R = R^(n-2) min{ Q(phi,phi) : phi radial, phi|_{dB_2R} = 0, |phi|=1, phi perp Z }``.

    The minimum is of size ``R^(2-n)``, comparable with the ``O(h^2)``
    discretisation error, so by default two resolutions ``M`` and ``2M`` are
    combined by Richardson extrapolation (the scheme is second order).
    """
    c = _cfg(cfg)
    raw = []
    unconstrained = None
    for m in ((M, 2 * M) if richardson else (M,)):
        op = RadialOperator(c, 2.0 * R, m)
        _, vec = eigh_tridiagonal(op.diag, op.off, select="i", select_range=(0, 0))
        lam = op.lowest(1)[0]
        unconstrained = lam if unconstrained is None else unconstrained
        raw.append((m, constrained_minimum(op, vec[:, 0])))
        unconstrained = lam
    if richardson:
        cmin = (4.0 * raw[1][1] - raw[0][1]) / 3.0
    else:
        cmin = raw[0][1]
    return Coercivity(float(R), float(R ** (c.n - 2) * cmin), float(cmin), float(unconstrained),
                      tuple(raw))
