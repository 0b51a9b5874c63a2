"""Approximate solutions W1 and W2, parameter paths, cutoffs and the inner time.

Everything is evaluated in the axisymmetric variables ``(x1, rho)`` with
``rho = |(x2, ..., xn)|``. The bubble centre is ``xi = (1 + d) e1`` and its
mirror image across the plane ``x1 = 1`` is ``xi_hat = (1 - d) e1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .bubble import DimensionConfig, _cfg, bubble_U, constant_ell
from .correction import default_correction


# --------------------------------------------------------------------------
# Parameter path
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamPath:
    """Blow-up parameters ``d = d0 + d1`` and ``lam = lam0 + lam1`` on ``[0, T)``.

    ``d0 = T - t`` and ``lam0 = ell (T - t)^(1 + 1/(n-4))``. The corrections
    are cubic interpolants of samples on ``t_samples`` (which must end at
    ``T``), with ``d1(T) = lam1(T) = 0``. Without samples both vanish.
    """

    cfg: DimensionConfig
    T: float
    sigma: float = 0.9
    t_samples: np.ndarray | None = None
    d1_samples: np.ndarray | None = None
    lam1_samples: np.ndarray | None = None
    ell: float = field(default=None)
    _splines: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "cfg", _cfg(self.cfg))
        if not self.T > 0:
            raise ValueError(f"final time must be positive, got {self.T}")
        if not 0.5 < self.sigma < 1.0:
            raise ValueError(f"sigma must lie in (1/2, 1), got {self.sigma}")
        if self.ell is None:
            object.__setattr__(self, "ell", constant_ell(self.cfg))
        if self.t_samples is None:
            object.__setattr__(self, "_splines", None)
            return
        t = np.asarray(self.t_samples, dtype=float)
        d1 = np.zeros_like(t) if self.d1_samples is None else np.asarray(self.d1_samples, float)
        l1 = np.zeros_like(t) if self.lam1_samples is None else np.asarray(self.lam1_samples, float)
        if t.shape != d1.shape or t.shape != l1.shape or t.ndim != 1:
            raise ValueError("samples must be 1-D arrays of equal length")
        if not (abs(t[0]) <= 1e-14 * self.T and abs(t[-1] - self.T) <= 1e-14 * self.T):
            raise ValueError("t_samples must span [0, T]")
        if abs(d1[-1]) > 1e-14 or abs(l1[-1]) > 1e-14:
            raise ValueError("corrections must vanish at t = T")
        object.__setattr__(self, "_splines", (CubicSpline(t, d1), CubicSpline(t, l1)))
        probe = np.linspace(0.0, self.T, 2001)[:-1]
        if np.any(self.d(probe) <= 0) or np.any(self.lam(probe) <= 0):
            raise ValueError("d(t) and lam(t) must stay positive on [0, T)")

    @classmethod
    def from_rates(cls, cfg, T, t, d1dot, lam1dot, sigma=0.9):
        """Build a path whose corrections are ``-int_t^T`` of the given rates."""
        t = np.asarray(t, dtype=float)
        vals = []
        for rate in (d1dot, lam1dot):
            anti = CubicSpline(t, np.asarray(rate, dtype=float)).antiderivative()
            vals.append(anti(t) - anti(T))
        return cls(cfg, T, sigma, t, vals[0], vals[1])

    # -- leading order ----------------------------------------------------
    def d0(self, t):
        return self.T - np.asarray(t, dtype=float)

    def lam0(self, t):
        return self.ell * self.d0(t) ** self.cfg.lam0_exponent

    def lam0dot(self, t):
        k = self.cfg.lam0_exponent
        return -k * self.ell * self.d0(t) ** (k - 1.0)

    # -- corrections --------------------------------------------------------
    def _corr(self, t, which, nu=0):
        t = np.asarray(t, dtype=float)
        if self._splines is None:
            return np.zeros_like(t)
        return self._splines[which](t, nu)

    def d1(self, t):
        return self._corr(t, 0)

    def lam1(self, t):
        return self._corr(t, 1)

    def d1dot(self, t):
        return self._corr(t, 0, 1)

    def lam1dot(self, t):
        return self._corr(t, 1, 1)

    def d(self, t):
        return self.d0(t) + self.d1(t)

    def lam(self, t):
        return self.lam0(t) + self.lam1(t)

    def ddot(self, t):
        return -1.0 + self.d1dot(t)

    def lamdot(self, t):
        return self.lam0dot(t) + self.lam1dot(t)

    def ratio(self, t):
        """``lam0 / d0``."""
        return self.lam0(t) / self.d0(t)

    @property
    def correction_weight(self) -> float:
        return (1.0 + self.sigma) / (self.cfg.n - 4)

    def correction_bound(self) -> float:
        """``||d1'||_delta + ||lam1'||_delta`` on the sample grid, ``delta = (1+sigma)/(n-4)``."""
        if self._splines is None:
            return 0.0
        t = np.asarray(self.t_samples, dtype=float)[:-1]
        w = self.d0(t) ** (-self.correction_weight)
        return float(np.max(np.abs(self.d1dot(t)) * w) + np.max(np.abs(self.lam1dot(t)) * w))

    def to_csv(self, path, t=None) -> Path:
        """Write ``t, d0, lam0, d1, lam1, d1dot, lam1dot`` columns."""
        if t is None:
            t = self.T * (1.0 - np.geomspace(1.0, 1e-4, 200))
        t = np.asarray(t, dtype=float)
        cols = [t, self.d0(t), self.lam0(t), self.d1(t), self.lam1(t),
                self.d1dot(t), self.lam1dot(t)]
        path = Path(path)
        with path.open("w") as fh:
            fh.write("t,d0,lam0,d1,lam1,d1dot,lam1dot\n")
            for row in zip(*cols):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        return path


# --------------------------------------------------------------------------
# Geometry
# --------------------------------------------------------------------------

def _dyadic_floor(x: float) -> float:
    return 2.0 ** math.floor(math.log2(x))


@dataclass(frozen=True)
class GeometryConfig:
    """Axisymmetric cylinder ``{m < x1 < m_out, |xbar| < rho_max}`` and cutoff scales.

    The cutoff ``eta(|x - xi| / (b d0))`` is supported in the ball of radius
    ``2 b d0`` around ``xi``. ``b`` defaults to the largest power of two that
    keeps this ball at most half-way to the nearest wall, for every
    ``t in [0, T)`` along the unperturbed path.
    """

    T: float
    m: float = 1.0
    m_out: float = 2.5
    rho_max: float = 1.5
    R: float = 10.0
    Rprime: float | None = None
    b: float | None = None

    def __post_init__(self):
        if self.m != 1.0:
            raise ValueError("the reflection plane must be x1 = 1")
        if self.Rprime is None:
            object.__setattr__(self, "Rprime", 2.0 * self.R)
        if not self.Rprime > self.R > 0:
            raise ValueError(f"need Rprime > R > 0, got R={self.R}, Rprime={self.Rprime}")
        if self.b is None:
            far = min(self.m_out - self.m, self.rho_max)
            object.__setattr__(self, "b", _dyadic_floor(min(far / (4.0 * self.T), 0.25)))
        if self.T >= self.T_max:
            raise ValueError(f"T = {self.T} exceeds T_max = {self.T_max} for b = {self.b}")

    @property
    def T_max(self) -> float:
        """Largest final time for which ``2 b d0 < dist(xi, boundary)`` with ``d = d0``."""
        if self.b >= 0.5:
            return 0.0
        return min((self.m_out - self.m) / (2.0 * self.b + 1.0), self.rho_max / (2.0 * self.b))

    def wall_distance(self, xi1):
        xi1 = np.asarray(xi1, dtype=float)
        return np.minimum.reduce([xi1 - self.m, self.m_out - xi1, np.full_like(xi1, self.rho_max)])

    def check_path(self, path: ParamPath, samples: int = 2001) -> bool:
        """Whether the cutoff support stays inside the domain along ``path``."""
        t = np.linspace(0.0, path.T, samples)[:-1]
        return bool(np.all(2.0 * self.b * path.d0(t) < self.wall_distance(1.0 + path.d(t))))

    def contains(self, x1, rho):
        x1, rho = np.asarray(x1), np.asarray(rho)
        return (x1 >= self.m) & (x1 <= self.m_out) & (rho <= self.rho_max)

    def boundary_points(self, count: int = 64):
        """Sample points on the three walls ``x1 = m``, ``x1 = m_out`` and ``rho = rho_max``."""
        rho = np.linspace(0.0, self.rho_max, count)
        x1 = np.linspace(self.m, self.m_out, count)
        px = np.concatenate([np.full(count, self.m), np.full(count, self.m_out), x1])
        pr = np.concatenate([rho, rho, np.full(count, self.rho_max)])
        return px, pr

    def descriptor(self) -> dict:
        return {"m": self.m, "m_out": self.m_out, "rho_max": self.rho_max,
                "b": self.b, "R": self.R, "Rprime": self.Rprime}

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.descriptor(), indent=2, sort_keys=True))
        return path


# --------------------------------------------------------------------------
# Base cutoff
# --------------------------------------------------------------------------

def eta(s, nu: int = 0):
    """C^2 bump equal to 1 on ``[0, 1]`` and 0 on ``[2, inf)``; ``nu``-th derivative."""
    s = np.asarray(s, dtype=float)
    u = np.clip(s - 1.0, 0.0, 1.0)
    inside = (s > 1.0) & (s < 2.0)
    if nu == 0:
        return np.where(s <= 1.0, 1.0, np.where(inside, 1.0 - u**3 * (10.0 - 15.0 * u + 6.0 * u * u), 0.0))
    if nu == 1:
        return np.where(inside, -30.0 * u * u * (1.0 - u) ** 2, 0.0)
    if nu == 2:
        return np.where(inside, -60.0 * u * (1.0 - u) * (1.0 - 2.0 * u), 0.0)
    raise ValueError("only derivatives up to order 2 are available")


ETA_PRIME_MAX = 1.875  # max |eta'|, attained at s = 1.5


# --------------------------------------------------------------------------
# Evaluation helpers
# --------------------------------------------------------------------------

def axi_coords(x):
    """Reduce points in ``R^n`` (last axis) to ``(x1, rho)``."""
    x = np.asarray(x, dtype=float)
    return x[..., 0], np.linalg.norm(x[..., 1:], axis=-1)


def centers(path: ParamPath, t):
    """First coordinates of ``xi = (1 + d) e1`` and of its mirror ``(1 - d) e1``."""
    d = path.d(t)
    return 1.0 + d, 1.0 - d


@dataclass(frozen=True)
class Frame:
    """Scaled coordinates around both centres at one time."""

    lam: float
    y1: np.ndarray
    r: np.ndarray
    yh1: np.ndarray
    rh: np.ndarray


def frame(x1, rho, t, path: ParamPath) -> Frame:
    lam = float(path.lam(t))
    d = float(path.d(t))
    # offsets from the reflection plane keep the pair exactly antisymmetric
    s = np.asarray(x1, dtype=float) - 1.0
    rho = np.asarray(rho, dtype=float)
    y1 = (s - d) / lam
    yh1 = (s + d) / lam
    yp = rho / lam
    return Frame(lam, y1, np.hypot(y1, yp), yh1, np.hypot(yh1, yp))


def eval_W0(x1, rho, t, path: ParamPath, mirror: bool = False):
    f = frame(x1, rho, t, path)
    r = f.rh if mirror else f.r
    return f.lam ** (-(path.cfg.n - 2) / 2.0) * bubble_U(r, path.cfg)


def eval_W1(x1, rho, t, path: ParamPath):
    """``lam^{-(n-2)/2} [U((x - xi)/lam) - U((x - xi_hat)/lam)]``."""
    f = frame(x1, rho, t, path)
    c = path.cfg
    return f.lam ** (-(c.n - 2) / 2.0) * (bubble_U(f.r, c) - bubble_U(f.rh, c))


def correction_pair(x1, rho, t, path: ParamPath, geom: GeometryConfig):
    """``(w - w_bar) eta(|x - xi| / (b d0))``, the localised correction pair ``W``."""
    f = frame(x1, rho, t, path)
    h = default_correction(path.cfg)
    s = f.r * f.lam / (geom.b * path.d0(t))
    return f.lam ** (-(path.cfg.n - 2) / 2.0) * (h(f.r) - h(f.rh)) * eta(s)


def eval_W2(x1, rho, t, path: ParamPath, geom: GeometryConfig):
    """``W1 - (lam0/d0)^(n-2) W``."""
    q = path.ratio(t) ** (path.cfg.n - 2)
    return eval_W1(x1, rho, t, path) - q * correction_pair(x1, rho, t, path, geom)


# --------------------------------------------------------------------------
# Inner time
# --------------------------------------------------------------------------

def tau_of_t(path: ParamPath, t):
    """``tau(t) = int lam0^{-2}``, normalised so ``tau -> inf`` as ``t -> T``.

    The exact antiderivative is ``(n-4)/((n-2) ell^2) (T-t)^{-(n-2)/(n-4)}``.
    """
    n = path.cfg.n
    return (n - 4) / ((n - 2) * path.ell**2) * path.d0(t) ** (-(n - 2) / (n - 4))


def dtau_dt(path: ParamPath, t):
    return path.lam0(t) ** -2.0


def t_of_tau(path: ParamPath, tau):
    n = path.cfg.n
    tau = np.asarray(tau, dtype=float)
    return path.T - ((n - 2) * path.ell**2 * tau / (n - 4)) ** (-(n - 4) / (n - 2))


# --------------------------------------------------------------------------
# Moving cutoff
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CutoffValues:
    """Value and derivatives of ``eta(|x - xi| / (scale))`` in ``R^n``.

    ``grad_x1`` and ``grad_rho`` are the components along ``e1`` and along
    the transverse unit vector; ``laplacian`` is the ``n``-dimensional one.
    """

    value: np.ndarray
    grad_x1: np.ndarray
    grad_rho: np.ndarray
    laplacian: np.ndarray
    dt: np.ndarray


def radial_cutoff(x1, rho, xi1, scale, xidot, scaledot, n) -> CutoffValues:
    """Cutoff ``eta(|x - xi|/scale)`` for a centre moving with speed ``xidot`` along ``e1``."""
    x1 = np.asarray(x1, dtype=float)
    rho = np.asarray(rho, dtype=float)
    dx = x1 - xi1
    dist = np.hypot(dx, rho)
    s = dist / scale
    e0, e1, e2 = eta(s), eta(s, 1), eta(s, 2)
    safe = np.where(dist > 0, dist, 1.0)
    # e1 vanishes on s < 1, so the 0/0 at the centre never contributes
    g = e1 / scale
    grad_x1 = g * dx / safe
    grad_rho = g * rho / safe
    lap = e2 / scale**2 + e1 * (n - 1) / (scale * safe)
    ds_dt = -dx * xidot / (safe * scale) - s * scaledot / scale
    return CutoffValues(e0, grad_x1, grad_rho, lap, e1 * ds_dt)


def cutoff_etaR(x1, rho, t, path: ParamPath, geom: GeometryConfig, R: float | None = None):
    """``eta_R = eta(|x - xi| / (R lam0))`` with its gradient, Laplacian and time derivative."""
    R = geom.R if R is None else R
    xi, _ = centers(path, t)
    return radial_cutoff(x1, rho, float(xi), R * float(path.lam0(t)), float(path.ddot(t)),
                         R * float(path.lam0dot(t)), path.cfg.n)


def cutoff_b(x1, rho, t, path: ParamPath, geom: GeometryConfig):
    """``eta(|x - xi| / (b d0))`` with derivatives (``d0' = -1``)."""
    xi, _ = centers(path, t)
    return radial_cutoff(x1, rho, float(xi), geom.b * float(path.d0(t)), float(path.ddot(t)),
                         -geom.b, path.cfg.n)
