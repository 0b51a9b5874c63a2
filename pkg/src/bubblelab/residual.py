"""The error operator, its term-by-term decomposition and the weighted norms.

For a space-time field ``u(x1, rho, t)`` the error is

    S[u] = -u_t + Delta u + (1/x1) d_{x1} u + u^p,

with ``Delta = d_{x1}^2 + d_rho^2 + (n-2)/rho d_rho`` in the axisymmetric
variables. ``apply_S`` evaluates it by finite differences and serves as the
independent check of the analytic decomposition in :func:`error_terms_W1`
and :func:`error_terms_W2`.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._quadrature import ball_rule
from .ansatz import (GeometryConfig, ParamPath, centers, cutoff_b, cutoff_etaR, eta, eval_W2,
                     frame, tau_of_t)
from .bubble import (DimensionConfig, _cfg, bubble_U, bubble_U_pm1, kernel_Z0, kernel_Z1_axi,
                     pi_profile)
from .correction import default_correction


# --------------------------------------------------------------------------
# Powers
# --------------------------------------------------------------------------

def signed_power(u, q: float):
    """``|u|^(q-1) u``; a plain power when ``q`` is an integer."""
    u = np.asarray(u, dtype=float)
    if float(q).is_integer():
        return u ** int(q)
    return np.sign(u) * np.abs(u) ** q


def binomial_remainder(s, q: float):
    """``(1 - s)^q - 1 + q s`` without cancellation for small ``|s|``."""
    s = np.asarray(s, dtype=float)
    out = signed_power(1.0 - s, q) - 1.0 + q * s
    small = np.abs(s) < 0.25
    if np.any(small):
        ss = -s[small] if s.ndim else -s
        coef = q
        acc = np.zeros_like(ss)
        term = ss.copy()
        for k in range(2, 80):
            coef *= (q - k + 1) / k
            term = term * ss
            acc += coef * term
            if coef == 0.0:
                break
        if s.ndim:
            out[small] = acc
        else:
            out = acc
    return out


def power_ratio_minus_one(s, q: float):
    """``(1 - s)^q - 1`` for ``s < 1``, accurate for small ``s``."""
    s = np.asarray(s, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.expm1(q * np.log1p(-s))


# --------------------------------------------------------------------------
# Finite-difference error operator
# --------------------------------------------------------------------------

_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_OFFSETS = np.arange(-2, 3)


def apply_S(u, x1, rho, t, cfg, *, h=1e-3, dt=1e-6, reaction=True):
    """Pointwise ``S[u]`` by fourth-order central differences.

    Parameters
    ----------
    u : callable
        ``u(x1, rho, t)``, vectorised in the space arguments and even in ``rho``.
    x1, rho : array_like
        Evaluation points; ``x1 > 0`` and ``rho >= 0``.
    h, dt : float or array_like
        Space and time steps. Stencils crossing the axis use the even
        extension in ``rho``; the differencing error of ``d_rho u`` is then
        odd in ``rho`` and the ``1/rho`` term needs no step reduction.

    Returns
    -------
    S, scale : ndarray
        The residual and the sum of the magnitudes of its four terms, the
        natural yardstick for relative comparisons.
    """
    c = _cfg(cfg)
    x1, rho = np.broadcast_arrays(np.asarray(x1, float), np.asarray(rho, float))
    if np.any(x1 <= 0):
        raise ValueError("S is only defined for x1 > 0")
    h = np.broadcast_to(np.asarray(h, dtype=float), x1.shape)
    dt = np.broadcast_to(np.asarray(dt, dtype=float), x1.shape)

    def stencil(weights, shift_x=None, shift_r=None, shift_t=None):
        acc = np.zeros(x1.shape)
        for k, wk in zip(_OFFSETS, weights):
            if wk == 0.0:
                continue
            xx = x1 + (k * shift_x if shift_x is not None else 0.0)
            rr = rho + (k * shift_r if shift_r is not None else 0.0)
            if shift_t is None:
                acc += wk * u(xx, np.abs(rr), t)
            else:
                acc += wk * np.array([u(xi, ri, t + k * si) for xi, ri, si in
                                      zip(np.ravel(xx), np.ravel(rr), np.ravel(shift_t))]
                                     ).reshape(x1.shape)
        return acc

    u0 = u(x1, rho, t)
    d1 = stencil(_D1, shift_x=h) / h
    d11 = stencil(_D2, shift_x=h) / h**2
    drr = stencil(_D2, shift_r=h) / h**2
    dr = stencil(_D1, shift_r=h) / h
    safe = np.where(rho > 0, rho, 1.0)
    transverse = np.where(rho > 0, drr + (c.n - 2) * dr / safe, (c.n - 1) * drr)
    ut = stencil(_D1, shift_t=dt) / dt
    lap = d11 + transverse
    react = signed_power(u0, c.p) if reaction else 0.0
    S = -ut + lap + d1 / x1 + react
    scale = np.abs(ut) + np.abs(lap) + np.abs(d1 / x1) + np.abs(react)
    return S, scale


def ansatz_field(path: ParamPath, geom: GeometryConfig):
    """``W2`` as a field evaluator ``u(x1, rho, t)``."""
    return lambda x1, rho, t: eval_W2(x1, rho, t, path, geom)


def ansatz_steps(x1, rho, t, path: ParamPath, geom: GeometryConfig, rel: float = 5e-3):
    """Differencing steps matched to the local length and time scales of ``W2``."""
    f = frame(x1, rho, t, path)
    dist = f.lam * np.minimum(f.r, f.rh)
    length = np.minimum(np.maximum(dist, f.lam), geom.b * path.d0(t))
    return rel * length, rel * np.minimum(length, path.d0(t))


# --------------------------------------------------------------------------
# Analytic decomposition
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorTerms:
    """Pointwise constituents of ``S[W2]``.

    ``S[W1] = e1 + e2 + e3 + e4`` and
    ``S[W2] = S[W1] - correction + e5 + e6``, where ``correction`` is
    ``(lam0/d0)^(n-2) [Delta w + p W0^(p-1) w] eta(|x - xi|/(b d0))``.
    """

    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray
    e4: np.ndarray
    correction: np.ndarray
    e5: np.ndarray
    e6: np.ndarray

    @property
    def S_W1(self):
        return self.e1 + self.e2 + self.e3 + self.e4

    @property
    def S_W2(self):
        return self.S_W1 - self.correction + self.e5 + self.e6

    @property
    def E2(self):
        """Principal part ``e1 + e2 - correction``."""
        return self.e1 + self.e2 - self.correction


def error_terms_W1(x1, rho, t, path: ParamPath):
    """``(e1, e2, e3, e4)`` with ``S[W1] = e1 + e2 + e3 + e4``."""
    c = path.cfg
    n, p = c.n, c.p
    f = frame(x1, rho, t, path)
    lam = f.lam
    x1 = np.asarray(x1, dtype=float)
    yp = np.asarray(rho, dtype=float) / lam
    ddot, lamdot = float(path.ddot(t)), float(path.lamdot(t))
    amp = lam ** (-n / 2.0)
    W0 = lam ** (-(n - 2) / 2.0) * bubble_U(f.r, c)
    Wb = lam ** (-(n - 2) / 2.0) * bubble_U(f.rh, c)
    W0pm1 = lam**-2 * bubble_U_pm1(f.r, c)
    e1 = amp * (ddot + 1.0 / x1) * kernel_Z1_axi(f.y1, yp, c)
    e2 = amp * lamdot * kernel_Z0(f.r, c) - p * W0pm1 * Wb
    e3 = amp * ((ddot - 1.0 / x1) * kernel_Z1_axi(f.yh1, yp, c) - lamdot * kernel_Z0(f.rh, c))
    s = Wb / W0
    e4 = signed_power(Wb, p) + W0**p * binomial_remainder(s, p)
    return e1, e2, e3, e4


def error_terms_W2(x1, rho, t, path: ParamPath, geom: GeometryConfig) -> ErrorTerms:
    """All constituents of ``S[W2]``, including ``e5`` and ``e6`` from the correction pair."""
    c = path.cfg
    n, p = c.n, c.p
    k = (n - 2) / 2.0
    x1 = np.asarray(x1, dtype=float)
    rho = np.asarray(rho, dtype=float)
    f = frame(x1, rho, t, path)
    lam = f.lam
    yp = rho / lam
    ddot, lamdot = float(path.ddot(t)), float(path.lamdot(t))
    q = float(path.ratio(t)) ** (n - 2)
    qdot = (n - 2) * q * (float(path.lam0dot(t) / path.lam0(t)) + 1.0 / float(path.d0(t)))
    hs = default_correction(c)
    e1, e2, e3, e4 = error_terms_W1(x1, rho, t, path)

    h, dh = hs.value_and_derivative(f.r)
    hb, dhb = hs.value_and_derivative(f.rh)
    r_safe = np.where(f.r > 0, f.r, 1.0)
    rh_safe = np.where(f.rh > 0, f.rh, 1.0)
    ua, ub = f.y1 / r_safe, f.yh1 / rh_safe           # direction cosines along e1
    va, vb = yp / r_safe, yp / rh_safe                # along the transverse unit vector

    scale = lam ** (-k)
    w, wb = scale * h, scale * hb
    # gradients of w and w_bar in (x1, rho)
    g = lam ** (-k - 1.0)
    w1, wr = g * dh * ua, g * dh * va
    wb1, wbr = g * dhb * ub, g * dhb * vb
    # time derivatives at fixed x
    amp = lam ** (-n / 2.0)
    wt = -amp * (lamdot * (k * h + f.r * dh) + ddot * dh * ua)
    wbt = -amp * (lamdot * (k * hb + f.rh * dhb) - ddot * dhb * ub)

    cb = cutoff_b(x1, rho, t, path, geom)
    diff = w - wb
    W = diff * cb.value
    Wt = (wt - wbt) * cb.value + diff * cb.dt
    W_x1 = (w1 - wb1) * cb.value + diff * cb.grad_x1

    lam_inner = lam ** (-(n + 2) / 2.0)
    correction = q * lam_inner * pi_profile(f.r, c) * cb.value
    e5 = q * Wt

    Upm1, Upm1_b = bubble_U_pm1(f.r, c), bubble_U_pm1(f.rh, c)
    mirror = lam_inner * (pi_profile(f.rh, c) + p * (Upm1 - Upm1_b) * hb) * cb.value
    cross = 2.0 * ((w1 - wb1) * cb.grad_x1 + (wr - wbr) * cb.grad_rho) + diff * cb.laplacian

    W0 = lam ** (-k) * bubble_U(f.r, c)
    Wbar = lam ** (-k) * bubble_U(f.rh, c)
    W1 = W0 - Wbar
    # (W1 - qW)^p - W1^p + p q W0^(p-1) W, split to avoid cancellation
    pos = W1 > 0
    W1_safe = np.where(pos, W1, 1.0)
    s1 = q * W / W1_safe
    nonlin_stable = W1_safe**p * binomial_remainder(s1, p) \
        - p * q * W * W0 ** (p - 1) * power_ratio_minus_one(Wbar / W0, p - 1)
    nonlin_direct = signed_power(W1 - q * W, p) - signed_power(W1, p) \
        + p * q * W0 ** (p - 1) * W
    nonlin = np.where(pos, nonlin_stable, nonlin_direct)

    e6 = q * mirror - q * cross + qdot * W - q * W_x1 / x1 + nonlin
    return ErrorTerms(e1, e2, e3, e4, correction, e5, e6)


def residual_W2(x1, rho, t, path: ParamPath, geom: GeometryConfig):
    """Analytic ``S[W2]``."""
    return error_terms_W2(x1, rho, t, path, geom).S_W2


def E2_bar(x1, rho, t, path: ParamPath, geom: GeometryConfig):
    """``S[W2] - E2 eta_R``: the error away from the concentration point plus lower order."""
    terms = error_terms_W2(x1, rho, t, path, geom)
    etaR = cutoff_etaR(x1, rho, t, path, geom).value
    return terms.E2 * (1.0 - etaR) + terms.e3 + terms.e4 + terms.e5 + terms.e6


# --------------------------------------------------------------------------
# Inner expansion
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class InnerExpansion:
    E2_lambda: np.ndarray
    E2_d: np.ndarray
    E_remainder: np.ndarray


def inner_expansion_E2(y1, yperp, t, path: ParamPath, geom: GeometryConfig, *,
                       delta: float = 0.1, q1=None) -> InnerExpansion:
    """Structured expansion of ``lam^((n+2)/2) S[W2](xi + lam y)`` in the inner region.

    ``E2_lambda`` and ``E2_d`` are the explicit leading terms; ``q1`` is a
    caller-supplied model of the generic correction factor (default zero).
    ``E_remainder`` is whatever is left of the exact analytic residual.
    """
    c = path.cfg
    n, p, a = c.n, c.p, c.alpha_n
    y1 = np.asarray(y1, dtype=float)
    yperp = np.asarray(yperp, dtype=float)
    lam, lam0 = float(path.lam(t)), float(path.lam0(t))
    d, d0 = float(path.d(t)), float(path.d0(t))
    r = np.hypot(y1, yperp)
    if np.any(lam * r >= delta * d):
        raise ValueError("points lie outside the inner region |x - xi| < delta d")
    lam1, d1 = float(path.lam1(t)), float(path.d1(t))
    lam1dot, d1dot = float(path.lam1dot(t)), float(path.d1dot(t))
    lam0dot = float(path.lam0dot(t))
    q = (lam0 / d0) ** (n - 2)
    q1v = 0.0 if q1 is None else q1(lam1 / lam0, d1 / d0)
    hs = default_correction(c)
    h, dh = hs.value_and_derivative(r)
    r_safe = np.where(r > 0, r, 1.0)
    pi0 = 0.5 * (n - 2) * h + r * dh
    Upm1 = bubble_U_pm1(r, c)

    mix = lam * lam1dot + lam0dot * lam1
    E_lam = mix * kernel_Z0(r, c) - mix * q * pi0 \
        - p * (n - 2) * a / 2.0 ** (n - 2) * q * (lam1 / lam0 - d1 / d0) * (1.0 + q1v) * Upm1
    E_d = lam * (d1dot - (d + lam * y1) / (1.0 + d + lam * y1)) * kernel_Z1_axi(y1, yperp, c) \
        - lam * d1dot * q * dh * y1 / r_safe \
        + p * (n - 2) * a / 2.0 ** (n - 1) * (lam / d) ** (n - 1) * Upm1 * y1
    xi, _ = centers(path, t)
    full = lam ** ((n + 2) / 2.0) * residual_W2(xi + lam * y1, lam * yperp, t, path, geom)
    return InnerExpansion(E_lam, E_d, full - E_lam - E_d)


@dataclass(frozen=True)
class InnerPairing:
    """Pairing ``int_{B_2R} lam^((n+2)/2) S[W2](xi + lam y) Z0(y) dy`` and its constituents."""

    total: float
    constituents: dict

    @property
    def largest(self) -> float:
        return max(abs(v) for v in self.constituents.values())

    @property
    def cancellation(self) -> float:
        """Largest constituent divided by the total."""
        return self.largest / abs(self.total)


def inner_pairing_Z0(t, path: ParamPath, geom: GeometryConfig, R: float | None = None,
                     **rule) -> InnerPairing:
    """Mode-0 pairing of the scaled residual over ``B(0, 2R)``."""
    c = path.cfg
    R = geom.R if R is None else R
    y1, yp, wts = ball_rule(c.n, 2.0 * R, **rule)
    lam = float(path.lam(t))
    if 2.0 * R * lam >= float(path.d(t)):
        raise ValueError("the ball B(xi, 2 R lam) crosses the reflection plane")
    xi, _ = centers(path, t)
    terms = error_terms_W2(xi + lam * y1, lam * yp, t, path, geom)
    weight = wts * lam ** ((c.n + 2) / 2.0) * kernel_Z0(np.hypot(y1, yp), c)
    names = ("e1", "e2", "e3", "e4", "e5", "e6")
    parts = {name: float(np.sum(weight * getattr(terms, name))) for name in names}
    parts["correction"] = -float(np.sum(weight * terms.correction))
    # split e2 into its scaling and mirror-interaction pieces
    lamdot = float(path.lamdot(t))
    Z0 = kernel_Z0(np.hypot(y1, yp), c)
    parts["e2_scaling"] = float(np.sum(wts * lam * lamdot * Z0 * Z0))
    parts["e2_mirror"] = parts.pop("e2") - parts["e2_scaling"]
    return InnerPairing(float(sum(parts.values())), parts)


# --------------------------------------------------------------------------
# Nonlinearity and potential
# --------------------------------------------------------------------------

def nonlinear_N(W2val, wval, cfg):
    """``(W2 + w)^p - W2^p - p W2^(p-1) w``.

    For integer ``p`` the binomial expansion is used, so ``N = w^2`` exactly
    when ``p = 2``. For fractional ``p`` both ``W2`` and ``W2 + w`` must be
    non-negative.
    """
    c = _cfg(cfg)
    p = c.p
    W, w = np.broadcast_arrays(np.asarray(W2val, float), np.asarray(wval, float))
    if float(p).is_integer():
        ip = int(p)
        out = np.zeros(W.shape)
        coef = 1.0
        for j in range(ip + 1):
            if j >= 2:
                out = out + coef * W ** (ip - j) * w**j
            coef = coef * (ip - j) / (j + 1)
        return out
    if np.any(W < 0) or np.any(W + w < 0):
        raise ValueError("negative base with fractional exponent")
    pos = W > 0
    Ws = np.where(pos, W, 1.0)
    return np.where(pos, Ws**p * binomial_remainder(-w / Ws, p), np.abs(w) ** p)


def potential_parts(x1, rho, t, path: ParamPath, geom: GeometryConfig):
    """The three terms of the outer potential ``V``, in order."""
    c = path.cfg
    p = c.p
    lam0 = float(path.lam0(t))
    xi, _ = centers(path, t)
    x1 = np.asarray(x1, dtype=float)
    rho = np.asarray(rho, dtype=float)
    dist = np.hypot(x1 - xi, rho)
    inner = lam0**-2 * bubble_U_pm1(dist / lam0, c)       # (lam0^{-k} U(./lam0))^(p-1)
    etaR = eta(dist / (geom.R * lam0))
    etaRp = eta(dist / (geom.Rprime * lam0))
    W2p = signed_power(eval_W2(x1, rho, t, path, geom), p - 1)
    return (p * inner * etaRp * (1.0 - etaR), p * (W2p - inner) * etaRp,
            p * W2p * (1.0 - etaRp))


def potential_V(x1, rho, t, path: ParamPath, geom: GeometryConfig):
    """Three-term potential of the outer problem."""
    a, b, c = potential_parts(x1, rho, t, path, geom)
    return a + b + c


# --------------------------------------------------------------------------
# Norms
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NormSpec:
    """Exponents of the weighted norms."""

    n: int = 6
    alpha: float = 0.1
    sigma: float = 0.9
    a: float = 0.3

    def __post_init__(self):
        c = DimensionConfig(self.n)
        if not 0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 1/2)")
        if not self.alpha < self.a < 1:
            raise ValueError("a must lie in (alpha, 1)")
        if not 0.5 < self.sigma < 1:
            raise ValueError("sigma must lie in (1/2, 1)")
        if self.beta <= 0 or self.beta - self.alpha / (c.n - 4) <= 0:
            raise ValueError("beta must exceed alpha/(n-4) > 0")

    @property
    def nu(self) -> float:
        return (self.n - 2 + self.sigma) / (self.n - 2)

    @property
    def beta(self) -> float:
        n = self.n
        return (n - 2) / 2.0 - (n - 2 + 2 * self.sigma) / (2.0 * (n - 4))


@dataclass(frozen=True)
class Lattice:
    """Sampling lattice for the space-time sup norms.

    Radii in the scaled variable ``|y|`` (zero plus log-spaced nodes up to
    ``4R``), polar angles measured from ``e1``, and times log-spaced towards
    ``T`` through ``T - t``.
    """

    R: float = 10.0
    radial: int = 64
    angular: int = 9
    times: int = 32
    r_min: float = 1e-2
    gap_min: float = 1e-3

    def radii(self):
        return np.concatenate([[0.0], np.geomspace(self.r_min, 4.0 * self.R, self.radial - 1)])

    def angles(self):
        return np.linspace(0.0, np.pi, self.angular)

    def time_points(self, T):
        return T - T * np.geomspace(1.0, self.gap_min, self.times)

    def describe(self, T=None) -> dict:
        out = asdict(self)
        out["y_max"] = 4.0 * self.R
        if T is not None:
            out["T"] = T
        return out


@dataclass(frozen=True)
class NormResult:
    value: float
    argmax: dict
    samples: int
    lattice: dict = field(default_factory=dict)

    def __float__(self) -> float:
        return self.value


def _lattice_sup(f, weight_fn, path: ParamPath, lattice: Lattice, geom: GeometryConfig | None):
    rad, ang = lattice.radii(), lattice.angles()
    rr, aa = np.meshgrid(rad, ang, indexing="ij")
    y1, yp, r = rr * np.cos(aa), rr * np.sin(aa), rr
    best, arg, count = 0.0, {}, 0
    for t in lattice.time_points(path.T):
        lam = float(path.lam(t))
        xi, _ = centers(path, t)
        x1, rho = xi + lam * y1, lam * yp
        mask = np.ones(x1.shape, bool) if geom is None else geom.contains(x1, rho) & (x1 > geom.m)
        if not np.any(mask):
            continue
        vals = np.asarray(f(x1[mask], rho[mask], t), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("non-finite samples in norm evaluation")
        ratio = np.abs(vals) * lam ** ((path.cfg.n - 2) / 2.0) / weight_fn(r[mask], lam, t)
        count += ratio.size
        i = int(np.argmax(ratio))
        if ratio[i] > best:
            best = float(ratio[i])
            arg = {"t": float(t), "y1": float(y1[mask][i]), "yperp": float(yp[mask][i])}
    return NormResult(best, arg, count, lattice.describe(path.T))


def _q_sigma(path: ParamPath, spec: NormSpec, t):
    return float(path.ratio(t)) ** (path.cfg.n - 2 + spec.sigma)


def norm_starstar(f, path: ParamPath, spec: NormSpec, lattice: Lattice | None = None,
                  geom: GeometryConfig | None = None) -> NormResult:
    """Lattice sup of ``lam^((n-2)/2)|f| / [(lam0/d0)^(n-2+sigma) lam^-2 / (1 + |y|^(2+alpha))]``."""
    lattice = lattice or Lattice()
    return _lattice_sup(f, lambda r, lam, t: _q_sigma(path, spec, t) * lam**-2
                        / (1.0 + r ** (2.0 + spec.alpha)), path, lattice, geom)


def _outer_tail(path, spec, lam, t):
    return lam**spec.alpha / float(path.d0(t)) ** (spec.alpha / 2.0)


def norm_a(f, path: ParamPath, spec: NormSpec, lattice: Lattice | None = None,
           geom: GeometryConfig | None = None) -> NormResult:
    lattice = lattice or Lattice()
    return _lattice_sup(f, lambda r, lam, t: _q_sigma(path, spec, t)
                        * (1.0 / (1.0 + r**spec.a) + _outer_tail(path, spec, lam, t)),
                        path, lattice, geom)


def norm_star_a(f, path: ParamPath, spec: NormSpec, lattice: Lattice | None = None,
                geom: GeometryConfig | None = None) -> NormResult:
    lattice = lattice or Lattice()
    return _lattice_sup(f, lambda r, lam, t: _q_sigma(path, spec, t)
                        * (1.0 / (lam * (1.0 + r ** (1.0 + spec.a)))
                           + _outer_tail(path, spec, lam, t)),
                        path, lattice, geom)


def norm_boundary(g, path: ParamPath, spec: NormSpec, geom: GeometryConfig,
                  lattice: Lattice | None = None, count: int = 64) -> NormResult:
    """Sup over walls and times of ``lam^((n-2)/2) (lam0/d0)^-(n-2+sigma) (T-t)^(alpha/2) lam^-alpha |g|``."""
    lattice = lattice or Lattice()
    bx, br = geom.boundary_points(count)
    best, arg, total = 0.0, {}, 0
    for t in lattice.time_points(path.T):
        vals = np.asarray(g(bx, br, t), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("non-finite samples in norm evaluation")
        lam = float(path.lam(t))
        ratio = np.abs(vals) * lam ** ((path.cfg.n - 2) / 2.0) / _q_sigma(path, spec, t) \
            * float(path.d0(t)) ** (spec.alpha / 2.0) * lam ** (-spec.alpha)
        total += ratio.size
        i = int(np.argmax(ratio))
        if ratio[i] > best:
            best, arg = float(ratio[i]), {"t": float(t), "x1": float(bx[i]), "rho": float(br[i])}
    desc = lattice.describe(path.T)
    desc["boundary_points"] = int(bx.size)
    return NormResult(best, arg, total, desc)


def norm_nu2a(h, path: ParamPath, spec: NormSpec, R: float, lattice: Lattice | None = None
              ) -> NormResult:
    """Sup over ``y in B_2R`` and times of ``tau^nu lam^2 (1 + |y|^(2+a)) |h(y, t)|``.

    ``h(y1, yperp, t)`` is an inner-variable field.
    """
    lattice = lattice or Lattice(R=R / 2.0)
    rad = lattice.radii()
    rad = rad[rad <= 2.0 * R]
    rr, aa = np.meshgrid(rad, lattice.angles(), indexing="ij")
    y1, yp = rr * np.cos(aa), rr * np.sin(aa)
    best, arg, total = 0.0, {}, 0
    for t in lattice.time_points(path.T):
        vals = np.asarray(h(y1, yp, t), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("non-finite samples in norm evaluation")
        w = float(tau_of_t(path, t)) ** spec.nu * float(path.lam(t)) ** 2 \
            * (1.0 + rr ** (2.0 + spec.a))
        ratio = w * np.abs(vals)
        total += ratio.size
        i = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
        if ratio[i] > best:
            best, arg = float(ratio[i]), {"t": float(t), "y1": float(y1[i]), "yperp": float(yp[i])}
    return NormResult(best, arg, total, lattice.describe(path.T))


def norm_delta(values, t, T: float, delta: float) -> float:
    """``sup (T - t)^(-delta) |h(t)|`` over samples with ``t < T``."""
    values = np.asarray(values, dtype=float)
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("non-finite samples in norm evaluation")
    keep = t < T
    if not np.any(keep):
        return 0.0
    return float(np.max((T - t[keep]) ** (-delta) * np.abs(values[keep])))


# --------------------------------------------------------------------------
# Scan of the far-field error
# --------------------------------------------------------------------------

DEFAULT_SCAN_T = (1e-2, 1e-3, 1e-4)
DEFAULT_SCAN_R = (10.0, 20.0, 40.0)


@dataclass(frozen=True)
class ScanRow:
    T: float
    R: float
    norm: float
    bound: float
    ratio: float
    boundary_norm: float


@dataclass(frozen=True)
class ScanTable:
    rows: list
    spec: NormSpec
    lattice: dict

    def ratios(self) -> np.ndarray:
        return np.array([row.ratio for row in self.rows])

    def spread(self) -> float:
        """Largest ratio divided by the median ratio."""
        r = self.ratios()
        return float(np.max(r) / np.median(r))

    def R_power(self, T: float | None = None) -> tuple[float, float]:
        """Least-squares slope of log norm against log R at the smallest (or given) ``T``."""
        T = min(row.T for row in self.rows) if T is None else T
        sel = [row for row in self.rows if row.T == T]
        x = np.log([row.R for row in sel])
        y = np.log([row.norm for row in sel])
        if len(sel) < 2:
            raise ValueError("need at least two radii for a power fit")
        coef, cov = np.polyfit(x, y, 1, cov=len(sel) > 2)
        err = float(np.sqrt(cov[0, 0])) if len(sel) > 2 else float("nan")
        return float(coef[0]), err

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            meta = {"lattice": self.lattice, "spec": asdict(self.spec)}
            fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
            writer = csv.writer(fh)
            writer.writerow(["T", "R", "norm", "bound", "ratio", "boundary_norm"])
            for row in self.rows:
                writer.writerow([repr(row.T), repr(row.R), repr(row.norm), repr(row.bound),
                                 repr(row.ratio), repr(row.boundary_norm)])
        return path


def residual_scan(T_list=DEFAULT_SCAN_T, R_list=DEFAULT_SCAN_R, spec: NormSpec | None = None,
                lattice: Lattice | None = None) -> ScanTable:
    """``||E2_bar||_{**,alpha} / max(T^((1-sigma)/(n-4)), R^-2)`` over a grid of ``(T, R)``.

    Uses the unperturbed path ``d1 = lam1 = 0``. Each row also reports the
    boundary norm of ``W2``.
    """
    spec = spec or NormSpec()
    n = spec.n
    rows = []
    desc = {}
    for T in T_list:
        path = ParamPath(n, T, spec.sigma)
        for R in R_list:
            geom = GeometryConfig(T, R=R)
            lat = lattice if lattice is not None else Lattice(R=R)
            lat = Lattice(R, lat.radial, lat.angular, lat.times, lat.r_min, lat.gap_min)
            res = norm_starstar(lambda a, b, t: E2_bar(a, b, t, path, geom), path, spec, lat, geom)
            bnd = norm_boundary(lambda a, b, t: eval_W2(a, b, t, path, geom), path, spec, geom, lat)
            bound = max(T ** ((1.0 - spec.sigma) / (n - 4)), R**-2.0)
            rows.append(ScanRow(T, R, res.value, bound, res.value / bound, bnd.value))
            desc = lat.describe()
    desc.pop("R", None)
    desc["y_max"] = "4R"
    return ScanTable(rows, spec, desc)


lemma3_scan = residual_scan
