"""Axisymmetric nonlinear solver for the reduced critical heat equation.

The unknown ``u(x1, rho, t)`` solves

    u_t = (1/x1) d_{x1}(x1 d_{x1} u) + rho^(2-n) d_rho(rho^(n-2) d_rho u) + u^p

on the cylinder ``m < x1 < m_out``, ``rho < rho_max`` with zero Dirichlet
data on the walls and even symmetry across the axis ``rho = 0``.  The
first operator equals ``u_11 + u_1 / x1``; the second is the radial
Laplacian of the ``n - 1`` transverse variables.

Space: vertex-centred finite volumes on tensor grids stretched towards the
concentration point.  Time: Strang splitting of the exact reaction flow
around a line-implicit diffusion step (alternating directions, one banded
solve per grid line).
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RectBivariateSpline
from scipy.linalg import solve_banded
from scipy.optimize import brentq, minimize_scalar

from .ansatz import GeometryConfig, ParamPath, eval_W2
from .bubble import _cfg, bubble_U


class SolverError(ArithmeticError):
    """Base class for numerical failures of the time stepper."""


class DtUnderflow(SolverError):
    """The step size fell below its floor: the solution is about to blow up."""


class NegativeOverflow(SolverError):
    """Negative values beyond round-off appeared."""


class IllConditionedWindow(ValueError):
    """The rate-fit window cannot determine the blow-up time reliably."""


def _threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, int(threads))
    try:
        return max(1, int(os.environ.get("BUBBLELAB_THREADS", "1")))
    except ValueError:
        return 1


# --------------------------------------------------------------------------
# Grids
# --------------------------------------------------------------------------

def stretched_nodes(a: float, b: float, center: float, h_min: float, cells: int) -> np.ndarray:
    """``cells + 1`` nodes on ``[a, b]`` with spacing about ``h_min`` at ``center``.

    The map ``x(s) = center + delta sinh(kappa (s - s_c))`` is smooth, so
    second-order finite volumes keep their order on it.  When the uniform
    spacing is already below ``h_min`` a uniform grid is returned.
    """
    if not a < b:
        raise ValueError("need a < b")
    center = float(np.clip(center, a, b))
    if (b - a) / cells <= h_min:
        return np.linspace(a, b, cells + 1)
    scale = h_min * cells

    def mismatch(kappa):
        return np.arcsinh((center - a) * kappa / scale) + np.arcsinh((b - center) * kappa / scale) - kappa

    kappa = brentq(mismatch, 1e-12, 1e3)
    delta = scale / kappa
    s_c = np.arcsinh((center - a) / delta) / kappa
    s = np.linspace(0.0, 1.0, cells + 1)
    x = center + delta * np.sinh(kappa * (s - s_c))
    x[0], x[-1] = a, b
    return x


@dataclass(frozen=True)
class AxiGrid:
    """Tensor grid: ``x1`` includes both walls, ``rho`` starts on the axis and ends on the wall."""

    x1: np.ndarray
    rho: np.ndarray
    n: int
    cylindrical: bool = True

    @classmethod
    def build(cls, geom: GeometryConfig, n: int, *, center: float, h_min: float,
              nx: int = 400, nr: int = 200, cylindrical: bool = True) -> "AxiGrid":
        x = stretched_nodes(geom.m, geom.m_out, center, h_min, nx + 1)
        r = stretched_nodes(0.0, geom.rho_max, 0.0, h_min, nr)
        return cls(x, r, n, cylindrical)

    @classmethod
    def uniform(cls, geom: GeometryConfig, n: int, nx: int, nr: int, cylindrical=True):
        return cls(np.linspace(geom.m, geom.m_out, nx + 2), np.linspace(0.0, geom.rho_max, nr + 1),
                   n, cylindrical)

    @property
    def shape(self) -> tuple[int, int]:
        return self.x1.size, self.rho.size

    @property
    def h_min(self) -> float:
        return float(min(np.min(np.diff(self.x1)), np.min(np.diff(self.rho))))

    def x_operator(self):
        """Tridiagonal ``(lower, diag, upper)`` of ``(1/x) d(x d.)`` on interior ``x1`` nodes."""
        x = self.x1
        faces = 0.5 * (x[1:] + x[:-1])
        weight = faces if self.cylindrical else np.ones_like(faces)
        flux = weight / np.diff(x)
        if self.cylindrical:
            vol = 0.5 * (faces[1:] ** 2 - faces[:-1] ** 2)
        else:
            vol = faces[1:] - faces[:-1]
        lower = flux[:-1] / vol
        upper = flux[1:] / vol
        return lower, -(lower + upper), upper

    def rho_operator(self):
        """Tridiagonal of ``rho^(2-n) d(rho^(n-2) d.)``; no flux through the axis."""
        r = self.rho
        k = self.n - 2
        faces = 0.5 * (r[1:] + r[:-1])
        flux = faces ** k / np.diff(r)
        outer = faces
        inner = np.concatenate([[0.0], faces[:-1]])
        vol = (outer ** (k + 1) - inner ** (k + 1)) / (k + 1)
        lower = np.concatenate([[0.0], flux[:-1]]) / vol
        upper = flux / vol
        return lower, -(lower + upper), upper


def _tri_apply(op, U, axis):
    lower, diag, upper = op
    out = diag[:, None] * U if axis == 0 else diag[None, :] * U
    if axis == 0:
        out[1:] += lower[1:, None] * U[:-1]
        out[:-1] += upper[:-1, None] * U[1:]
    else:
        out[:, 1:] += lower[None, 1:] * U[:, :-1]
        out[:, :-1] += upper[None, :-1] * U[:, 1:]
    return out


def _tri_solve(op, coef, rhs, axis, threads):
    """Solve ``(I - coef A) X = rhs`` along ``axis``, one system per grid line."""
    lower, diag, upper = op
    m = diag.size
    ab = np.zeros((3, m))
    ab[0, 1:] = -coef * upper[:-1]
    ab[1] = 1.0 - coef * diag
    ab[2, :-1] = -coef * lower[1:]
    B = rhs if axis == 0 else rhs.T
    if threads == 1 or B.shape[1] < 2 * threads:
        X = solve_banded((1, 1), ab, B)
    else:
        # deterministic column blocks; each line is independent
        blocks = np.array_split(np.arange(B.shape[1]), threads)
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda idx: solve_banded((1, 1), ab, B[:, idx]), blocks))
        X = np.concatenate(parts, axis=1)
    return X if axis == 0 else X.T


# --------------------------------------------------------------------------
# Field
# --------------------------------------------------------------------------

@dataclass
class AxiField:
    """``u`` on an :class:`AxiGrid` at time ``t``; wall values are zero.

    ``values`` has shape ``(len(x1), len(rho))``; row 0 and the last row are
    the walls ``x1 = m`` and ``x1 = m_out``, the last column is ``rho = rho_max``.
    """

    grid: AxiGrid
    values: np.ndarray
    t: float = 0.0
    clipped: float = 0.0

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError("values do not match the grid")
        self.values[0] = 0.0
        self.values[-1] = 0.0
        self.values[:, -1] = 0.0

    @classmethod
    def from_function(cls, grid: AxiGrid, f, t: float = 0.0) -> "AxiField":
        X, R = np.meshgrid(grid.x1, grid.rho, indexing="ij")
        return cls(grid, f(X, R), t)

    @property
    def interior(self) -> np.ndarray:
        return self.values[1:-1, :-1]

    @property
    def sup(self) -> float:
        return float(np.max(self.values))

    def peak(self) -> tuple[float, float, float]:
        """Maximum and its location, refined by a local quadratic fit.

        Returns ``(sup_u, x1_star, rho_star)``.  Along ``rho`` the fit uses the
        even reflection, so an axis maximum stays on the axis.
        """
        u = self.values
        i, j = np.unravel_index(int(np.argmax(u)), u.shape)
        x, r = self.grid.x1, self.grid.rho
        best, xs, rs = float(u[i, j]), float(x[i]), float(r[j])
        if 0 < i < len(x) - 1:
            xs, vx = _quad_peak(x[i - 1:i + 2], u[i - 1:i + 2, j])
        else:
            vx = best
        if j == 0:
            rr = np.array([-r[1], 0.0, r[1]])
            rs, vr = _quad_peak(rr, np.array([u[i, 1], u[i, 0], u[i, 1]]))
            rs = abs(rs)
        elif j < len(r) - 1:
            rs, vr = _quad_peak(r[j - 1:j + 2], u[i, j - 1:j + 2])
        else:
            vr = best
        # separable correction: add both one-dimensional gains
        return best + (vx - best) + (vr - best), xs, rs

    def to_files(self, directory, stem: str = "field") -> tuple[Path, Path, Path]:
        """Flat little-endian float64 dump, JSON header and an axis-slice CSV."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        raw = directory / f"{stem}.bin"
        raw.write_bytes(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        header = directory / f"{stem}.json"
        header.write_text(json.dumps({
            "shape": list(self.values.shape), "dtype": "<f8", "order": "C", "t": self.t,
            "x1": self.grid.x1.tolist(), "rho": self.grid.rho.tolist(),
            "spacings": {"x1_min": float(np.min(np.diff(self.grid.x1))),
                         "rho_min": float(np.min(np.diff(self.grid.rho)))},
            "n": self.grid.n}, indent=1, sort_keys=True) + "\n")
        axis = directory / f"{stem}_axis.csv"
        with axis.open("w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["x1", "u"])
            for a, b in zip(self.grid.x1, self.values[:, 0]):
                out.writerow([repr(float(a)), repr(float(b))])
        return raw, header, axis

    @classmethod
    def from_files(cls, header) -> "AxiField":
        header = Path(header)
        meta = json.loads(header.read_text())
        data = np.frombuffer(header.with_suffix(".bin").read_bytes(), dtype=meta["dtype"])
        grid = AxiGrid(np.array(meta["x1"]), np.array(meta["rho"]), meta["n"])
        return cls(grid, data.reshape(meta["shape"]), meta["t"])

    def regrid(self, grid: AxiGrid) -> "AxiField":
        """Bicubic transfer to ``grid`` (even extension across the axis)."""
        x, r = self.grid.x1, self.grid.rho
        rr = np.concatenate([-r[:0:-1], r])
        vv = np.concatenate([self.values[:, :0:-1], self.values], axis=1)
        spline = RectBivariateSpline(x, rr, vv, kx=3, ky=3)
        new = spline(grid.x1, grid.rho)
        return AxiField(grid, np.maximum(new, 0.0), self.t, self.clipped)


def _quad_peak(xs, vs):
    x0, x1, x2 = xs
    v0, v1, v2 = vs
    d = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (v1 - v0) + x1 * (v0 - v2) + x0 * (v2 - v1)) / d
    b = (x2 * x2 * (v0 - v1) + x1 * x1 * (v2 - v0) + x0 * x0 * (v1 - v2)) / d
    if a >= 0:
        return float(x1), float(v1)
    xv = -b / (2 * a)
    if not min(x0, x2) <= xv <= max(x0, x2):
        return float(x1), float(v1)
    c = v1 - a * x1 * x1 - b * x1
    return float(xv), float(a * xv * xv + b * xv + c)


# --------------------------------------------------------------------------
# Semi-discrete operator and stepping
# --------------------------------------------------------------------------

def reduced_rhs(fld: AxiField, p: float, *, reaction: bool = True) -> np.ndarray:
    """Semi-discrete right-hand side on the interior nodes.

    Includes ``u^p`` when ``reaction`` is set.  On the axis the finite volume
    reproduces the ``(n - 1) d_rho^2`` closure.
    """
    U = fld.interior
    out = _tri_apply(fld.grid.x_operator(), U, 0) + _tri_apply(fld.grid.rho_operator(), U, 1)
    if reaction:
        out = out + np.maximum(U, 0.0) ** p
    return out


def reduced_rhs_at(fld: AxiField, i: int, j: int, p: float) -> float:
    """:func:`reduced_rhs` at the grid node ``(x1[i], rho[j])`` (``i >= 1``)."""
    if not (0 < i < fld.grid.x1.size - 1 and 0 <= j < fld.grid.rho.size - 1):
        raise IndexError("node is on a Dirichlet wall")
    return float(reduced_rhs(fld, p)[i - 1, j])


def reaction_flow(u, dt: float, p: float):
    """Exact flow of ``u' = u^p`` over ``dt`` for ``u >= 0``."""
    u = np.maximum(u, 0.0)
    q = 1.0 - (p - 1.0) * dt * u ** (p - 1.0)
    if np.any(q <= 0):
        raise DtUnderflow("step crosses the reaction blow-up time")
    return u * q ** (-1.0 / (p - 1.0))


@dataclass
class Stepper:
    """IMEX stepper for one grid.

    Parameters
    ----------
    p : float
    scheme : {"lie", "pr"}
        Line-implicit backward Euler in each direction (monotone, first order)
        or Peaceman-Rachford alternating directions (second order).
    diffusion, reaction : bool
        Switch the parts off for the ODE and pure-diffusion modes.
    source : callable, optional
        ``f(X1, RHO, t)`` added to the right-hand side (manufactured tests).
    threads : int, optional
        Worker threads for the line solves (``BUBBLELAB_THREADS`` by default).
    """

    p: float
    scheme: str = "lie"
    diffusion: bool = True
    reaction: bool = True
    source: object = None
    threads: int | None = None
    _ops: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.scheme not in ("lie", "pr"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        self.threads = _threads(self.threads)

    def _operators(self, grid: AxiGrid):
        key = id(grid)
        if key not in self._ops:
            self._ops = {key: (grid.x_operator(), grid.rho_operator())}
        return self._ops[key]

    def _source(self, grid, t):
        if self.source is None:
            return 0.0
        X, R = np.meshgrid(grid.x1[1:-1], grid.rho[:-1], indexing="ij")
        return self.source(X, R, t)

    def _diffuse(self, grid, U, t, dt):
        ax, ar = self._operators(grid)
        f = self._source(grid, t + 0.5 * dt)
        th = self.threads
        if self.scheme == "lie":
            V = _tri_solve(ax, dt, U + dt * f, 0, th)
            return _tri_solve(ar, dt, V, 1, th)
        h = 0.5 * dt
        V = _tri_solve(ax, h, U + h * _tri_apply(ar, U, 1) + h * f, 0, th)
        return _tri_solve(ar, h, V + h * _tri_apply(ax, V, 0) + h * f, 1, th)

    def step(self, fld: AxiField, dt: float) -> AxiField:
        """Advance by ``dt``: half reaction, diffusion, half reaction."""
        U = fld.interior.copy()
        if self.reaction:
            U = reaction_flow(U, 0.5 * dt, self.p)
        if self.diffusion:
            U = self._diffuse(fld.grid, U, fld.t, dt)
        elif self.source is not None:
            U = U + dt * self._source(fld.grid, fld.t + 0.5 * dt)
        if self.reaction:
            U = reaction_flow(U, 0.5 * dt, self.p)
        if not np.all(np.isfinite(U)):
            raise SolverError(f"non-finite values at t = {fld.t + dt:.6g}")
        neg = float(-np.min(U)) if np.min(U) < 0 else 0.0
        clipped = fld.clipped
        if neg > 0 and self.source is None:
            scale = max(float(np.max(np.abs(U))), np.finfo(float).tiny)
            if neg > 1e-12 * scale:
                raise NegativeOverflow(f"negative values of relative size {neg / scale:.2e}")
            U = np.maximum(U, 0.0)
            clipped = max(clipped, neg / scale)
        vals = np.zeros(fld.grid.shape)
        vals[1:-1, :-1] = U
        out = AxiField(fld.grid, vals, fld.t + dt, clipped)
        return out

    def stable_dt(self, fld: AxiField, cfl: float, dt_max: float) -> float:
        """``dt <= cfl * sup_u^(1-p)``, capped by ``dt_max``."""
        sup = max(fld.sup, np.finfo(float).tiny)
        return float(min(dt_max, cfl * sup ** (1.0 - self.p)))


def ode_blowup_solution(u0: float, t, p: float):
    """``(u0^(1-p) - (p-1) t)^(-1/(p-1))`` and its blow-up time."""
    t = np.asarray(t, dtype=float)
    tb = u0 ** (1.0 - p) / (p - 1.0)
    return (u0 ** (1.0 - p) - (p - 1.0) * t) ** (-1.0 / (p - 1.0)), tb


# --------------------------------------------------------------------------
# Runs seeded with the ansatz
# --------------------------------------------------------------------------

@dataclass
class RunTrace:
    """Per-step record of a run (see :meth:`to_csv` for the columns)."""

    n: int
    t: list = field(default_factory=list)
    sup_u: list = field(default_factory=list)
    x1_star: list = field(default_factory=list)
    rho_star: list = field(default_factory=list)
    lam_num: list = field(default_factory=list)
    dt: list = field(default_factory=list)
    termination: str = "running"
    regrids: int = 0

    def record(self, t, sup, x1s, rhos, dt):
        cfg = _cfg(self.n)
        U0 = float(bubble_U(0.0, cfg))
        self.t.append(float(t))
        self.sup_u.append(float(sup))
        self.x1_star.append(float(x1s))
        self.rho_star.append(float(rhos))
        self.lam_num.append((U0 / float(sup)) ** (2.0 / (cfg.n - 2)))
        self.dt.append(float(dt))

    def arrays(self) -> dict:
        return {k: np.asarray(getattr(self, k)) for k in
                ("t", "sup_u", "x1_star", "rho_star", "lam_num", "dt")}

    @property
    def d_num(self) -> np.ndarray:
        return np.asarray(self.x1_star) - 1.0

    def to_csv(self, path) -> Path:
        path = Path(path)
        cols = self.arrays()
        with path.open("w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(list(cols))
            for row in zip(*cols.values()):
                out.writerow([repr(float(v)) for v in row])
        return path

    @classmethod
    def from_csv(cls, path, n: int, termination: str = "loaded") -> "RunTrace":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        header = Path(path).read_text().splitlines()[0].split(",")
        col = {name: data[:, k] for k, name in enumerate(header)}
        tr = cls(n, termination=termination)
        for name in ("t", "sup_u", "x1_star", "rho_star", "lam_num", "dt"):
            setattr(tr, name, list(col[name]) if name in col else [0.0] * data.shape[0])
        if "lam_num" not in col:
            U0 = float(bubble_U(0.0, _cfg(n)))
            tr.lam_num = list((U0 / col["sup_u"]) ** (2.0 / (n - 2)))
        return tr


@dataclass(frozen=True)
class RunConfig:
    """Numerical knobs of :func:`run_from_ansatz`."""

    nx: int = 400
    nr: int = 200
    cells_per_lambda: float = 8.0
    cfl: float = 0.1
    dt_max: float = 1e-4
    scheme: str = "pr"
    regrid_every: int = 50
    max_steps: int = 200000
    sup_max: float = 1e14
    threads: int | None = None

    def describe(self) -> dict:
        return {"nx": self.nx, "nr": self.nr, "cells_per_lambda": self.cells_per_lambda,
                "cfl": self.cfl, "dt_max": self.dt_max, "scheme": self.scheme,
                "regrid_every": self.regrid_every, "max_steps": self.max_steps,
                "sup_max": self.sup_max}


@dataclass
class Run:
    trace: RunTrace
    field: AxiField
    manifest: dict
    boundary_ratio: float

    def write(self, directory) -> dict:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = {"trace": str(self.trace.to_csv(directory / "trace.csv"))}
        self.field.to_files(directory, "final")
        (directory / "manifest.json").write_text(json.dumps(self.manifest, indent=2,
                                                            sort_keys=True) + "\n")
        return out


def _grid_for(geom, n, center, lam, rc: RunConfig):
    return AxiGrid.build(geom, n, center=center, h_min=lam / rc.cells_per_lambda,
                         nx=rc.nx, nr=rc.nr)


def run_from_ansatz(path: ParamPath, geom: GeometryConfig | None = None, *,
                    stop_fraction: float = 0.25, config: RunConfig | None = None,
                    callback=None) -> Run:
    """Evolve ``W2(., 0)`` and record the concentration scale.

    Stops at ``t = stop_fraction * T``, when ``sup u`` exceeds
    ``config.sup_max`` (blow-up), when it drops below a tenth of its initial
    value (quench), or after ``config.max_steps`` steps.  The grid is rebuilt
    around the current maximum every ``regrid_every`` steps when the peak has
    moved by more than two fine cells or the scale left ``[6, 12]`` cells.
    """
    cfg = path.cfg
    n = cfg.n
    rc = config or RunConfig()
    geom = geom or GeometryConfig(path.T)
    lam = float(path.lam(0.0))
    grid = _grid_for(geom, n, 1.0 + float(path.d(0.0)), lam, rc)
    fld = AxiField.from_function(grid, lambda X, R: np.maximum(
        eval_W2(X, R, 0.0, path, geom), 0.0))
    stepper = Stepper(cfg.p, scheme=rc.scheme, threads=rc.threads)
    trace = RunTrace(n)
    sup0, x1s, rhos = fld.peak()
    trace.record(0.0, sup0, x1s, rhos, 0.0)
    t_stop = stop_fraction * path.T
    steps = 0
    while True:
        if fld.t >= t_stop * (1 - 1e-12):
            trace.termination = "stop_time"
            break
        if steps >= rc.max_steps:
            trace.termination = "max_steps"
            break
        dt = min(stepper.stable_dt(fld, rc.cfl, rc.dt_max), t_stop - fld.t)
        if dt < 1e-15 * path.T:
            trace.termination = "dt_underflow"
            break
        try:
            fld = stepper.step(fld, dt)
        except DtUnderflow:
            trace.termination = "dt_underflow"
            break
        steps += 1
        sup, x1s, rhos = fld.peak()
        trace.record(fld.t, sup, x1s, rhos, dt)
        if callback is not None:
            callback(trace, fld)
        if sup > rc.sup_max:
            trace.termination = "blowup"
            break
        if sup < 0.1 * sup0:
            trace.termination = "quench"
            break
        if steps % rc.regrid_every == 0:
            lam_now = trace.lam_num[-1]
            h = fld.grid.h_min
            i0 = int(np.argmin(np.abs(fld.grid.x1 - x1s)))
            hx = float(np.diff(fld.grid.x1)[min(i0, fld.grid.x1.size - 2)])
            moved = abs(x1s - _grid_center(fld.grid)) > 2 * hx
            if moved or not 6 * h <= lam_now <= 12 * h:
                fld = fld.regrid(_grid_for(geom, n, x1s, lam_now, rc))
                trace.regrids += 1
    walls = np.concatenate([fld.values[0], fld.values[-1], fld.values[:, -1]])
    boundary_ratio = float(np.max(np.abs(walls)) / max(fld.sup, np.finfo(float).tiny))
    manifest = {
        "n": n, "T": path.T, "sigma": path.sigma, "ell": path.ell,
        "grid": {**rc.describe(), "final_h_min": fld.grid.h_min, "regrids": trace.regrids},
        "domain": geom.descriptor(),
        "dt_policy": {"rule": "dt = min(dt_max, cfl * sup_u^(1-p))", "cfl": rc.cfl,
                      "dt_max": rc.dt_max, "scheme": rc.scheme},
        "seed": {"profile": "W2", "t0": 0.0, "d1": 0.0, "lam1": 0.0,
                 "stop_fraction": stop_fraction},
        "termination": trace.termination, "steps": steps,
        "max_clipped_relative": fld.clipped,
    }
    return Run(trace, fld, manifest, boundary_ratio)


def _grid_center(grid: AxiGrid) -> float:
    return float(grid.x1[1:-1][int(np.argmin(np.diff(grid.x1)[:-1]))])


# --------------------------------------------------------------------------
# Rate fitting
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    """Fitted ``sup u ~ (T* - t)^(-exponent)``."""

    exponent: float
    stderr: float
    T_star: float
    T_star_stderr: float
    records: int
    type_I: float
    type_II: float

    def to_dict(self) -> dict:
        return {"exponent": self.exponent, "stderr": self.stderr, "T_star": self.T_star,
                "T_star_stderr": self.T_star_stderr, "records": self.records,
                "type_I": self.type_I, "type_II": self.type_II}


def _loglog_fit(t, sup, T_star):
    x = np.log(T_star - t)
    y = np.log(sup)
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(len(x) - 2, 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    return -float(coef[0]), float(np.sqrt(cov[0, 0])), float(resid @ resid)


def fit_rate(trace, cfg, window=None, *, min_records: int = 20) -> RateFit:
    """Least-squares slope of ``log sup u`` against ``log(T* - t)``.

    ``T*`` comes from the blow-up profile of ``y = sup_u^(1-p)``: for
    ``y ~ (T* - t)^q`` the ratio ``y / (-y')`` equals ``(T* - t)/q``, which is
    linear in ``t`` and vanishes at ``T*`` whatever the exponent.  The root
    of its linear fit seeds a one-dimensional search that minimises the
    log-log residual.  The reported error combines the slope's standard error
    with the slope change across ``T* +- stderr(T*)``.

    Parameters
    ----------
    trace : RunTrace or tuple of arrays ``(t, sup_u)``
    cfg : DimensionConfig or int
    window : (float, float), optional
        Time window of the records used.

    Raises
    ------
    IllConditionedWindow
        With fewer than ``min_records`` records, a non-increasing ``sup``, or
        when the ``T*`` uncertainty dominates the exponent.
    """
    c = _cfg(cfg)
    p = c.p
    if isinstance(trace, RunTrace):
        t = np.asarray(trace.t, float)
        sup = np.asarray(trace.sup_u, float)
    else:
        t, sup = (np.asarray(a, float) for a in trace)
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, sup = t[sel], sup[sel]
    keep = np.concatenate([[True], np.diff(t) > 0])
    t, sup = t[keep], sup[keep]
    if t.size < min_records:
        raise IllConditionedWindow(f"{t.size} records in the window, need {min_records}")
    if np.any(np.diff(sup) <= 0):
        raise IllConditionedWindow("sup u is not increasing in the window")
    y = sup ** (1.0 - p)
    dy = np.gradient(y, t, edge_order=2)
    if np.any(dy >= 0):
        raise IllConditionedWindow("sup u^(1-p) is not decreasing in the window")
    g = y / (-dy)
    t_last = float(t[-1])
    # relative weights: g spans many decades close to blow-up
    (slope, icpt), cov = np.polyfit(t - t_last, g, 1, w=1.0 / g, cov=True)
    if slope >= 0:
        raise IllConditionedWindow("extrapolated blow-up time is not ahead of the window")
    T0 = t_last - icpt / slope
    grad = np.array([icpt / slope ** 2, -1.0 / slope])
    sT = float(np.sqrt(max(grad @ cov @ grad, 0.0)))
    if not T0 > t_last:
        raise IllConditionedWindow("extrapolated blow-up time precedes the last record")
    gap = T0 - t_last
    lo = t_last + 1e-6 * gap
    hi = T0 + 5.0 * gap
    best = minimize_scalar(lambda T: _loglog_fit(t, sup, T)[2], bounds=(lo, hi),
                           method="bounded", options={"xatol": 1e-14 * max(abs(T0), 1.0)})
    T_star = float(best.x)
    expo, se, _ = _loglog_fit(t, sup, T_star)
    spread = 0.0
    if sT > 0:
        for Ts in (T_star - sT, T_star + sT):
            if Ts > t_last:
                spread = max(spread, abs(_loglog_fit(t, sup, Ts)[0] - expo))
            else:
                spread = np.inf
    if not np.isfinite(spread) or spread > 0.5 * abs(expo):
        raise IllConditionedWindow("T* uncertainty dominates the fitted exponent")
    return RateFit(expo, float(np.hypot(se, spread)), T_star, sT, int(t.size),
                   float((c.n - 2) / 4.0), c.gamma)
