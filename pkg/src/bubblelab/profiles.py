"""Radial profile container and CSV export."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline


def default_grid(r_max: float = 1e3, nodes: int = 2048, r_min: float = 1e-3) -> np.ndarray:
    """Geometric radial grid ``0, r_min, ..., r_max`` with ``nodes`` positive radii."""
    return np.concatenate([[0.0], np.geomspace(r_min, r_max, nodes)])


@dataclass(frozen=True)
class RadialProfile:
    """Samples of a radial function on a strictly increasing grid.

    Parameters
    ----------
    grid : array_like
        Radii, strictly increasing, non-negative.
    values : array_like
        Finite samples, one per radius.
    name : str
        Short identifier used in exported headers.
    n : int, optional
        Dimension the profile lives in (for headers and integrals).
    decay_exponent : float, optional
        ``k`` such that the profile behaves like ``r**-k`` beyond the grid.
    """

    grid: np.ndarray
    values: np.ndarray
    name: str = "profile"
    n: int | None = None
    decay_exponent: float | None = None
    _spline: CubicSpline | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape:
            raise ValueError("grid and values must be 1-D arrays of equal length")
        if grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if grid[0] < 0:
            raise ValueError("radii must be non-negative")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"profile {self.name!r} has non-finite values")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.grid.size

    def __call__(self, r) -> np.ndarray:
        """Cubic-spline interpolation inside the grid, power-law (or zero) tail outside."""
        if self._spline is None:
            object.__setattr__(self, "_spline", CubicSpline(self.grid, self.values))
        r = np.asarray(r, dtype=float)
        out = self._spline(np.clip(r, self.grid[0], self.grid[-1]))
        beyond = r > self.grid[-1]
        if np.any(beyond):
            if self.decay_exponent is None:
                out = np.where(beyond, 0.0, out)
            else:
                out = np.where(beyond,
                               self.values[-1] * (r / self.grid[-1]) ** (-self.decay_exponent),
                               out)
        return out

    def with_values(self, values, name: str | None = None) -> "RadialProfile":
        return RadialProfile(self.grid, values, name or self.name, self.n, self.decay_exponent)

    def to_csv(self, path) -> Path:
        """Write ``radius,value`` rows under a one-line header naming profile and dimension."""
        path = Path(path)
        dim = "" if self.n is None else f"_n{self.n}"
        with path.open("w", newline="\n") as fh:
            fh.write(f"r,{self.name}{dim}\n")
            for r, v in zip(self.grid, self.values):
                fh.write(f"{float(r)!r},{float(v)!r}\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "RadialProfile":
        path = Path(path)
        with path.open() as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        label = header[1]
        n = None
        if "_n" in label:
            label, _, dim = label.rpartition("_n")
            n = int(dim)
        return cls(data[:, 0], data[:, 1], label, n)
