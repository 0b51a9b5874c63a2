import numpy as np
import pytest

from bubblelab.bubble import DimensionConfig, fd_radial_operator, pi_profile, potential
from bubblelab.correction import RadialGreenSolver, correction_h, default_correction
from bubblelab.spectral import SpectralError


@pytest.fixture(scope="module")
def h6():
    return default_correction(6)


def _residual(solver, r, n):
    forcing = solver.forcing
    lhs = fd_radial_operator(solver, r, 1e-3 * np.maximum(r, 1.0), n,
                             potential_fn=lambda s: potential(s, n), order=4)
    return lhs - forcing(r)


def test_round_trip_residual(h6):
    r = np.linspace(0.1, 500.0, 4000)
    assert np.max(np.abs(_residual(h6, r, 6))) < 1e-5


@pytest.mark.parametrize("n", [7, 8])
def test_round_trip_other_dimensions(n):
    r = np.geomspace(0.1, 100.0, 400)
    assert np.max(np.abs(_residual(RadialGreenSolver(n), r, n))) < 1e-5


def test_regular_at_origin(h6):
    assert h6(0.0) == 0.0
    r = np.array([1e-3, 2e-3])
    # h ~ c r^2 near the origin
    assert h6(r[1]) / h6(r[0]) == pytest.approx(4.0, rel=1e-3)


def test_tail_bound_grid_stable():
    r = np.linspace(10.0, 100.0, 500)
    coarse = correction_h(6, r_max=1e3, nodes=512)
    fine = correction_h(6, r_max=1e3, nodes=4096)
    a = np.max(r**2 * np.abs(coarse(r)))
    b = np.max(r**2 * np.abs(fine(r)))
    assert 0.9 <= a / b <= 1.1
    assert np.isfinite(b)


def test_derivatives_consistent(h6):
    r = np.geomspace(1e-2, 200.0, 40)
    step = 1e-5 * r
    fd = (h6(r + step) - h6(r - step)) / (2 * step)
    np.testing.assert_allclose(h6.derivative(r), fd, rtol=1e-6, atol=1e-12)
    fd2 = (h6.derivative(r + step) - h6.derivative(r - step)) / (2 * step)
    np.testing.assert_allclose(h6.second_derivative(r), fd2, rtol=1e-5, atol=1e-10)


def test_zero_forcing_gives_zero():
    solver = RadialGreenSolver(6, forcing=lambda r: 0.0 * r)
    assert np.all(solver(np.geomspace(1e-3, 1e3, 20)) == 0.0)


def test_profile_has_tail_law():
    prof = correction_h(6, r_max=100.0, nodes=256)
    assert prof.decay_exponent == 2.0
    assert prof(400.0) == pytest.approx(prof.values[-1] / 16.0)


def test_linearity():
    c = DimensionConfig(6)
    a = RadialGreenSolver(c, forcing=lambda r: 2.0 * pi_profile(r, c))
    r = np.geomspace(0.1, 50, 10)
    np.testing.assert_allclose(a(r), 2.0 * default_correction(c)(r), rtol=1e-12)


def test_defective_wronskian_detected(monkeypatch):
    import bubblelab.correction as mod
    monkeypatch.setattr(mod, "wronskian_profile", lambda r, c: np.linspace(1.0, 2.0, np.size(r)))
    with pytest.raises(SpectralError):
        RadialGreenSolver(6)
