import json
import math

import numpy as np
import pytest
import sympy as sp
from scipy.integrate import quad

from bubblelab.ansatz import GeometryConfig, ParamPath, centers
from bubblelab.bubble import (DimensionConfig, bubble_integrals, bubble_U_pm1, kernel_Z0,
                              kernel_Z0_prime, kernel_Z1_axi)
from bubblelab.param_odes import (B_operator, H_constituents, QuadratureError,
                                  ReducedSystemDivergence, assemble_H, constants_AB, fit_A_R,
                                  lambda0_ode_residual, leading_solutions, lipschitz_q,
                                  ortho_integrals, solve_reduced_system)
from bubblelab.residual import error_terms_W2, norm_delta

T = 1e-2


@pytest.fixture(scope="module")
def path():
    return ParamPath(6, T)


@pytest.fixture(scope="module")
def geom():
    return GeometryConfig(T, R=10.0)


@pytest.mark.parametrize("n", [6, 7, 8])
def test_scaling_law_residual(n):
    t = 1.0 - np.geomspace(1.0, 1e-6, 20)
    assert np.max(lambda0_ode_residual(t, n)) < 1e-8


def test_scaling_law_terms_are_both_negative():
    ints = bubble_integrals(6)
    assert ints.int_Upm1_Z0 < 0 < ints.int_Z0_sq
    # lam0' < 0 and A0 < 0 make both sides of the balance negative
    ell = 0.8**0.5
    u = 0.3
    first = ell * u**1.5 * (-1.5 * ell * u**0.5) * ints.int_Z0_sq
    second = 2 * 24 / 16 * (ell * u**0.5) ** 4 * ints.int_Upm1_Z0
    assert first < 0 and second < 0
    assert first == pytest.approx(second, rel=1e-10)


def test_scaling_law_homogeneous_in_T():
    t = np.linspace(0.0, 0.9, 11)
    a = lambda0_ode_residual(t, 6, T=1.0)
    b = lambda0_ode_residual(2.0 * t, 6, T=2.0)
    np.testing.assert_allclose(a, b, atol=1e-15)


@pytest.mark.parametrize("n", range(6, 12))
def test_A_positive(n):
    A, B = constants_AB(n)
    assert A > 0 and B < 0


def test_A0_identity_sign():
    for n in (6, 7, 8):
        c = DimensionConfig(n)
        ints = bubble_integrals(c)
        assert ints.int_Upm1_Z0 == pytest.approx(-(n - 2) / (2 * c.p) * ints.int_Up, rel=1e-10)


def test_AB_baseline_n6():
    # int U^2 = 576 pi^3 int_0^inf r^5 (1+r^2)^-4 dr = 96 pi^3 and int Z0^2 = 8/5 of it
    A, B = constants_AB(6)
    assert A == pytest.approx(1.6 * 96 * math.pi**3, rel=1e-10)
    assert B == pytest.approx(-9 * 96 * math.pi**3, rel=1e-10)


def test_H_without_phi_psi_is_scaled_E2(path, geom):
    t = 0.7 * T
    y1 = np.array([0.0, 1.0, -3.0, 5.0])
    yp = np.array([0.0, 2.0, 0.5, 7.0])
    lam0 = float(path.lam0(t))
    xi, _ = centers(path, t)
    E2 = error_terms_W2(xi + lam0 * y1, lam0 * yp, t, path, geom).E2
    np.testing.assert_array_equal(assemble_H(y1, yp, t, path, geom), lam0**4 * E2)


def test_H_psi_term(path, geom):
    t = 0.7 * T
    y1, yp = np.array([0.5, 2.0]), np.array([1.0, 0.0])
    lam0 = float(path.lam0(t))
    base = assemble_H(y1, yp, t, path, geom)
    with_psi = assemble_H(y1, yp, t, path, geom, psi=lambda x1, rho, s: np.ones_like(x1))
    np.testing.assert_allclose(with_psi - base, 2.0 * bubble_U_pm1(np.hypot(y1, yp), 6) * lam0**2,
                               rtol=1e-12)


def _symbolic_B_of_Z0(y1v, ypv, path, t):
    y1, yp = sp.symbols("y1 yp", real=True)
    r2 = y1**2 + yp**2
    Z0 = 48 * (1 - r2) * (1 + r2) ** -3         # 2 U + r U' for n = 6
    lam0, lam0dot = float(path.lam0(t)), float(path.lam0dot(t))
    xi, _ = centers(path, t)
    ddot = float(path.ddot(t))
    B = lam0 * lam0dot * (2 * Z0 + y1 * sp.diff(Z0, y1) + yp * sp.diff(Z0, yp)) \
        + (lam0 * ddot + lam0 / (lam0 * y1 + xi)) * sp.diff(Z0, y1)
    return float(B.subs({y1: y1v, yp: ypv}))


def _phi_Z0(y1, yp, t):
    r = np.hypot(y1, yp)
    dZ = kernel_Z0_prime(r, 6)
    rs = np.where(r > 0, r, 1.0)
    return kernel_Z0(r, 6), dZ * y1 / rs, dZ * yp / rs


def test_B_operator_at_origin(path):
    t = 0.5 * T
    val = B_operator(_phi_Z0, np.array([0.0]), np.array([0.0]), t, path)[0]
    expected = float(path.lam0(t) * path.lam0dot(t)) * 2.0 * 48.0
    assert val == pytest.approx(expected, rel=1e-14)
    assert val == pytest.approx(_symbolic_B_of_Z0(0.0, 0.0, path, t), rel=1e-14)


def test_B_operator_off_axis(path):
    t = 0.5 * T
    for y1, yp in [(0.3, 0.4), (-1.2, 0.7), (2.0, 0.0)]:
        val = B_operator(_phi_Z0, np.array([y1]), np.array([yp]), t, path)[0]
        assert val == pytest.approx(_symbolic_B_of_Z0(y1, yp, path, t), rel=1e-12)


def test_H_even_in_transverse(path, geom):
    t = 0.8 * T
    rng = np.random.default_rng(3)
    y1, yp = rng.uniform(-10, 10, 50), rng.uniform(0, 10, 50)
    phi = _phi_Z0
    a = assemble_H(y1, yp, t, path, geom, phi=phi)

    def mirrored(u, v, s):
        val, d1, dp = phi(u, -v, s)
        return val, d1, -dp

    b = assemble_H(y1, -yp, t, path, geom, phi=mirrored)
    np.testing.assert_array_equal(a, b)


def test_ortho_parity_Z0():
    out = ortho_integrals(lambda y1, yp: kernel_Z0(np.hypot(y1, yp), 6), 10.0, 0.0, 6)
    assert abs(out.I1) < 1e-14 * out.I0
    c = DimensionConfig(6)
    ref, _ = quad(lambda r: kernel_Z0(r, 6) ** 2 * r**5, 0.0, 20.0, epsabs=0, epsrel=1e-13, limit=200)
    assert out.I0 == pytest.approx(c.omega * ref, rel=1e-10)


def test_ortho_parity_Z1():
    out = ortho_integrals(lambda y1, yp: kernel_Z1_axi(y1, yp, 6), 10.0, 0.0, 6)
    assert abs(out.I0) < 1e-14 * abs(out.I1)
    assert out.I1 > 0


def test_ortho_unresolved_raises():
    with pytest.raises(QuadratureError):
        ortho_integrals(lambda y1, yp: np.exp(-(y1**2 + yp**2) / 0.01), 10.0, 0.0, 6)


def test_mode0_cancellation(path, geom):
    t = 0.9 * T
    parts = {k: ortho_integrals(H, 10.0, t, 6).I0 for k, H in H_constituents(t, path, geom).items()}
    total = ortho_integrals(lambda a, b: assemble_H(a, b, t, path, geom), 10.0, t, 6).I0
    assert sum(parts.values()) == pytest.approx(total, rel=1e-10)
    assert max(abs(v) for v in parts.values()) >= 100 * abs(total)


def test_A_R_fit():
    fit = fit_A_R(6)
    vals = list(fit.A_R.values())
    assert fit.A_inf > 0
    assert max(vals) / min(vals) < 1.01
    assert fit.residual < 1e-3
    # the R-dependence comes from int d_y1 h Z1 over B_2R, which converges like R^-2
    d1, d2 = vals[1] - vals[0], vals[2] - vals[1]
    assert 3.0 < d1 / d2 < 5.0


@pytest.mark.parametrize("n", [6, 7, 8])
def test_leading_closed_form_d(n):
    lead = leading_solutions(None, None, 1.0, n, T)
    t = np.linspace(0.0, T, 9)
    u = T - t
    expected = -(n - 4) / (n - 2) * u ** (1 + 2 / (n - 4))
    np.testing.assert_allclose(lead.d(t), expected, rtol=1e-10, atol=1e-300)
    np.testing.assert_array_equal(lead.Lam(t), 0.0)


@pytest.mark.parametrize("n", [6, 7, 8])
def test_leading_closed_form_Lambda(n):
    lead = leading_solutions(None, 1.0, 1.0, n, T)
    t = np.linspace(0.0, T, 9)[:-1]
    k = 2 / (n - 4)
    expected = (T - t) ** (1 + k) / (n - 2 + k)
    np.testing.assert_allclose(lead.Lam(t), expected, rtol=1e-10)


def test_leading_against_quad():
    p = lambda s: np.sin(300.0 * s)
    f = lambda s: 1.0 + np.cos(500.0 * s)
    n, A = 7, 2.0
    lead = leading_solutions(p, f, A, n, T)
    k = 2 / (n - 4)
    for t in (0.0, 0.3 * T, 0.9 * T):
        d_ref, _ = quad(lambda s: (T - s) ** k * (-A + p(s)), t, T, epsabs=0, epsrel=1e-13)
        L_ref, _ = quad(lambda s: (T - s) ** (n - 3 + k) * f(s), t, T, epsabs=0, epsrel=1e-13)
        assert lead.d(t) == pytest.approx(d_ref, rel=1e-10)
        assert lead.Lam(t) == pytest.approx(L_ref / (T - t) ** (n - 3), rel=1e-10)


def test_leading_derivatives():
    lead = leading_solutions(lambda s: 0.2 * np.cos(400 * s), 0.5, 5.8, 6, T)
    t = np.linspace(0.05 * T, 0.95 * T, 7)
    h = 1e-7
    np.testing.assert_allclose(lead.ddot(t), (lead.d(t + h) - lead.d(t - h)) / (2 * h), rtol=1e-6)
    np.testing.assert_allclose(lead.Lamdot(t), (lead.Lam(t + h) - lead.Lam(t - h)) / (2 * h),
                               rtol=1e-6)


def test_leading_n1_norm_finite():
    sigma, n = 0.9, 6
    lead = leading_solutions(None, 1.0, 5.8, n, T)
    t = T - T * np.geomspace(1.0, 1e-8, 400)
    delta = (1 + sigma) / (n - 4)
    a = norm_delta(lead.ddot(t), t, T, delta)
    b = norm_delta(lead.Lamdot(t), t, T, delta)
    # both rates are O((T-t)^(2/(n-4))), so the weighted sups are O(T^((1-sigma)/(n-4)))
    assert a == pytest.approx(5.8 * T ** ((1 - sigma) / (n - 4)), rel=1e-6)
    assert 0 < b < 1


def test_reduced_zero_q_is_leading():
    state = solve_reduced_system(lambda s: 0.1 * np.ones_like(s), 1.0, 5.8, 6, T)
    lead = leading_solutions(lambda s: 0.1 * np.ones_like(s), 1.0, 5.8, 6, T)
    assert state.deltas == [0.0]
    np.testing.assert_array_equal(state.d1, lead.d(state.t))
    np.testing.assert_array_equal(state.lam1, lead.Lam(state.t))


def test_reduced_contraction():
    state = solve_reduced_system(lambda s: 0.5 * (T - s) / T, 1.0, 5.8, 6, T,
                                 q1=lipschitz_q(0.1), coupling=True)
    d = state.deltas
    assert d[-1] <= 1e-14
    ratios = [b / a for a, b in zip(d, d[1:]) if a > 1e-13]
    assert len(ratios) >= 2
    assert max(ratios) < 0.5


def test_reduced_divergence():
    with pytest.raises(ReducedSystemDivergence) as info:
        solve_reduced_system(None, 1.0, 5.8, 6, T, q1=lambda a, b, s: 1e4 * (a + b), coupling=True)
    deltas = [e["delta"] for e in info.value.log]
    assert deltas[-1] > deltas[-2] > deltas[-3] > deltas[-4]


def test_reduced_output_files(tmp_path):
    state = solve_reduced_system(None, 1.0, 5.8, 6, T, q1=lipschitz_q(0.1))
    norms = state.n1_norms()
    assert norms["total"] < norms["budget"]
    assert norms["margin"] == pytest.approx(norms["budget"] - norms["total"])
    # the iteration barely moves the leading drift's contribution
    assert norms["d1dot"] == pytest.approx(5.8 * T ** 0.05, rel=1e-3)
    csv_path = state.to_csv(tmp_path / "ode.csv")
    data = np.genfromtxt(csv_path, delimiter=",", names=True)
    assert data.dtype.names == ("t", "d1", "lam1", "d1dot", "lam1dot")
    np.testing.assert_array_equal(data["d1"], state.d1)
    log = json.loads(state.log_json(tmp_path / "log.json").read_text())
    assert log["iterations"][-1]["delta"] <= 1e-14
    p = state.to_path()
    assert p.d1(state.t[5]) == pytest.approx(state.d1[5], rel=1e-12)
