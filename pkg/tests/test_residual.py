import json

import numpy as np
import pytest

from bubblelab.ansatz import GeometryConfig, ParamPath, centers, eval_W1, eval_W2, frame
from bubblelab.bubble import DimensionConfig, bubble_U, kernel_Z1_axi
from bubblelab.residual import (E2_bar, Lattice, NormSpec, ansatz_field, ansatz_steps, apply_S,
                                binomial_remainder, error_terms_W1, error_terms_W2,
                                inner_expansion_E2, inner_pairing_Z0, residual_scan, nonlinear_N,
                                norm_a, norm_boundary, norm_delta, norm_nu2a, norm_star_a,
                                norm_starstar, potential_parts, potential_V,
                                residual_W2)

T = 1e-2


@pytest.fixture(scope="module")
def path():
    return ParamPath(6, T)


@pytest.fixture(scope="module")
def geom():
    return GeometryConfig(T)


def _samples(path, geom, count, seed, reach=3.0):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        t = T * rng.uniform(0.0, 0.99)
        xi, _ = centers(path, t)
        rad = float(path.d0(t)) * geom.b * reach * rng.uniform() ** 2
        th = rng.uniform(0, np.pi)
        if xi + rad * np.cos(th) > 1.0:
            out.append((t, xi + rad * np.cos(th), rad * np.sin(th)))
    return out


def test_S_vanishes_on_ode_solution():
    # u = (1 - t)^{-1} solves u_t = u^2 and is spatially constant
    u = lambda x1, rho, t: np.full(np.shape(x1), 1.0 / (1.0 - t))
    S, scale = apply_S(u, np.array([1.5, 2.0]), np.array([0.0, 0.3]), 0.2, 6, h=1e-2, dt=1e-4)
    assert np.max(np.abs(S) / scale) < 1e-10


def test_S_of_frozen_bubble_is_cylindrical_term():
    lam, xi = 0.05, 1.5
    c = DimensionConfig(6)
    u = lambda x1, rho, t: lam**-2 * bubble_U(np.hypot(x1 - xi, rho) / lam, c)
    x1 = np.array([1.52, 1.47, 1.5])
    rho = np.array([0.03, 0.01, 0.0])
    S, scale = apply_S(u, x1, rho, 0.0, c, h=1e-4 * lam)
    expected = lam**-3 * kernel_Z1_axi((x1 - xi) / lam, rho / lam, c) / x1
    np.testing.assert_allclose(S, expected, atol=1e-7 * np.max(scale))


def test_S_rejects_nonpositive_x1():
    with pytest.raises(ValueError):
        apply_S(lambda a, b, t: a, np.array([0.0]), np.array([0.0]), 0.0, 6)


@pytest.mark.parametrize("which", ["W1", "W2"])
def test_reassembly_against_finite_differences(path, geom, which):
    worst = 0.0
    for t, x1, rho in _samples(path, geom, 100, seed=5 if which == "W1" else 6):
        x1, rho = np.array([x1]), np.array([rho])
        h, dt = ansatz_steps(x1, rho, t, path, geom)
        if which == "W1":
            u = lambda a, b, s: eval_W1(a, b, s, path)
            analytic = error_terms_W2(x1, rho, t, path, geom).S_W1
        else:
            u = ansatz_field(path, geom)
            analytic = residual_W2(x1, rho, t, path, geom)
        S, scale = apply_S(u, x1, rho, t, 6, h=h, dt=dt)
        worst = max(worst, float(np.abs(S - analytic)[0] / scale[0]))
    assert worst < 1e-6


def test_e1_vanishes_at_center(path):
    t = 0.5 * T
    xi, _ = centers(path, t)
    lam = float(path.lam(t))
    e1, *_ = error_terms_W1(np.array([xi]), np.array([0.0]), t, path)
    # Z1(0) = 0; only the roundoff of xi - 1 - d survives
    assert abs(e1[0]) < 1e-12 * lam**-3


def test_e4_small(path):
    # lam^{(n+2)/2} |e4| is of size (lam0/d0)^{n+2} in the inner region, constant stable in t
    consts = []
    for f in (0.5, 0.8, 0.95, 0.99):
        t = f * T
        lam, d = float(path.lam(t)), float(path.d(t))
        xi, _ = centers(path, t)
        y = np.linspace(-0.09, 0.09, 41) * d / lam
        _, _, _, e4 = error_terms_W1(xi + lam * y, 0.0 * y, t, path)
        consts.append(np.max(np.abs(lam**4 * e4)) / float(path.ratio(t)) ** 8)
    assert np.all(np.isfinite(consts))
    assert max(consts) / min(consts) < 3.0


def test_e5_e6_vanish_outside_cutoff(path, geom):
    t = 0.5 * T
    xi, _ = centers(path, t)
    x1 = np.array([xi + 2.05 * geom.b * float(path.d0(t)), 2.0])
    terms = error_terms_W2(x1, np.array([0.0, 0.5]), t, path, geom)
    assert np.all(terms.e5 == 0.0) and np.all(terms.e6 == 0.0)
    assert np.all(terms.correction == 0.0)


def test_e5_scale(path, geom):
    consts = []
    for f in (0.5, 0.7, 0.9, 0.99):
        t = f * T
        lam = float(path.lam(t))
        xi, _ = centers(path, t)
        y = np.linspace(-10, 10, 81)
        y = y[lam * np.abs(y) < 0.09 * float(path.d(t))]
        e5 = error_terms_W2(xi + lam * y, 0.0 * y, t, path, geom).e5
        # both the scaling and the drift part of W_t contribute, see e5's expansion
        ref = lam * (abs(float(path.lamdot(t))) + abs(float(path.ddot(t)))) * float(path.ratio(t)) ** 4
        consts.append(np.max(np.abs(lam**4 * e5)) / ref)
    assert max(consts) / min(consts) < 2.0


def test_inner_expansion_leading_structure(path, geom):
    t = 0.9 * T
    y1 = np.array([0.0, 1.0, -2.0])
    yp = np.array([0.0, 0.5, 1.0])
    E = inner_expansion_E2(y1, yp, t, path, geom)
    assert np.all(E.E2_lambda == 0.0)
    assert E.E2_d[0] == 0.0


def test_inner_expansion_rejects_outer_points(path, geom):
    with pytest.raises(ValueError):
        inner_expansion_E2(np.array([1e6]), np.array([0.0]), 0.5 * T, path, geom)


def test_inner_remainder_power(path, geom):
    # measured remainder order: (lam0/d0)^n with a t-stable constant
    rng = np.random.default_rng(0)
    u = rng.uniform(-1, 1, (200, 2))
    ratios = []
    for f in (0.9, 0.97, 0.99, 0.999):
        t = f * T
        rmax = min(10.0, 0.09 * float(path.d(t) / path.lam(t)))
        y = u * rmax / np.sqrt(2)
        E = inner_expansion_E2(y[:, 0], np.abs(y[:, 1]), t, path, geom)
        ratios.append(np.max(np.abs(E.E_remainder)) / float(path.ratio(t)) ** 6)
    assert max(ratios) / min(ratios) < 1.2


def test_mode0_pairing_cancellation(path, geom):
    pair = inner_pairing_Z0(0.9 * T, path, geom)
    assert pair.cancellation >= 100.0
    assert pair.constituents["e2_scaling"] < 0 < pair.constituents["e2_mirror"]


def test_pairing_rejects_large_ball(path):
    with pytest.raises(ValueError):
        inner_pairing_Z0(0.9 * T, path, GeometryConfig(T, R=40.0))


def test_nonlinear_square_n6():
    rng = np.random.default_rng(0)
    W, w = rng.normal(size=50), rng.normal(size=50)
    np.testing.assert_array_equal(nonlinear_N(W, w, 6), w * w)
    assert np.all(nonlinear_N(W, 0.0 * w, 6) == 0.0)


@pytest.mark.parametrize("n", [7, 10])
def test_nonlinear_taylor(n):
    c = DimensionConfig(n)
    w = np.geomspace(1e-2, 1e-5, 4)
    err = np.abs(nonlinear_N(1.0, w, c) - 0.5 * c.p * (c.p - 1) * w**2) / w**2
    assert np.all(np.diff(err) < 0) and err[-1] < 1e-4
    with pytest.raises(ValueError):
        nonlinear_N(1.0, -2.0, c)


def test_binomial_remainder_continuous():
    s = np.array([0.2499999, 0.25, 0.2500001])
    v = binomial_remainder(s, 1.5)
    assert np.all(np.abs(np.diff(v)) < 1e-6)


def test_potential_regions(path, geom):
    t = 0.9 * T
    xi, _ = centers(path, t)
    lam0 = float(path.lam0(t))
    # inside |y| < R only the middle term survives: p (W2^{p-1} - (lam0 bubble)^{p-1})
    x1 = np.array([xi + 0.5 * geom.R * lam0])
    V = potential_V(x1, np.array([0.0]), t, path, geom)
    inner = lam0**-2 * bubble_U(0.5 * geom.R, 6)
    expected = 2.0 * (eval_W2(x1, np.array([0.0]), t, path, geom)[0] - inner)
    assert V[0] == pytest.approx(expected, rel=1e-6)
    far = np.array([1.8])
    Vf = potential_V(far, np.array([0.5]), t, path, geom)
    assert Vf[0] == pytest.approx(2.0 * eval_W2(far, np.array([0.5]), t, path, geom)[0])


def test_potential_outer_part_scales_like_R_minus_two():
    # the (1 - eta_R) eta_R' part obeys |V| <= A lam^-2 R^-2 / (1 + |y|^2) with R-stable A
    consts = []
    for R in (20.0, 40.0):
        T_ = 1e-5
        p, g = ParamPath(6, T_), GeometryConfig(T_, R=R)
        t = 0.9 * T_
        lam = float(p.lam(t))
        xi, _ = centers(p, t)
        y = np.linspace(0.0, 3.0 * R, 3000)
        parts = potential_parts(xi + lam * y, 0.0 * y, t, p, g)
        consts.append(np.max(np.abs(parts[0]) * lam**2 * R**2 * (1 + y**2)))
    assert max(consts) / min(consts) < 2.0


def test_norm_spec_defaults():
    s = NormSpec()
    assert s.nu == pytest.approx(4.9 / 4)
    assert s.beta == pytest.approx(2.0 - 5.8 / 4)
    with pytest.raises(ValueError):
        NormSpec(alpha=0.4, a=0.3)


def test_norms_vanish_and_homogeneous(path, geom):
    spec = NormSpec()
    lat = Lattice(R=10.0, radial=16, angular=3, times=4)
    f = lambda x1, rho, t: E2_bar(x1, rho, t, path, geom)
    zero = lambda x1, rho, t: 0.0 * x1
    for norm in (norm_starstar, norm_a, norm_star_a):
        assert norm(zero, path, spec, lat, geom).value == 0.0
        a = norm(f, path, spec, lat, geom).value
        b = norm(lambda x1, rho, t: -3.0 * f(x1, rho, t), path, spec, lat, geom).value
        assert a > 0 and b == pytest.approx(3.0 * a, rel=1e-14)
    assert norm_boundary(zero, path, spec, geom, lat).value == 0.0
    assert norm_delta(np.zeros(4), np.linspace(0, T, 4), T, 0.5) == 0.0
    assert norm_nu2a(lambda a, b, t: 0.0 * a, path, spec, 10.0, lat).value == 0.0


def test_norm_of_its_own_weight(path, geom):
    spec = NormSpec()
    lat = Lattice(R=10.0, radial=16, angular=3, times=4)
    k = 2.0

    def weight(x1, rho, t):
        fr = frame(x1, rho, t, path)
        return float(path.ratio(t)) ** (4 + spec.sigma) * fr.lam ** (-2 - k) \
            / (1 + fr.r ** (2 + spec.alpha))
    assert norm_starstar(weight, path, spec, lat, geom).value == pytest.approx(1.0, rel=1e-6)
    t = np.linspace(0, 0.9 * T, 10)
    assert norm_delta((T - t) ** 0.7, t, T, 0.7) == pytest.approx(1.0)


def test_norms_reject_nonfinite(path, geom):
    with pytest.raises(FloatingPointError):
        norm_starstar(lambda a, b, t: np.full(np.shape(a), np.nan), path, NormSpec(),
                      Lattice(R=10.0, radial=4, angular=2, times=2), geom)


def test_scan_table_shape_and_csv(tmp_path):
    lat = Lattice(radial=24, angular=5, times=8)
    tab = residual_scan((1e-2, 1e-3), (10.0, 20.0), lattice=lat)
    assert len(tab.rows) == 4
    assert all(np.isfinite(r.ratio) and r.ratio > 0 for r in tab.rows)
    out = tab.to_csv(tmp_path / "scan.csv")
    lines = out.read_text().splitlines()
    meta = json.loads(lines[0][2:])
    assert "lattice" in meta and lines[1] == "T,R,norm,bound,ratio,boundary_norm"


def test_boundary_norm_of_W2_bounded():
    spec = NormSpec()
    vals = []
    for T_ in (1e-2, 1e-3):
        p, g = ParamPath(6, T_), GeometryConfig(T_)
        vals.append(norm_boundary(lambda a, b, t: eval_W2(a, b, t, p, g), p, spec, g,
                                  Lattice(times=8)).value / T_ ** (0.1 / 2))
    assert all(np.isfinite(vals))
