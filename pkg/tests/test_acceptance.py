"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest -v tests/test_acceptance.py`` (lines are printed even when
output is captured) or directly with ``python3 tests/test_acceptance.py``.
"""

from fractions import Fraction

import numpy as np
import pytest
from scipy.integrate import quad

from bubblelab.ansatz import GeometryConfig, ParamPath
from bubblelab.bubble import (DimensionConfig, bubble_integrals, bubble_residual, bubble_U_pm1,
                              fd_kernel_residual, fd_radial_operator, kernel_Z0, pi_profile,
                              potential)
from bubblelab.correction import correction_h, default_correction
from bubblelab.inner_modes import mode0_inverse, mode1_inverse
from bubblelab.param_odes import lambda0_ode_residual
from bubblelab.pdesim import (AxiField, AxiGrid, Stepper, fit_rate, ode_blowup_solution,
                              run_from_ansatz)
from bubblelab.residual import inner_pairing_Z0, residual_scan
from bubblelab.spectral import coercivity_constant, negative_eigenpair


def report(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    print(line, flush=True)
    return line


def _order(errors):
    errors = np.asarray(errors)
    return np.log2(errors[:-1] / errors[1:])


# ----------------------------------------------------------------------------


def criterion_1():
    worst = 0.0
    for n in range(6, 12):
        r = np.concatenate([np.geomspace(1e-4, 1.0, 400), np.linspace(1.0, 1e3, 4000)])
        worst = max(worst, np.max(np.abs(bubble_residual(r, n, relative=True))))
    orders = []
    for mode in (0, 1):
        errs = [fd_kernel_residual(6, h, mode=mode) for h in (1e-2, 5e-3, 2.5e-3)]
        orders.append(float(np.min(_order(errs))))
    ok = worst < 1e-10 and min(orders) >= 1.8
    return ok, f"max relative residual of U {worst:.1e}, kernel FD orders {orders[0]:.2f}/{orders[1]:.2f}"


def criterion_2():
    worst = 0.0
    for n in (6, 7, 8):
        c = DimensionConfig(n)
        ints = bubble_integrals(c)
        lhs = -c.p * ints.int_Upm1_Z0
        rhs = 0.5 * (n - 2) * ints.int_Up
        worst = max(worst, abs(lhs - rhs) / abs(rhs))
    return worst < 1e-6, f"max relative defect {worst:.1e} for n = 6, 7, 8"


def criterion_3():
    t = np.linspace(0.0, 0.99, 20)
    res = max(float(np.max(lambda0_ode_residual(t, n))) for n in (6, 7, 8))
    gamma = DimensionConfig(6).gamma_exact
    ok = res < 1e-8 and gamma == Fraction(3)
    return ok, f"scaling ODE residual {res:.1e} at 20 times, gamma(d = 7) = {gamma}"


def criterion_4():
    h = default_correction(6)
    r = np.linspace(0.1, 500.0, 4000)
    lhs = fd_radial_operator(h, r, 1e-3 * np.maximum(r, 1.0), 6,
                             potential_fn=lambda s: potential(s, 6), order=4)
    trip = float(np.max(np.abs(lhs - h.forcing(r))))
    rr = np.linspace(10.0, 100.0, 500)
    a = np.max(rr**2 * np.abs(correction_h(6, nodes=512)(rr)))
    b = np.max(rr**2 * np.abs(correction_h(6, nodes=4096)(rr)))
    ok = trip < 1e-5 and 0.9 <= a / b <= 1.1
    return ok, f"round trip {trip:.1e}, tail sup r^2|h| coarse/fine = {a / b:.4f}"


def criterion_5():
    eig = negative_eigenpair(6)
    positive = bool(np.all(eig.Z.values[:-1] > 0))
    rate = eig.decay_rate / np.sqrt(-eig.mu0)
    ok = eig.mu0 < 0 and eig.gap > 1e-3 and positive and abs(rate - 1) < 0.1
    return ok, (f"mu0 = {eig.mu0:.4f}, gap {eig.gap:.3f}, Z positive {positive}, "
                f"tail rate / sqrt|mu0| = {rate:.3f}")


def criterion_6():
    res = [coercivity_constant(6, R) for R in (10.0, 20.0, 40.0)]
    g = np.array([c.gamma_R for c in res])
    unc = max(c.unconstrained_min for c in res)
    ok = np.all(g > 0) and unc < 0 and g.max() / g.min() <= 3
    return ok, f"gamma_R = {', '.join(f'{v:.4f}' for v in g)}, unconstrained min {unc:.3f}"


def criterion_7():
    T = 1e-2
    pair = inner_pairing_Z0(0.9 * T, ParamPath(6, T), GeometryConfig(T))
    return pair.cancellation >= 100, (f"largest constituent / total = {pair.cancellation:.0f} "
                                      f"(R = 10, t = 0.9T)")


def criterion_8():
    table = residual_scan()
    spread = table.spread()
    power, err = table.R_power()
    ok = spread <= 4 and abs(power + 2) <= 0.6
    return ok, (f"max/median ratio {spread:.2f} (need <= 4), R-power {power:.2f} +- {err:.2f} "
                "(need -2 +- 30%)")


def _orthogonalise(f, kernel, R, n=6):
    num = quad(lambda s: f(s) * kernel(s) * s ** (n - 1), 0, 2 * R, limit=400)[0]
    den = quad(lambda s: kernel(s) ** 2 * s ** (n - 1), 0, 2 * R, limit=400)[0]
    return lambda s: f(s) - num / den * kernel(s)


def criterion_9():
    f0 = _orthogonalise(lambda s: bubble_U_pm1(s, 6) * np.cos(s), lambda s: kernel_Z0(s, 6), 20)
    e0 = mode0_inverse(f0, 6, R=20.0).round_trip_error(np.linspace(0.1, 36.0, 800))
    phi = mode1_inverse(lambda s: bubble_U_pm1(s, 6) * np.cos(s), 20.0, 6)
    e1 = phi.round_trip_error(np.linspace(0.1, 36.0, 800))
    H = mode0_inverse(lambda s: pi_profile(s, 6), 6, R=1000.0, rtol=1e-5)
    h = default_correction(6)
    r = np.linspace(0.1, 100.0, 3000)
    gap = H(r) + h(r)
    Z = kernel_Z0(r, 6)
    kern = np.max(np.abs(gap - (gap @ Z) / (Z @ Z) * Z)) / np.max(np.abs(h(r)))
    ok = max(e0, e1, kern) < 1e-5
    return ok, f"round trips {e0:.1e} (mode 0), {e1:.1e} (mode 1); kernel consistency {kern:.1e}"


def criterion_10():
    geom = GeometryConfig(1e-2)
    grid = AxiGrid.uniform(geom, 6, 10, 8)
    fld = AxiField.from_function(grid, lambda X, R: np.full_like(X, 3.0))
    st = Stepper(2.0, diffusion=False)
    _, tb = ode_blowup_solution(3.0, 0.0, 2.0)
    ode = 0.0
    while fld.t < 0.9 * tb:
        fld = st.step(fld, min(st.stable_dt(fld, 0.05, 1.0), 0.9 * tb - fld.t))
        ode = max(ode, np.max(np.abs(fld.interior / ode_blowup_solution(3.0, fld.t, 2.0)[0] - 1)))

    import sympy as sp
    x, rr, t = sp.symbols("x r t")
    ue = sp.sin(sp.pi * (x - 1) / 1.5) * sp.cos(sp.pi * rr / 3) * sp.exp(-t)
    lap = sp.diff(ue, x, 2) + sp.diff(ue, x) / x + sp.diff(ue, rr, 2) + 4 / rr * sp.diff(ue, rr)
    src = sp.lambdify((x, rr, t), sp.diff(ue, t) - lap - ue**2, "numpy")
    exact = sp.lambdify((x, rr, t), ue, "numpy")
    errs = []
    for cells in (20, 40, 80):
        g = AxiGrid.build(geom, 6, center=1.3, h_min=0.9 / cells, nx=cells, nr=cells // 2)
        f = AxiField.from_function(g, lambda X, R: exact(X, R, 0.0))
        s = Stepper(2.0, scheme="pr", source=lambda X, R, T: src(X, np.where(R == 0, 1e-9, R), T))
        for _ in range(cells):
            f = s.step(f, 0.05 / cells)
        X, R = np.meshgrid(g.x1, g.rho, indexing="ij")
        errs.append(np.max(np.abs(f.values - exact(X, R, 0.05))))
    order = float(np.min(_order(errs)))

    tt = np.linspace(0.0, 0.09, 200)
    fits = [fit_rate((tt, (0.1 - tt) ** (-g)), 6).exponent for g in (3.0, 1.0)]
    ok = ode < 1e-6 and order >= 1.8 and abs(fits[0] - 3) <= 0.01 and abs(fits[1] - 1) <= 0.01
    return ok, (f"ODE mode {ode:.1e}, manufactured order {order:.2f}, "
                f"synthetic exponents {fits[0]:.4f} / {fits[1]:.4f}")


def criterion_11():
    T = 1e-2
    path = ParamPath(6, T)
    run = run_from_ansatz(path, GeometryConfig(T), stop_fraction=0.25)
    tr = run.trace
    t = np.asarray(tr.t)
    ratio = np.asarray(tr.lam_num) / path.lam0(t)
    inside = (ratio >= 0.5) & (ratio <= 2.0)
    bad = np.flatnonzero(~inside)
    left = t[bad[0]] if bad.size else None
    reached = tr.termination == "stop_time"
    try:
        fit = fit_rate(tr, 6)
        rate = f"fitted exponent {fit.exponent:.3f} +- {fit.stderr:.3f} (Type I 1, Type II 3)"
    except ValueError as exc:
        rate = f"rate fit unavailable ({exc}) (Type I 1, Type II 3)"
    ok = reached and bool(np.all(inside))
    where = "never" if left is None else f"at t = {left:.3e} = {left / T:.2e} T"
    return ok, (f"run ended by {tr.termination} at t = {t[-1]:.3e}; lam_num/lam0 left [1/2, 2] "
                f"{where}; {rate}")


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 12)}


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    ok, detail = CRITERIA[number]()
    with capsys.disabled():
        print()
        report(number, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    for k, fn in CRITERIA.items():
        report(k, *fn())
