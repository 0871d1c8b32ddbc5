import math

import numpy as np
import pytest
from scipy.special import ellipe
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ellipk, ex3_cycle, ex3_lambda2
from stochavg import spectral
from stochavg.averaging import (
    CYCLE,
    DEGENERATE,
    LINEAR,
    NONLINEAR,
    AveragedDrift,
    average_system,
    averaging_recursion,
    default_energy_grid,
    energy_angle_coefficients,
    find_cycle_root,
    fit_exponents,
    monomial_fit,
    residual_slope,
)
from stochavg.errors import ConfigError, FitAmbiguous, GridTooCoarse, OrderTooHigh
from stochavg.expr import parse
from stochavg.hamiltonian import OrbitCache
from stochavg.perturbation import PerturbationSeries, assemble_system, harmonic_hamiltonian, registry_get


@pytest.mark.parametrize("lam,mu", [(-1, 1), (0.3, 1), (1, 0)])
def test_ex0_linear_oracle(averaged, lam, mu):
    _, drift = averaged("ex0", **{"lambda": lam, "mu": mu})
    e = drift.e_grid
    assert np.max(np.abs(drift.Lambda(2) / ((lam + mu**2 / 2) * e) - 1)) < 1e-8
    assert np.max(np.abs(drift.Lambda(1))) < 1e-12


def test_ex3_closed_form(averaged):
    _, drift = averaged("ex3", a1=1, a2=-2, mu=0.5)
    e = drift.e_grid
    sel = (e >= 0.05) & (e <= 1.5)
    ref = ex3_lambda2(e[sel], 1, -2, 0.5)
    assert np.max(np.abs(drift.Lambda(2)[sel] / ref - 1)) < 1e-6


def pendulum_action(E):
    k2 = E / 2
    return 8 / math.pi * (ellipe(k2) - (1 - k2) * ellipk(math.sqrt(k2)))


def test_pendulum_first_order_drift(averaged):
    # Lambda_1 = lambda <Y^2> and <Y^2> = nu(E) I(E) with the action I
    sys, drift = averaged("ex1", h=1, p=1, q=2, **{"lambda": -1, "mu": 1})
    e = drift.e_grid
    ref = np.array([-pendulum_action(E) * math.pi / (2 * ellipk(math.sqrt(E / 2))) for E in e])
    assert np.allclose(drift.Lambda(1), ref, rtol=1e-7)


def test_pendulum_second_order_linear_part(averaged):
    _, drift = averaged("ex1", h=2, p=1, q=2, **{"lambda": -1, "mu": 1})
    fit = fit_exponents(drift)
    assert fit.case_tag == LINEAR and fit.n == 2
    assert fit.lambda_n == pytest.approx(-0.5, abs=1e-8)


def test_v_has_zero_mean_and_vanishes_at_small_energy(averaged):
    _, drift = averaged("ex2", a2=-2, a4=-0.25, b1=1, b2=1)
    for k, v in drift.v_tables.items():
        scale = max(np.abs(v).max(), 1e-300)
        assert np.abs(v.mean(axis=1)).max() <= 1e-10 * scale
        # v_k = O(E)
        ratio = np.abs(v).max(axis=1) / drift.e_grid
        assert ratio[:5].max() < 10 * (1 + ratio[5:20].max())


# hand transcription of the explicit R_2 and R_3 on a synthetic system -----------------


def synthetic(q):
    pert = PerturbationSeries(
        q=q,
        h_terms={1: parse("0.3*x*y")},
        f_terms={1: parse("-0.7*y + 0.4*x^2*y"), 2: parse("0.5*x*y^2"), 3: parse("0.2*y")},
        b_terms={(2, 2, 1): parse("0.8*x"), (1, 1, 1): parse("0.3*y"), (2, 1, 1): parse("0.2*x")},
        k_max=3,
    )
    return assemble_system(harmonic_hamiltonian(), pert)


@pytest.mark.parametrize("q", [1, 2, 3])
def test_general_recursion_matches_explicit_low_orders(q):
    sys = synthetic(q)
    e = default_energy_grid(sys.ham.e0)
    cache = OrbitCache(sys.ham, derivatives=True)
    T = energy_angle_coefficients(sys, cache, e)
    drift = averaging_recursion(T, 3, e0=sys.ham.e0)

    nu = T.nu[:, None]
    avg = lambda a: a.mean(axis=1)  # noqa: E731
    solve = lambda C: -spectral.periodic_antiderivative(C, axis=1) / nu  # noqa: E731
    dE = lambda a, n=1: spectral.grid_derivative(a, e, n, axis=0)  # noqa: E731
    dP = lambda a, n=1: spectral.periodic_derivative(a, n, axis=1)  # noqa: E731
    f, g, b = T.f, T.g, T.beta
    old = lambda m, vs: vs.get(m, 0.0)  # noqa: E731  v_m, zero outside 1..N

    L1 = avg(f(1))
    v1 = solve(f(1))
    R2 = f(1) * dE(v1) + g(1) * dP(v1) - v1 * dE(L1)[:, None] - (2 - q) / q * old(2 - q, {1: v1})
    L2 = avg(f(2) + R2)
    v2 = solve(f(2) + R2)
    vs = {1: v1, 2: v2}
    R3 = (
        f(1) * dE(v2) + g(1) * dP(v2) - v1 * dE(L2)[:, None]
        + f(2) * dE(v1) + g(2) * dP(v1) - v2 * dE(L1)[:, None]
        - v1**2 / 2 * dE(L1, 2)[:, None]
        - (3 - q) / q * old(3 - q, vs)
        + 0.5 * (
            (b(1, 1, 1) ** 2 + b(1, 2, 1) ** 2) * dE(v1, 2)
            + 2 * (b(1, 1, 1) * b(2, 1, 1) + b(1, 2, 1) * b(2, 2, 1)) * dP(dE(v1))
            + (b(2, 1, 1) ** 2 + b(2, 2, 1) ** 2) * dP(v1, 2)
        )
    )
    L3 = avg(f(3) + R3)
    scale = np.abs(L2).max()
    assert np.allclose(drift.Lambda(1), L1, atol=1e-13)
    assert np.allclose(drift.Lambda(2), L2, atol=1e-10 * scale)
    assert np.allclose(drift.Lambda(3), L3, atol=1e-9 * np.abs(L3).max())


# exponent fits ---------------------------------------------------------------------

E = default_energy_grid(2.0)


def tables(**lams):
    return AveragedDrift.from_tables(E, {int(k[1:]): v for k, v in lams.items()}, q=4, e0=2.0)


@settings(max_examples=40, deadline=None)
@given(d=st.integers(1, 4), lam=st.floats(0.05, 20) | st.floats(-20, -0.05), c1=st.floats(-2, 2))
def test_monomial_fit_recovers_degree_and_coefficient(d, lam, c1):
    v = E[E <= 0.2]
    vals = lam * v**d * (1 + c1 * v)
    got_d, got_lam, _ = monomial_fit(v, vals)
    assert got_d == d
    assert got_lam == pytest.approx(lam, rel=1e-8)


def test_fit_cases():
    fit = fit_exponents(tables(L2=-0.75 * E**2 * (1 + E), L4=0.25 * E))
    assert (fit.case_tag, fit.n, fit.m, fit.l) == (NONLINEAR, 2, 2, 2)
    assert fit.lambda_nm == pytest.approx(-0.75, rel=1e-8)
    assert fit.lambda_nl == pytest.approx(0.25, rel=1e-8)

    fit = fit_exponents(tables(L1=-E * (1 + 0.1 * E)))
    assert (fit.case_tag, fit.n, fit.lambda_n) == (LINEAR, 1, pytest.approx(-1.0, rel=1e-8))

    fit = fit_exponents(tables(L2=E**2 * (1 - E)))
    assert fit.case_tag == CYCLE
    assert fit.cycle_roots[0]["c"] == pytest.approx(1.0, abs=1e-8)
    assert fit.cycle_roots[0]["stable"]
    fit = fit_exponents(tables(L2=E**2 * (E - 1)))
    assert fit.case_tag == CYCLE and not fit.cycle_roots[0]["stable"]

    fit = fit_exponents(tables(L2=np.zeros_like(E)))
    assert fit.case_tag == DEGENERATE and fit.n is None


def test_fit_errors():
    with pytest.raises(FitAmbiguous) as info:
        fit_exponents(tables(L2=E**1.5))
    assert info.value.slope == pytest.approx(1.5, abs=0.01)
    with pytest.raises(FitAmbiguous):
        fit_exponents(tables(L2=E * (E - 0.05)))
    with pytest.raises(ConfigError):
        fit_exponents(tables(L2=E), fit_window=(1e-3, 0.5))
    with pytest.raises(GridTooCoarse):
        fit_exponents(tables(L2=E), fit_window=(0.01, 0.02))


def test_ex3_cycle_root(averaged):
    _, drift = averaged("ex3", a1=1, a2=-2, mu=0.5)
    c, dl = find_cycle_root(drift, 2)
    assert c == pytest.approx(ex3_cycle(1, -2, 0.5), abs=1e-5)
    assert dl == pytest.approx(-(2 + 0.25) / (2 * (1 + 2 * c)), rel=1e-4)


def test_ex3_cycle_without_noise(averaged):
    _, drift = averaged("ex3", a1=0.5, a2=-2, mu=0.0)
    c, dl = find_cycle_root(drift, 2)
    assert c == pytest.approx(0.5, abs=1e-5) and dl < 0


def test_order_checks():
    sys = registry_get("ex0", {"lambda": -1, "mu": 1})
    with pytest.raises(OrderTooHigh):
        average_system(sys, N=9)


def test_generator_residual_scaling(averaged):
    sys, _ = averaged("ex1", h=2, p=1, q=2, **{"lambda": -1, "mu": 1})
    drift = average_system(sys, N=2)
    slope, peak = residual_slope(sys, drift, drift.e_grid[[20, 30, 38, 44]])
    assert slope <= -1.4
    assert np.all(np.diff(peak) < 0)


def test_csv_output(tmp_path, averaged):
    _, drift = averaged("ex0", **{"lambda": -1, "mu": 1})
    p = tmp_path / "L2.csv"
    drift.to_csv(2, p)
    rows = p.read_text().splitlines()
    assert rows[0] == "E,Lambda_2"
    assert len(rows) == len(drift.e_grid) + 1
    e, lam = (float(s) for s in rows[5].split(","))
    assert lam == pytest.approx(-0.5 * e, rel=1e-8)
