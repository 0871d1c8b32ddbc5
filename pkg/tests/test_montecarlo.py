import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import wilson
from stochavg.classifier import Kind, WeightFunction, classify_linear
from stochavg.averaging import LINEAR, ExponentFit
from stochavg.errors import ConfigError, HorizonTooLong, WindowTooShort
from stochavg.montecarlo import (
    cycle_radius,
    decay_fit,
    exit_probability,
    fit_power_law,
    practical_stability_check,
    wilson_interval,
)
from stochavg.perturbation import NoiseBound, registry_get
from stochavg.sde import SimulationConfig, simulate_ensemble


@given(n=st.integers(2, 5000), data=st.data())
def test_wilson_matches_oracle(n, data):
    k = data.draw(st.integers(1, n - 1))
    lo, hi = wilson_interval(k, n)
    olo, ohi = wilson(k, n)
    assert (lo, hi) == pytest.approx((olo, ohi), abs=1e-14)
    assert lo <= k / n <= hi


def test_wilson_rule_of_three():
    assert wilson_interval(0, 400) == (0.0, 3 / 400)
    assert wilson_interval(400, 400) == (1 - 3 / 400, 1.0)
    assert wilson_interval(0, 2) == (0.0, 1.0)
    with pytest.raises(ConfigError):
        wilson_interval(0, 0)


def test_wilson_width_shrinks_like_root_n():
    w1 = np.diff(wilson_interval(30, 100))[0]
    w2 = np.diff(wilson_interval(120, 400))[0]
    assert w1 / w2 == pytest.approx(2.0, rel=0.05)


@pytest.fixture(scope="module")
def small_ens():
    sys = registry_get("ex0", {"lambda": -1.0, "mu": 1.0})
    cfg = SimulationConfig(t0=1, t1=51, dt=1e-2, seed=4, z0=(0.4, 0.0), scheme="symplectic", record_stride=10)
    return simulate_ensemble(sys, cfg, 100)


def test_exit_trivial_cases(small_ens):
    big = exit_probability(small_ens, 1e6)
    assert big.probability == 0 and big.ci == (0.0, 0.03)
    small = exit_probability(small_ens, 0.39)
    assert small.probability == 1


def test_exit_truncated_count_as_exceedances(small_ens):
    est0 = exit_probability(small_ens, 1e6)
    small_ens.blowup[:7] = True
    try:
        est = exit_probability(small_ens, 1e6)
    finally:
        small_ens.blowup[:7] = False
    assert est.exceedances == 7 and est.truncated == 7 and est0.exceedances == 0


def test_exit_weighted_on_records_vs_steps():
    sys = registry_get("ex0", {"lambda": -1.0, "mu": 1.0})
    w = WeightFunction(n=2, q=2, prefactor=0.2)
    cfg = SimulationConfig(t0=1, t1=51, dt=1e-2, seed=4, z0=(0.4, 0.0), scheme="symplectic", record_stride=10)
    ens = simulate_ensemble(sys, cfg, 50, weights=[w])
    step = exit_probability(ens, 0.5, w)
    ens.sup_log.clear()
    rec = exit_probability(ens, 0.5, w)
    assert step.sup_grid == "step" and rec.sup_grid == "record"
    # the step grid contains the record grid, so it can only see more exceedances
    assert step.exceedances >= rec.exceedances
    assert exit_probability(ens, 0.5).exceedances <= step.exceedances


def test_exit_example_ex1():
    sys = registry_get("ex1", dict(h=1, p=1, q=2, **{"lambda": -1.0, "mu": 1.0}))
    cfg = SimulationConfig(t0=1, t1=1e3, dt=1e-2, seed=1, z0=(0.1, 0.0), scheme="symplectic", record_stride=1000)
    est = exit_probability(simulate_ensemble(sys, cfg, 400), 0.5)
    assert est.probability <= 0.05


def test_decay_fit_deterministic_ex0():
    sys = registry_get("ex0", {"lambda": -1.0, "mu": 0.0})
    cfg = SimulationConfig(t0=1, t1=1e3, dt=1e-2, z0=(0.4, 0.0), scheme="symplectic", record_stride=10)
    fit = decay_fit(simulate_ensemble(sys, cfg, 1), "median_absz", (10, 1e3))
    assert fit.exponent == pytest.approx(-0.5, abs=0.05)


@given(p=st.floats(-2, 2), c=st.floats(0.1, 10))
def test_power_law_recovers_synthetic(p, c):
    t = np.geomspace(1, 1e4, 200)
    fit = fit_power_law(t, c * t**p, (10, 1e4))
    assert fit.exponent == pytest.approx(p, abs=1e-3)
    assert fit.residual < 1e-9


def test_window_errors():
    t = np.geomspace(1, 1e4, 50)
    with pytest.raises(WindowTooShort):
        fit_power_law(t, t, (100, 500))
    with pytest.raises(WindowTooShort):
        fit_power_law(t, t, (100, 1e5))
    with pytest.raises(WindowTooShort):
        fit_power_law(t, -t, (10, 1e3))


def test_cycle_radius_focus():
    sys = registry_get("ex0", {"lambda": -2.0, "mu": 0.0})
    cfg = SimulationConfig(t0=1, t1=1e3, dt=1e-2, z0=(0.4, 0.0), scheme="symplectic", record_stride=10)
    mean, se = cycle_radius(simulate_ensemble(sys, cfg, 1), 0.2)
    assert mean < 0.4 * 1e-2**1 * 2 and se == 0.0
    with pytest.raises(ConfigError):
        cycle_radius(simulate_ensemble(sys, cfg, 1), 0.7)


@pytest.mark.parametrize("r0", [0.8, 1.3])
def test_cycle_radius_noise_free_ex3(r0):
    # a1 = 1/2, a2 = -2, mu = 0: c = 1/2 and sqrt(2c) = 1
    sys = registry_get("ex3", {"a1": 0.5, "a2": -2.0, "mu": 0.0})
    cfg = SimulationConfig(t0=1, t1=1e4, dt=1e-2, z0=(r0, 0.0), scheme="symplectic", record_stride=100)
    mean, _ = cycle_radius(simulate_ensemble(sys, cfg, 1), 0.2)
    assert mean == pytest.approx(1.0, rel=0.05)


def _practical(lam, mu, delta, epsilon):
    fit = ExponentFit(n=1, case_tag=LINEAR, lambda_n=lam)
    return classify_linear(fit, 2, NoiseBound(mu=mu, sigma=0.5), delta=delta, epsilon=epsilon)


def test_practical_check_runs():
    sys = registry_get("ex1", dict(h=1, p=1, q=2, **{"lambda": 0.2, "mu": 1.0}))
    v = _practical(0.2, 1.0, 0.1, 1.0)
    assert v.kind == Kind.PRACTICALLY_STABLE
    rep = practical_stability_check(sys, v, n_paths=50, dt=1e-2)
    assert rep["horizon"] == v.horizon and 0 <= rep["frequency"] <= 1
    assert rep["below_eta"] == (rep["ci"][1] < 0.1)


def test_practical_check_epsilon_below_start():
    sys = registry_get("ex1", dict(h=1, p=1, q=2, **{"lambda": 0.2, "mu": 1.0}))
    rep = practical_stability_check(sys, _practical(0.2, 1.0, 0.1, 1.0), epsilon=0.04, n_paths=20, dt=1e-2)
    assert rep["frequency"] == 1.0


def test_practical_horizon_too_long():
    # 0 < lambda <= mu^2/2 with mu small: the horizon scales like 1/mu^2
    sys = registry_get("ex1", dict(h=1, p=1, q=2, **{"lambda": 1e-7, "mu": 1e-3}))
    with pytest.raises(HorizonTooLong) as exc:
        practical_stability_check(sys, _practical(1e-7, 1e-3, 0.5, 1.0), dt=1e-2)
    assert exc.value.required_steps > 10_000_000
    with pytest.raises(ConfigError):
        practical_stability_check(sys, classify_linear(ExponentFit(n=1, case_tag=LINEAR, lambda_n=-1.0), 2))
