"""Statistics over ensembles: exit probabilities, decay exponents, cycle radii."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .classifier import Kind, StabilityVerdict, WeightFunction
from .errors import ConfigError, HorizonTooLong, WindowTooShort
from .sde import Ensemble, SimulationConfig, simulate_ensemble

Z95 = 1.959963984540054


def wilson_interval(k, n, z=Z95):
    """95% Wilson score interval; the rule of three at ``k = 0`` and ``k = n``."""
    if n <= 0:
        raise ConfigError("need at least one trial")
    if k == 0:
        return 0.0, min(1.0, 3.0 / n)
    if k == n:
        return max(0.0, 1.0 - 3.0 / n), 1.0
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class ExitEstimate:
    probability: float
    ci: tuple
    n_paths: int
    epsilon: float
    weight: dict | None
    exceedances: int
    truncated: int
    sup_grid: str = "step"
    scenario: dict = field(default_factory=dict)

    def to_record(self):
        rec = asdict(self)
        rec["ci"] = list(self.ci)
        return rec

    def to_json(self):
        return json.dumps(self.to_record(), indent=2, sort_keys=True)


def weighted_sup_log(ens: Ensemble, weight: WeightFunction | None):
    """Per-path ``max_t log(|z(t)| w(t))`` and the grid it was taken on."""
    if weight is None:
        with np.errstate(divide="ignore"):
            return np.log(ens.sup_absz), "step"
    if weight in ens.sup_log:
        return ens.sup_log[weight], "step"
    with np.errstate(divide="ignore"):
        vals = np.log(ens.absz) + weight.log(ens.times)[None, :]
    return vals.max(axis=1), "record"


def exit_probability(ens: Ensemble, epsilon, weight: WeightFunction | None = None) -> ExitEstimate:
    """Fraction of paths with ``sup_t |z(t)| w(t) > epsilon``.

    Truncated paths (blow-up or non-finite) count as exceedances.
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    sup_log, grid = weighted_sup_log(ens, weight)
    exceed = (sup_log > math.log(epsilon)) | ens.truncated
    k, n = int(exceed.sum()), ens.n_paths
    return ExitEstimate(
        probability=k / n,
        ci=wilson_interval(k, n),
        n_paths=n,
        epsilon=float(epsilon),
        weight=None if weight is None else weight.to_record(),
        exceedances=k,
        truncated=int(ens.truncated.sum()),
        sup_grid=grid,
        scenario={"system": ens.sys.describe(), "seed": ens.cfg.seed, "dt": ens.cfg.dt, "t1": ens.cfg.t1,
                  "z0": list(ens.cfg.z0), "scheme": ens.cfg.scheme},
    )


# decay fits ------------------------------------------------------------------

STATISTICS = ("median_absz", "median_E", "median_E_theta")


@dataclass
class DecayFit:
    exponent: float
    intercept: float
    window: tuple
    statistic: str
    residual: float
    level: float
    n_points: int

    def to_record(self):
        rec = asdict(self)
        rec["window"] = list(self.window)
        return rec


def fit_power_law(times, values, window, statistic="custom"):
    """Least squares of ``log values`` on ``log t`` inside ``window``.

    ``level`` is the median of ``values`` over the window.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    lo, hi = window
    if hi / lo < 10 * (1 - 1e-12):
        raise WindowTooShort(f"window [{lo:g}, {hi:g}] spans less than one decade")
    if lo < times[0] * (1 - 1e-12) or hi > times[-1] * (1 + 1e-12):
        raise WindowTooShort(f"window [{lo:g}, {hi:g}] leaves the simulated horizon [{times[0]:g}, {times[-1]:g}]")
    mask = (times >= lo * (1 - 1e-12)) & (times <= hi * (1 + 1e-12)) & (values > 0)
    if mask.sum() < 3:
        raise WindowTooShort("fewer than three positive samples inside the window")
    lt, lv = np.log(times[mask]), np.log(values[mask])
    slope, intercept = np.polyfit(lt, lv, 1)
    resid = float(np.sqrt(np.mean((lv - (slope * lt + intercept)) ** 2)))
    return DecayFit(
        exponent=float(slope),
        intercept=float(intercept),
        window=(float(lo), float(hi)),
        statistic=statistic,
        residual=resid,
        level=float(np.median(values[mask])),
        n_points=int(mask.sum()),
    )


def ensemble_statistic(ens: Ensemble, statistic, theta=0.5):
    """Per-time ensemble median of ``|z|``, ``E`` or ``E t^theta``."""
    if statistic == "median_absz":
        return np.median(ens.absz, axis=0)
    if statistic == "median_E":
        return np.median(ens.energy, axis=0)
    if statistic == "median_E_theta":
        return np.median(ens.energy * ens.times[None, :] ** theta, axis=0)
    raise ConfigError(f"unknown statistic {statistic!r}; choose from {STATISTICS}")


def decay_fit(ens: Ensemble, statistic, window, theta=0.5) -> DecayFit:
    """Log-log slope of a per-time ensemble median over ``window``."""
    return fit_power_law(ens.times, ensemble_statistic(ens, statistic, theta), window, statistic)


# cycles ----------------------------------------------------------------------


def cycle_radius(ens: Ensemble, tail_fraction=0.2):
    """Mean over paths of the time-averaged ``|z|`` on the final ``tail_fraction``
    of each path's record, with its standard error."""
    if not (0 < tail_fraction <= 0.5):
        raise ConfigError(f"tail_fraction must lie in (0, 0.5], got {tail_fraction}")
    n_rec = len(ens.times)
    start = int(math.floor(n_rec * (1 - tail_fraction)))
    per_path = ens.absz[:, start:].mean(axis=1)
    se = float(per_path.std(ddof=1) / math.sqrt(len(per_path))) if len(per_path) > 1 else 0.0
    return float(per_path.mean()), se


# practical stability ---------------------------------------------------------


def practical_stability_check(sys, verdict: StabilityVerdict, epsilon=None, eta=0.1, n_paths=200, seed=0,
                              dt=1e-3, scheme="symplectic", step_budget=10_000_000, jobs=1):
    """Simulate from ``|z0| = delta/2`` over the guaranteed horizon and count
    exits from the ``epsilon`` ball."""
    if verdict.kind != Kind.PRACTICALLY_STABLE or verdict.horizon is None:
        raise ConfigError("practical_stability_check needs a PracticallyStable verdict with a horizon")
    t0 = float(verdict.inputs.get("t0", 1.0))
    delta = float(verdict.inputs["delta"])
    eps = float(verdict.inputs["epsilon"] if epsilon is None else epsilon)
    horizon = verdict.horizon
    if not math.isfinite(horizon) or horizon / dt > step_budget:
        need = math.inf if not math.isfinite(horizon) else int(math.ceil(horizon / dt))
        raise HorizonTooLong(f"horizon {horizon:g} needs {need} steps at dt={dt:g} (budget {step_budget})", required_steps=need)
    cfg = SimulationConfig(t0=t0, t1=t0 + horizon, dt=min(dt, horizon), seed=seed, z0=(delta / 2, 0.0),
                           record_stride=max(1, int(horizon / dt) // 1000), scheme=scheme)
    ens = simulate_ensemble(sys, cfg, n_paths, jobs=jobs)
    est = exit_probability(ens, eps)
    return {
        "frequency": est.probability,
        "ci": list(est.ci),
        "eta": eta,
        "below_eta": est.ci[1] < eta,
        "horizon": horizon,
        "steps": cfg.n_steps,
        "delta": delta,
        "epsilon": eps,
        "n_paths": n_paths,
        "seed": seed,
        "truncated": est.truncated,
    }
