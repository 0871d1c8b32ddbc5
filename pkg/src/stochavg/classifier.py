"""Stability verdicts from fitted averaged drifts and noise bounds.

Three families of results are covered: a linear leading averaged drift
``Lambda_n ~ lambda_n v``, a nonlinear one ``Lambda_n ~ lambda_{n,m} v^m``
followed by a linear ``Lambda_{n+l}``, and a stable level ``c`` of ``Lambda_n``
with ``n = q``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np

from .averaging import LINEAR, NONLINEAR, AveragedDrift, ExponentFit, find_cycle_root
from .errors import BadKappa, BadOrder, ConfigError, HypothesisViolated, MissingNoiseBound
from .perturbation import NoiseBound

DEFAULT_KAPPA = 0.05
ZERO_TOL = 1e-9


class Kind(str, Enum):
    EXPONENTIALLY_STABLE = "ExponentiallyStable"
    POLYNOMIALLY_STABLE = "PolynomiallyStable"
    NEUTRALLY_STABLE = "NeutrallyStable"
    WEIGHTED_STABLE = "WeightedStable"
    UNSTABLE = "Unstable"
    WEIGHTED_UNSTABLE = "WeightedUnstable"
    PRACTICALLY_STABLE = "PracticallyStable"
    POLYNOMIAL_DECAY_TO_ZERO = "PolynomialDecayToZero"
    STABLE_CYCLE = "StableCycle"
    INCONCLUSIVE = "Inconclusive"


# tags naming the result each verdict rests on
TAG_LINEAR_STABLE = "linear/stability"
TAG_LINEAR_UNSTABLE = "linear/instability"
TAG_PRACTICAL = "linear/practical-stability"
TAG_NONLINEAR_STABLE = "nonlinear/stability"
TAG_NONLINEAR_UNSTABLE = "nonlinear/instability"
TAG_CYCLE = "cycle/stability"


@dataclass(frozen=True)
class WeightFunction:
    """``gamma_n(t)^prefactor * t^(extra/2)``."""

    n: int
    q: int
    prefactor: float = 1.0
    extra: float = 0.0

    def log_gamma(self, t):
        t = np.asarray(t, dtype=float)
        if self.n == self.q:
            return np.log(t)
        return (self.q / (self.q - self.n)) * np.power(t, 1.0 - self.n / self.q)

    def log(self, t):
        """``log`` of the weight; vectorized."""
        out = self.prefactor * self.log_gamma(t)
        if self.extra:
            out = out + 0.5 * self.extra * np.log(np.asarray(t, dtype=float))
        return out

    def to_record(self):
        return {"n": self.n, "q": self.q, "prefactor": self.prefactor, "extra": self.extra}


UNIT_WEIGHT = WeightFunction(n=1, q=1, prefactor=0.0)


@dataclass(frozen=True)
class WeightValue:
    value: float
    log: float
    overflow: bool


def weight_eval(w: WeightFunction, t) -> WeightValue:
    """Evaluate a weight in log space; ``value`` is ``inf`` on overflow."""
    if t < 1:
        raise ConfigError(f"weights are defined for t >= 1, got {t}")
    lg = float(w.log(t))
    if lg > 709.0:
        return WeightValue(value=math.inf, log=lg, overflow=True)
    return WeightValue(value=math.exp(lg), log=lg, overflow=False)


def practical_horizon(n, q, t0, delta, epsilon, mu):
    """Length of the interval on which practical stability is guaranteed."""
    if n > q:
        raise BadOrder(f"practical horizon needs n <= q, got n={n}, q={q}")
    if not (0 < delta < epsilon):
        raise ConfigError(f"need 0 < delta < epsilon, got delta={delta}, epsilon={epsilon}")
    if mu < 0:
        raise ConfigError(f"mu must be nonnegative, got {mu}")
    if mu == 0:
        return math.inf
    ratio = delta**2 / (epsilon * mu) ** 2
    if n < q:
        return t0 ** (n / q) * ratio
    if ratio > 709.0:
        return math.inf
    return t0 * math.expm1(ratio)


@dataclass
class StabilityVerdict:
    kind: Kind
    label: str
    theorem: str | None = None
    weight: WeightFunction | None = None
    horizon: float | None = None
    cycle_energy: float | None = None
    target: float | None = None
    reason: str | None = None
    annotations: list = field(default_factory=list)
    inputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == Kind.STABLE_CYCLE and not (self.cycle_energy and self.cycle_energy > 0):
            raise ValueError("a stable cycle needs a positive cycle energy")
        if self.kind in (Kind.WEIGHTED_STABLE, Kind.WEIGHTED_UNSTABLE, Kind.EXPONENTIALLY_STABLE, Kind.POLYNOMIALLY_STABLE):
            if self.weight is None:
                raise ValueError(f"{self.kind.value} needs a weight")
        if self.kind != Kind.INCONCLUSIVE and not self.theorem:
            raise ValueError("verdicts other than Inconclusive cite their result")

    @property
    def conclusive(self):
        return self.kind != Kind.INCONCLUSIVE

    def to_record(self):
        return {
            "kind": self.kind.value,
            "label": self.label,
            "theorem": self.theorem,
            "weight": None if self.weight is None else self.weight.to_record(),
            "horizon": self.horizon,
            "cycle_energy": self.cycle_energy,
            "target": self.target,
            "reason": self.reason,
            "annotations": self.annotations,
            "inputs": _jsonable(self.inputs),
        }

    def to_json(self):
        return json.dumps(self.to_record(), indent=2, sort_keys=True)

    def summary(self):
        parts = [f"{self.label} [{self.kind.value}]"]
        if self.theorem:
            parts.append(f"by {self.theorem}")
        if self.weight is not None:
            w = self.weight
            parts.append(f"weight gamma_{w.n}(t)^{w.prefactor:.6g} * t^({w.extra:.6g}/2) (q={w.q})")
        if self.horizon is not None:
            parts.append(f"horizon {self.horizon:.6g}")
        if self.cycle_energy is not None:
            parts.append(f"cycle energy {self.cycle_energy:.6g}, radius {math.sqrt(2 * self.cycle_energy):.6g}")
        if self.target is not None:
            parts.append(f"u* = {self.target:.6g}")
        if self.reason:
            parts.append(f"({self.reason})")
        return "; ".join(parts)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Fraction):
        return f"{obj.numerator}/{obj.denominator}" if obj.denominator != 1 else obj.numerator
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _inconclusive(reason, inputs):
    return StabilityVerdict(kind=Kind.INCONCLUSIVE, label="inconclusive", reason=reason, inputs=inputs)


def _check_kappa(kappa):
    if not (0 < kappa < 1):
        raise BadKappa(f"kappa must lie in (0, 1), got {kappa}")


def _sigma(noise: NoiseBound):
    s = noise.sigma
    return s if isinstance(s, Fraction) else Fraction(s).limit_denominator(10_000)


def _noise_inputs(noise):
    return None if noise is None else {"mu": noise.mu, "sigma": _sigma(noise)}


def classify_linear(fit: ExponentFit, q: int, noise: NoiseBound | None = None, kappa=DEFAULT_KAPPA,
                    t0=1.0, delta=0.1, epsilon=1.0, zero_tol=ZERO_TOL) -> StabilityVerdict:
    """Verdict when the leading averaged drift is linear in ``v``."""
    _check_kappa(kappa)
    if fit.case_tag != LINEAR:
        raise HypothesisViolated(f"classify_linear needs a LINEAR fit, got {fit.case_tag}")
    n, lam = fit.n, fit.lambda_n
    inputs = {"n": n, "q": q, "lambda_n": lam, "kappa": kappa, "noise": _noise_inputs(noise)}
    if abs(lam) <= zero_tol:
        return _inconclusive("lambda_n vanishes", inputs)
    if lam < 0:
        w = WeightFunction(n=n, q=q, prefactor=(1 - kappa) * abs(lam) / 2)
        if n < q:
            kind, label = Kind.EXPONENTIALLY_STABLE, "exponentially stable"
        elif n == q:
            kind, label = Kind.POLYNOMIALLY_STABLE, "polynomially stable"
        else:
            kind, label = Kind.NEUTRALLY_STABLE, "stable"
        return StabilityVerdict(kind=kind, label=label, theorem=TAG_LINEAR_STABLE, weight=w, inputs=inputs)
    # lambda_n > 0
    if n > q:
        return _inconclusive("lambda_n > 0 with n > q is not covered", inputs)
    if noise is None:
        raise MissingNoiseBound("the instability branch needs a noise bound (mu, sigma)")
    sigma, nq = _sigma(noise), Fraction(n, q)
    if sigma < nq:
        return _inconclusive(f"noise decays too slowly: sigma={sigma} < n/q={nq}", inputs)
    half_mu2 = noise.mu**2 / 2
    critical = half_mu2 if sigma == nq else 0.0
    if lam > critical + zero_tol * max(1.0, critical):
        return StabilityVerdict(kind=Kind.UNSTABLE, label="unstable", theorem=TAG_LINEAR_UNSTABLE, inputs=inputs)
    # sigma == n/q and 0 < lambda_n <= mu^2/2
    horizon = practical_horizon(n, q, t0, delta, epsilon, noise.mu)
    w_unstable = WeightFunction(n=n, q=q, prefactor=(half_mu2 - lam + kappa) / 2)
    inputs.update({"t0": t0, "delta": delta, "epsilon": epsilon})
    return StabilityVerdict(
        kind=Kind.PRACTICALLY_STABLE,
        label="practically stable",
        theorem=TAG_PRACTICAL,
        horizon=horizon,
        inputs=inputs,
        annotations=[
            {
                "kind": Kind.WEIGHTED_UNSTABLE.value,
                "label": "unstable with weight",
                "theorem": TAG_LINEAR_UNSTABLE,
                "weight": w_unstable.to_record(),
            }
        ],
    )


def nonlinear_parameters(n, m, l, q, lambda_nm, lambda_nl):  # noqa: E741
    """``theta``, ``u*`` and the shifted coefficient ``lambda_{n+l} + delta theta``."""
    theta = Fraction(l, q * (m - 1))
    shifted = lambda_nl + (float(theta) if n + l == q else 0.0)
    u_star = (abs(shifted) / abs(lambda_nm)) ** (1.0 / (m - 1)) if lambda_nm else math.inf
    return theta, u_star, shifted


def classify_nonlinear(fit: ExponentFit, q: int, noise: NoiseBound | None = None, kappa=DEFAULT_KAPPA,
                       zero_tol=ZERO_TOL) -> StabilityVerdict:
    """Verdict when the leading averaged drift is ``lambda_{n,m} v^m``."""
    _check_kappa(kappa)
    if fit.case_tag != NONLINEAR:
        raise HypothesisViolated(f"classify_nonlinear needs a NONLINEAR fit, got {fit.case_tag}")
    n, m, l = fit.n, fit.m, fit.l  # noqa: E741
    lnm, lnl = fit.lambda_nm, fit.lambda_nl
    theta, u_star, shifted = nonlinear_parameters(n, m, l, q, lnm, lnl)
    nl = n + l
    inputs = {
        "n": n, "m": m, "l": l, "q": q, "lambda_nm": lnm, "lambda_nl": lnl,
        "theta": theta, "u_star": u_star, "kappa": kappa, "noise": _noise_inputs(noise),
    }
    plain = lnm < -zero_tol and lnl < -zero_tol
    plain_note = {"kind": Kind.NEUTRALLY_STABLE.value, "label": "stable", "theorem": TAG_NONLINEAR_STABLE}
    if nl <= q and shifted < -zero_tol:
        w = WeightFunction(n=nl, q=q, prefactor=(1 - kappa) * abs(shifted) / 2, extra=float(theta))
        label = "exponentially stable" if nl < q else "polynomially stable"
        return StabilityVerdict(
            kind=Kind.WEIGHTED_STABLE, label=label, theorem=TAG_NONLINEAR_STABLE, weight=w,
            inputs=inputs, annotations=[plain_note] if plain else [],
        )
    if plain:
        return StabilityVerdict(kind=Kind.NEUTRALLY_STABLE, label="stable", theorem=TAG_NONLINEAR_STABLE, inputs=inputs)
    if nl == q and lnm < -zero_tol and lnl > zero_tol:
        return StabilityVerdict(
            kind=Kind.POLYNOMIAL_DECAY_TO_ZERO,
            label="polynomially stable",
            theorem=TAG_NONLINEAR_STABLE,
            target=u_star,
            inputs=inputs,
            reason=f"t^({float(theta):.6g}) H0(z(t)) tracks u* = {u_star:.6g}; |z(t)| = O(t^({-float(theta) / 2:.6g}))",
        )
    if lnm > zero_tol and lnl > 0 and nl <= q:
        if noise is None:
            raise MissingNoiseBound("the instability branch needs a noise bound (mu, sigma)")
        sigma, nq = _sigma(noise), Fraction(nl, q)
        if sigma < nq:
            return _inconclusive(f"noise decays too slowly: sigma={sigma} < (n+l)/q={nq}", inputs)
        critical = noise.mu**2 / 2 if sigma == nq else 0.0
        if lnl > critical + zero_tol * max(1.0, critical):
            return StabilityVerdict(kind=Kind.UNSTABLE, label="unstable", theorem=TAG_NONLINEAR_UNSTABLE, inputs=inputs)
    return _inconclusive("no row of the nonlinear table applies", inputs)


def classify_cycle(drift: AveragedDrift, fit: ExponentFit, q: int) -> StabilityVerdict:
    """Stable level ``c`` of ``Lambda_n`` (requires ``n = q``)."""
    if fit.n != q:
        raise HypothesisViolated(f"cycle analysis needs n = q, got n={fit.n}, q={q}")
    c, dl = find_cycle_root(drift, fit.n)
    inputs = {"n": fit.n, "q": q, "c": c, "dLambda": dl}
    if not (0 < c < drift.e0):
        return _inconclusive(f"root c={c:g} outside (0, e0)", inputs)
    if dl > 0:
        return _inconclusive("Lambda_n'(c) > 0: the cycle is not stable", inputs)
    inputs["radius"] = math.sqrt(2 * c)
    return StabilityVerdict(kind=Kind.STABLE_CYCLE, label="stable cycle", theorem=TAG_CYCLE, cycle_energy=c, inputs=inputs)


def classify(fit: ExponentFit, q: int, noise: NoiseBound | None = None, drift: AveragedDrift | None = None,
             kappa=DEFAULT_KAPPA, **kwargs):
    """Every verdict that applies: the equilibrium first, then any stable cycle."""
    if fit.case_tag == LINEAR:
        verdicts = [classify_linear(fit, q, noise, kappa, **kwargs)]
    elif fit.case_tag == NONLINEAR:
        verdicts = [classify_nonlinear(fit, q, noise, kappa)]
    else:
        verdicts = [_inconclusive(f"fit case {fit.case_tag}: no result applies", {"n": fit.n, "q": q})]
    if drift is not None and fit.n == q and any(r["stable"] for r in fit.cycle_roots):
        verdicts.append(classify_cycle(drift, fit, q))
    return verdicts
