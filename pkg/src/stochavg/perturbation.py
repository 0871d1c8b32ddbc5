"""Decaying perturbation series, assembled SDE systems, and the example registry.

A system is

    dz = b(z, t) dt + B(z, t) dw(t),
    b = (dH/dy, -dH/dx + F),
    H = H0 + sum_k t^(-k/q) H_k,  F = sum_k t^(-k/q) F_k,
    B_ij = sum_k t^(-k/q) B_ijk,

with every coefficient field given as an expression tree in ``x, y``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from urllib.parse import parse_qsl, urlsplit

import numpy as np

from .errors import (
    ConfigError,
    LipschitzViolation,
    MissingParam,
    NoBound,
    OriginViolation,
    UnknownName,
)
from .expr import Field, parse
from .hamiltonian import LimitingHamiltonian

DEFAULT_K_MAX = 4
VALIDATION_TIMES = (1.0, 10.0, 1e3, 1e6)
VALIDATION_GRID = 41
ORIGIN_TOL = 1e-12


@dataclass(frozen=True)
class PerturbationSeries:
    q: int
    h_terms: dict = field(default_factory=dict)
    f_terms: dict = field(default_factory=dict)
    b_terms: dict = field(default_factory=dict)
    k_max: int = DEFAULT_K_MAX

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 1:
            raise ConfigError(f"q must be a positive integer, got {self.q!r}")
        for name, terms in (("H", self.h_terms), ("F", self.f_terms)):
            for k, f in list(terms.items()):
                if not isinstance(f, Field):
                    terms[k] = Field(f)
                if k < 1:
                    raise ConfigError(f"{name}[{k}]: orders start at 1")
        for key, f in list(self.b_terms.items()):
            i, j, k = key
            if i not in (1, 2) or j not in (1, 2) or k < 1:
                raise ConfigError(f"bad diffusion index B[{i}][{j}][{k}]")
            if not isinstance(f, Field):
                self.b_terms[key] = Field(f)
        # drop identically-zero entries
        for terms in (self.h_terms, self.f_terms, self.b_terms):
            for key in [key for key, f in terms.items() if f.is_zero]:
                del terms[key]
        if self.natural_order > self.k_max:
            object.__setattr__(self, "k_max", self.natural_order)

    @property
    def natural_order(self):
        orders = list(self.h_terms) + list(self.f_terms) + [k for (_, _, k) in self.b_terms]
        return max(orders, default=0)

    def H(self, k):
        return self.h_terms.get(k)

    def F(self, k):
        return self.f_terms.get(k)

    def B(self, i, j, k):
        return self.b_terms.get((i, j, k))

    def truncated(self, k_max):
        keep = lambda k: k <= k_max  # noqa: E731
        return PerturbationSeries(
            q=self.q,
            h_terms={k: f for k, f in self.h_terms.items() if keep(k)},
            f_terms={k: f for k, f in self.f_terms.items() if keep(k)},
            b_terms={key: f for key, f in self.b_terms.items() if keep(key[2])},
            k_max=k_max,
        )

    @property
    def is_zero(self):
        return not (self.h_terms or self.f_terms or self.b_terms)


def _tpow(t, k, q):
    return np.power(t, -k / q)


@dataclass(frozen=True)
class SdeSystem:
    ham: LimitingHamiltonian
    pert: PerturbationSeries
    name: str = "custom"
    params: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)

    @property
    def q(self):
        return self.pert.q

    def _orders(self):
        return range(1, self.pert.k_max + 1)

    def drift(self, x, y, t):
        """Drift ``b(z, t)``; returns ``(bx, by)`` broadcast over inputs."""
        ham, pert = self.ham, self.pert
        bx = ham.hy(x, y)
        by = -ham.hx(x, y)
        for k in self._orders():
            s = None
            hk, fk = pert.H(k), pert.F(k)
            if hk is None and fk is None:
                continue
            s = _tpow(t, k, self.q)
            if hk is not None:
                bx = bx + s * hk.d("y")(x, y)
                by = by - s * hk.d("x")(x, y)
            if fk is not None:
                by = by + s * fk(x, y)
        return bx, by

    def diffusion_entries(self, x, y, t):
        """``{(i, j): B_ij(z, t)}`` for the nonzero entries only."""
        out = {}
        for (i, j, k), f in self.pert.b_terms.items():
            if k > self.pert.k_max:
                continue
            term = _tpow(t, k, self.q) * f(x, y)
            out[(i, j)] = out[(i, j)] + term if (i, j) in out else term
        return out

    def diffusion(self, x, y, t):
        """Diffusion matrix with shape ``broadcast(x, y, t).shape + (2, 2)``."""
        shape = np.broadcast(x, y, t).shape
        mat = np.zeros(shape + (2, 2))
        for (i, j), v in self.diffusion_entries(x, y, t).items():
            mat[..., i - 1, j - 1] = v
        return mat

    def noise_trace(self, x, y, t):
        """``tr(B^T B)`` at ``(z, t)``."""
        total = np.zeros(np.broadcast(x, y, t).shape)
        for v in self.diffusion_entries(x, y, t).values():
            total = total + v * v
        return total

    def describe(self):
        p = "&".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{self.name}?{p}" if p else self.name


def _validation_grid(r, n=VALIDATION_GRID):
    s = np.linspace(-r, r, n)
    return np.meshgrid(s, s, indexing="ij")


def assemble_system(ham: LimitingHamiltonian, pert: PerturbationSeries, name="custom", params=None, reference=None, check=True) -> SdeSystem:
    """Bundle ``H0`` and a perturbation series into an SDE system.

    With ``check`` the origin conditions and a grid Lipschitz estimate are
    verified on a 41x41 grid over ``[-r, r]^2`` at several times.
    """
    sys = SdeSystem(ham=ham, pert=pert, name=name, params=dict(params or {}), reference=dict(reference or {}))
    if check:
        check_origin(sys)
        check_lipschitz(sys)
    return sys


def check_origin(sys: SdeSystem):
    pert = sys.pert
    for label, f in [(f"F[{k}]", f) for k, f in pert.f_terms.items()] + [
        (f"B[{i}][{j}][{k}]", f) for (i, j, k), f in pert.b_terms.items()
    ]:
        if abs(f(0.0, 0.0)) > ORIGIN_TOL:
            raise OriginViolation(f"{label}(0,0) = {f(0.0, 0.0):g} != 0")
    for k, h in pert.h_terms.items():
        gx, gy = h.d("x")(0.0, 0.0), h.d("y")(0.0, 0.0)
        if max(abs(gx), abs(gy)) > ORIGIN_TOL:
            raise OriginViolation(f"grad H[{k}](0,0) = ({gx:g}, {gy:g}) != 0")
    for t in VALIDATION_TIMES:
        bx, by = sys.drift(0.0, 0.0, t)
        if max(abs(bx), abs(by)) > ORIGIN_TOL or np.any(np.abs(sys.diffusion(0.0, 0.0, t)) > ORIGIN_TOL):
            raise OriginViolation(f"drift or diffusion nonzero at the origin, t={t:g}")


def lipschitz_estimate(sys: SdeSystem, n=VALIDATION_GRID):
    """Largest neighbor-difference quotient of drift and diffusion on the grid."""
    X, Y = _validation_grid(sys.ham.r, n)
    h = X[1, 0] - X[0, 0]
    worst = 0.0
    for t in VALIDATION_TIMES:
        bx, by = sys.drift(X, Y, t)
        B = sys.diffusion(X, Y, t)
        for axis in (0, 1):
            db = np.hypot(np.diff(bx, axis=axis), np.diff(by, axis=axis)) / h
            dB = np.linalg.norm(np.diff(B, axis=axis), ord=2, axis=(-2, -1)) / h
            worst = max(worst, float(np.max(db)), float(np.max(dB)))
    return worst


def check_lipschitz(sys: SdeSystem, limit=1e8):
    est = lipschitz_estimate(sys)
    if not math.isfinite(est) or est > limit:
        raise LipschitzViolation(f"grid Lipschitz estimate {est:g} is not bounded")
    return est


@dataclass(frozen=True)
class NoiseBound:
    mu: float
    sigma: Fraction


def estimate_noise_bound(sys: SdeSystem, t_range=(1.0, 1e6), grid=VALIDATION_GRID) -> NoiseBound:
    """Fit ``tr(B^T B) <= mu^2 t^-sigma |z|^2`` on a sample grid.

    ``sigma`` is the largest candidate ``k/q`` (``1 <= k <= 2 k_max``) for
    which the scaled ratio does not grow over the sampled times; ``mu`` is the
    square root of the ratio's maximum at that ``sigma``.
    """
    X, Y = _validation_grid(sys.ham.r, grid)
    # polar points reaching down to radius 1e-6 resolve the ratio near the origin
    rad = np.geomspace(1e-6, sys.ham.r, grid)
    ang = np.linspace(0, 2 * np.pi, 4 * (grid // 4), endpoint=False)
    X = np.concatenate([X.ravel(), np.outer(rad, np.cos(ang)).ravel()])
    Y = np.concatenate([Y.ravel(), np.outer(rad, np.sin(ang)).ravel()])
    norm2 = X**2 + Y**2
    mask = norm2 >= 1e-12
    X, Y, norm2 = X[mask], Y[mask], norm2[mask]
    t0, t1 = t_range
    times = [t for t in VALIDATION_TIMES if t0 <= t <= t1] or [t0, t1]
    q = sys.q
    candidates = [Fraction(k, q) for k in range(1, 2 * sys.pert.k_max + 1)]
    ratios = np.array([np.max(sys.noise_trace(X, Y, t) / norm2) for t in times])
    if np.all(ratios == 0):
        return NoiseBound(mu=0.0, sigma=candidates[-1])
    growth_limit = 10 ** (1.5 / q)
    for sigma in sorted(candidates, reverse=True):
        scaled = ratios * np.power(times, float(sigma))
        if not np.all(np.isfinite(scaled)):
            continue
        if len(times) == 1 or scaled[-1] <= growth_limit * max(np.max(scaled[:-1]), 1e-300):
            return NoiseBound(mu=float(np.sqrt(np.max(scaled))), sigma=sigma)
    raise NoBound("tr(B^T B) t^sigma / |z|^2 grows for every candidate sigma")


# registry -------------------------------------------------------------------

HARMONIC = "(x^2 + y^2)/2"
PENDULUM = "1 - cos(x) + y^2/2"

REGISTRY_PARAMS = {
    "ex0": ("lambda", "mu"),
    "ex1": ("h", "p", "q", "lambda", "mu"),
    "ex2": ("a2", "a4", "b1", "b2"),
    "ex3": ("a1", "a2", "mu"),
}


def harmonic_hamiltonian():
    return LimitingHamiltonian(Field(parse(HARMONIC)), r=2.0, e0=2.0, name="harmonic")


def pendulum_hamiltonian():
    return LimitingHamiltonian(Field(parse(PENDULUM)), r=math.pi, e0=2.0, name="pendulum")


def _need(name, params):
    missing = [k for k in REGISTRY_PARAMS[name] if k not in params]
    if missing:
        raise MissingParam(f"{name} needs parameters {missing}")
    return {k: float(params[k]) for k in REGISTRY_PARAMS[name]}


def _ex0(p):
    lam, mu = p["lambda"], p["mu"]
    pert = PerturbationSeries(q=2, f_terms={2: parse("lam*y", {"lam": lam})}, b_terms={(2, 2, 1): parse("mu*x", {"mu": mu})})
    ref = {"lambda_linear": {2: lam + mu**2 / 2}}
    return harmonic_hamiltonian(), pert, ref


def _ex1(p):
    h, pp, q = p["h"], p["p"], p["q"]
    if not all(float(v).is_integer() for v in (h, pp, q)):
        raise MissingParam("ex1 needs integer h, p, q")
    h, pp, q = int(h), int(pp), int(q)
    if not (0 < h <= q and 0 < pp <= q):
        raise MissingParam("ex1 needs 0 < h, p <= q")
    lam, mu = p["lambda"], p["mu"]
    pert = PerturbationSeries(
        q=q,
        f_terms={h: parse("lam*y", {"lam": lam})},
        b_terms={(2, 2, pp): parse("mu*sin(x)", {"mu": mu})},
    )
    # linear coefficient of the leading averaged drift
    lin = {}
    if h < 2 * pp:
        lin[h] = lam
    elif h == 2 * pp:
        lin[h] = lam + mu**2 / 2
    else:
        lin[2 * pp] = mu**2 / 2
    return pendulum_hamiltonian(), pert, {"lambda_linear": lin}


def _ex2(p):
    a2, a4, b1, b2 = p["a2"], p["a4"], p["b1"], p["b2"]
    pert = PerturbationSeries(
        q=4,
        f_terms={2: parse("a2*x^2*y/(1 + x^2)", {"a2": a2}), 4: parse("a4*y", {"a4": a4})},
        b_terms={
            (2, 2, 1): parse("b1*x*y/sqrt(1 + x^2)", {"b1": b1}),
            (2, 2, 2): parse("b2*x", {"b2": b2}),
        },
    )
    lam_nm = (2 * a2 + b1**2) / 4
    lam_nl = (2 * a4 + b2**2) / 2
    ref = {
        "lambda_nm": {(2, 2): lam_nm},
        "lambda_linear": {4: lam_nl},
        "u_star": 2 * abs(2 * a4 + b2**2 + 1) / abs(2 * a2 + b1**2) if lam_nm else math.inf,
    }
    return pendulum_hamiltonian(), pert, ref


def _ex3(p):
    a1, a2, mu = p["a1"], p["a2"], p["mu"]
    pert = PerturbationSeries(
        q=2,
        f_terms={2: parse("(a1 + a2*x^2)*y/(1 + x^2 + y^2)", {"a1": a1, "a2": a2})},
        b_terms={(2, 2, 1): parse("mu*x", {"mu": mu})},
    )
    ref = {"lambda_linear": {2: a1 + mu**2 / 2}}
    if a2 + 2 * mu**2 < 0 and 2 * a1 + mu**2 > 0:
        c = (2 * a1 + mu**2) / abs(a2 + 2 * mu**2)
        ref["cycle"] = {"c": c, "dLambda": -(2 * a1 + mu**2) / (2 * (1 + 2 * c))}
    return harmonic_hamiltonian(), pert, ref


def _ex0_lambda(p, k, v):
    return (p["lambda"] + p["mu"] ** 2 / 2) * v if k == 2 else 0.0 * v


def _ex3_lambda(p, k, v):
    if k != 2:
        return 0.0 * v
    a1, a2, mu = p["a1"], p["a2"], p["mu"]
    return v * (2 * a1 + mu**2 + v * (a2 + 2 * mu**2)) / (2 * (1 + 2 * v))


_CLOSED_FORMS = {"ex0": _ex0_lambda, "ex3": _ex3_lambda}


def reference_lambda(sys, k, v):
    """Closed-form ``Lambda_k(v)`` of a registry system, or None if not known."""
    fn = _CLOSED_FORMS.get(sys.name)
    if fn is None:
        return None
    return fn(sys.params, k, np.asarray(v, dtype=float))


_BUILDERS = {"ex0": _ex0, "ex1": _ex1, "ex2": _ex2, "ex3": _ex3}


def registry_get(name: str, params: dict | None = None, **kwargs) -> SdeSystem:
    """One of the built-in example systems ``ex0`` .. ``ex3``."""
    if name not in _BUILDERS:
        raise UnknownName(f"unknown registry entry {name!r}; choose from {sorted(_BUILDERS)}")
    params = dict(params or {}, **kwargs)
    p = _need(name, params)
    ham, pert, ref = _BUILDERS[name](p)
    return assemble_system(ham, pert, name=name, params=p, reference=ref)


# system references and definition files -------------------------------------

_INDEX = re.compile(r"^([HFB])((?:\[\d+\])+)$")


def _collect_terms(data):
    """Accept nested ``{"F": {"2": ...}}`` or flat ``{"F[2]": ...}`` keys."""
    h, f, b = {}, {}, {}
    for key, value in data.items():
        m = _INDEX.match(key)
        if m:
            idx = tuple(int(s) for s in re.findall(r"\d+", m.group(2)))
            kind = m.group(1)
            entries = [(idx, value)]
        elif key in ("H", "F", "B"):
            kind = key
            entries = []

            def flatten(prefix, node):
                if isinstance(node, dict):
                    for k2, v2 in node.items():
                        flatten(prefix + (int(k2),), v2)
                else:
                    entries.append((prefix, node))

            flatten((), value)
        else:
            continue
        for idx, expr in entries:
            if kind in "HF" and len(idx) != 1 or kind == "B" and len(idx) != 3:
                raise ConfigError(f"bad index {idx} for {kind}")
            target = {"H": h, "F": f, "B": b}[kind]
            target[idx[0] if kind in "HF" else idx] = expr
    return h, f, b


SYSTEM_KEYS = {"q", "H0", "H", "F", "B", "r", "e0", "params", "name", "k_max"}


def system_from_dict(data: dict) -> SdeSystem:
    unknown = [k for k in data if k not in SYSTEM_KEYS and not _INDEX.match(k)]
    if unknown:
        raise ConfigError(f"unknown keys in system definition: {unknown}")
    if "q" not in data or "H0" not in data:
        raise ConfigError("system definition needs 'q' and 'H0'")
    params = {k: float(v) for k, v in data.get("params", {}).items()}
    h, f, b = _collect_terms(data)
    conv = lambda d: {k: parse(str(v), params) for k, v in d.items()}  # noqa: E731
    pert = PerturbationSeries(
        q=int(data["q"]),
        h_terms=conv(h),
        f_terms=conv(f),
        b_terms=conv(b),
        k_max=int(data.get("k_max", DEFAULT_K_MAX)),
    )
    h0 = Field(parse(str(data["H0"]), params))
    r = float(data.get("r", 1.0))
    if "e0" in data:
        e0 = float(data["e0"])
    else:
        theta = np.linspace(0, 2 * np.pi, 721)
        e0 = float(np.min(h0(r * np.cos(theta), r * np.sin(theta))))
    ham = LimitingHamiltonian(h0, r=r, e0=e0, name=str(data.get("name", "custom")))
    return assemble_system(ham, pert, name=str(data.get("name", "custom")), params=params)


def load_system(ref: str) -> SdeSystem:
    """Resolve ``builtin:ex1?h=1&...`` or a path to a JSON definition file."""
    if ref.startswith("builtin:"):
        parts = urlsplit(ref[len("builtin:"):])
        params = {}
        for k, v in parse_qsl(parts.query, keep_blank_values=True):
            try:
                params[k] = float(Fraction(v)) if "/" in v else float(v)
            except ValueError:
                raise ConfigError(f"parameter {k}={v!r} is not a number") from None
        return registry_get(parts.path, params)
    path = Path(ref)
    if not path.exists():
        raise ConfigError(f"system file {ref!r} not found")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"system file {ref!r} is not valid JSON: {exc}") from None
    return system_from_dict(data)
