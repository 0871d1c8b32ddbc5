"""Energy-angle coefficients, the averaging recursion and exponent fits.

In energy-angle variables ``(E, phi)`` the generator of the perturbed system
acting on ``V(E, phi, t)`` reads

    dV/dt + nu dV/dphi
      + sum_k t^(-k/q) [ f_k V_E + g_k V_phi ]
      + 1/2 sum_{i1+i2=k} t^(-k/q) sum_j [ b1 b1 V_EE + 2 b1 b2 V_Ephi + b2 b2 V_phiphi ]

with ``b1 = beta_{1,j,i1}`` and ``b2 = beta_{2,j,i2}``. Substituting
``V_N = E + sum_k t^(-k/q) v_k`` and matching powers of ``t`` against
``sum_k t^(-k/q) Lambda_k(V_N)`` gives, order by order,

    nu dv_k/dphi + f_k + R_k = Lambda_k(E),

which is solved by taking the angle mean (``Lambda_k``) and integrating the
zero-mean bracket in ``phi`` (``v_k``).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from . import spectral
from .errors import (
    ConfigError,
    DerivativeUnavailable,
    DerivativeZero,
    FitAmbiguous,
    GridMismatch,
    GridTooCoarse,
    NoRoot,
    OrderTooHigh,
    OutOfFamily,
    StencilOutOfDomain,
)
from .hamiltonian import SEPARATRIX_FRACTION, OrbitCache, energy_angle_of_points
from .perturbation import SdeSystem

NULL_REL = 1e-9
DEGREE_TOL = 0.1
MEAN_TOL = 1e-10
STENCIL_STEP = 1e-5
DERIV_ZERO = 1e-8

LINEAR = "LINEAR"
NONLINEAR = "NONLINEAR"
CYCLE = "CYCLE"
DEGENERATE = "DEGENERATE"


def default_energy_grid(e0, lo=1e-3, hi=SEPARATRIX_FRACTION, per_decade=16):
    """Log-spaced energies from ``lo*e0`` up to ``hi*e0``."""
    n = int(math.ceil(per_decade * math.log10(hi / lo))) + 1
    return e0 * np.geomspace(lo, hi, n)


# energy-angle coefficients ---------------------------------------------------

BETA_NAMES = tuple(f"beta{i}{j}" for i in (1, 2) for j in (1, 2))


@dataclass
class AngleTable:
    """Coefficient matrices over ``(E, phi)``; missing entries are zero."""

    e_grid: np.ndarray
    phi_grid: np.ndarray
    nu: np.ndarray
    q: int
    k_max: int
    values: dict = field(default_factory=dict)

    def get(self, name, k):
        v = self.values.get((name, k))
        if v is None:
            return np.zeros((len(self.e_grid), len(self.phi_grid)))
        return v

    def has(self, name, k):
        return (name, k) in self.values

    def f(self, k):
        return self.get("f", k)

    def g(self, k):
        return self.get("g", k)

    def beta(self, i, j, k):
        return self.get(f"beta{i}{j}", k)


def _check_grid(e_grid, e0):
    e_grid = np.asarray(e_grid, dtype=float)
    if e_grid.ndim != 1 or len(e_grid) < 2:
        raise GridMismatch("energy grid needs at least two points")
    if np.any(np.diff(e_grid) <= 0):
        raise GridMismatch("energy grid must be strictly increasing")
    if e_grid[0] <= 0 or e_grid[-1] > SEPARATRIX_FRACTION * e0 * (1 + 1e-12):
        raise GridMismatch(f"energy grid must lie in (0, {SEPARATRIX_FRACTION}*e0]")
    return e_grid


def _orbit_arrays(orbits):
    stack = lambda name: np.array([getattr(o, name) for o in orbits])  # noqa: E731
    return {
        "X": stack("x"),
        "Y": stack("y"),
        "XE": stack("dx_dE"),
        "YE": stack("dy_dE"),
        "XEE": stack("d2x_dE2"),
        "YEE": stack("d2y_dE2"),
        "nu": stack("frequency"),
        "dnu": stack("dnu_dE"),
    }


def energy_angle_coefficients(sys: SdeSystem, orbits: OrbitCache, e_grid, n_phi=None) -> AngleTable:
    """Tabulate ``f_k, g_k, beta_{i,j,k}`` on the orbits at ``e_grid``."""
    if not orbits.derivatives:
        raise DerivativeUnavailable("orbit cache was built without energy derivatives")
    if n_phi is not None and n_phi != orbits.n_phi:
        raise GridMismatch(f"n_phi={n_phi} but the orbit cache uses {orbits.n_phi}")
    e_grid = _check_grid(e_grid, sys.ham.e0)
    obs = orbits.get_many(e_grid)
    if any(not o.has_derivatives for o in obs):
        raise DerivativeUnavailable("some cached orbits lack energy derivatives")
    a = _orbit_arrays(obs)
    ham, pert = sys.ham, sys.pert
    X, Y = a["X"], a["Y"]
    nu = a["nu"][:, None]
    dnu = a["dnu"][:, None]

    Ix, Iy = ham.hx(X, Y), ham.hy(X, Y)
    Ixx, Ixy, Iyy = ham.hxx(X, Y), ham.hxy(X, Y), ham.hyy(X, Y)
    Ixx, Ixy, Iyy = (np.broadcast_to(v, X.shape) for v in (Ixx, Ixy, Iyy))

    XE, YE, XEE, YEE = a["XE"], a["YE"], a["XEE"], a["YEE"]
    Xp, Yp = Iy / nu, -Ix / nu
    XEp = spectral.periodic_derivative(XE, axis=1)
    YEp = spectral.periodic_derivative(YE, axis=1)
    Px, Py = nu * YE, -nu * XE
    # second derivatives of the angle from d/dx = nu(Y_E d_phi - Y_phi d_E), d/dy = nu(X_phi d_E - X_E d_phi)
    Pxx = nu * (YE * nu * YEp - Yp * (dnu * YE + nu * YEE))
    Pyy = nu * (Xp * (-dnu * XE - nu * XEE) + XE * nu * XEp)
    Pxy = nu * (Xp * (dnu * YE + nu * YEE) - XE * nu * YEp)

    cache = {}

    def B(i, j, k):
        key = (i, j, k)
        if key not in cache:
            fld = pert.B(i, j, k)
            cache[key] = None if fld is None else np.broadcast_to(fld(X, Y), X.shape)
        return cache[key]

    values = {}
    for k in range(1, pert.k_max + 1):
        hk, fk = pert.H(k), pert.F(k)
        drift_x = hk.d("y")(X, Y) if hk is not None else 0.0
        drift_y = (-hk.d("x")(X, Y) if hk is not None else 0.0) + (fk(X, Y) if fk is not None else 0.0)
        a11 = a22 = a12 = 0.0
        for i1 in range(1, k):
            i2 = k - i1
            for j in (1, 2):
                b1a, b1b, b2a, b2b = B(1, j, i1), B(1, j, i2), B(2, j, i1), B(2, j, i2)
                if b1a is not None and b1b is not None:
                    a11 = a11 + b1a * b1b
                if b2a is not None and b2b is not None:
                    a22 = a22 + b2a * b2b
                if b1a is not None and b2b is not None:
                    a12 = a12 + b1a * b2b
        fval = drift_x * Ix + drift_y * Iy + 0.5 * (a11 * Ixx + a22 * Iyy + 2 * a12 * Ixy)
        gval = drift_x * Px + drift_y * Py + 0.5 * (a11 * Pxx + a22 * Pyy + 2 * a12 * Pxy)
        if not np.isscalar(fval):
            values[("f", k)] = np.array(fval, dtype=float)
            values[("g", k)] = np.array(gval, dtype=float)
        for j in (1, 2):
            b1, b2 = B(1, j, k), B(2, j, k)
            if b1 is None and b2 is None:
                continue
            b1 = 0.0 if b1 is None else b1
            b2 = 0.0 if b2 is None else b2
            values[(f"beta1{j}", k)] = np.asarray(b1 * Ix + b2 * Iy, dtype=float)
            values[(f"beta2{j}", k)] = np.asarray(b1 * Px + b2 * Py, dtype=float)
    return AngleTable(
        e_grid=e_grid,
        phi_grid=obs[0].phi.copy(),
        nu=a["nu"],
        q=pert.q,
        k_max=pert.k_max,
        values=values,
    )


def angle_average(values):
    """Periodic trapezoid mean over the last axis."""
    return spectral.angle_average(values, axis=-1)


# averaging recursion ---------------------------------------------------------


@dataclass
class AveragedDrift:
    e_grid: np.ndarray
    phi_grid: np.ndarray
    nu: np.ndarray
    q: int
    order_N: int
    lambda_tables: dict
    v_tables: dict = field(default_factory=dict)
    e0: float = math.inf
    _splines: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_tables(cls, e_grid, lambda_tables, q, e0=math.inf):
        """Wrap tabulated ``Lambda_k`` values (no ``v_k``) for fitting and root finding."""
        e_grid = np.asarray(e_grid, dtype=float)
        tables = {int(k): np.asarray(v, dtype=float) for k, v in lambda_tables.items()}
        return cls(
            e_grid=e_grid,
            phi_grid=np.zeros(0),
            nu=np.ones_like(e_grid),
            q=int(q),
            order_N=max(tables, default=0),
            lambda_tables=tables,
            e0=e0,
        )

    def Lambda(self, k):
        if k not in self.lambda_tables:
            return np.zeros_like(self.e_grid)
        return self.lambda_tables[k]

    def lambda_spline(self, k) -> CubicSpline:
        key = ("L", k)
        if key not in self._splines:
            self._splines[key] = CubicSpline(self.e_grid, self.Lambda(k))
        return self._splines[key]

    def Lambda_at(self, k, E, deriv=0):
        return self.lambda_spline(k)(E, deriv)

    def v_at(self, k, E, phi):
        """``v_k`` off the grid: cubic spline in ``E`` of its Fourier coefficients."""
        if k not in self.v_tables:
            return np.zeros(np.broadcast(E, phi).shape)
        key = ("v", k)
        if key not in self._splines:
            coef = spectral.fourier_coefficients(self.v_tables[k], axis=1)
            self._splines[key] = CubicSpline(self.e_grid, coef, axis=0)
        coef = self._splines[key](np.asarray(E, dtype=float))
        return spectral.evaluate_fourier(coef, len(self.phi_grid), phi)

    def to_csv(self, k, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["E", f"Lambda_{k}"])
            for e, lam in zip(self.e_grid, self.Lambda(k)):
                w.writerow([f"{e:.16e}", f"{lam:.16e}"])


def _power_terms(v, order):
    """``pw[p][m]`` = sum over ``i1+..+ip = m`` (all ``i >= 1``) of ``v_i1 ... v_ip``."""
    pw = {1: {m: v[m] for m in range(1, order + 1) if m in v}}
    for p in range(2, order + 1):
        pw[p] = {}
        for m in range(p, order + 1):
            acc = None
            for i in range(1, m - p + 2):
                if i in v and (m - i) in pw[p - 1]:
                    term = v[i] * pw[p - 1][m - i]
                    acc = term if acc is None else acc + term
            if acc is not None:
                pw[p][m] = acc
    return pw


def averaging_recursion(tables: AngleTable, N: int, e0=math.inf) -> AveragedDrift:
    """Solve for ``Lambda_k`` and ``v_k``, ``k = 1..N``.

    ``R_k`` collects the aging term ``-((k-q)/q) v_{k-q}``, the cross terms
    ``f_i dv_j/dE + g_i dv_j/dphi`` and the order-``k`` diffusion terms acting
    on earlier ``v``, and subtracts the Taylor expansion of the earlier
    ``Lambda_j(V_N)`` about ``E``.
    """
    if N < 1:
        raise OrderTooHigh(f"order N must be at least 1, got {N}")
    if N > tables.k_max:
        raise OrderTooHigh(f"N={N} exceeds the series order k_max={tables.k_max}")
    e, q = tables.e_grid, tables.q
    nu = tables.nu[:, None]
    shape = (len(e), len(tables.phi_grid))
    need_e = N >= 2

    v, vE, vEE, vP, vPP, vEP = {}, {}, {}, {}, {}, {}
    lam, dlam = {}, {}

    def e_deriv(arr, order):
        try:
            return spectral.grid_derivative(arr, e, order=order, axis=0)
        except ValueError as exc:
            raise GridTooCoarse(str(exc)) from None

    for K in range(1, N + 1):
        R = np.zeros(shape)
        if K - q >= 1 and (K - q) in v:
            R -= ((K - q) / q) * v[K - q]
        for i2 in range(1, K):
            i1 = K - i2
            if i2 not in v:
                continue
            if tables.has("f", i1):
                R += tables.f(i1) * vE[i2]
            if tables.has("g", i1):
                R += tables.g(i1) * vP[i2]
        for i3 in range(1, K - 1):
            if i3 not in v:
                continue
            for i1 in range(1, K - i3):
                i2 = K - i3 - i1
                for j in (1, 2):
                    b1a, b1b = tables.beta(1, j, i1), tables.beta(1, j, i2)
                    b2a, b2b = tables.beta(2, j, i1), tables.beta(2, j, i2)
                    R += 0.5 * (b1a * b1b * vEE[i3] + 2 * b1a * b2b * vEP[i3] + b2a * b2b * vPP[i3])
        if v:
            pw = _power_terms(v, K)
            for j in range(1, K):
                for p in range(1, K - j + 1):
                    prod = pw.get(p, {}).get(K - j)
                    if prod is None:
                        continue
                    dl = dlam.setdefault((j, p), e_deriv(lam[j], p))
                    R -= (dl / math.factorial(p))[:, None] * prod
        C = tables.f(K) + R
        lam[K] = spectral.angle_average(C, axis=1)
        vk = -spectral.periodic_antiderivative(C, axis=1) / nu
        scale = max(float(np.max(np.abs(vk))), 1e-300)
        if float(np.max(np.abs(spectral.angle_average(vk, axis=1)))) > MEAN_TOL * scale:
            raise GridTooCoarse(f"v_{K} mean normalization failed")
        if np.any(vk):
            v[K] = vk
            vP[K] = spectral.periodic_derivative(vk, axis=1)
            vPP[K] = spectral.periodic_derivative(vk, order=2, axis=1)
            if need_e and K < N:
                vE[K] = e_deriv(vk, 1)
                vEE[K] = e_deriv(vk, 2)
                vEP[K] = spectral.periodic_derivative(vE[K], axis=1)
    v_tables = {k: v.get(k, np.zeros(shape)) for k in range(1, N + 1)}
    return AveragedDrift(
        e_grid=e,
        phi_grid=tables.phi_grid,
        nu=tables.nu,
        q=q,
        order_N=N,
        lambda_tables=lam,
        v_tables=v_tables,
        e0=e0,
    )


def average_system(sys: SdeSystem, N=None, e_grid=None, n_phi=None, cache: OrbitCache | None = None):
    """Convenience chain: orbits, coefficient tables and the recursion."""
    if e_grid is None:
        e_grid = default_energy_grid(sys.ham.e0)
    if cache is None:
        cache = OrbitCache(sys.ham, n_phi=n_phi or 256, derivatives=True)
    N = sys.pert.k_max if N is None else N
    tables = energy_angle_coefficients(sys, cache, e_grid, n_phi)
    return averaging_recursion(tables, N, e0=sys.ham.e0)


# exponent fits ---------------------------------------------------------------


@dataclass
class ExponentFit:
    n: int | None
    case_tag: str
    m: int | None = None
    l: int | None = None  # noqa: E741
    lambda_n: float | None = None
    lambda_nm: float | None = None
    lambda_nl: float | None = None
    degrees: dict = field(default_factory=dict)
    coefficients: dict = field(default_factory=dict)
    slopes: dict = field(default_factory=dict)
    cycle_roots: list = field(default_factory=list)
    window: tuple = (0.0, 0.0)

    def to_record(self):
        rec = asdict(self)
        for key in ("degrees", "coefficients", "slopes"):
            rec[key] = {str(k): v for k, v in rec[key].items()}
        rec["window"] = list(self.window)
        return rec

    def to_json(self, path=None):
        text = json.dumps(self.to_record(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _null_threshold(drift, mask):
    peak = max((float(np.max(np.abs(t[mask]))) for t in drift.lambda_tables.values()), default=0.0)
    return NULL_REL * (1.0 + peak)


def monomial_fit(v, values):
    """Degree and leading coefficient of ``values ~ lam * v^d (1 + O(v))``.

    The degree comes from regressing ``log|values|`` on ``log v`` with a cubic
    correction in ``v``; the coefficient is the ``v -> 0`` intercept of a
    quartic fit of ``values / v^d``. Returns ``(d, lam, raw_slope)``.
    """
    v = np.asarray(v, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(values == 0) or np.any(np.sign(values) != np.sign(values[0])):
        raise FitAmbiguous("Lambda changes sign or vanishes inside the fit window", slope=float("nan"))
    scale = v.max()
    s = v / scale
    cols = [np.log(v), np.ones_like(v)] + [s**p for p in range(1, 4)]
    A = np.column_stack(cols[: max(2, min(len(cols), len(v) - 3))])
    coef, *_ = np.linalg.lstsq(A, np.log(np.abs(values)), rcond=None)
    slope = float(coef[0])
    d = int(round(slope))
    if abs(slope - d) > DEGREE_TOL or d < 1:
        raise FitAmbiguous(f"log-log slope {slope:.4f} is not within {DEGREE_TOL} of a positive integer", slope=slope)
    deg = min(6, len(v) - 2)
    poly = np.polynomial.polynomial.polyfit(s, values / v**d, deg)
    return d, float(poly[0]), slope


def fit_exponents(drift: AveragedDrift, fit_window=None) -> ExponentFit:
    """Small-energy exponents of the averaged drifts and the case they fall in."""
    e = drift.e_grid
    if fit_window is None:
        if not math.isfinite(drift.e0):
            raise ConfigError("fit window needed when e0 is unknown")
        fit_window = (1e-3 * drift.e0, 1e-1 * drift.e0)
    lo, hi = fit_window
    if not (0 < lo < hi) or hi > drift.e0 / 10 * (1 + 1e-12):
        raise ConfigError(f"fit window must lie in (0, e0/10], got {fit_window}")
    mask = (e >= lo * (1 - 1e-12)) & (e <= hi * (1 + 1e-12))
    if mask.sum() < 8:
        raise GridTooCoarse(f"only {int(mask.sum())} grid energies inside the fit window (need 8)")
    thresh = _null_threshold(drift, mask)
    degrees, coefs, slopes = {}, {}, {}
    for k in sorted(drift.lambda_tables):
        vals = drift.Lambda(k)[mask]
        if float(np.max(np.abs(vals))) < thresh:
            continue
        d, lam, slope = monomial_fit(e[mask], vals)
        degrees[k], coefs[k], slopes[k] = d, lam, slope

    fit = ExponentFit(n=None, case_tag=DEGENERATE, degrees=degrees, coefficients=coefs, slopes=slopes, window=(lo, hi))
    if not degrees:
        return fit
    n = min(degrees)
    fit.n = n
    try:
        fit.cycle_roots = [
            {"c": c, "dLambda": dl, "stable": dl < 0} for c, dl in find_cycle_roots(drift, n)
        ]
    except NoRoot:
        fit.cycle_roots = []
    if degrees[n] == 1:
        fit.case_tag = LINEAR
        fit.lambda_n = coefs[n]
        return fit
    m = degrees[n]
    for k in sorted(degrees):
        if k <= n:
            continue
        if degrees[k] == 1:
            fit.case_tag = NONLINEAR
            fit.m, fit.l = m, k - n
            fit.lambda_nm, fit.lambda_nl = coefs[n], coefs[k]
            return fit
        if degrees[k] < m:
            break
    fit.m = m
    if fit.cycle_roots:
        fit.case_tag = CYCLE
    return fit


# cycles ----------------------------------------------------------------------


def _local_poly(e, vals, c, order, width=8):
    """Value or derivative at ``c`` of the interpolant through the nearest nodes."""
    i = int(np.searchsorted(e, c))
    lo = min(max(i - width // 2, 0), max(len(e) - width, 0))
    sl = slice(lo, lo + width)
    w = spectral.fd_weights(c, e[sl], order)
    return float(w[:, order] @ vals[sl])


def find_cycle_roots(drift: AveragedDrift, k: int):
    """All sign changes of the tabulated ``Lambda_k``, refined on a local
    degree-7 interpolant. Returns a list of ``(c, dLambda_k(c))``."""
    e = drift.e_grid
    vals = drift.Lambda(k)
    thresh = _null_threshold(drift, np.ones_like(e, dtype=bool))
    idx = np.flatnonzero(np.abs(vals) > thresh)
    roots = []
    for a, b in zip(idx[:-1], idx[1:]):
        if np.sign(vals[a]) == np.sign(vals[b]):
            continue
        c = brentq(lambda s: _local_poly(e, vals, s, 0), e[a], e[b], xtol=1e-15, rtol=1e-14)
        roots.append((float(c), _local_poly(e, vals, c, 1)))
    if not roots:
        raise NoRoot(f"Lambda_{k} has no sign change on the energy grid")
    return roots


def find_cycle_root(drift: AveragedDrift, k: int):
    """First root with ``Lambda_k' < 0`` if any, else the first root."""
    roots = find_cycle_roots(drift, k)
    c, dl = next(((c, dl) for c, dl in roots if dl < 0), roots[0])
    if abs(dl) < DERIV_ZERO:
        raise DerivativeZero(f"Lambda_{k}'({c:g}) = {dl:g} is numerically zero")
    return c, dl


# generator check -------------------------------------------------------------

_W1 = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
_W2 = np.array([-1.0, 16.0, 16.0, -1.0]) / 12.0
_OFF = np.array([-2, -1, 1, 2])


def _stencil(x, y, h):
    """Points of a 4th-order stencil for all first and second partials."""
    pts = [(0, 0)] + [(a, 0) for a in _OFF] + [(0, b) for b in _OFF] + [(a, b) for a in _OFF for b in _OFF]
    off = np.array(pts, dtype=float) * h
    return x[:, None] + off[None, :, 0], y[:, None] + off[None, :, 1]


def _stencil_partials(vals, h):
    c = vals[:, 0]
    ax, ay = vals[:, 1:5], vals[:, 5:9]
    diag = vals[:, 9:].reshape(-1, 4, 4)
    vx = ax @ _W1 / h
    vy = ay @ _W1 / h
    vxx = (ax @ _W2 - 2.5 * c) / h**2
    vyy = (ay @ _W2 - 2.5 * c) / h**2
    vxy = np.einsum("a,nab,b->n", _W1, diag, _W1) / h**2
    return c, vx, vy, vxx, vxy, vyy


@dataclass
class GeneratorData:
    """Per-point pieces of ``L V_N`` that do not depend on ``t``."""

    x: np.ndarray
    y: np.ndarray
    partials: dict  # k -> (v, vx, vy, vxx, vxy, vyy)


def generator_data(sys: SdeSystem, drift: AveragedDrift | None, xs, ys, cache: OrbitCache | None = None, step=None):
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    partials = {}
    if drift is not None and drift.v_tables:
        h = (STENCIL_STEP if step is None else step) * sys.ham.r
        sx, sy = _stencil(xs, ys, h)
        E = sys.ham.h0(sx, sy)
        lo, hi = drift.e_grid[0], drift.e_grid[-1]
        if np.any(E < lo) or np.any(E > hi):
            raise StencilOutOfDomain(f"stencil energies leave the tabulated range [{lo:g}, {hi:g}]")
        if cache is None:
            cache = OrbitCache(sys.ham, n_phi=len(drift.phi_grid))
        try:
            E_flat, phi_flat = energy_angle_of_points(sys.ham, cache, sx.ravel(), sy.ravel())
        except OutOfFamily as exc:
            raise StencilOutOfDomain(str(exc)) from None
        E_s, phi_s = E_flat.reshape(sx.shape), phi_flat.reshape(sx.shape)
        for k, table in drift.v_tables.items():
            if not np.any(table):
                continue
            vals = drift.v_at(k, E_s.ravel(), phi_s.ravel()).reshape(sx.shape)
            partials[k] = _stencil_partials(vals, h)
    return GeneratorData(x=xs, y=ys, partials=partials)


def generator_values(sys: SdeSystem, data: GeneratorData, t):
    """``L V_N`` at the points of ``data`` and time ``t``; also returns ``V_N``."""
    x, y = data.x, data.y
    ham = sys.ham
    bx, by = sys.drift(x, y, t)
    Bm = sys.diffusion(x, y, t)
    A = Bm @ np.swapaxes(Bm, -1, -2)
    a11, a12, a22 = A[..., 0, 0], A[..., 0, 1], A[..., 1, 1]
    Ix, Iy = ham.hx(x, y), ham.hy(x, y)
    Ixx, Ixy, Iyy = ham.hxx(x, y), ham.hxy(x, y), ham.hyy(x, y)
    out = bx * Ix + by * Iy + 0.5 * (a11 * Ixx + 2 * a12 * Ixy + a22 * Iyy)
    V = ham.h0(x, y) * np.ones_like(x)
    q = sys.q
    for k, (v, vx, vy, vxx, vxy, vyy) in data.partials.items():
        s = t ** (-k / q)
        out = out - (k / q) * s / t * v + s * (bx * vx + by * vy + 0.5 * (a11 * vxx + 2 * a12 * vxy + a22 * vyy))
        V = V + s * v
    return out, V


def apply_generator(sys: SdeSystem, drift: AveragedDrift | None, z, t, cache: OrbitCache | None = None):
    """``L`` applied to ``V_N(I(x, y), Phi(x, y), t)`` at one point ``z``.

    ``L H0`` is evaluated exactly from the expression derivatives; the ``v_k``
    contributions use 4th-order finite differences with step ``1e-5 r``.
    With ``drift=None`` this is ``L H0``.
    """
    data = generator_data(sys, drift, [z[0]], [z[1]], cache)
    val, _ = generator_values(sys, data, t)
    return float(val[0])


def generator_residual(sys: SdeSystem, drift: AveragedDrift, xs, ys, times, cache: OrbitCache | None = None):
    """``L V_N - sum_k t^(-k/q) Lambda_k(V_N)`` for each time (rows) and point (columns)."""
    data = generator_data(sys, drift, xs, ys, cache)
    rows = []
    for t in np.atleast_1d(times):
        lv, V = generator_values(sys, data, t)
        res = lv.copy()
        for k in range(1, drift.order_N + 1):
            res -= t ** (-k / sys.q) * drift.Lambda_at(k, V)
        rows.append(res)
    return np.array(rows)


def residual_slope(sys: SdeSystem, drift: AveragedDrift, energies, n_angles=8, times=(1e2, 1e3, 1e4), cache=None):
    """Log-log slope in ``t`` of the max residual over an ``(E, phi)`` point grid."""
    if cache is None:
        cache = OrbitCache(sys.ham, n_phi=len(drift.phi_grid))
    phis = 2 * np.pi * (np.arange(n_angles) + 0.5) / n_angles
    xs, ys = [], []
    for orbit in cache.get_many(energies):
        px, py = orbit.point_at(phis)
        xs.append(px)
        ys.append(py)
    res = generator_residual(sys, drift, np.concatenate(xs), np.concatenate(ys), times, cache)
    peak = np.max(np.abs(res), axis=1)
    slope = np.polyfit(np.log(times), np.log(peak), 1)[0]
    return float(slope), peak
