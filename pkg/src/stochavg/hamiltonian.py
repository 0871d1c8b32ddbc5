"""Periodic orbits of the limiting Hamiltonian flow and the energy-angle map.

The flow is ``x' = dH0/dy, y' = -dH0/dx``. Every orbit starts on the
positive x-axis (``H0(x_E, 0) = E``), which fixes the angle origin, and the
angle is ``phi = nu(E) * t`` so that ``X(phi, E)``, ``Y(phi, E)`` are
2π-periodic.

Orbits are integrated with fixed-step RK4 on batches of energies at once;
the return time is located with a Hénon step onto the section ``y = 0``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import spectral
from .errors import NoLevelPoint, NoReturn, OutOfFamily, SeparatrixGuard, ToleranceFailure
from .expr import Field

TOL_ORBIT = 1e-9
RK4_STEPS = 4096
SEPARATRIX_FRACTION = 0.9
DEFAULT_N_PHI = 256
# amplitude a = sqrt(2E) stencil for energy derivatives
STENCIL_REL_STEP = 0.005


@dataclass(frozen=True)
class LimitingHamiltonian:
    """Limiting energy ``H0`` with a center at the origin.

    ``r`` is the radius of the analysis ball and ``e0`` the largest energy of
    the closed-orbit family inside it.
    """

    h0: Field
    r: float
    e0: float
    name: str = ""

    def __post_init__(self):
        if not isinstance(self.h0, Field):
            object.__setattr__(self, "h0", Field(self.h0))
        if self.r <= 0 or self.e0 <= 0:
            raise ValueError("r and e0 must be positive")

    @property
    def hx(self):
        return self.h0.d("x")

    @property
    def hy(self):
        return self.h0.d("y")

    @property
    def hxx(self):
        return self.hx.d("x")

    @property
    def hxy(self):
        return self.hx.d("y")

    @property
    def hyy(self):
        return self.hy.d("y")

    def energy(self, x, y):
        return self.h0(x, y)

    def grad_h0(self, x, y):
        return self.hx(x, y), self.hy(x, y)

    def flow(self, x, y):
        return self.hy(x, y), -self.hx(x, y)

    @property
    def e_max(self):
        """Largest energy accepted by the separatrix guard."""
        return SEPARATRIX_FRACTION * self.e0


@dataclass
class PeriodicOrbit:
    energy: float
    period: float
    frequency: float
    phi: np.ndarray
    x: np.ndarray
    y: np.ndarray
    dx_dE: np.ndarray | None = None
    dy_dE: np.ndarray | None = None
    d2x_dE2: np.ndarray | None = None
    d2y_dE2: np.ndarray | None = None
    dnu_dE: float | None = None
    d2nu_dE2: float | None = None
    closure_error: float = 0.0
    energy_error: float = 0.0

    @property
    def n_phi(self):
        return len(self.phi)

    @property
    def has_derivatives(self):
        return self.dx_dE is not None

    def x_phi(self, order=1):
        return spectral.periodic_derivative(self.x, order)

    def y_phi(self, order=1):
        return spectral.periodic_derivative(self.y, order)

    def jacobian(self):
        """``dX/dphi * dY/dE - dX/dE * dY/dphi``, equal to ``1/nu``."""
        if not self.has_derivatives:
            raise ValueError("orbit computed without energy derivatives")
        return self.x_phi() * self.dy_dE - self.dx_dE * self.y_phi()

    def point_at(self, phi):
        """Trigonometric interpolation of ``(X, Y)`` at angles ``phi``."""
        return spectral.trig_interpolate(self.x, phi), spectral.trig_interpolate(self.y, phi)

    def to_csv(self, path):
        if not self.has_derivatives:
            raise ValueError("orbit dump needs energy derivatives")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["phi", "x", "y", "dEx", "dEy"])
            for row in zip(self.phi, self.x, self.y, self.dx_dE, self.dy_dE):
                w.writerow([f"{v:.16e}" for v in row])


def _rk4(ham, x, y, h):
    k1x, k1y = ham.flow(x, y)
    k2x, k2y = ham.flow(x + 0.5 * h * k1x, y + 0.5 * h * k1y)
    k3x, k3y = ham.flow(x + 0.5 * h * k2x, y + 0.5 * h * k2y)
    k4x, k4y = ham.flow(x + h * k3x, y + h * k3y)
    return (
        x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
        y + h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y),
    )


def _henon_to_section(ham, x, y):
    """One RK4 step with ``y`` as independent variable, landing on ``y = 0``.

    Returns the x coordinate on the section and the elapsed time.
    """

    def rhs(xx, yy):
        fx, fy = ham.flow(xx, yy)
        return fx / fy, 1.0 / fy

    dy = -y
    k1x, k1t = rhs(x, y)
    k2x, k2t = rhs(x + 0.5 * dy * k1x, y + 0.5 * dy)
    k3x, k3t = rhs(x + 0.5 * dy * k2x, y + 0.5 * dy)
    k4x, k4t = rhs(x + dy * k3x, y + dy)
    xs = x + dy / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    dt = dy / 6.0 * (k1t + 2 * k2t + 2 * k3t + k4t)
    return xs, dt


def level_start_points(ham: LimitingHamiltonian, energies):
    """Smallest ``x > 0`` with ``H0(x, 0) = E`` for each energy."""
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    xs = np.linspace(0.0, ham.r, 4097)[1:]
    hs = ham.h0(xs, np.zeros_like(xs))
    out = np.empty_like(energies)
    for i, e in enumerate(energies):
        above = np.nonzero(hs >= e)[0]
        if len(above) == 0:
            raise NoLevelPoint(f"no root of H0(x, 0) = {e:g} in (0, r={ham.r:g}]")
        j = above[0]
        lo = xs[j - 1] if j > 0 else 0.0
        hi = xs[j]
        if hs[j] == e:
            out[i] = hi
            continue
        out[i] = brentq(lambda s: ham.h0(s, 0.0) - e, lo, hi, xtol=1e-16, rtol=1e-15, maxiter=200)
    return out


def _periods(ham, x0, t_cap=200.0):
    """Return times to the positive section crossing, RK4 at step 2π/1024."""
    n = len(x0)
    h = 2.0 * np.pi / 1024
    x, y = x0.copy(), np.zeros(n)
    period = np.full(n, np.nan)
    t = 0.0
    for _ in range(int(t_cap / h) + 1):
        xn, yn = _rk4(ham, x, y, h)
        hit = np.isnan(period) & (y > 0) & (yn <= 0) & (xn > 0)
        if hit.any():
            _, dt = _henon_to_section(ham, x[hit], y[hit])
            period[hit] = t + dt
        x, y = xn, yn
        t += h
        if not np.isnan(period).any():
            return period
    bad = np.isnan(period)
    raise NoReturn(f"trajectory did not return within t={t_cap:g}", bad)


def _integrate_orbits(ham, energies, n_phi, check=True):
    x0 = level_start_points(ham, energies)
    try:
        t1 = _periods(ham, x0)
    except NoReturn as exc:
        bad = np.asarray(energies)[exc.args[1]]
        raise NoReturn(f"no return to the section for E = {bad.tolist()}") from None
    # refine the period with one full pass at the final step size
    n_steps = max(RK4_STEPS, n_phi)
    x, y = x0.copy(), np.zeros_like(x0)
    h = t1 / n_steps
    for _ in range(n_steps):
        x, y = _rk4(ham, x, y, h)
    _, dt = _henon_to_section(ham, x, y)
    period = t1 + dt
    # sampling pass
    stride = n_steps // n_phi
    h = period / n_steps
    xs = np.empty((len(x0), n_phi))
    ys = np.empty((len(x0), n_phi))
    x, y = x0.copy(), np.zeros_like(x0)
    for step in range(n_steps):
        if step % stride == 0:
            xs[:, step // stride] = x
            ys[:, step // stride] = y
        x, y = _rk4(ham, x, y, h)
    closure = np.hypot(x - x0, y)
    e_err = np.max(np.abs(ham.h0(xs, ys) - np.asarray(energies)[:, None]), axis=1)
    if check:
        worst = np.argmax(np.maximum(closure, e_err))
        if max(closure[worst], e_err[worst]) > TOL_ORBIT:
            raise ToleranceFailure(
                f"orbit at E={energies[worst]:g}: closure {closure[worst]:.2e}, "
                f"energy drift {e_err[worst]:.2e} exceed {TOL_ORBIT:g}"
            )
    return period, xs, ys, closure, e_err


def _check_request(ham, energies, n_phi, guard=True):
    if n_phi < 32 or n_phi & (n_phi - 1):
        raise ValueError(f"n_phi must be a power of two >= 32, got {n_phi}")
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    if np.any(energies <= 0) or np.any(energies > ham.e0):
        raise OutOfFamily(f"energies must lie in (0, e0={ham.e0:g}]")
    if guard and np.any(energies > ham.e_max * (1 + 1e-12)):
        raise SeparatrixGuard(
            f"energy {energies.max():g} exceeds the separatrix guard 0.9*e0 = {ham.e_max:g}"
        )
    return energies


def compute_orbits(ham: LimitingHamiltonian, energies, n_phi=DEFAULT_N_PHI, derivatives=True, guard=True):
    """Batched :func:`compute_orbit`; returns a list of :class:`PeriodicOrbit`."""
    energies = _check_request(ham, energies, n_phi, guard=guard)
    phi = spectral.angle_grid(n_phi)
    if not derivatives:
        period, xs, ys, closure, e_err = _integrate_orbits(ham, energies, n_phi)
        return [
            PeriodicOrbit(
                energy=float(e),
                period=float(p),
                frequency=2 * np.pi / float(p),
                phi=phi,
                x=xs[i],
                y=ys[i],
                closure_error=float(closure[i]),
                energy_error=float(e_err[i]),
            )
            for i, (e, p) in enumerate(zip(energies, period))
        ]

    amp = np.sqrt(2.0 * energies)
    da = STENCIL_REL_STEP * amp
    offsets = np.array([-2, -1, 0, 1, 2])
    amps = amp[:, None] + offsets[None, :] * da[:, None]
    stencil_e = (0.5 * amps**2).ravel()
    # stencil energies above e0 are never needed in practice; clip to stay in range
    if np.any(stencil_e > ham.e0):
        raise SeparatrixGuard("derivative stencil leaves the closed-orbit family")
    period, xs, ys, closure, e_err = _integrate_orbits(ham, stencil_e, n_phi)
    m = len(energies)
    period = period.reshape(m, 5)
    xs = xs.reshape(m, 5, n_phi)
    ys = ys.reshape(m, 5, n_phi)
    nu = 2 * np.pi / period
    d1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
    d2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0

    orbits = []
    for i, e in enumerate(energies):
        a, h = amp[i], da[i]

        def dE(vals):
            va = np.tensordot(d1, vals, axes=(0, 0)) / h
            vaa = np.tensordot(d2, vals, axes=(0, 0)) / h**2
            return va / a, vaa / a**2 - va / a**3

        x_e, x_ee = dE(xs[i])
        y_e, y_ee = dE(ys[i])
        nu_e, nu_ee = dE(nu[i])
        orbits.append(
            PeriodicOrbit(
                energy=float(e),
                period=float(period[i, 2]),
                frequency=float(nu[i, 2]),
                phi=phi,
                x=xs[i, 2],
                y=ys[i, 2],
                dx_dE=x_e,
                dy_dE=y_e,
                d2x_dE2=x_ee,
                d2y_dE2=y_ee,
                dnu_dE=float(nu_e),
                d2nu_dE2=float(nu_ee),
                closure_error=float(closure.reshape(m, 5)[i, 2]),
                energy_error=float(e_err.reshape(m, 5)[i, 2]),
            )
        )
    return orbits


def compute_orbit(ham: LimitingHamiltonian, E, n_phi=DEFAULT_N_PHI, derivatives=True) -> PeriodicOrbit:
    """Periodic orbit at energy ``E`` sampled on ``n_phi`` uniform angles."""
    return compute_orbits(ham, [E], n_phi, derivatives=derivatives)[0]


def frequency_curve(ham: LimitingHamiltonian, e_grid, n_phi=DEFAULT_N_PHI):
    """Table of ``(E, nu(E))`` rows for a strictly increasing grid."""
    e_grid = np.asarray(e_grid, dtype=float)
    if np.any(np.diff(e_grid) <= 0):
        raise ValueError("energy grid must be strictly increasing")
    orbits = compute_orbits(ham, e_grid, n_phi, derivatives=False)
    return np.column_stack([e_grid, [o.frequency for o in orbits]])


@dataclass
class OrbitCache:
    """Write-once store of orbits keyed by energy."""

    ham: LimitingHamiltonian
    n_phi: int = DEFAULT_N_PHI
    derivatives: bool = False
    _orbits: dict = field(default_factory=dict)

    def get_many(self, energies):
        energies = [float(e) for e in np.atleast_1d(energies)]
        missing = sorted({e for e in energies if e not in self._orbits})
        if missing:
            new = compute_orbits(self.ham, missing, self.n_phi, derivatives=self.derivatives, guard=False)
            for e, o in zip(missing, new):
                self._orbits[e] = o
        return [self._orbits[e] for e in energies]

    def get(self, E):
        return self.get_many([E])[0]

    def add(self, orbit: PeriodicOrbit):
        self._orbits.setdefault(float(orbit.energy), orbit)

    def __len__(self):
        return len(self._orbits)


def _wrap(phi):
    """Angles in ``[0, 2π)``; ``np.mod`` alone can return ``2π`` for tiny negatives."""
    phi = np.mod(phi, 2 * np.pi)
    return np.where(phi >= 2 * np.pi, 0.0, phi)


def _refine_angle(orbit, x, y, iters=6):
    """Nearest node, then Newton on the tangential distance along the orbit."""
    d2 = (orbit.x - x) ** 2 + (orbit.y - y) ** 2
    phi = orbit.phi[int(np.argmin(d2))]
    cx = spectral.fourier_coefficients(orbit.x)
    cy = spectral.fourier_coefficients(orbit.y)
    n = orbit.n_phi
    for _ in range(iters):
        X = spectral.evaluate_fourier(cx, n, phi)
        Y = spectral.evaluate_fourier(cy, n, phi)
        Xp = spectral.evaluate_fourier_derivative(cx, n, phi)
        Yp = spectral.evaluate_fourier_derivative(cy, n, phi)
        step = ((x - X) * Xp + (y - Y) * Yp) / (Xp * Xp + Yp * Yp)
        phi = phi + step
        if abs(step) < 1e-15:
            break
    return float(_wrap(phi))


def energy_angle_of_points(ham: LimitingHamiltonian, cache: OrbitCache, xs, ys):
    """Inverse energy-angle map for arrays of points."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    energies = ham.h0(xs, ys)
    if np.any(energies <= 0) or np.any(energies > ham.e0):
        raise OutOfFamily(f"energy outside (0, e0={ham.e0:g}] for some point")
    orbits = cache.get_many(energies)
    phis = np.array([_refine_angle(o, x, y) for o, x, y in zip(orbits, xs, ys)])
    return energies, phis


def energy_angle_of_point(ham: LimitingHamiltonian, cache: OrbitCache, x, y):
    """``(E, phi)`` of a point: ``E = H0(x, y)``, phi along the cached orbit."""
    E, phi = energy_angle_of_points(ham, cache, [x], [y])
    return float(E[0]), float(phi[0])


def omega_small_energy_check(ham, energies, nu_values, slope=-1.0 / 8.0):
    """Deviation of ``nu`` from the expansion ``1 + slope * E``."""
    energies = np.asarray(energies, dtype=float)
    return np.abs(np.asarray(nu_values) - (1.0 + slope * energies))


def approximate_angles(ham: LimitingHamiltonian, xs, ys, cache: OrbitCache | None = None, n_levels=256, iters=8):
    """Angles of many points using orbits on a fixed log-spaced energy ladder.

    Each point is projected onto the orbit at the nearest ladder energy, so the
    angle is exact for families of similar curves (the harmonic oscillator) and
    accurate to first order in the ladder spacing otherwise. Points with energy
    outside ``(0, 0.9 e0]`` get NaN.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    shape = np.broadcast(xs, ys).shape
    xs, ys = np.broadcast_to(xs, shape).ravel(), np.broadcast_to(ys, shape).ravel()
    out = np.full(xs.shape, np.nan)
    E = ham.h0(xs, ys)
    ladder = np.geomspace(1e-6 * ham.e0, ham.e_max, n_levels)
    ok = np.isfinite(E) & (E > 0) & (E <= ham.e_max)
    if not np.any(ok):
        return out.reshape(shape)
    cache = cache or OrbitCache(ham, n_phi=DEFAULT_N_PHI)
    idx = np.clip(np.rint(np.interp(np.log(E[ok]), np.log(ladder), np.arange(n_levels))).astype(int), 0, n_levels - 1)
    used = np.unique(idx)
    orbits = dict(zip(used, cache.get_many(ladder[used])))
    n = cache.n_phi
    cx = np.array([spectral.fourier_coefficients(orbits[i].x) for i in idx])
    cy = np.array([spectral.fourier_coefficients(orbits[i].y) for i in idx])
    px, py = xs[ok], ys[ok]
    # start from the nearest node, then Newton on the tangential distance
    nodes = spectral.angle_grid(n)
    ox = np.array([orbits[i].x for i in idx])
    oy = np.array([orbits[i].y for i in idx])
    phi = nodes[np.argmin((ox - px[:, None]) ** 2 + (oy - py[:, None]) ** 2, axis=1)]
    for _ in range(iters):
        X = spectral.evaluate_fourier(cx, n, phi)
        Y = spectral.evaluate_fourier(cy, n, phi)
        Xp = spectral.evaluate_fourier_derivative(cx, n, phi)
        Yp = spectral.evaluate_fourier_derivative(cy, n, phi)
        phi = phi + ((px - X) * Xp + (py - Y) * Yp) / (Xp * Xp + Yp * Yp)
    out[ok] = _wrap(phi)
    return out.reshape(shape)
