"""Seeded integration of the planar Itô system and deterministic ensembles.

Path ``i`` of an ensemble with master seed ``s`` draws its increments from a
Philox stream keyed by ``(s, i)``; the ``k``-th pair of normals of a path is a
pure function of ``(s, i, k)``. Paths are integrated in fixed-size chunks, so
the arithmetic each path sees does not depend on how many workers run.

Two steppers share the interface:

``euler_maruyama``
    ``z' = z + b(z, t) h + B(z, t) dW`` with everything at the left endpoint.
``symplectic``
    the same increments, but ``x`` is advanced with the drift evaluated at the
    already-updated ``y`` (semi-implicit Euler). The Hamiltonian part then has
    no secular energy drift, which explicit Euler-Maruyama has on long runs.
    The diffusion stays at the left endpoint, so the Itô limit is unchanged.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError
from .hamiltonian import approximate_angles
from .perturbation import SdeSystem

SCHEMES = ("euler_maruyama", "symplectic")
CHUNK_PATHS = 256
BLOCK_STEPS = 4096
BLOWUP_FACTOR = 1e3


@dataclass(frozen=True)
class SimulationConfig:
    t0: float = 1.0
    t1: float = 100.0
    dt: float = 1e-3
    seed: int = 0
    z0: tuple = (0.4, 0.0)
    record_stride: int = 1
    scheme: str = "euler_maruyama"

    def __post_init__(self):
        if self.t0 < 1:
            raise ConfigError(f"t0 must be >= 1, got {self.t0}")
        if not self.t1 > self.t0:
            raise ConfigError(f"need t1 > t0, got t0={self.t0}, t1={self.t1}")
        if not (0 < self.dt <= self.t1 - self.t0):
            raise ConfigError(f"need 0 < dt <= t1 - t0, got dt={self.dt}")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ConfigError(f"record_stride must be a positive integer, got {self.record_stride}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "z0", (float(self.z0[0]), float(self.z0[1])))

    @property
    def n_steps(self):
        return int(math.ceil((self.t1 - self.t0) / self.dt * (1 - 1e-12)))

    def step_time(self, k):
        return min(self.t0 + k * self.dt, self.t1)

    def record_indices(self):
        idx = list(range(0, self.n_steps + 1, self.record_stride))
        if idx[-1] != self.n_steps:
            idx.append(self.n_steps)
        return np.array(idx)

    def record_times(self):
        idx = self.record_indices()
        t = self.t0 + idx * self.dt
        t[-1] = self.t1
        return t

    def header(self, sys: SdeSystem, n_paths=1):
        return (
            f"# system={sys.describe()} seed={self.seed} dt={self.dt!r} scheme={self.scheme} "
            f"t0={self.t0!r} t1={self.t1!r} z0=({self.z0[0]!r},{self.z0[1]!r}) "
            f"record_stride={self.record_stride} n_paths={n_paths}"
        )


def path_stream(seed, index):
    """Counter-based normal generator of one path."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


# compiled coefficient kernels -----------------------------------------------


class _Kernel:
    """Drift and diffusion compiled into three numpy lambdas of ``(x, y, s)``
    where ``s[k] = t^(-k/q)``."""

    def __init__(self, sys: SdeSystem):
        ham, pert = sys.ham, sys.pert
        bx = [ham.hy.expr.source()]
        by = [f"(-{ham.hx.expr.source()})"]
        for k in range(1, pert.k_max + 1):
            hk, fk = pert.H(k), pert.F(k)
            if hk is not None:
                bx.append(f"s[{k}] * {hk.d('y').expr.source()}")
                by.append(f"s[{k}] * (-{hk.d('x').expr.source()})")
            if fk is not None:
                by.append(f"s[{k}] * {fk.expr.source()}")
        entries = {}
        for (i, j, k), f in sorted(pert.b_terms.items()):
            if k <= pert.k_max:
                entries.setdefault((i, j), []).append(f"s[{k}] * {f.expr.source()}")
        self.entries = sorted(entries)
        env = {"np": np}
        self.bx = eval(f"lambda x, y, s: {' + '.join(bx)}", env)
        self.by = eval(f"lambda x, y, s: {' + '.join(by)}", env)
        diff = ", ".join("(" + " + ".join(entries[key]) + ")" for key in self.entries)
        self.diff = eval(f"lambda x, y, s: ({diff}{',' if len(self.entries) == 1 else ''})", env)
        self.kmax = pert.k_max
        self.q = pert.q

    def powers(self, t):
        return [0.0] + [t ** (-k / self.q) for k in range(1, self.kmax + 1)]

    def noise(self, x, y, s, dW):
        """``(B dW)_1, (B dW)_2`` at ``(x, y)``."""
        n1 = n2 = 0.0
        if not self.entries:
            return n1, n2
        for (i, j), val in zip(self.entries, self.diff(x, y, s)):
            term = val * dW[:, j - 1]
            if i == 1:
                n1 = n1 + term
            else:
                n2 = n2 + term
        return n1, n2


# chunk integration -----------------------------------------------------------


@dataclass
class ChunkResult:
    states: np.ndarray  # (P, n_rec, 2)
    sup_absz: np.ndarray  # (P,)
    sup_log: dict  # weight -> (P,) running max of log(|z| w(t))
    blowup: np.ndarray
    nonfinite: np.ndarray
    stop_time: np.ndarray


def _simulate_chunk(sys: SdeSystem, cfg: SimulationConfig, indices, weights=()):
    kern = _Kernel(sys)
    P = len(indices)
    gens = [path_stream(cfg.seed, i) for i in indices]
    x = np.full(P, cfg.z0[0])
    y = np.full(P, cfg.z0[1])
    rec_idx = cfg.record_indices()
    states = np.empty((P, len(rec_idx), 2))
    states[:, 0, 0], states[:, 0, 1] = x, y
    next_rec = 1
    limit = BLOWUP_FACTOR * sys.ham.r
    alive = np.ones(P, dtype=bool)
    blowup = np.zeros(P, dtype=bool)
    nonfinite = np.zeros(P, dtype=bool)
    stop_time = np.full(P, np.inf)
    absz = np.hypot(x, y)
    sup_absz = absz.copy()
    with np.errstate(divide="ignore"):
        sup_log = {w: np.log(absz) + float(w.log(cfg.t0)) for w in weights}
    n = cfg.n_steps
    symplectic = cfg.scheme == "symplectic"
    # frozen blown-up paths may overflow in the drift; they are masked out below
    with np.errstate(over="ignore", invalid="ignore"):
        k = 0
        while k < n:
            L = min(BLOCK_STEPS, n - k)
            normals = np.stack([g.standard_normal((L, 2)) for g in gens], axis=1)  # (L, P, 2)
            for l in range(L):  # noqa: E741
                t = cfg.t0 + k * cfg.dt
                h = cfg.dt if k < n - 1 else cfg.t1 - t
                s = kern.powers(t)
                dW = math.sqrt(h) * normals[l]
                n1, n2 = kern.noise(x, y, s, dW)
                yn = y + kern.by(x, y, s) * h + n2
                xn = x + kern.bx(x, yn if symplectic else y, s) * h + n1
                k += 1
                absn = np.hypot(xn, yn)
                bad = ~np.isfinite(absn)
                big = absn > limit
                if np.any(bad | big):
                    hit = alive & (bad | big)
                    nonfinite |= hit & bad
                    blowup |= hit & big & ~bad
                    stop_time[hit] = cfg.step_time(k)
                    keep = bad  # non-finite paths freeze at their last finite state
                    xn = np.where(keep, x, xn)
                    yn = np.where(keep, y, yn)
                    absn = np.where(keep, absz, absn)
                    alive &= ~hit
                    frozen = ~alive & ~hit
                else:
                    frozen = ~alive
                if np.any(frozen):
                    xn = np.where(frozen, x, xn)
                    yn = np.where(frozen, y, yn)
                    absn = np.where(frozen, absz, absn)
                x, y, absz = xn, yn, absn
                np.maximum(sup_absz, absz, out=sup_absz)
                if weights:
                    tk = cfg.step_time(k)
                    with np.errstate(divide="ignore"):
                        la = np.log(absz)
                    for w, arr in sup_log.items():
                        np.maximum(arr, la + float(w.log(tk)), out=arr)
                if next_rec < len(rec_idx) and rec_idx[next_rec] == k:
                    states[:, next_rec, 0], states[:, next_rec, 1] = x, y
                    next_rec += 1
    return ChunkResult(states, sup_absz, sup_log, blowup, nonfinite, stop_time)


def _run_chunk(args):
    sys, cfg, lo, hi, weights = args
    return _simulate_chunk(sys, cfg, range(lo, hi), weights)


# results ---------------------------------------------------------------------


def _fmt(v):
    return f"{v:.16e}"


@dataclass
class Path:
    times: np.ndarray
    states: np.ndarray
    seed_used: tuple
    ham: object = field(repr=False, default=None)
    blowup: bool = False
    nonfinite: bool = False
    stop_time: float = math.inf

    @property
    def truncated(self):
        return self.blowup or self.nonfinite

    @property
    def x(self):
        return self.states[:, 0]

    @property
    def y(self):
        return self.states[:, 1]

    @property
    def absz(self):
        return np.hypot(self.x, self.y)

    @property
    def energy(self):
        return self.ham.h0(self.x, self.y)

    @cached_property
    def phi(self):
        return approximate_angles(self.ham, self.x, self.y)

    def to_csv(self, path, header=""):
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(header + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "y", "absz", "E", "phi"])
            for row in zip(self.times, self.x, self.y, self.absz, self.energy, self.phi):
                w.writerow([_fmt(v) for v in row])


QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass
class Ensemble:
    sys: SdeSystem
    cfg: SimulationConfig
    times: np.ndarray
    states: np.ndarray  # (n_paths, n_rec, 2)
    sup_absz: np.ndarray
    sup_log: dict
    blowup: np.ndarray
    nonfinite: np.ndarray
    stop_time: np.ndarray

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def truncated(self):
        return self.blowup | self.nonfinite

    @property
    def absz(self):
        return np.hypot(self.states[..., 0], self.states[..., 1])

    @property
    def energy(self):
        return self.sys.ham.h0(self.states[..., 0], self.states[..., 1])

    def path(self, i) -> Path:
        return Path(
            times=self.times,
            states=self.states[i],
            seed_used=(self.cfg.seed, i),
            ham=self.sys.ham,
            blowup=bool(self.blowup[i]),
            nonfinite=bool(self.nonfinite[i]),
            stop_time=float(self.stop_time[i]),
        )

    def paths(self):
        return (self.path(i) for i in range(self.n_paths))

    def quantiles(self, statistic="absz"):
        data = {"absz": self.absz, "E": self.energy}[statistic]
        return np.quantile(data, QUANTILES, axis=0).T

    def median(self, statistic="absz"):
        data = {"absz": self.absz, "E": self.energy}[statistic]
        return np.median(data, axis=0)

    def flags(self):
        return {
            "n_paths": self.n_paths,
            "blowup": int(self.blowup.sum()),
            "nonfinite": int(self.nonfinite.sum()),
        }

    @property
    def header(self):
        return self.cfg.header(self.sys, self.n_paths)

    def summary_csv(self, path, statistic="absz"):
        with open(path, "w", newline="") as fh:
            fh.write(self.header + f" statistic={statistic}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "q05", "q25", "q50", "q75", "q95"])
            for t, row in zip(self.times, self.quantiles(statistic)):
                w.writerow([_fmt(t)] + [_fmt(v) for v in row])

    def write_summaries(self, outdir, stem="summary"):
        os.makedirs(outdir, exist_ok=True)
        files = []
        for stat in ("absz", "E"):
            p = os.path.join(outdir, f"{stem}_{stat}.csv")
            self.summary_csv(p, stat)
            files.append(p)
        return files


def simulate_ensemble(sys: SdeSystem, cfg: SimulationConfig, n_paths: int, jobs=1, weights=(), chunk_paths=CHUNK_PATHS) -> Ensemble:
    """Integrate ``n_paths`` paths; the result does not depend on ``jobs``.

    ``weights`` are objects with a ``log(t)`` method; for each one the running
    maximum of ``log(|z(t)| w(t))`` over every step is kept per path.
    """
    if n_paths < 1:
        raise ConfigError("n_paths must be at least 1")
    if jobs < 1:
        raise ConfigError("jobs must be at least 1")
    weights = tuple(weights)
    tasks = [(sys, cfg, lo, min(lo + chunk_paths, n_paths), weights) for lo in range(0, n_paths, chunk_paths)]
    if jobs == 1 or len(tasks) == 1:
        results = [_run_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(_run_chunk, tasks))
    cat = lambda name: np.concatenate([getattr(r, name) for r in results])  # noqa: E731
    return Ensemble(
        sys=sys,
        cfg=cfg,
        times=cfg.record_times(),
        states=cat("states"),
        sup_absz=cat("sup_absz"),
        sup_log={w: np.concatenate([r.sup_log[w] for r in results]) for w in weights},
        blowup=cat("blowup"),
        nonfinite=cat("nonfinite"),
        stop_time=cat("stop_time"),
    )


def simulate_path(sys: SdeSystem, cfg: SimulationConfig, index=0) -> Path:
    """Single path ``index`` of the ensemble with seed ``cfg.seed``."""
    res = _simulate_chunk(sys, cfg, [index])
    ens = Ensemble(sys, cfg, cfg.record_times(), res.states, res.sup_absz, {}, res.blowup, res.nonfinite, res.stop_time)
    p = ens.path(0)
    p.seed_used = (cfg.seed, index)
    return p


def brownian_increments(seed, index, n_steps):
    """The standard normals path ``index`` uses for its first ``n_steps`` steps."""
    g = path_stream(seed, index)
    out = []
    left = n_steps
    while left > 0:
        L = min(BLOCK_STEPS, left)
        out.append(g.standard_normal((L, 2)))
        left -= L
    return np.concatenate(out) if out else np.zeros((0, 2))


def integrate_with_increments(sys: SdeSystem, z0, t0, dt, normals, scheme="euler_maruyama"):
    """Integrate one path on a uniform grid with prescribed standard normals.

    Row ``k`` of ``normals`` drives step ``k``. Used for strong-order studies,
    where coarse increments are sums of fine ones.
    """
    kern = _Kernel(sys)
    x = np.array([float(z0[0])])
    y = np.array([float(z0[1])])
    sq = math.sqrt(dt)
    for k, nrm in enumerate(np.asarray(normals)):
        t = t0 + k * dt
        s = kern.powers(t)
        dW = sq * nrm[None, :]
        n1, n2 = kern.noise(x, y, s, dW)
        yn = y + kern.by(x, y, s) * dt + n2
        x = x + kern.bx(x, yn if scheme == "symplectic" else y, s) * dt + n1
        y = yn
    return float(x[0]), float(y[0])
