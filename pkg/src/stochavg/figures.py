"""Pinned scenarios for the reference sample-path figures.

Each figure has one or more panels; each panel has one or more runs (a
system reference plus initial data). The figure descriptions leave several
values open, so every choice made here is listed under ``assumptions``. Bump
``MANIFEST_VERSION`` whenever a scenario changes; the version is written into
every CSV header.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .perturbation import load_system
from .sde import SimulationConfig, simulate_ensemble

MANIFEST_VERSION = "1"

DEFAULTS = {"t0": 1.0, "t1": 1e4, "dt": 1e-2, "scheme": "symplectic", "record_stride": 100, "n_paths": 20, "shown": 5}

Z0 = (0.4, 0.0)

MANIFEST = {
    1: {
        "title": "linear example, |z(t)| with and without noise",
        "statistic": "absz",
        "panels": {
            "a": [{"system": "builtin:ex0?lambda=-1&mu=0", "z0": Z0}, {"system": "builtin:ex0?lambda=1&mu=0", "z0": Z0}],
            "b": [{"system": "builtin:ex0?lambda=-1&mu=1", "z0": Z0}, {"system": "builtin:ex0?lambda=1&mu=1", "z0": Z0}],
        },
        "reference": None,
        "assumptions": ["lambda = -1 and lambda = +1 are shown in each panel; the description fixes no lambda"],
    },
    2: {
        "title": "pendulum with h=p=1, q=2",
        "statistic": "absz",
        "panels": {
            "a": [
                {"system": "builtin:ex1?h=1&p=1&q=2&lambda=-1&mu=0", "z0": Z0},
                {"system": "builtin:ex1?h=1&p=1&q=2&lambda=0&mu=0", "z0": Z0},
                {"system": "builtin:ex1?h=1&p=1&q=2&lambda=1&mu=0", "z0": Z0},
            ],
            "b": [
                {"system": "builtin:ex1?h=1&p=1&q=2&lambda=-1&mu=1", "z0": Z0},
                {"system": "builtin:ex1?h=1&p=1&q=2&lambda=1&mu=1", "z0": Z0},
            ],
        },
        "reference": None,
        "assumptions": [
            "lambda = -1 and lambda = +1 are shown; the description fixes no lambda",
            "panel a also carries lambda = 0, the conservative pendulum, whose energy stays constant",
        ],
    },
    3: {
        "title": "pendulum with h=q=2, p=1",
        "statistic": "absz",
        "panels": {
            "a": [
                {"system": "builtin:ex1?h=2&p=1&q=2&lambda=-1&mu=0", "z0": Z0},
                {"system": "builtin:ex1?h=2&p=1&q=2&lambda=1&mu=0", "z0": Z0},
            ],
            "b": [
                {"system": "builtin:ex1?h=2&p=1&q=2&lambda=-1&mu=1", "z0": Z0},
                {"system": "builtin:ex1?h=2&p=1&q=2&lambda=1&mu=1", "z0": Z0},
            ],
        },
        "reference": {"kind": "power", "exponent": -0.25, "scale": "absz0"},
        "assumptions": [
            "lambda = -1 and lambda = +1 are shown; the description fixes no lambda",
            "the reference |z(1)| t^(-1/4) belongs to lambda = -1, mu = 1 and is written for every run",
        ],
    },
    4: {
        "title": "nonlinear damping, growing branch",
        "statistic": "absz",
        "panels": {"b": [{"system": "builtin:ex2?a2=0.1&a4=0.1&b1=0&b2=1", "z0": Z0}]},
        "reference": None,
        "assumptions": [
            "index 4 has no scenario of its own; it is pinned to the second parameter set "
            "(a2 = a4 = 0.1, b1 = 0, b2 = 1) of the two-panel nonlinear-damping figure",
        ],
    },
    5: {
        "title": "nonlinear damping, weighted stability",
        "statistic": "absz",
        "panels": {"a": [{"system": "builtin:ex2?a2=1&a4=-5/4&b1=4&b2=1", "z0": Z0}]},
        "reference": {"kind": "power", "exponent": -0.375, "scale": "absz0"},
        "assumptions": ["index 5 carries the first parameter set of the two-panel figure and its t^(-3/8) curve"],
    },
    6: {
        "title": "energy tracking u* t^(-1/2)",
        "statistic": "E",
        "panels": {
            "a": [
                {"system": "builtin:ex2?a2=-2&a4=-1/4&b1=1&b2=1", "z0": z0}
                for z0 in ((0.4, 0.0), (0.2, 0.0), (0.8, 0.0), (0.0, 0.5))
            ]
        },
        "reference": {"kind": "power", "exponent": -0.5, "scale": "u_star"},
        "assumptions": ["'various initial data' pinned to (0.4,0), (0.2,0), (0.8,0), (0,0.5)"],
    },
    7: {
        "title": "stable cycle at |z| = sqrt(3)",
        "statistic": "absz",
        "panels": {
            "a": [{"system": "builtin:ex3?a1=1&a2=-2&mu=1/2", "z0": (r, 0.0)} for r in (0.5, 1.7, 2.5)],
        },
        "reference": {"kind": "constant", "value": math.sqrt(3.0)},
        "assumptions": ["initial radii 0.5, 1.7, 2.5 are a choice made here"],
    },
}


@dataclass(frozen=True)
class FigureRun:
    index: int
    panel: str
    run: int
    system: str
    z0: tuple
    statistic: str

    @property
    def stem(self):
        return f"fig{self.index}{self.panel}_run{self.run}"


def figure_runs(index):
    if index not in MANIFEST:
        raise ConfigError(f"figure index must be one of {sorted(MANIFEST)}, got {index}")
    entry = MANIFEST[index]
    out = []
    for panel, runs in entry["panels"].items():
        for i, run in enumerate(runs):
            out.append(FigureRun(index, panel, i, run["system"], tuple(run["z0"]), entry["statistic"]))
    return out


def reference_curve(index, times, sys, z0):
    ref = MANIFEST[index]["reference"]
    if ref is None:
        return None
    times = np.asarray(times, dtype=float)
    if ref["kind"] == "constant":
        return np.full_like(times, ref["value"])
    if ref["scale"] == "absz0":
        scale = math.hypot(*z0)
    else:
        scale = sys.reference["u_star"]
    return scale * times ** ref["exponent"]


def describe(index, seed=0, **overrides):
    """Resolved scenario list without running anything."""
    opts = {**DEFAULTS, **overrides}
    lines = [f"figure {index} (manifest v{MANIFEST_VERSION}): {MANIFEST[index]['title'] if index in MANIFEST else '?'}"]
    for r in figure_runs(index):
        lines.append(
            f"  {r.stem}: {r.system} z0={r.z0} t=[{opts['t0']:g}, {opts['t1']:g}] dt={opts['dt']:g} "
            f"{opts['scheme']} paths={opts['n_paths']} seed={seed}"
        )
    for a in MANIFEST[index]["assumptions"]:
        lines.append(f"  assumption: {a}")
    return "\n".join(lines)


def reproduce_figure(index, outdir, seed=0, jobs=1, **overrides):
    """Write one CSV per run: sample paths, ensemble median and reference.

    Columns are ``t``, ``path0 .. path{k-1}`` (the statistic along the first
    ``shown`` paths), ``median`` and, when the figure has one, ``reference``.
    Returns the list of files written.
    """
    opts = {**DEFAULTS, **overrides}
    unknown = set(opts) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown figure options {sorted(unknown)}")
    os.makedirs(outdir, exist_ok=True)
    files = []
    for run in figure_runs(index):
        sys = load_system(run.system)
        cfg = SimulationConfig(t0=opts["t0"], t1=opts["t1"], dt=opts["dt"], seed=seed, z0=run.z0,
                               record_stride=opts["record_stride"], scheme=opts["scheme"])
        ens = simulate_ensemble(sys, cfg, int(opts["n_paths"]), jobs=jobs)
        data = ens.absz if run.statistic == "absz" else ens.energy
        shown = min(int(opts["shown"]), ens.n_paths)
        cols = [ens.times] + [data[i] for i in range(shown)] + [np.median(data, axis=0)]
        names = ["t"] + [f"path{i}" for i in range(shown)] + ["median"]
        ref = reference_curve(index, ens.times, sys, run.z0)
        if ref is not None:
            cols.append(ref)
            names.append("reference")
        path = os.path.join(outdir, run.stem + ".csv")
        with open(path, "w", newline="") as fh:
            fh.write(f"{ens.header} manifest=v{MANIFEST_VERSION} figure={index}{run.panel} statistic={run.statistic}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for row in zip(*cols):
                w.writerow([f"{v:.16e}" for v in row])
        files.append(path)
    return files
