"""Diagnostics behind the Monte Carlo criteria: slopes, levels and radii over
several windows, plus the noise-free runs that separate integrator error from
noise effects.

    python scripts/mc_diagnostics.py decay      # ex1 h=q=2 median |z| slopes
    python scripts/mc_diagnostics.py tracking   # ex2 E t^(1/2), with and without noise
    python scripts/mc_diagnostics.py cycle      # ex3 tail means against time
"""

import argparse
import math

import numpy as np

from stochavg.montecarlo import cycle_radius, decay_fit
from stochavg.perturbation import registry_get
from stochavg.sde import SimulationConfig, simulate_ensemble


def ensemble(name, params, seed, z0, n_paths, t1=1e4, dt=1e-2, stride=100):
    cfg = SimulationConfig(t0=1, t1=t1, dt=dt, seed=seed, z0=z0, scheme="symplectic", record_stride=stride)
    return simulate_ensemble(registry_get(name, params), cfg, n_paths)


def decay(args):
    ens = ensemble("ex1", dict(h=2, p=1, q=2, **{"lambda": -1, "mu": 1}), 7, (0.4, 0.0), args.n_paths)
    for window in ((1e2, 1e3), (1e3, 1e4), (1e2, 1e4)):
        fit = decay_fit(ens, "median_absz", window)
        sel = (ens.times >= window[0]) & (ens.times <= window[1])
        mean_slope = np.polyfit(np.log(ens.times[sel]), np.log(ens.absz.mean(axis=0)[sel]), 1)[0]
        print(f"window {window}: median |z| slope {fit.exponent:.4f}, mean |z| slope {mean_slope:.4f}")


def tracking(args):
    for label, params in (("noisy", dict(a2=-2, a4=-0.25, b1=1, b2=1)), ("noise-free", dict(a2=-1.5, a4=0.125, b1=0, b2=0))):
        ens = ensemble("ex2", params, 8, (0.4, 0.0), args.n_paths if label == "noisy" else 1)
        u_star = ens.sys.reference["u_star"]
        for window in ((1e2, 1e3), (1e3, 1e4)):
            fit = decay_fit(ens, "median_E_theta", window, theta=0.5)
            print(f"{label} u*={u_star:.4f} window {window}: level {fit.level:.4f} slope {fit.exponent:.4f}")


def cycle(args):
    for r0 in (0.5, 1.7, 2.5):
        ens = ensemble("ex3", dict(a1=1, a2=-2, mu=0.5), 9, (r0, 0.0), args.n_paths)
        mean, se = cycle_radius(ens, 0.2)
        print(f"r0={r0}: tail mean {mean:.4f} +- {se:.4f} (target {math.sqrt(3):.4f})")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("what", choices=("decay", "tracking", "cycle"))
    ap.add_argument("--n-paths", type=int, default=200)
    args = ap.parse_args()
    {"decay": decay, "tracking": tracking, "cycle": cycle}[args.what](args)


if __name__ == "__main__":
    main()
