"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 inconclusive verdict (the report is still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import figures
from .averaging import average_system, default_energy_grid, fit_exponents
from .classifier import Kind, classify
from .errors import ConfigError, FitAmbiguous, NumericalError
from .hamiltonian import compute_orbits, omega_small_energy_check
from .montecarlo import exit_probability
from .perturbation import estimate_noise_bound, load_system
from .sde import SimulationConfig, simulate_ensemble

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INCONCLUSIVE = 0, 2, 3, 4


@dataclass
class RunConfig:
    system: str | None = None
    out: str = "out"
    seed: int = 0
    jobs: int = 1
    # orbits / averaging
    emin: float | None = None
    emax: float | None = None
    n_energies: int = 12
    n_phi: int = 256
    order: int | None = None
    fit_window: list | None = None
    # classification
    kappa: float = 0.05
    delta: float = 0.1
    epsilon: float = 1.0
    eta: float = 0.1
    # simulation
    t0: float = 1.0
    t1: float = 100.0
    dt: float = 1e-3
    z0: list = (0.4, 0.0)
    n_paths: int = 100
    record_stride: int = 1
    scheme: str = "euler_maruyama"
    save_paths: int = 5
    weight: str = "unit"

    def validate(self):
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be at least 1")
        if not (0 < self.kappa < 1):
            raise ConfigError(f"kappa must lie in (0, 1), got {self.kappa}")
        if not (0 < self.eta < 1):
            raise ConfigError(f"eta must lie in (0, 1), got {self.eta}")
        if self.epsilon <= 0 or self.delta <= 0:
            raise ConfigError("epsilon and delta must be positive")
        if self.n_energies < 2:
            raise ConfigError("n_energies must be at least 2")
        if self.save_paths < 0:
            raise ConfigError("save_paths must be nonnegative")
        if self.weight not in ("unit", "verdict"):
            raise ConfigError(f"weight must be 'unit' or 'verdict', got {self.weight!r}")
        if len(self.z0) != 2:
            raise ConfigError("z0 needs two components")
        if self.fit_window is not None and len(self.fit_window) != 2:
            raise ConfigError("fit_window needs two energies")
        return self

    def simulation(self):
        return SimulationConfig(t0=self.t0, t1=self.t1, dt=self.dt, seed=self.seed, z0=tuple(self.z0),
                                record_stride=self.record_stride, scheme=self.scheme)


CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def load_config(path):
    """Read a JSON run configuration; unknown keys are an error."""
    if not os.path.exists(path):
        raise ConfigError(f"config file {path!r} not found")
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path!r} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    return data


def resolve_config(args) -> RunConfig:
    values = load_config(args.config) if args.config else {}
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def _need_system(cfg):
    if not cfg.system:
        raise ConfigError("no system given (use --system or the 'system' config key)")
    return load_system(cfg.system)


def _fmt(v):
    return f"{v:.16e}"


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# commands --------------------------------------------------------------------


def cmd_orbit(cfg: RunConfig, out=print):
    sys_ = _need_system(cfg)
    ham = sys_.ham
    emax = ham.e_max if cfg.emax is None else cfg.emax
    emin = 1e-3 * ham.e0 if cfg.emin is None else cfg.emin
    if not (0 < emin < emax):
        raise ConfigError(f"need 0 < emin < emax, got emin={emin}, emax={emax}")
    energies = np.linspace(emin, emax, cfg.n_energies)
    orbits = compute_orbits(ham, energies, cfg.n_phi, derivatives=True)
    os.makedirs(cfg.out, exist_ok=True)
    for i, orb in enumerate(orbits):
        orb.to_csv(os.path.join(cfg.out, f"orbit_{i:03d}.csv"))
    nu = np.array([o.frequency for o in orbits])
    _write_rows(os.path.join(cfg.out, "frequency.csv"), ["E", "nu"], zip(energies, nu))
    small = energies <= 0.4
    out(f"{ham.name}: {len(orbits)} orbits on E in [{emin:.6g}, {emax:.6g}]")
    if small.any():
        dev = omega_small_energy_check(ham, energies[small], nu[small])
        out(f"small-E check: max |nu - (1 - E/8)| over E <= 0.4 is {dev.max():.3e}")
        dev0 = np.abs(nu[small] - 1.0)
        out(f"small-E check: max |nu - 1| over E <= 0.4 is {dev0.max():.3e}")
    return EXIT_OK


def _averaged(cfg, sys_):
    e_grid = default_energy_grid(sys_.ham.e0)
    if cfg.emax is not None:
        e_grid = e_grid[e_grid <= cfg.emax * (1 + 1e-12)]
    drift = average_system(sys_, N=cfg.order, e_grid=e_grid, n_phi=cfg.n_phi)
    window = None if cfg.fit_window is None else tuple(cfg.fit_window)
    return drift, window


def cmd_average(cfg: RunConfig, out=print):
    sys_ = _need_system(cfg)
    drift, window = _averaged(cfg, sys_)
    os.makedirs(cfg.out, exist_ok=True)
    for k in sorted(drift.lambda_tables):
        drift.to_csv(k, os.path.join(cfg.out, f"Lambda_{k}.csv"))
    fit = fit_exponents(drift, window)
    fit.to_json(os.path.join(cfg.out, "fit.json"))
    out(f"{sys_.describe()}: averaged to order N={drift.order_N} on {len(drift.e_grid)} energies")
    for k in sorted(fit.degrees):
        out(f"  Lambda_{k}: degree {fit.degrees[k]} coefficient {fit.coefficients[k]:.10g} slope {fit.slopes[k]:.6g}")
    out(f"  case {fit.case_tag}, n={fit.n}")
    return EXIT_OK


def run_classification(cfg: RunConfig, sys_):
    drift, window = _averaged(cfg, sys_)
    fit = fit_exponents(drift, window)
    noise = estimate_noise_bound(sys_)
    kwargs = {"t0": cfg.t0, "delta": cfg.delta, "epsilon": cfg.epsilon}
    verdicts = classify(fit, sys_.q, noise, drift, cfg.kappa, **kwargs)
    return fit, noise, verdicts


def cmd_classify(cfg: RunConfig, out=print):
    sys_ = _need_system(cfg)
    fit, noise, verdicts = run_classification(cfg, sys_)
    os.makedirs(cfg.out, exist_ok=True)
    report = {
        "system": sys_.describe(),
        "fit": fit.to_record(),
        "noise": {"mu": noise.mu, "sigma": str(noise.sigma)},
        "verdicts": [v.to_record() for v in verdicts],
    }
    _write_json(os.path.join(cfg.out, "verdict.json"), report)
    out(f"{sys_.describe()} (q={sys_.q})")
    out(f"  fit: case {fit.case_tag}, n={fit.n}, m={fit.m}, l={fit.l}, lambda_n={fit.lambda_n}, "
        f"lambda_nm={fit.lambda_nm}, lambda_nl={fit.lambda_nl}")
    for k in sorted(fit.degrees):
        out(f"  Lambda_{k}: degree {fit.degrees[k]} coefficient {fit.coefficients[k]:.10g}")
    for root in fit.cycle_roots:
        out(f"  root c={root['c']:.10g} dLambda={root['dLambda']:.6g} stable={root['stable']}")
    out(f"  noise bound: mu={noise.mu:.10g} sigma={noise.sigma}")
    for v in verdicts:
        out(f"  verdict: {v.summary()}")
    return EXIT_INCONCLUSIVE if verdicts[0].kind == Kind.INCONCLUSIVE else EXIT_OK


def cmd_simulate(cfg: RunConfig, out=print):
    sys_ = _need_system(cfg)
    sim = cfg.simulation()
    ens = simulate_ensemble(sys_, sim, cfg.n_paths, jobs=cfg.jobs)
    os.makedirs(cfg.out, exist_ok=True)
    ens.write_summaries(cfg.out)
    for i in range(min(cfg.save_paths, ens.n_paths)):
        ens.path(i).to_csv(os.path.join(cfg.out, f"path_{i:04d}.csv"), header=ens.header)
    flags = ens.flags()
    out(f"{sys_.describe()}: {flags['n_paths']} paths, {flags['blowup']} blow-ups, {flags['nonfinite']} non-finite")
    return EXIT_OK


def cmd_exit_prob(cfg: RunConfig, out=print):
    sys_ = _need_system(cfg)
    weight = None
    if cfg.weight == "verdict":
        _, _, verdicts = run_classification(cfg, sys_)
        weight = verdicts[0].weight
        if weight is None:
            raise ConfigError(f"verdict {verdicts[0].kind.value} carries no weight")
    sim = cfg.simulation()
    ens = simulate_ensemble(sys_, sim, cfg.n_paths, jobs=cfg.jobs, weights=() if weight is None else (weight,))
    est = exit_probability(ens, cfg.epsilon, weight)
    os.makedirs(cfg.out, exist_ok=True)
    _write_json(os.path.join(cfg.out, "exit.json"), est.to_record())
    lo, hi = est.ci
    out(f"P(sup |z| w > {cfg.epsilon:g}) = {est.probability:.4f}  95% CI [{lo:.4f}, {hi:.4f}]  "
        f"({est.exceedances}/{est.n_paths}, truncated {est.truncated})")
    return EXIT_OK


def cmd_reproduce_figure(cfg: RunConfig, index, overrides=None, out=print):
    overrides = overrides or {}
    files = figures.reproduce_figure(index, os.path.join(cfg.out, f"fig{index}"), seed=cfg.seed, jobs=cfg.jobs, **overrides)
    for f in files:
        out(f"wrote {f}")
    return EXIT_OK


# argument parsing ------------------------------------------------------------


def _common(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    p.add_argument("--dry-run", action="store_true", help="validate and print the resolved pipeline")


def _system_args(p):
    p.add_argument("--system", help="builtin:NAME?k=v&... or a system JSON file")
    p.add_argument("--emax", type=float)
    p.add_argument("--n-phi", dest="n_phi", type=int)
    p.add_argument("--order", type=int)


def _sim_args(p):
    p.add_argument("--t0", type=float)
    p.add_argument("--t1", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--z0", type=float, nargs=2)
    p.add_argument("--n-paths", dest="n_paths", type=int)
    p.add_argument("--record-stride", dest="record_stride", type=int)
    p.add_argument("--scheme", choices=("euler_maruyama", "symplectic"))


def build_parser():
    parser = argparse.ArgumentParser(prog="stochavg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("orbit", help="periodic orbits and the frequency table")
    _common(p)
    _system_args(p)
    p.add_argument("--emin", type=float)
    p.add_argument("--n-energies", dest="n_energies", type=int)

    p = sub.add_parser("average", help="averaged drift coefficients and exponent fit")
    _common(p)
    _system_args(p)

    p = sub.add_parser("classify", help="stability verdicts")
    _common(p)
    _system_args(p)
    p.add_argument("--kappa", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--epsilon", type=float)

    p = sub.add_parser("simulate", help="sample-path ensemble")
    _common(p)
    _system_args(p)
    _sim_args(p)
    p.add_argument("--save-paths", dest="save_paths", type=int)

    p = sub.add_parser("exit-prob", help="exit probability from an epsilon ball")
    _common(p)
    _system_args(p)
    _sim_args(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--weight", choices=("unit", "verdict"))

    p = sub.add_parser("reproduce-figure", help="CSV data behind a sample-path figure")
    _common(p)
    p.add_argument("index", type=int, choices=sorted(figures.MANIFEST))
    p.add_argument("--n-paths", dest="fig_n_paths", type=int, help=f"paths per run (default {figures.DEFAULTS['n_paths']})")
    p.add_argument("--t1", dest="fig_t1", type=float, help=f"final time (default {figures.DEFAULTS['t1']:g})")
    return parser


COMMANDS = {
    "orbit": cmd_orbit,
    "average": cmd_average,
    "classify": cmd_classify,
    "simulate": cmd_simulate,
    "exit-prob": cmd_exit_prob,
}


def _figure_overrides(args):
    pairs = {"n_paths": args.fig_n_paths, "t1": args.fig_t1}
    return {k: v for k, v in pairs.items() if v is not None}


def dry_run(args, cfg, out=print):
    if args.command == "reproduce-figure":
        out(figures.describe(args.index, seed=cfg.seed, **_figure_overrides(args)))
        return EXIT_OK
    if cfg.system:
        _need_system(cfg)
    out(f"command: {args.command}")
    rec = asdict(cfg)
    for key in sorted(rec):
        out(f"  {key} = {rec[key]!r}")
    if args.command in ("simulate", "exit-prob"):
        out(f"  steps = {cfg.simulation().n_steps}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.dry_run:
            return dry_run(args, cfg)
        if args.command == "reproduce-figure":
            return cmd_reproduce_figure(cfg, args.index, _figure_overrides(args))
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FitAmbiguous as exc:
        slope = "nan" if exc.slope is None else f"{exc.slope:.6g}"
        print(f"error: {exc} (raw slope {slope})", file=sys.stderr)
        return EXIT_NUMERIC
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
