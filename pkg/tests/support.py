"""Shared experiment helpers for the test suite."""

import math

import numpy as np

from stochavg.sde import brownian_increments, integrate_with_increments


def strong_errors(sys, z0, t0, t1, fine_exp, levels, n_paths, seed=0, scheme="euler_maruyama"):
    """Mean endpoint error against a fine reference driven by the same noise.

    Coarse normals are normalised sums of fine ones, so every level sees the
    same Brownian path. Returns ``(dts, errors)`` for ``dt = 2^-e`` with
    ``e`` in ``levels``.
    """
    n_fine = 2**fine_exp
    T = t1 - t0
    dts, errs = [], []
    fine = [brownian_increments(seed, i, int(n_fine * T)) for i in range(n_paths)]
    ref = [integrate_with_increments(sys, z0, t0, T / len(nm), nm, scheme) for nm in fine]
    for e in levels:
        m = 2 ** (fine_exp - e)
        err = 0.0
        for nm, zr in zip(fine, ref):
            coarse = nm.reshape(-1, m, 2).sum(axis=1) / math.sqrt(m)
            zc = integrate_with_increments(sys, z0, t0, T / len(coarse), coarse, scheme)
            err += math.hypot(zc[0] - zr[0], zc[1] - zr[1])
        dts.append(2.0**-e)
        errs.append(err / n_paths)
    return np.array(dts), np.array(errs)


def observed_order(dts, errs):
    return float(np.polyfit(np.log(dts), np.log(errs), 1)[0])


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE = {}


def report(key, ok, detail):
    line = f"{key} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE[key] = line
    print(line)
    return ok
