"""Periodic quadrature, spectral calculus in the angle, and finite-difference
weights on nonuniform energy grids."""

import numpy as np


def angle_grid(n_phi):
    return 2.0 * np.pi * np.arange(n_phi) / n_phi


def angle_average(values, axis=-1):
    """Mean over one period by the periodic trapezoid (rectangle) rule."""
    values = np.asarray(values, dtype=float)
    if values.shape[axis] == 0:
        raise ValueError("cannot average an empty array")
    return values.mean(axis=axis)


def zero_mean(values, axis=-1):
    values = np.asarray(values, dtype=float)
    return values - values.mean(axis=axis, keepdims=True)


def _wavenumbers(n):
    return np.fft.rfftfreq(n, d=1.0 / n)


def periodic_derivative(values, order=1, axis=-1):
    """Spectral ``order``-th derivative of samples on a uniform 2π grid."""
    values = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    n = values.shape[-1]
    k = _wavenumbers(n)
    coef = np.fft.rfft(values, axis=-1) * (1j * k) ** order
    if n % 2 == 0 and order % 2 == 1:
        coef[..., -1] = 0.0
    out = np.fft.irfft(coef, n=n, axis=-1)
    return np.moveaxis(out, -1, axis)


def periodic_antiderivative(values, axis=-1):
    """Zero-mean antiderivative of the zero-mean part of ``values``.

    Returns ``A`` with ``A' = values - <values>`` and ``<A> = 0``.
    """
    values = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    n = values.shape[-1]
    k = _wavenumbers(n)
    coef = np.fft.rfft(values, axis=-1)
    coef[..., 0] = 0.0
    k = k.copy()
    k[0] = 1.0
    coef = coef / (1j * k)
    if n % 2 == 0:
        coef[..., -1] = 0.0
    out = np.fft.irfft(coef, n=n, axis=-1)
    return np.moveaxis(out, -1, axis)


def fourier_coefficients(values, axis=-1):
    values = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    return np.fft.rfft(values, axis=-1) / values.shape[-1]


def evaluate_fourier(coef, n, phi):
    """Evaluate the trigonometric interpolant with rfft-normalized ``coef``.

    ``coef`` has shape ``(..., n//2 + 1)``; ``phi`` broadcasts against the
    leading shape. The Nyquist mode (n even) is treated as ``cos``.
    """
    coef = np.asarray(coef)
    phi = np.asarray(phi, dtype=float)
    m = np.arange(coef.shape[-1])
    weights = np.full(coef.shape[-1], 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    phase = np.exp(1j * phi[..., None] * m)
    return np.real(np.sum(weights * coef * phase, axis=-1))


def evaluate_fourier_derivative(coef, n, phi, order=1):
    coef = np.asarray(coef)
    m = np.arange(coef.shape[-1])
    dcoef = coef * (1j * m) ** order
    if n % 2 == 0 and order % 2 == 1:
        dcoef = dcoef.copy()
        dcoef[..., -1] = 0.0
    return evaluate_fourier(dcoef, n, phi)


def trig_interpolate(values, phi):
    """Trigonometric interpolation of uniform periodic samples at ``phi``."""
    values = np.asarray(values, dtype=float)
    return evaluate_fourier(fourier_coefficients(values), values.shape[-1], phi)


def fd_weights(z, x, m):
    """Fornberg's finite-difference weights.

    Returns ``c`` of shape ``(len(x), m + 1)`` such that
    ``f^(k)(z) ≈ sum_i c[i, k] f(x[i])`` for ``k <= m``.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c


def grid_derivative(values, grid, order=1, axis=0, stencil=7):
    """Derivative along ``axis`` of data sampled on a nonuniform ``grid``.

    Uses Fornberg weights on the ``stencil`` nearest nodes (shifted inward at
    the ends of the grid).
    """
    values = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    grid = np.asarray(grid, dtype=float)
    n = len(grid)
    if n < 2:
        raise ValueError("need at least two grid points")
    width = min(stencil, n)
    if width <= order:
        raise ValueError(f"grid of {n} points cannot resolve derivative order {order}")
    out = np.empty_like(values)
    half = width // 2
    for i in range(n):
        lo = min(max(i - half, 0), n - width)
        idx = slice(lo, lo + width)
        w = fd_weights(grid[i], grid[idx], order)[:, order]
        out[i] = np.tensordot(w, values[idx], axes=(0, 0))
    return np.moveaxis(out, 0, axis)
