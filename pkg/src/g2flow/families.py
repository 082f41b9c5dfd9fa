"""Named analytic families of initial data and background pairs.

Everything is deterministic given the grid and (for the random family) the
seeded generator, so runs are reproducible bit-for-bit.
"""

from __future__ import annotations

from itertools import product

import numpy as np

from . import grid as gr

CHART_LIMIT = 0.99


def wave_phase(grid: gr.GridShape, wave) -> np.ndarray:
    """<k, x> for an integer wavevector, in fundamental-frequency units."""
    theta = np.zeros(grid.sizes)
    for a, k in enumerate(wave):
        if k:
            theta = theta + (2.0 * np.pi * k / grid.lengths[a]) * grid.axis_coordinate(a)
    return theta


def single_mode(grid: gr.GridShape, amplitude: float, component: int, wave,
                phase: float = 0.0) -> np.ndarray:
    """amplitude * sin(<k, x> + phase) on one vector component (0-based)."""
    U = grid.zeros(7)
    U[..., component] = amplitude * np.sin(wave_phase(grid, wave) + phase)
    return U


def constant_field(grid: gr.GridShape, vector) -> np.ndarray:
    vector = np.asarray(vector, dtype=float)
    if np.linalg.norm(vector) > CHART_LIMIT:
        raise ValueError("constant field leaves the chart (|U| > clamp radius)")
    return np.broadcast_to(vector, grid.sizes + (7,)).copy()


def band_limited(grid: gr.GridShape, amplitude: float, kmax: int,
                 rng: np.random.Generator, zero_mean: bool = True) -> np.ndarray:
    """Random real trigonometric field with |k_a| <= kmax on active axes,
    rescaled so that max |U| equals the requested amplitude."""
    U = grid.zeros(7)
    active = set(grid.active_axes)
    ranges = [range(-kmax, kmax + 1) if a in active else (0,) for a in range(7)]
    for k in product(*ranges):
        if zero_mean and not any(k):
            continue
        theta = wave_phase(grid, k)
        coeffs = rng.standard_normal((7, 2))
        U += coeffs[:, 0] * np.cos(theta)[..., None] + coeffs[:, 1] * np.sin(theta)[..., None]
    mx = float(np.max(np.sqrt(np.sum(U * U, axis=-1))))
    if mx > 0:
        U *= amplitude / mx
    return U


def chart_pair(U) -> tuple[np.ndarray, np.ndarray]:
    """(U, u) with u = +sqrt(1 - |U|^2); requires |U| within the chart."""
    U = np.asarray(U, dtype=float)
    n2 = np.sum(U * U, axis=-1)
    if float(np.max(n2)) > CHART_LIMIT ** 2:
        raise ValueError("field leaves the chart (|U| > clamp radius)")
    return U, np.sqrt(1.0 - n2)


def circle_twist(grid: gr.GridShape, rate: int, axis: int = 0,
                 component: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """The pair (sin(k x_axis) e_c, cos(k x_axis)): a great circle in spinor
    space whose induced torsion is a constant tensor, hence exactly
    divergence-free.  The scalar part changes sign, which is fine for a
    background (only flow states are chart-confined)."""
    if grid.sizes[axis] == 1 and rate != 0:
        raise ValueError("circle twist needs an active axis")
    theta = rate * (2.0 * np.pi / grid.lengths[axis]) * grid.axis_coordinate(axis)
    W = grid.zeros(7)
    W[..., component] = np.sin(theta)
    w = np.cos(theta) * np.ones(grid.sizes)
    return W, w


def random_unit_pair(grid: gr.GridShape, rng: np.random.Generator,
                     amplitude: float = 0.7, kmax: int = 1):
    """Random smooth pair on the u > 0 chart, for property tests."""
    return chart_pair(band_limited(grid, amplitude, kmax, rng))
