"""Flat 7-torus field calculus: periodic grids, stencils, inner products.

Fields are plain numpy arrays of shape sizes + fiber, C-ordered (axis-major),
where sizes is the 7-tuple of grid points per axis.  Axes with a single point
are inert: fields are constant along them and derivatives vanish identically.
Index raising/lowering is the identity (flat metric).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi

_STENCIL_MIN = {2: 4, 4: 5}


@dataclass(frozen=True)
class GridShape:
    """Periodic grid: points per axis and period length per axis."""

    sizes: tuple[int, ...]
    lengths: tuple[float, ...]

    def __post_init__(self):
        if len(self.sizes) != 7 or len(self.lengths) != 7:
            raise ValueError("GridShape needs 7 sizes and 7 lengths")
        for n in self.sizes:
            if n != 1 and n < 4:
                raise ValueError("axis sizes must be 1 (inert) or >= 4")
        if any(L <= 0 for L in self.lengths):
            raise ValueError("axis lengths must be positive")

    @staticmethod
    def make(sizes, lengths=None) -> "GridShape":
        sizes = tuple(int(n) for n in sizes)
        if lengths is None:
            lengths = (TWO_PI,) * 7
        return GridShape(sizes, tuple(float(x) for x in lengths))

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.sizes))

    @property
    def npoints(self) -> int:
        return int(np.prod(self.sizes))

    @property
    def active_axes(self) -> tuple[int, ...]:
        return tuple(a for a, n in enumerate(self.sizes) if n > 1)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def axis_coordinate(self, axis: int) -> np.ndarray:
        """Coordinate values along one axis, broadcastable against fields."""
        n = self.sizes[axis]
        x = np.arange(n) * self.spacings[axis]
        shape = [1] * 7
        shape[axis] = n
        return x.reshape(shape)

    def zeros(self, *fiber: int) -> np.ndarray:
        return np.zeros(self.sizes + tuple(fiber))


def _check_axis(grid: GridShape, axis: int, order: int):
    if not 0 <= axis < 7:
        raise ValueError("axis must be in 0..6")
    if order not in (2, 4):
        raise ValueError("stencil order must be 2 or 4")
    n = grid.sizes[axis]
    if n != 1 and n < _STENCIL_MIN[order]:
        raise ValueError(f"axis size {n} too small for order-{order} stencil")


def partial(grid: GridShape, values: np.ndarray, axis: int, order: int = 2) -> np.ndarray:
    """Periodic central difference along one axis; zero on inert axes."""
    _check_axis(grid, axis, order)
    if grid.sizes[axis] == 1:
        return np.zeros_like(values)
    h = grid.spacings[axis]
    if order == 2:
        return (np.roll(values, -1, axis) - np.roll(values, 1, axis)) / (2.0 * h)
    return (-np.roll(values, -2, axis) + 8.0 * np.roll(values, -1, axis)
            - 8.0 * np.roll(values, 1, axis) + np.roll(values, 2, axis)) / (12.0 * h)


def second_partial(grid: GridShape, values: np.ndarray, axis: int, order: int = 2) -> np.ndarray:
    """Compact periodic second-derivative stencil along one axis.

    Kernel of the order-2 stencil on a periodic axis is exactly the constants
    (unlike the composition of two first differences, which also kills the
    Nyquist mode); the spectral routines rely on that.
    """
    _check_axis(grid, axis, order)
    if grid.sizes[axis] == 1:
        return np.zeros_like(values)
    h2 = grid.spacings[axis] ** 2
    if order == 2:
        return (np.roll(values, -1, axis) - 2.0 * values + np.roll(values, 1, axis)) / h2
    return (-np.roll(values, -2, axis) + 16.0 * np.roll(values, -1, axis) - 30.0 * values
            + 16.0 * np.roll(values, 1, axis) - np.roll(values, 2, axis)) / (12.0 * h2)


def laplacian(grid: GridShape, values: np.ndarray, order: int = 2) -> np.ndarray:
    """Sum of compact second derivatives over the active axes."""
    out = np.zeros_like(values)
    for a in grid.active_axes:
        out += second_partial(grid, values, a, order)
    return out


def bochner_laplacian(grid: GridShape, values: np.ndarray, order: int = 2) -> np.ndarray:
    """The connection Laplacian -sum_a d_a d_a (positive semi-definite)."""
    return -laplacian(grid, values, order)


def second_partial_eigenvalue(grid: GridShape, axis: int, k: int, order: int = 2) -> float:
    """Eigenvalue of the compact -d_a d_a stencil on the sampled Fourier mode k."""
    n = grid.sizes[axis]
    if n == 1:
        return 0.0
    h = grid.spacings[axis]
    theta = TWO_PI * k / n
    if order == 2:
        return (2.0 - 2.0 * np.cos(theta)) / h ** 2
    return (1.0 - np.cos(theta)) * (7.0 - np.cos(theta)) / (3.0 * h ** 2)


def grad_scalar(grid: GridShape, f: np.ndarray, order: int = 2) -> np.ndarray:
    """Gradient of a scalar field, fiber shape (7,)."""
    return np.stack([partial(grid, f, a, order) for a in range(7)], axis=-1)


def grad_vec(grid: GridShape, U: np.ndarray, order: int = 2) -> np.ndarray:
    """All first derivatives of a vector field: out[..., a, b] = d_a U_b."""
    return np.stack([partial(grid, U, a, order) for a in range(7)], axis=-2)


def div_tensor2(grid: GridShape, T: np.ndarray, order: int = 2) -> np.ndarray:
    """Divergence on the first slot of a 2-tensor field: out_b = d^a T_ab."""
    out = np.zeros(T.shape[:-2] + (7,))
    for a in grid.active_axes:
        out += partial(grid, T[..., a, :], a, order)
    return out


def inner_l2(grid: GridShape, f: np.ndarray, g: np.ndarray) -> float:
    """Discrete L2 inner product: pointwise fiber contraction times cell volume.

    numpy's pairwise summation gives a fixed reduction tree for a fixed shape,
    so results are reproducible bit-for-bit.
    """
    if f.shape != g.shape:
        raise ValueError(f"shape mismatch in inner_l2: {f.shape} vs {g.shape}")
    return float(np.sum(f * g) * grid.cell_volume)


def norm_l2(grid: GridShape, f: np.ndarray) -> float:
    return float(np.sqrt(inner_l2(grid, f, f)))


# ---------------------------------------------------------------------------
# serialization: one JSON header line + raw little-endian float64 payload


def save_field(path, grid: GridShape, values: np.ndarray) -> None:
    values = np.ascontiguousarray(values, dtype="<f8")
    header = {
        "format": "g2flow-field-v1",
        "sizes": list(grid.sizes),
        "lengths": list(grid.lengths),
        "fiber": list(values.shape[7:]),
        "dtype": "<f8",
        "order": "C",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(values.tobytes(order="C"))


def load_field(path) -> tuple[GridShape, np.ndarray]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    header = json.loads(header_line.decode("utf-8"))
    if header.get("format") != "g2flow-field-v1":
        raise ValueError(f"not a field file: {path}")
    grid = GridShape.make(header["sizes"], header["lengths"])
    shape = tuple(header["sizes"]) + tuple(header["fiber"])
    values = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return grid, values
