"""Uniform cell-centred mesh on (0, L) and the discrete calculus built on it.

Cells are indexed 0..n-1, faces 0..n. Faces 0 and n are boundary faces and
carry zero flux, which is how homogeneous Neumann conditions enter every
operator in the package. There are no ghost cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid:
    n_cells: int
    length: float = 1.0
    dx: float = field(init=False)
    cell_centers: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 4:
            raise ValueError(f"n_cells must be an integer >= 4, got {self.n_cells}")
        if not self.length > 0 or not np.isfinite(self.length):
            raise ValueError(f"length must be positive and finite, got {self.length}")
        dx = self.length / self.n_cells
        object.__setattr__(self, "n_cells", int(self.n_cells))
        object.__setattr__(self, "dx", dx)
        centers = (np.arange(self.n_cells) + 0.5) * dx
        centers.setflags(write=False)
        object.__setattr__(self, "cell_centers", centers)

    @property
    def n_faces(self) -> int:
        return self.n_cells + 1

    @property
    def faces(self) -> np.ndarray:
        return np.arange(self.n_faces) * self.dx

    def field(self, values) -> "Field":
        return Field(self, values)

    def constant(self, value: float) -> "Field":
        return Field(self, np.full(self.n_cells, float(value)))


@dataclass(frozen=True)
class Field:
    """Per-cell samples of a scalar quantity on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_cells,):
            raise ValueError(
                f"field has shape {values.shape}, grid expects ({self.grid.n_cells},)"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", values)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.grid.n_cells


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, Field) else np.asarray(f, dtype=float)


def face_gradient(f, dx: float | None = None) -> np.ndarray:
    """Two-point gradient at every face; the two boundary faces are exactly 0.

    ``f`` may be a Field or a plain array (then ``dx`` is required).
    """
    if isinstance(f, Field):
        dx = f.grid.dx
    elif dx is None:
        raise TypeError("dx is required when f is not a Field")
    u = _values(f)
    g = np.zeros(u.size + 1)
    g[1:-1] = (u[1:] - u[:-1]) / dx
    return g


def face_average(f) -> np.ndarray:
    """Arithmetic mean of the two neighbouring cells at interior faces.

    Boundary faces copy the adjacent cell value; they only ever multiply a
    zero gradient.
    """
    u = _values(f)
    m = np.empty(u.size + 1)
    m[1:-1] = 0.5 * (u[1:] + u[:-1])
    m[0] = u[0]
    m[-1] = u[-1]
    return m


def flux_divergence(face_flux, grid: Grid) -> Field:
    """Conservative divergence (F_{i+1} - F_i)/dx of a face flux.

    Rejects a nonzero boundary flux: the no-flux condition is structural.
    """
    F = np.asarray(face_flux, dtype=float)
    if F.shape != (grid.n_faces,):
        raise ValueError(f"face flux has shape {F.shape}, expected ({grid.n_faces},)")
    if F[0] != 0.0 or F[-1] != 0.0:
        raise ValueError(
            f"boundary fluxes must vanish (no-flux condition), got {F[0]!r}, {F[-1]!r}"
        )
    return Field(grid, (F[1:] - F[:-1]) / grid.dx)


def discrete_norm(f, kind: str = "L2", dx: float | None = None) -> float:
    """Midpoint-rule L1/L2 norms and the max norm of cell data."""
    if isinstance(f, Field):
        dx = f.grid.dx
    u = _values(f)
    kind = kind.upper()
    if kind == "LINF":
        return float(np.max(np.abs(u))) if u.size else 0.0
    if dx is None:
        raise TypeError("dx is required when f is not a Field")
    if kind == "L1":
        return float(np.sum(np.abs(u)) * dx)
    if kind == "L2":
        return float(np.sqrt(np.sum(u * u) * dx))
    raise ValueError(f"unknown norm kind {kind!r}; use L1, L2 or Linf")


def face_norm2(g, dx: float) -> float:
    """Squared L2 norm of face data, sum over faces of g^2 dx.

    Boundary faces are included; for gradients and fluxes they are zero.
    """
    g = np.asarray(g, dtype=float)
    return float(np.dot(g, g) * dx)


def integrate(f, dx: float | None = None) -> float:
    """Midpoint quadrature of cell data over the domain."""
    if isinstance(f, Field):
        dx = f.grid.dx
    return float(np.sum(_values(f)) * dx)


def time_integral(t, v) -> float:
    """Trapezoid rule over samples (t_k, v_k); fewer than two samples gives 0."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    if t.shape != v.shape:
        raise ValueError("time and value samples differ in length")
    if t.size < 2:
        return 0.0
    if np.any(np.diff(t) <= 0):
        raise ValueError("sample times must be strictly increasing")
    return float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(t)))


def cumulative_time_integral(t, v) -> np.ndarray:
    """Running trapezoid integral, same length as the samples, starting at 0."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    out = np.zeros(t.size)
    if t.size > 1:
        out[1:] = np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t))
    return out
