"""Neumann elliptic solves used by the regularization.

``smooth`` is the resolvent u - eps^2 u'' = f and ``surface_pressure`` the
screened problem S - eps^2 (H S')' = sigma(Gamma), both with zero boundary
flux. The same tridiagonal assembly also backs the implicit half of the
time stepper.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded
from scipy.linalg.lapack import dgtsv, dgttrf, dgttrs

from .grid import Field, Grid, discrete_norm, face_average, face_gradient, face_norm2, flux_divergence


@dataclass
class TridiagonalSystem:
    """Rows lower[i] u[i-1] + diagonal[i] u[i] + upper[i] u[i+1] = rhs[i].

    ``lower[0]`` and ``upper[-1]`` are ignored.
    """

    lower: np.ndarray
    diagonal: np.ndarray
    upper: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        n = len(self.diagonal)
        if n < 2:
            raise ValueError("tridiagonal system needs dimension >= 2")
        if not (len(self.lower) == len(self.upper) == len(self.rhs) == n):
            raise ValueError("tridiagonal bands and rhs must have equal length")

    def banded(self) -> np.ndarray:
        ab = np.zeros((3, len(self.diagonal)))
        ab[0, 1:] = self.upper[:-1]
        ab[1] = self.diagonal
        ab[2, :-1] = self.lower[1:]
        return ab

    def dense(self) -> np.ndarray:
        n = len(self.diagonal)
        m = np.diag(self.diagonal)
        m[np.arange(1, n), np.arange(n - 1)] = self.lower[1:]
        m[np.arange(n - 1), np.arange(1, n)] = self.upper[:-1]
        return m

    def is_diagonally_dominant(self) -> bool:
        off = np.abs(self.lower) + np.abs(self.upper)
        off[0] -= abs(self.lower[0])
        off[-1] -= abs(self.upper[-1])
        return bool(np.all(np.abs(self.diagonal) > off))

    def solve(self) -> np.ndarray:
        # LAPACK gtsv: Gaussian elimination with partial pivoting on the bands
        _, _, _, x, info = dgtsv(self.lower[1:], self.diagonal, self.upper[:-1], self.rhs)
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal solve failed (info={info})")
        return x

    def solve_banded(self) -> np.ndarray:
        return solve_banded((1, 1), self.banded(), self.rhs, check_finite=False)


def diffusion_system(k_faces, scale: float, rhs, dx: float) -> TridiagonalSystem:
    """Assemble u - scale * div(k grad u) = rhs with zero flux at both ends.

    ``k_faces`` holds one coefficient per face; the boundary entries are
    never used.
    """
    k = np.asarray(k_faces, dtype=float)
    r = scale / (dx * dx)
    w = r * k[1:-1]  # interior faces
    n = len(rhs)
    lower = np.zeros(n)
    upper = np.zeros(n)
    lower[1:] = -w
    upper[:-1] = -w
    diag = np.ones(n)
    diag[1:] += w
    diag[:-1] += w
    return TridiagonalSystem(lower, diag, upper, np.asarray(rhs, dtype=float))


def solve_diffusion(k_faces, scale: float, rhs, dx: float) -> np.ndarray:
    """Solve u - scale * div(k grad u) = rhs.

    Constants solve the homogeneous operator, so the system is solved for
    the offset from rhs[0]; a constant right-hand side then comes back
    bit-exact instead of carrying elimination round-off.
    """
    rhs = np.asarray(rhs, dtype=float)
    ref = rhs[0]
    return ref + diffusion_system(k_faces, scale, rhs - ref, dx).solve()


def _as_field(f, grid: Grid | None = None) -> Field:
    if isinstance(f, Field):
        return f
    if grid is None:
        raise TypeError("a Grid is required for raw arrays")
    return Field(grid, f)


@lru_cache(maxsize=32)
def _smoother_factors(n: int, eps: float, dx: float):
    # the smoothing matrix depends only on the mesh and eps, so factor it once
    system = diffusion_system(np.ones(n + 1), eps * eps, np.zeros(n), dx)
    dl, d, du, du2, ipiv, info = dgttrf(system.lower[1:], system.diagonal, system.upper[:-1])
    if info != 0:
        raise np.linalg.LinAlgError(f"smoother factorization failed (info={info})")
    return dl, d, du, du2, ipiv


def smooth(f, eps: float, grid: Grid | None = None) -> Field:
    """Discrete N_eps: solve u - eps^2 u'' = f with reflective Neumann closure."""
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    f = _as_field(f, grid)
    g = f.grid
    # offset from f[0] as in solve_diffusion: constants are reproduced exactly
    ref = f.values[0]
    x, info = dgttrs(*_smoother_factors(g.n_cells, float(eps), g.dx), f.values - ref)
    if info != 0:
        raise np.linalg.LinAlgError(f"smoother solve failed (info={info})")
    return Field(g, ref + x)


class BarrierError(ValueError):
    """A regularized quantity fell below the lower barrier its coefficients need."""


def surface_pressure(sigma_gamma, H, eps: float, grid: Grid | None = None) -> Field:
    """Discrete screened pressure: S - eps^2 (H_face S')' = sigma(Gamma).

    Face coefficients are arithmetic means of ``H``; ``H`` must stay above
    sqrt(eps).
    """
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    s = _as_field(sigma_gamma, grid)
    Hv = np.asarray(H, dtype=float)
    floor = np.sqrt(eps)
    if np.min(Hv) < floor * (1.0 - 1e-12):
        raise BarrierError(f"smoothed height {float(np.min(Hv))!r} below sqrt(eps) = {floor!r}")
    return Field(s.grid, solve_diffusion(face_average(Hv), eps * eps, s.values, s.grid.dx))


@dataclass
class Estimate:
    name: str
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        # rounding allowance for estimates that are equalities on constants
        return self.slack >= -1e-13 * max(1.0, abs(self.lhs), abs(self.rhs))


@dataclass
class EstimateReport:
    estimates: list = field(default_factory=list)

    def add(self, name, lhs, rhs):
        self.estimates.append(Estimate(name, float(lhs), float(rhs)))

    @property
    def all_hold(self) -> bool:
        return all(e.holds for e in self.estimates)

    def __getitem__(self, name) -> Estimate:
        for e in self.estimates:
            if e.name == name:
                return e
        raise KeyError(name)

    def names(self):
        return [e.name for e in self.estimates]


def _second_difference(u: Field) -> np.ndarray:
    return flux_divergence(face_gradient(u), u.grid).values


def smoothing_estimates(f, u, eps: float) -> EstimateReport:
    """Discrete analogues of the smoothing estimates for u = smooth(f, eps).

    Lp contraction for p in {1, 2, inf}, the gradient energy bound, the
    sup-gradient bound (nonnegative f only) and the two-sided max principle.
    """
    dx = f.grid.dx
    rep = EstimateReport()
    for p in ("L1", "L2", "Linf"):
        rep.add(f"contraction_{p}", discrete_norm(u, p), discrete_norm(f, p))
    gu, gf = face_gradient(u), face_gradient(f)
    lap = _second_difference(u)
    rep.add("gradient_energy",
            face_norm2(gu, dx) + 2.0 * eps**2 * float(np.dot(lap, lap) * dx),
            face_norm2(gf, dx))
    if np.min(f.values) >= 0:
        rep.add("sup_gradient", eps**2 * float(np.max(np.abs(gu))), discrete_norm(f, "L1"))
    rep.add("max_principle_upper", float(np.max(u.values)), float(np.max(f.values)))
    rep.add("max_principle_lower", -float(np.min(u.values)), -float(np.min(f.values)))
    return rep


def pressure_estimates(sigma_gamma: Field, H, S: Field, eps: float) -> EstimateReport:
    """Discrete analogues of the surface-pressure bounds for S = surface_pressure(...)."""
    dx = S.grid.dx
    Hf = face_average(H)
    gS, gs = face_gradient(S), face_gradient(sigma_gamma)
    flux = Hf * gS
    div = flux_divergence(flux, S.grid).values
    rep = EstimateReport()
    rep.add("contraction_L1", discrete_norm(S, "L1"), discrete_norm(sigma_gamma, "L1"))
    rep.add("weighted_gradient_energy",
            face_norm2(np.sqrt(Hf) * gS, dx) + 2.0 * eps**2 * float(np.dot(div, div) * dx),
            face_norm2(np.sqrt(Hf) * gs, dx))
    rep.add("sup_flux", eps**2 * float(np.max(np.abs(flux))),
            2.0 * discrete_norm(sigma_gamma, "L1"))
    return rep
