"""Fluxes and time stepping for the original and the regularized film system.

Both schemes are cell-centred finite volumes with zero boundary flux. A step
treats the diagonal diffusion of each unknown implicitly, with coefficients
frozen at the old state, and everything else (Marangoni and gravity
coupling) explicitly. A step that leaves the admissible set is rejected and
retried with a smaller dt; nothing is ever clipped.

Nonlinear face prefactors are evaluated at face-averaged arguments. Face
gradients of alpha1(h) and sigma(Gamma) are plain differences, and the
implicit coefficients are the matching secant slopes, so a flux computed
from the coefficients agrees with the flux written in gradient form.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import constitutive as C
from .constitutive import DomainError, ModelParams
from .grid import Field, Grid, face_average, face_gradient, flux_divergence
from .helmholtz import BarrierError, smooth, solve_diffusion, surface_pressure

log = logging.getLogger(__name__)

SCHEMES = ("regularized", "original")
TOL_POS = 1e-10


@dataclass(frozen=True)
class State:
    t: float
    h: Field
    gamma: Field

    def __post_init__(self):
        if self.h.grid is not self.gamma.grid and self.h.grid != self.gamma.grid:
            raise ValueError("h and gamma live on different grids")
        if np.min(self.h.values) < 0 or np.min(self.gamma.values) < 0:
            raise ValueError("h and gamma must be nonnegative")

    @property
    def grid(self) -> Grid:
        return self.h.grid

    @classmethod
    def from_arrays(cls, grid: Grid, h, gamma, t: float = 0.0) -> "State":
        return cls(float(t), Field(grid, h), Field(grid, gamma))


def lift(h0, gamma0, eps: float):
    """Shift unregularized data onto the regularized barriers (h + sqrt(eps), Gamma + eps)."""
    h0 = np.asarray(h0, dtype=float)
    gamma0 = np.asarray(gamma0, dtype=float)
    return h0 + math.sqrt(eps), gamma0 + eps


def lift_state(state: State, eps: float) -> State:
    h, g = lift(state.h.values, state.gamma.values, eps)
    return State.from_arrays(state.grid, h, g, state.t)


class StepFailure(RuntimeError):
    """dt fell below its floor, or too many consecutive rejections."""

    def __init__(self, message, state: State, dt: float):
        super().__init__(message)
        self.state = state
        self.dt = dt


@dataclass
class StepControl:
    dt: float
    dt_min: float = 1e-12
    dt_max: float = math.inf
    shrink: float = 0.5
    grow: float = 1.2
    grow_after: int = 5
    max_rejects: int = 40
    n_accepted: int = 0
    n_rejected: int = 0
    _streak: int = 0
    _rejects_in_row: int = 0

    def __post_init__(self):
        if not 0 < self.dt_min <= self.dt <= self.dt_max:
            raise ValueError(
                f"need 0 < dt_min <= dt <= dt_max, got {self.dt_min}, {self.dt}, {self.dt_max}"
            )
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")
        if not self.grow >= 1:
            raise ValueError("grow factor must be >= 1")

    @classmethod
    def fixed(cls, dt: float, **kw) -> "StepControl":
        return cls(dt=dt, dt_min=kw.pop("dt_min", min(1e-12, dt)), dt_max=dt, grow=1.0, **kw)

    def accepted(self):
        self.n_accepted += 1
        self._rejects_in_row = 0
        self._streak += 1
        if self._streak >= self.grow_after:
            self.dt = min(self.dt * self.grow, self.dt_max)
            self._streak = 0

    def rejected(self, state: State, reason: str):
        self.n_rejected += 1
        self._rejects_in_row += 1
        self._streak = 0
        self.dt *= self.shrink
        log.debug("step rejected at t=%r (%s); dt -> %r", state.t, reason, self.dt)
        if self.dt < self.dt_min or self._rejects_in_row > self.max_rejects:
            raise StepFailure(
                f"time step collapsed at t={state.t!r}: dt={self.dt!r} after "
                f"{self._rejects_in_row} consecutive rejections ({reason})",
                state, self.dt,
            )


@dataclass(frozen=True)
class AuxFields:
    H: Field
    A: Field
    B: Field
    Sigma: Field


def assemble_aux(state: State, params: ModelParams) -> AuxFields:
    """Smoothed height, smoothed alpha1(h), smoothed Gamma and the screened pressure."""
    g = state.grid
    eps = params.eps
    H = smooth(state.h, eps)
    A = smooth(Field(g, C.alpha1(state.h.values, params.G)), eps)
    B = smooth(state.gamma, eps)
    S = surface_pressure(Field(g, params.sigma.sigma(state.gamma.values)), H.values, eps)
    return AuxFields(H, A, B, S)


def _neighbours(u):
    """Left and right cell values at every face; boundary faces repeat the edge cell."""
    left = np.concatenate((u[:1], u))
    right = np.concatenate((u, u[-1:]))
    return left, right


@dataclass
class FluxParts:
    """Face arrays of one flux evaluation.

    The full fluxes are ``k_h * dh + expl_h`` and ``k_g * dg + expl_g``;
    ``flux_h`` and ``flux_g`` are the same quantities in gradient form.
    """

    k_h: np.ndarray
    expl_h: np.ndarray
    k_g: np.ndarray
    expl_g: np.ndarray
    flux_h: np.ndarray
    flux_g: np.ndarray


def _regularized_parts(state: State, aux: AuxFields, params: ModelParams,
                       mobilities=None) -> FluxParts:
    a2, b2 = mobilities or (lambda r: C.a2_eps(r, params.eps), lambda r: C.b2_eps(r, params.eps))
    G, sig = params.G, params.sigma
    dx = state.grid.dx
    h, g = state.h.values, state.gamma.values
    hf, gf = face_average(h), face_average(g)
    Hf, Bf = face_average(aux.H.values), face_average(aux.B.values)

    floor_h = 0.5 * params.sqrt_eps
    if np.min(hf) < floor_h:
        raise BarrierError(f"face height {float(np.min(hf))!r} below sqrt(eps)/2")
    b1B = C.beta1_prime(Bf, sig)
    floor_b = 0.5 * sig.sigma0 * params.eps
    if np.min(b1B) < floor_b:
        raise BarrierError(f"beta1'(B) = {float(np.min(b1B))!r} below sigma0*eps/2")

    a1f = C.a1(hf, G)
    sa1 = np.sqrt(a1f)
    hl, hr = _neighbours(h)
    gl, gr = _neighbours(g)

    dal = face_gradient(C.alpha1(h, G), dx)
    dsig = face_gradient(sig.sigma(g), dx)
    dS = face_gradient(aux.Sigma.values, dx)
    dA = face_gradient(aux.A.values, dx)
    dg = face_gradient(g, dx)

    k_h = sa1 * C.alpha1_secant(hl, hr, G)
    expl_h = -(a2(hf) * np.sqrt(Hf) / np.sqrt(hf)) * dS
    flux_h = sa1 * dal + expl_h

    a0 = C.alpha0(hf, Hf, params.eta1)
    ratio = params.D * C.beta1_prime(gf, sig) / b1B
    k_g = ratio - a0 * gf * sig.secant(gl, gr)
    expl_g = G * a2(hf) * b2(gf) * np.sqrt(a0) / np.sqrt(hf * a1f) * dA
    flux_g = ratio * dg - a0 * gf * dsig + expl_g
    return FluxParts(k_h, expl_h, k_g, expl_g, flux_h, flux_g)


def _original_parts(state: State, params: ModelParams) -> FluxParts:
    G, sig = params.G, params.sigma
    dx = state.grid.dx
    h, g = state.h.values, state.gamma.values
    hf, gf = face_average(h), face_average(g)
    hl, hr = _neighbours(h)
    gl, gr = _neighbours(g)

    sa1 = np.sqrt(C.a1(hf, G))
    dal = face_gradient(C.alpha1(h, G), dx)
    dsig = face_gradient(sig.sigma(g), dx)
    dg = face_gradient(g, dx)

    k_h = sa1 * C.alpha1_secant(hl, hr, G)
    expl_h = -0.5 * hf**2 * dsig
    flux_h = sa1 * dal + expl_h

    # d(alpha1)/sqrt(a1) is the film-height gradient in a form that stays
    # bounded where h -> 0; both factors vanish on a dry face
    dh_eff = np.zeros_like(dal)
    np.divide(dal, sa1, out=dh_eff, where=sa1 > 0)
    k_g = params.D - hf * gf * sig.secant(gl, gr)
    expl_g = 0.5 * G * hf**2 * gf * dh_eff
    flux_g = params.D * dg - hf * gf * dsig + expl_g
    return FluxParts(k_h, expl_h, k_g, expl_g, flux_h, flux_g)


def regularized_fluxes(state: State, aux: AuxFields, params: ModelParams, mobilities=None):
    """Face fluxes (h, Gamma) of the regularized system; boundary faces are 0.

    ``mobilities`` replaces the pair (a2_eps, b2_eps), e.g. by their eps -> 0
    limits r^2/2 and r.
    """
    p = _regularized_parts(state, aux, params, mobilities)
    return p.flux_h, p.flux_g


def original_fluxes(state: State, params: ModelParams):
    """Face fluxes (h, Gamma) of the degenerate original system."""
    p = _original_parts(state, params)
    return p.flux_h, p.flux_g


def fluxes_J(state: State, aux: AuxFields, params: ModelParams):
    """The dissipation fluxes J_f and J_s of the regularized system at faces."""
    G, sig = params.G, params.sigma
    dx = state.grid.dx
    h, g = state.h.values, state.gamma.values
    hf, gf = face_average(h), face_average(g)
    Hf = face_average(aux.H.values)
    if np.min(hf) < 0.5 * params.sqrt_eps:
        raise BarrierError(f"face height {float(np.min(hf))!r} below sqrt(eps)/2")
    root_ha1 = np.sqrt(hf * C.a1(hf, G))
    a2f = C.a2_eps(hf, params.eps)
    J_f = (-face_gradient(C.alpha1(h, G), dx)
           + a2f * np.sqrt(Hf) / root_ha1 * face_gradient(aux.Sigma.values, dx))
    J_s = (np.sqrt(C.alpha0(hf, Hf, params.eta1)) * face_gradient(sig.sigma(g), dx)
           - G * a2f / root_ha1 * C.b2_eps(gf, params.eps) / gf
           * face_gradient(aux.A.values, dx))
    return J_f, J_s


def fluxes_j_limit(state: State, params: ModelParams):
    """Weak-solution fluxes j_f, j_s of the original system, written with h^(5/2)."""
    G = params.G
    dx = state.grid.dx
    h, g = state.h.values, state.gamma.values
    hf = face_average(h)
    d52 = face_gradient(h**2.5, dx)
    dsig = face_gradient(params.sigma.sigma(g), dx)
    j_f = -0.4 * math.sqrt(G / 3.0) * d52 + np.sqrt(3.0 * hf / (4.0 * G)) * dsig
    j_s = -(G / 5.0) * d52 + np.sqrt(hf) * dsig
    return j_f, j_s


def fluxes_j_limit_alpha1(state: State, params: ModelParams):
    """j_f, j_s rewritten through alpha1(h): the second evaluation route."""
    G = params.G
    dx = state.grid.dx
    hf = face_average(state.h.values)
    dal = face_gradient(C.alpha1(state.h.values, G), dx)
    dsig = face_gradient(params.sigma.sigma(state.gamma.values), dx)
    j_f = -dal + np.sqrt(3.0 * hf / (4.0 * G)) * dsig
    j_s = np.sqrt(hf) * dsig - math.sqrt(3.0 * G / 4.0) * dal
    return j_f, j_s


def _parts(state, params, scheme, aux):
    if scheme == "regularized":
        if aux is None:
            aux = assemble_aux(state, params)
        return _regularized_parts(state, aux, params)
    if scheme == "original":
        return _original_parts(state, params)
    raise ValueError(f"unknown scheme {scheme!r}; use one of {SCHEMES}")


def floors(params: ModelParams, scheme: str):
    if scheme == "regularized":
        return params.sqrt_eps, params.eps
    return 0.0, 0.0


def admissible(h, g, params: ModelParams, scheme: str):
    """Reason string if (h, g) leaves the admissible set, else None."""
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(g))):
        return "non-finite values"
    fh, fg = floors(params, scheme)
    tol = TOL_POS if scheme == "regularized" else 0.0
    if np.min(h) < fh - tol:
        return f"min h = {float(np.min(h))!r} below floor {fh!r}"
    if np.min(g) < fg - tol:
        return f"min gamma = {float(np.min(g))!r} below floor {fg!r}"
    if np.max(g) > params.sigma.gamma_max:
        return f"max gamma = {float(np.max(g))!r} above gamma_max"
    return None


def try_step(state: State, params: ModelParams, dt: float, scheme: str = "regularized",
             aux: AuxFields | None = None, source=None):
    """One IMEX update of size dt. Returns (new_state, None) or (state, reason)."""
    grid = state.grid
    try:
        p = _parts(state, params, scheme, aux)
    except (BarrierError, DomainError) as exc:
        return state, str(exc)
    rhs_h = state.h.values + dt * flux_divergence(p.expl_h, grid).values
    rhs_g = state.gamma.values + dt * flux_divergence(p.expl_g, grid).values
    if source is not None:
        s_h, s_g = source(grid.cell_centers, state.t)
        rhs_h = rhs_h + dt * s_h
        rhs_g = rhs_g + dt * s_g
    h_new = solve_diffusion(p.k_h, dt, rhs_h, grid.dx)
    g_new = solve_diffusion(p.k_g, dt, rhs_g, grid.dx)
    reason = admissible(h_new, g_new, params, scheme)
    if reason is not None:
        return state, reason
    return State(state.t + dt, Field(grid, h_new), Field(grid, g_new)), None


def step(state: State, params: ModelParams, control: StepControl, scheme: str = "regularized",
         aux: AuxFields | None = None, dt: float | None = None, source=None):
    """Attempt one step with ``control.dt`` (or an explicit ``dt``).

    Returns ``(state, accepted)``. A rejection shrinks ``control.dt`` and may
    raise StepFailure; acceptance lets it grow.
    """
    size = control.dt if dt is None else dt
    new, reason = try_step(state, params, size, scheme, aux, source)
    if reason is None:
        control.accepted()
        return new, True
    control.rejected(state, reason)
    return state, False


def explicit_step(state: State, params: ModelParams, dt: float, scheme: str = "regularized",
                  aux: AuxFields | None = None) -> State:
    """Forward Euler with the same fluxes, used as a consistency oracle."""
    p = _parts(state, params, scheme, aux)
    grid = state.grid
    h = state.h.values + dt * flux_divergence(p.flux_h, grid).values
    g = state.gamma.values + dt * flux_divergence(p.flux_g, grid).values
    return State(state.t + dt, Field(grid, h), Field(grid, g))


@dataclass
class RunSummary:
    initial: State
    final: State
    scheme: str
    n_accepted: int
    n_rejected: int
    dt_smallest: float
    dt_largest: float
    wall_time: float
    stop_times: list = field(default_factory=list)


def _merge_stops(stop_times, t0, t_end):
    stops = {float(s) for s in stop_times if t0 < s < t_end}
    if t_end > t0:
        stops.add(float(t_end))
    return sorted(stops)


def run(initial: State, params: ModelParams, control: StepControl, t_end: float,
        scheme: str = "regularized", observers=(), stop_times=(), source=None) -> RunSummary:
    """Advance ``initial`` to ``t_end``.

    Every observer is called as ``observer(state, aux, stop)`` for the initial
    state and after every accepted step; ``stop`` is True exactly at the
    requested ``stop_times`` and at ``t_end``, which the stepper lands on.
    ``aux`` is None for the original scheme.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; use one of {SCHEMES}")
    if not t_end >= initial.t:
        raise ValueError("t_end lies before the initial time")
    reason = admissible(initial.h.values, initial.gamma.values, params, scheme)
    if reason is not None:
        raise StepFailure(f"initial data not admissible: {reason}", initial, control.dt)
    start = time.perf_counter()
    stops = _merge_stops(stop_times, initial.t, t_end)
    need_aux = scheme == "regularized"
    state = initial
    aux = assemble_aux(state, params) if need_aux else None
    for obs in observers:
        obs(state, aux, True)
    dt_lo, dt_hi = math.inf, 0.0
    k = 0
    while k < len(stops):
        target = stops[k]
        remaining = target - state.t
        size = control.dt
        landing = size * (1.0 + 1e-9) >= remaining
        if landing:
            size = remaining
        elif remaining - size < 1e-3 * size:
            # avoid leaving a sliver before the stop time
            size = 0.5 * remaining
        new, ok = step(state, params, control, scheme, aux, dt=size, source=source)
        if not ok:
            continue
        if landing:
            new = replace(new, t=target)
            k += 1
        dt_lo, dt_hi = min(dt_lo, size), max(dt_hi, size)
        state = new
        aux = assemble_aux(state, params) if need_aux else None
        for obs in observers:
            obs(state, aux, landing)
    return RunSummary(initial, state, scheme, control.n_accepted, control.n_rejected,
                      dt_lo if dt_lo < math.inf else 0.0, dt_hi,
                      time.perf_counter() - start, stops)
