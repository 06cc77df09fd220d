"""Conservation, barrier, energy and dissipation observables.

Everything here evaluates a discrete state. Face quantities (fluxes,
gradients) are measured with the face L2 norm of ``grid.face_norm2``; cell
quantities with midpoint quadrature.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import constitutive as C
from .constitutive import ModelParams
from .dynamics import AuxFields, State, fluxes_J, fluxes_j_limit
from .grid import face_average, face_gradient, face_norm2, integrate, time_integral
from .helmholtz import BarrierError

REG_TERMS = ("jf", "js", "sigma_H", "sigma_h", "alpha1", "surface_diffusion")
LIMIT_TERMS = ("jf", "js", "h52", "sigma_h", "sqrt_gamma")


def lyapunov(state: State, params: ModelParams) -> float:
    """Integral of (G/2) h^2 + phi(Gamma); the same form serves both systems."""
    h, g = state.h.values, state.gamma.values
    return integrate(0.5 * params.G * h * h + C.phi(g, params.sigma), state.grid.dx)


lyapunov_reg = lyapunov
lyapunov_limit = lyapunov


def dissipation_reg_terms(state: State, aux: AuxFields, params: ModelParams) -> dict:
    """The six terms of 2D for the regularized system, keyed by REG_TERMS."""
    G, sig, eta, eta1 = params.G, params.sigma, params.eta, params.eta1
    dx = state.grid.dx
    h, g = state.h.values, state.gamma.values
    hf = face_average(h)
    Hf = face_average(aux.H.values)
    b1B = C.beta1_prime(face_average(aux.B.values), sig)
    if np.min(b1B) < 0.5 * sig.sigma0 * params.eps:
        raise BarrierError(f"beta1'(B) = {float(np.min(b1B))!r} below sigma0*eps/2")
    J_f, J_s = fluxes_J(state, aux, params)
    dsig = face_gradient(sig.sigma(g), dx)
    dal = face_gradient(C.alpha1(h, G), dx)
    return {
        "jf": G * face_norm2(J_f, dx),
        "js": face_norm2(J_s, dx),
        "sigma_H": (eta1 - eta) * face_norm2(np.sqrt(Hf) * dsig, dx),
        "sigma_h": (1.0 - eta1) * face_norm2(np.sqrt(hf) * dsig, dx),
        "alpha1": (1.0 - eta) * G * face_norm2(dal, dx),
        "surface_diffusion": 2.0 * params.D * float(np.sum(dsig * dsig / b1B) * dx),
    }


def dissipation_reg(state: State, aux: AuxFields, params: ModelParams) -> float:
    return 0.5 * sum(dissipation_reg_terms(state, aux, params).values())


def dissipation_limit_terms(state: State, params: ModelParams) -> dict:
    """The five terms of 2D_0 for the original system, keyed by LIMIT_TERMS."""
    G, sig = params.G, params.sigma
    dx = state.grid.dx
    h, g = state.h.values, state.gamma.values
    j_f, j_s = fluxes_j_limit(state, params)
    dsig = face_gradient(sig.sigma(g), dx)
    return {
        "jf": G * face_norm2(j_f, dx),
        "js": face_norm2(j_s, dx),
        "h52": G * G / 75.0 * face_norm2(face_gradient(h**2.5, dx), dx),
        "sigma_h": 0.25 * face_norm2(np.sqrt(face_average(h)) * dsig, dx),
        # gradient of sqrt(Gamma) from cell values, finite where Gamma = 0
        "sqrt_gamma": 8.0 * sig.sigma0 * params.D * face_norm2(face_gradient(np.sqrt(g), dx), dx),
    }


def dissipation_limit(state: State, params: ModelParams) -> float:
    return 0.5 * sum(dissipation_limit_terms(state, params).values())


def entropy_integral(gamma, dx: float) -> float:
    """Integral of Gamma |ln Gamma|, with 0 ln 0 = 0."""
    g = np.asarray(gamma, dtype=float)
    out = np.zeros_like(g)
    pos = g > 0
    out[pos] = g[pos] * np.abs(np.log(g[pos]))
    return integrate(out, dx)


@dataclass
class DiagnosticsRecord:
    t: float
    mass_h: float
    mass_gamma: float
    min_h: float
    min_gamma: float
    L_reg: float
    D_reg: float
    L0: float
    D0: float
    cum_D_reg: float = 0.0
    cum_D0: float = 0.0
    reg_terms: dict = field(default_factory=dict)
    limit_terms: dict = field(default_factory=dict)
    # raw monitors for the uniform estimates
    h_l2: float = 0.0
    entropy: float = 0.0
    flux_l2: float = 0.0
    h52_w12: float = 0.0
    h_inf5: float = 0.0


def make_record(state: State, params: ModelParams, aux: AuxFields | None,
                scheme: str = "regularized") -> DiagnosticsRecord:
    """Evaluate all observables of one state.

    For the original scheme there is no smoothing; the regularized columns
    then repeat the limit functional and dissipation.
    """
    dx = state.grid.dx
    h, g = state.h.values, state.gamma.values
    L = lyapunov(state, params)
    lim = dissipation_limit_terms(state, params)
    D0 = 0.5 * sum(lim.values())
    if scheme == "regularized":
        reg = dissipation_reg_terms(state, aux, params)
        D = 0.5 * sum(reg.values())
        flux_l2 = (reg["jf"] / params.G) + reg["js"]
    else:
        reg, D = dict(lim), D0
        flux_l2 = lim["jf"] / params.G + lim["js"]
    h52 = h**2.5
    return DiagnosticsRecord(
        t=float(state.t),
        mass_h=integrate(h, dx),
        mass_gamma=integrate(g, dx),
        min_h=float(np.min(h)),
        min_gamma=float(np.min(g)),
        L_reg=L, D_reg=D, L0=L, D0=D0,
        reg_terms=reg, limit_terms=lim,
        h_l2=math.sqrt(integrate(h * h, dx)),
        entropy=entropy_integral(g, dx),
        flux_l2=flux_l2,
        h52_w12=integrate(h52 * h52, dx) + face_norm2(face_gradient(h52, dx), dx),
        h_inf5=float(np.max(h)) ** 5,
    )


@dataclass
class Violation:
    t: float
    quantity: str
    slack: float


@dataclass
class EnergyLedger:
    records: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    def times(self):
        return np.array([r.t for r in self.records])

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def slack(self, which: str = "reg") -> np.ndarray:
        """L(0) - L(t) - int_0^t D for every record."""
        if not self.records:
            return np.zeros(0)
        if which == "reg":
            L, cum = self.column("L_reg"), self.column("cum_D_reg")
        else:
            L, cum = self.column("L0"), self.column("cum_D0")
        return L[0] - L - cum


def ledger_update(ledger: EnergyLedger, record: DiagnosticsRecord) -> EnergyLedger:
    """Append a record, accumulating the dissipation integrals by trapezoid."""
    if ledger.records:
        prev = ledger.records[-1]
        if not record.t > prev.t:
            raise ValueError(f"ledger times must increase: {record.t!r} after {prev.t!r}")
        dt = record.t - prev.t
        record.cum_D_reg = prev.cum_D_reg + 0.5 * dt * (prev.D_reg + record.D_reg)
        record.cum_D0 = prev.cum_D0 + 0.5 * dt * (prev.D0 + record.D0)
    else:
        record.cum_D_reg = 0.0
        record.cum_D0 = 0.0
    ledger.records.append(record)
    return ledger


@dataclass
class LedgerReport:
    tol: float
    worst_slack: float
    worst_time: float
    violations: list
    slack: np.ndarray

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def worst_negative(self) -> float:
        """Magnitude of the most negative slack, 0 if the slack never dips below 0."""
        return max(0.0, -self.worst_slack)


def default_tolerance(ledger: EnergyLedger, dt: float, which: str = "reg") -> float:
    """10 dt max|dL/dt|, with the rate estimated from consecutive records."""
    t = ledger.times()
    if t.size < 2:
        return 0.0
    L = ledger.column("L_reg" if which == "reg" else "L0")
    rate = np.max(np.abs(np.diff(L) / np.diff(t)))
    return 10.0 * dt * float(rate)


def ledger_check(ledger: EnergyLedger, tol: float | None = None, dt: float | None = None,
                 which: str = "reg") -> LedgerReport:
    """Flag every time where the energy slack falls below -tol.

    Without an explicit ``tol`` the O(dt) default of ``default_tolerance``
    is used, with ``dt`` defaulting to the largest recorded time increment.
    """
    slack = ledger.slack(which)
    if tol is None:
        t = ledger.times()
        if dt is None:
            dt = float(np.max(np.diff(t))) if t.size > 1 else 0.0
        tol = default_tolerance(ledger, dt, which)
    quantity = "energy_reg" if which == "reg" else "energy_limit"
    violations = [Violation(r.t, quantity, float(s))
                  for r, s in zip(ledger.records, slack) if s < -tol]
    if slack.size:
        i = int(np.argmin(slack))
        worst, when = float(slack[i]), ledger.records[i].t
    else:
        worst, when = 0.0, 0.0
    return LedgerReport(float(tol), worst, when, violations, slack)


@dataclass
class BoundsReport:
    barrier_h: float
    barrier_gamma: float
    mass_h: float
    mass_gamma: float
    tol: float

    @property
    def barrier_h_ok(self):
        return self.barrier_h >= -self.tol

    @property
    def barrier_gamma_ok(self):
        return self.barrier_gamma >= -self.tol

    @property
    def mass_h_ok(self):
        return self.mass_h >= -self.tol

    @property
    def mass_gamma_ok(self):
        return self.mass_gamma >= -self.tol

    @property
    def ok(self):
        return self.barrier_h_ok and self.barrier_gamma_ok and self.mass_h_ok and self.mass_gamma_ok

    def as_dict(self):
        d = asdict(self)
        d.update(ok=self.ok)
        return d


def bounds_check(state: State, params: ModelParams, ref_masses, scheme: str = "regularized",
                 tol: float = 1e-10, mass_rtol: float = 1e-12) -> BoundsReport:
    """Barrier and mass slacks; a slack below -tol is a violation.

    Mass slack is ``mass_rtol`` minus the relative drift, rescaled so the
    same ``tol`` applies to every entry.
    """
    dx = state.grid.dx
    fh, fg = (params.sqrt_eps, params.eps) if scheme == "regularized" else (0.0, 0.0)
    mh, mg = ref_masses

    def mass_slack(now, ref):
        drift = abs(now - ref) / max(abs(ref), 1e-300)
        return (mass_rtol - drift) / mass_rtol * tol

    return BoundsReport(
        barrier_h=float(np.min(state.h.values)) - fh,
        barrier_gamma=float(np.min(state.gamma.values)) - fg,
        mass_h=mass_slack(integrate(state.h.values, dx), mh),
        mass_gamma=mass_slack(integrate(state.gamma.values, dx), mg),
        tol=tol,
    )


def entropy_bound(L_initial: float, mass_gamma: float, params: ModelParams, length: float) -> float:
    """Upper bound on int Gamma |ln Gamma| implied by the energy inequality."""
    s0 = params.sigma.sigma0
    return (L_initial + s0 * mass_gamma + s0 * length / math.e) / s0


def uniform_estimates_monitor(ledger: EnergyLedger, params: ModelParams, length: float) -> dict:
    """Time series of the quantities bounded uniformly in eps.

    Running sup of ||h||_2, the entropy integral, the time-integrated flux
    budget and the integrated ||h^(5/2)||_{W^1_2}^2 + ||h||_inf^5, plus the
    entropy bound derived from the run's own initial energy. No pass/fail:
    the constants are not quantified.
    """
    t = ledger.times()
    recs = ledger.records
    if not recs:
        return {}
    h_l2 = ledger.column("h_l2")
    flux = ledger.column("flux_l2")
    h5 = ledger.column("h52_w12") + ledger.column("h_inf5")
    out = {
        "t": t,
        "h_l2": h_l2,
        "h_l2_sup": np.maximum.accumulate(h_l2),
        "entropy": ledger.column("entropy"),
        "flux_budget": np.array([time_integral(t[:k + 1], flux[:k + 1]) for k in range(t.size)]),
        "h52_budget": np.array([time_integral(t[:k + 1], h5[:k + 1]) for k in range(t.size)]),
    }
    out["entropy_bound"] = entropy_bound(recs[0].L0, recs[0].mass_gamma, params, length)
    return out


class DiagnosticsObserver:
    """Run observer building an EnergyLedger.

    Records the initial state, every ``every``-th accepted step and every
    stop time. Barriers and masses are checked against the initial data,
    and the dissipation integral is accumulated, after every accepted
    step, recorded or not.
    """

    def __init__(self, params: ModelParams, scheme: str = "regularized", every: int = 1,
                 bounds_tol: float = 1e-10):
        self.params = params
        self.scheme = scheme
        self.every = max(1, int(every))
        self.bounds_tol = bounds_tol
        self.ledger = EnergyLedger()
        self.bound_violations = []
        self.worst_barrier_h = math.inf
        self.worst_barrier_gamma = math.inf
        self._count = 0
        self._ref = None
        self._last = None
        self._cum = self._cum0 = 0.0

    def __call__(self, state: State, aux, stop: bool):
        if self._ref is None:
            dx = state.grid.dx
            self._ref = (integrate(state.h.values, dx), integrate(state.gamma.values, dx))
        self._count += 1
        # bounds are cheap and checked at every accepted step
        rep = bounds_check(state, self.params, self._ref, self.scheme, self.bounds_tol)
        self.worst_barrier_h = min(self.worst_barrier_h, rep.barrier_h)
        self.worst_barrier_gamma = min(self.worst_barrier_gamma, rep.barrier_gamma)
        for name in ("barrier_h", "barrier_gamma", "mass_h", "mass_gamma"):
            if not getattr(rep, f"{name}_ok"):
                self.bound_violations.append(Violation(state.t, name, getattr(rep, name)))
        t = float(state.t)
        if self._last is not None and t <= self._last[0]:
            return
        keep = stop or (self._count - 1) % self.every == 0
        if keep:
            rec = make_record(state, self.params, aux, self.scheme)
            D, D0 = rec.D_reg, rec.D0
        else:
            D0 = dissipation_limit(state, self.params)
            D = dissipation_reg(state, aux, self.params) if self.scheme == "regularized" else D0
        # the dissipation integral sees every accepted step, whatever the cadence
        if self._last is not None:
            t_prev, D_prev, D0_prev = self._last
            self._cum += 0.5 * (t - t_prev) * (D_prev + D)
            self._cum0 += 0.5 * (t - t_prev) * (D0_prev + D0)
        self._last = (t, D, D0)
        if keep:
            rec.cum_D_reg, rec.cum_D0 = self._cum, self._cum0
            self.ledger.records.append(rec)
