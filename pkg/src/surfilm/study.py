"""Refinement studies: the eps -> 0 self-convergence sweep, manufactured
solutions for the original scheme, and dt self-convergence.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .config import RunConfig, check_eps_list
from .constitutive import ModelParams, SigmaModel
from .diagnostics import DiagnosticsObserver, ledger_check
from .dynamics import State, StepControl, StepFailure, run
from .grid import Grid, time_integral

log = logging.getLogger(__name__)

NORMS = ("L2_QT", "L2_sup")


class SnapshotCollector:
    """Observer keeping copies of (h, gamma) at the stop times."""

    def __init__(self):
        self.t, self.h, self.gamma = [], [], []

    def __call__(self, state, aux, stop):
        if stop and (not self.t or state.t > self.t[-1]):
            self.t.append(float(state.t))
            self.h.append(state.h.values.copy())
            self.gamma.append(state.gamma.values.copy())

    def arrays(self):
        return np.array(self.t), np.array(self.h), np.array(self.gamma)


def space_time_distance(t, u, v, dx, norm="L2_QT") -> float:
    """Distance of two sampled trajectories (rows = times).

    ``L2_QT``: (int_0^T sum_i |u - v|^2 dx dt)^(1/2).
    ``L2_sup``: (int_0^T max_i |u - v|^2 dt)^(1/2).
    Time integrals use the trapezoid rule on the samples.
    """
    d = np.asarray(u, dtype=float) - np.asarray(v, dtype=float)
    if norm == "L2_QT":
        inner = np.sum(d * d, axis=1) * dx
    elif norm == "L2_sup":
        inner = np.max(np.abs(d), axis=1) ** 2
    else:
        raise ValueError(f"unknown norm {norm!r}; use one of {NORMS}")
    return math.sqrt(time_integral(t, inner))


def holder_quotient(values, x, theta: float = 0.2) -> float:
    """max over i != j of |u_i - u_j| / |x_i - x_j|^theta (monitor only)."""
    u = np.asarray(values, dtype=float)
    x = np.asarray(x, dtype=float)
    du = np.abs(u[:, None] - u[None, :])
    dist = np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(dist, 1.0)
    return float(np.max(du / dist**theta))


# ---------------------------------------------------------------- eps sweep

@dataclass(frozen=True)
class SweepPlan:
    base: RunConfig
    eps_list: tuple = (1e-1, 1e-2, 1e-3, 1e-4)
    norms: tuple = NORMS
    samples: int = 11
    ledger_every: int = 1

    def __post_init__(self):
        check_eps_list(tuple(self.eps_list))
        if self.base.scheme != "regularized":
            raise ValueError("the eps sweep runs the regularized scheme")
        if self.samples < 2:
            raise ValueError("need at least 2 sample times")

    @classmethod
    def from_config(cls, config: RunConfig, eps_list=None, **kw) -> "SweepPlan":
        return cls(config, tuple(eps_list or config.eps_list), samples=config.samples, **kw)

    @property
    def times(self):
        return list(np.linspace(0.0, self.base.t_end, self.samples))


@dataclass
class MemberResult:
    eps: float
    ok: bool
    error: str = ""
    t: np.ndarray | None = None
    h: np.ndarray | None = None
    gamma: np.ndarray | None = None
    n_accepted: int = 0
    n_rejected: int = 0
    ledger_ok: bool = False
    bounds_ok: bool = False
    worst_slack: float = 0.0
    entropy_max: float = 0.0
    holder: float = 0.0


def run_member(config: RunConfig, eps: float, times, ledger_every: int = 1) -> MemberResult:
    """One lifted regularized run sampled at ``times``; never raises on run failure."""
    cfg = config.with_eps(eps)
    params = cfg.params
    snaps = SnapshotCollector()
    diag = DiagnosticsObserver(params, "regularized", every=ledger_every)
    try:
        summary = run(cfg.initial_state(), params, cfg.control(), cfg.t_end, "regularized",
                      observers=(snaps, diag), stop_times=times)
    except (StepFailure, ValueError, ArithmeticError) as exc:
        log.warning("sweep member eps=%r failed: %s", eps, exc)
        return MemberResult(eps, False, str(exc))
    t, h, g = snaps.arrays()
    rep = ledger_check(diag.ledger)
    return MemberResult(
        eps, True, "", t, h, g, summary.n_accepted, summary.n_rejected,
        ledger_ok=rep.ok, bounds_ok=not diag.bound_violations,
        worst_slack=rep.worst_slack,
        entropy_max=float(np.max(diag.ledger.column("entropy"))),
        holder=holder_quotient(h[-1], cfg.grid.cell_centers),
    )


@dataclass
class ConvergenceTable:
    """One row per consecutive eps pair.

    Row keys: eps_a, eps_b, failed, then ``d{h,gamma}_{norm}`` and
    ``rate_{h,gamma}_{norm}`` (log2 of the previous distance over this one,
    NaN on the first row).
    """

    rows: list = field(default_factory=list)
    members: list = field(default_factory=list)

    def column(self, key):
        return np.array([r[key] for r in self.rows], dtype=float)

    def strictly_decreasing(self, key) -> bool:
        d = self.column(key)
        return bool(d.size > 0 and np.all(np.isfinite(d)) and np.all(np.diff(d) < 0))

    @property
    def any_failed(self) -> bool:
        return any(r["failed"] for r in self.rows)

    def columns(self):
        return list(self.rows[0]) if self.rows else []


def _distance_keys(norms):
    return [f"d{c}_{n}" for c in ("h", "gamma") for n in norms]


def build_table(members, dx, norms=NORMS) -> ConvergenceTable:
    table = ConvergenceTable(members=list(members))
    keys = _distance_keys(norms)
    prev = None
    for a, b in zip(members, members[1:]):
        row = {"eps_a": a.eps, "eps_b": b.eps, "failed": not (a.ok and b.ok)}
        for c in ("h", "gamma"):
            for n in norms:
                if row["failed"]:
                    row[f"d{c}_{n}"] = math.nan
                else:
                    row[f"d{c}_{n}"] = space_time_distance(a.t, getattr(a, c), getattr(b, c),
                                                           dx, n)
        for k in keys:
            if prev is None or not (prev[k] > 0 and row[k] > 0):
                row[f"rate_{k[1:]}"] = math.nan
            else:
                row[f"rate_{k[1:]}"] = math.log2(prev[k] / row[k])
        table.rows.append(row)
        prev = row
    return table


def eps_sweep(plan: SweepPlan, workers: int = 1) -> ConvergenceTable:
    """Lifted runs for every eps and the distances between consecutive members.

    Members may run in parallel; the table is assembled in eps order.
    """
    times = plan.times
    args = [(plan.base, e, times, plan.ledger_every) for e in plan.eps_list]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(args))) as pool:
            members = list(pool.map(run_member, *zip(*args)))
    else:
        members = [run_member(*a) for a in args]
    return build_table(members, plan.base.grid.dx, plan.norms)


# ----------------------------------------------------- manufactured solutions

@dataclass(frozen=True)
class ManufacturedPair:
    """h* = h_mean + h_amp m(t) cos(k pi x / L), Gamma* alike, m(t) = 1 + c sin(omega t).

    With c = 0 the pair is steady. Both components stay positive because
    the amplitudes (times max |m|) are below the means.
    """

    h_mean: float = 1.0
    h_amp: float = 0.3
    gamma_mean: float = 1.0
    gamma_amp: float = 0.3
    mode: int = 1
    c: float = 0.5
    omega: float = 2.0 * math.pi

    def __post_init__(self):
        peak = 1.0 + abs(self.c)
        if not (abs(self.h_amp) * peak < self.h_mean and abs(self.gamma_amp) * peak < self.gamma_mean):
            raise ValueError("manufactured pair must stay strictly positive")
        if int(self.mode) != self.mode or self.mode < 1:
            raise ValueError("mode must be a positive integer")

    def _m(self, t):
        return 1.0 + self.c * math.sin(self.omega * t), self.c * self.omega * math.cos(self.omega * t)

    def fields(self, x, t, length):
        """(h, h_x, h_xx, h_t) and the same for Gamma."""
        k = self.mode * math.pi / length
        m, dm = self._m(t)
        cs, sn = np.cos(k * x), np.sin(k * x)
        out = []
        for mean, amp in ((self.h_mean, self.h_amp), (self.gamma_mean, self.gamma_amp)):
            out.append((mean + amp * m * cs, -amp * m * k * sn, -amp * m * k * k * cs,
                        amp * dm * cs))
        return out

    def exact(self, x, t, length):
        (h, *_), (g, *_) = self.fields(x, t, length)
        return h, g

    def source(self, params: ModelParams, length: float):
        """Callback (x, t) -> residual sources of the original system."""
        G, D, sig = params.G, params.D, params.sigma

        def src(x, t):
            (h, hx, hxx, ht), (g, gx, gxx, gt) = self.fields(x, t, length)
            s1, s2 = sig.sigma_prime(g), sig.sigma_second(g)
            # d/dx of the h-flux (G h^3/3) h_x - (h^2/2) sigma'(g) g_x
            div_h = (G * h * h * hx * hx + G * h**3 / 3.0 * hxx
                     - h * hx * s1 * gx - 0.5 * h * h * (s2 * gx * gx + s1 * gxx))
            # d/dx of the Gamma-flux (G h^2/2) g h_x + (D - h g sigma'(g)) g_x
            div_g = (G * h * g * hx * hx + 0.5 * G * h * h * (gx * hx + g * hxx)
                     - (hx * g * s1 + h * gx * s1 + h * g * s2 * gx) * gx
                     + (D - h * g * s1) * gxx)
            return ht - div_h, gt - div_g

        return src


@dataclass
class OrderReport:
    kind: str
    sizes: list
    errors: dict
    orders: dict

    @property
    def observed(self) -> float:
        """Smallest pairwise order over both components."""
        vals = [o for seq in self.orders.values() for o in seq]
        return float(min(vals)) if vals else math.nan

    def rows(self):
        out = []
        for i, s in enumerate(self.sizes):
            row = {"kind": self.kind, "size": s}
            for c in self.errors:
                row[f"err_{c}"] = self.errors[c][i]
                row[f"order_{c}"] = self.orders[c][i - 1] if i > 0 else math.nan
            out.append(row)
        return out


def _orders(errs, ratio=2.0):
    e = np.asarray(errs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return list(np.log(e[:-1] / e[1:]) / math.log(ratio))


DEFAULT_MMS_PARAMS = ModelParams(G=1.0, D=0.1, sigma=SigmaModel.linear(1.0, 1.0), eps=1e-2)


def _mms_run(pair, params, n, length, t_end, dt, times=None):
    grid = Grid(n, length)
    x = grid.cell_centers
    h0, g0 = pair.exact(x, 0.0, length)
    snaps = SnapshotCollector()
    run(State.from_arrays(grid, h0, g0), params, StepControl.fixed(dt), t_end, "original",
        observers=(snaps,), stop_times=times or (), source=pair.source(params, length))
    return grid, snaps


def mms_verify(scheme: str = "original", grid_sizes=(16, 32, 64, 128), dt_sizes=None,
               pair: ManufacturedPair | None = None, params: ModelParams | None = None,
               length: float = 1.0, t_end: float = 0.25, cfl: float = 0.5,
               n_time: int = 64):
    """Observed spatial and temporal orders on a manufactured pair.

    Spatial: exact error at t_end with dt = cfl dx^2 on every grid.
    Temporal: self-convergence over ``dt_sizes`` (default t_end/32 ... t_end/256)
    on an ``n_time`` grid, distances in the discrete L2(Q_T) norm.
    Only the original system admits closed-form sources here.
    """
    if scheme != "original":
        raise ValueError("manufactured sources are implemented for the original scheme only")
    pair = pair or ManufacturedPair()
    params = params or DEFAULT_MMS_PARAMS
    errs = {"h": [], "gamma": []}
    for n in grid_sizes:
        dx = length / n
        # a whole number of steps so every grid ends exactly at t_end
        steps = max(1, math.ceil(t_end / (cfl * dx * dx)))
        grid, snaps = _mms_run(pair, params, n, length, t_end, t_end / steps)
        _, h, g = snaps.arrays()
        he, ge = pair.exact(grid.cell_centers, t_end, length)
        errs["h"].append(math.sqrt(np.sum((h[-1] - he) ** 2) * dx))
        errs["gamma"].append(math.sqrt(np.sum((g[-1] - ge) ** 2) * dx))
    spatial = OrderReport("space", list(grid_sizes), errs,
                          {c: _orders(v) for c, v in errs.items()})

    if dt_sizes is None:
        dt_sizes = [t_end / 32 / 2**i for i in range(4)]
    times = list(np.linspace(0.0, t_end, 9))
    trajs = []
    for dt in dt_sizes:
        grid, snaps = _mms_run(pair, params, n_time, length, t_end, dt, times)
        trajs.append(snaps.arrays())
    temporal = _self_convergence("time", dt_sizes, trajs, grid.dx)
    return spatial, temporal


def _self_convergence(kind, sizes, trajs, dx):
    dists = {"h": [], "gamma": []}
    for (t, h1, g1), (_, h2, g2) in zip(trajs, trajs[1:]):
        dists["h"].append(space_time_distance(t, h1, h2, dx))
        dists["gamma"].append(space_time_distance(t, g1, g2, dx))
    orders = {c: _orders(v, sizes[0] / sizes[1]) for c, v in dists.items()}
    return OrderReport(kind, list(sizes[:-1]), dists, orders)


def dt_selfconvergence(config: RunConfig, dt_list, samples: int = 9) -> OrderReport:
    """Fixed-step runs for each dt; distances between consecutive dt in L2(Q_T).

    ``dt_list`` must be geometric with ratio 2. Entry i of the report holds
    the distance between dt_list[i] and dt_list[i+1].
    """
    dt_list = [float(d) for d in dt_list]
    if len(dt_list) < 3:
        raise ValueError("need at least 3 time steps")
    if not all(math.isclose(a / b, 2.0, rel_tol=1e-12) for a, b in zip(dt_list, dt_list[1:])):
        raise ValueError("dt_list must halve at every entry")
    times = list(np.linspace(0.0, config.t_end, samples))
    trajs = []
    for dt in dt_list:
        cfg = replace(config, dt0=dt, fixed_dt=True)
        snaps = SnapshotCollector()
        run(cfg.initial_state(), cfg.params, cfg.control(), cfg.t_end, cfg.scheme,
            observers=(snaps,), stop_times=times)
        trajs.append(snaps.arrays())
    return _self_convergence("time", dt_list, trajs, config.grid.dx)
