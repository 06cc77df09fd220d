"""Command line entry point: ``surfilm run|sweep|mms|check-config``.

Exit codes: 0 success, 1 a ledger, bounds or acceptance check failed,
2 the run itself failed (a dump of the last good state is written),
3 bad configuration or unusable output directory.

Output directory precedence: ``--output`` flag, then the SURFILM_OUTPUT_DIR
environment variable, then ``[output] directory`` in the config.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import OUTPUT_ENV, ConfigError, RunConfig, check_eps_list, load_config
from .constitutive import ModelParams
from .diagnostics import (DiagnosticsObserver, Violation, bounds_check, entropy_bound,
                          ledger_check)
from .dynamics import StepFailure, fluxes_J, fluxes_j_limit, run
from .study import ManufacturedPair, SweepPlan, eps_sweep, mms_verify

log = logging.getLogger("surfilm")

EXIT_OK, EXIT_CHECK, EXIT_RUN, EXIT_CONFIG = 0, 1, 2, 3

LEDGER_COLUMNS = ("t", "mass_h", "mass_gamma", "min_h", "min_gamma", "L_reg", "D_reg",
                  "cum_D_reg", "L0", "D0", "cum_D0", "slack_reg", "slack_limit")
SNAP_COLUMNS = ("x", "h", "gamma", "j_f", "j_s")

SPATIAL_ORDER_MIN = 1.8
TEMPORAL_ORDER_MIN = 0.9


def fmt(v) -> str:
    """Shortest round-trip decimal for floats, plain text otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, data):
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def output_dir(config: RunConfig, flag: str | None) -> Path:
    d = Path(flag or os.environ.get(OUTPUT_ENV) or config.directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {d}: {exc}") from None
    if not os.access(d, os.W_OK):
        raise ConfigError(f"output directory {d} is not writable")
    return d


def config_echo(config: RunConfig) -> dict:
    d = asdict(config)
    d["sigma"] = asdict(config.sigma)
    d["initial"] = asdict(config.initial)
    return d


class SnapshotWriter:
    """Observer writing snap_<t>.csv at the initial time and every stop time."""

    def __init__(self, directory: Path, params: ModelParams, scheme: str):
        self.directory = directory
        self.params = params
        self.scheme = scheme
        self.written = []
        self.profiles = []

    def __call__(self, state, aux, stop):
        if not stop:
            return
        if self.scheme == "regularized":
            jf, js = fluxes_J(state, aux, self.params)
        else:
            jf, js = fluxes_j_limit(state, self.params)
        # face fluxes shown at cells as the mean of the two bounding faces
        jf_c, js_c = 0.5 * (jf[1:] + jf[:-1]), 0.5 * (js[1:] + js[:-1])
        x = state.grid.cell_centers
        h, g = state.h.values, state.gamma.values
        name = f"snap_{fmt(float(state.t))}.csv"
        write_csv(self.directory / name, SNAP_COLUMNS, zip(x, h, g, jf_c, js_c))
        self.written.append(name)
        self.profiles.append((float(state.t), x.copy(), h.copy(), g.copy()))


def _violation_dict(v: Violation):
    return {"t": v.t, "quantity": v.quantity, "slack": v.slack}


def _write_ledger(path, ledger):
    s_reg, s_lim = ledger.slack("reg"), ledger.slack("limit")
    rows = []
    for r, a, b in zip(ledger.records, s_reg, s_lim):
        rows.append((r.t, r.mass_h, r.mass_gamma, r.min_h, r.min_gamma, r.L_reg, r.D_reg,
                     r.cum_D_reg, r.L0, r.D0, r.cum_D0, a, b))
    write_csv(path, LEDGER_COLUMNS, rows)


def _dump_state(path, state):
    write_csv(path, ("x", "h", "gamma"),
              zip(state.grid.cell_centers, state.h.values, state.gamma.values))


def cmd_run(config: RunConfig, out: Path, figures: bool | None = None) -> int:
    params = config.params
    scheme = config.scheme
    try:
        initial = config.initial_state()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid initial data: {exc}") from None
    summary = {"config": config_echo(config), "violations": [], "status": "ok"}

    dx = initial.grid.dx
    ref = (float(np.sum(initial.h.values) * dx), float(np.sum(initial.gamma.values) * dx))
    pre = bounds_check(initial, params, ref, scheme)
    if not (pre.barrier_h_ok and pre.barrier_gamma_ok):
        for name in ("barrier_h", "barrier_gamma"):
            if not getattr(pre, f"{name}_ok"):
                summary["violations"].append({"t": initial.t, "quantity": name,
                                              "slack": getattr(pre, name)})
        summary["status"] = "initial data violates the barriers"
        _dump_state(out / "failure_state.csv", initial)
        write_json(out / "summary.json", summary)
        log.error("initial data violates the barriers; see %s", out / "summary.json")
        return EXIT_RUN

    diag = DiagnosticsObserver(params, scheme, every=config.ledger_every)
    snaps = SnapshotWriter(out, params, scheme)
    control = config.control()
    code = EXIT_OK
    try:
        result = run(initial, params, control, config.t_end, scheme,
                     observers=(diag, snaps), stop_times=config.snapshot_times())
        final = result.final
        log.info("run finished: %d accepted, %d rejected steps in %.2f s",
                 result.n_accepted, result.n_rejected, result.wall_time)
    except StepFailure as exc:
        final = exc.state
        summary["status"] = f"run failed: {exc}"
        _dump_state(out / "failure_state.csv", exc.state)
        log.error("%s", exc)
        code = EXIT_RUN

    ledger = diag.ledger
    _write_ledger(out / "ledger.csv", ledger)
    which = "reg" if scheme == "regularized" else "limit"
    rep = ledger_check(ledger, which=which)
    summary["violations"] += [_violation_dict(v) for v in rep.violations]
    summary["violations"] += [_violation_dict(v) for v in diag.bound_violations]

    ent = None
    if ledger.records:
        first = ledger.records[0]
        bound = entropy_bound(first.L0, first.mass_gamma, params, config.length)
        ent_max = float(np.max(ledger.column("entropy")))
        ent = {"max": ent_max, "bound": bound, "ok": ent_max <= bound + 1e-8}
        if scheme == "regularized" and not ent["ok"]:
            summary["violations"].append({"t": float(ledger.times()[np.argmax(
                ledger.column("entropy"))]), "quantity": "entropy", "slack": bound - ent_max})

    last = asdict(ledger.records[-1]) if ledger.records else {}
    summary.update({
        "final": last,
        "final_time": final.t,
        "ledger": {"which": which, "tol": rep.tol, "worst_slack": rep.worst_slack,
                   "worst_time": rep.worst_time, "records": len(ledger.records)},
        "entropy": ent,
        "steps": {"accepted": control.n_accepted, "rejected": control.n_rejected},
        "snapshots": snaps.written,
    })
    if code == EXIT_OK and summary["violations"]:
        summary["status"] = "check failed"
        code = EXIT_CHECK
    write_json(out / "summary.json", summary)

    if (config.figures if figures is None else figures) and ledger.records:
        from . import plotting
        if snaps.profiles:
            plotting.plot_profiles(snaps.profiles, out / "profiles.png",
                                   config.eps if scheme == "regularized" else None)
        s = ledger.slack(which)
        L = ledger.column("L_reg" if which == "reg" else "L0")
        cum = ledger.column("cum_D_reg" if which == "reg" else "cum_D0")
        plotting.plot_energy(ledger.times(), L, cum, s, out / "energy.png", scheme)
    return code


def cmd_sweep(config: RunConfig, out: Path, eps_list=None, workers: int = 1,
              figures: bool | None = None) -> int:
    eps_list = tuple(eps_list or config.eps_list)
    check_eps_list(eps_list)
    plan = SweepPlan.from_config(config, eps_list)
    table = eps_sweep(plan, workers=workers)
    write_csv(out / "sweep.csv", table.columns(), [r.values() for r in table.rows])
    members = [{"eps": m.eps, "ok": m.ok, "error": m.error, "accepted": m.n_accepted,
                "rejected": m.n_rejected, "ledger_ok": m.ledger_ok, "bounds_ok": m.bounds_ok,
                "worst_slack": m.worst_slack, "entropy_max": m.entropy_max,
                "holder_quotient": m.holder} for m in table.members]
    mono = {k: table.strictly_decreasing(k) for k in ("dh_L2_QT", "dgamma_L2_QT")}
    ok = all(mono.values()) and not table.any_failed and all(
        m.ledger_ok and m.bounds_ok for m in table.members)
    write_json(out / "sweep.json", {"eps_list": list(eps_list), "members": members,
                                    "strictly_decreasing": mono, "ok": ok})
    if config.figures if figures is None else figures:
        from . import plotting
        plotting.plot_sweep(table, out / "sweep.png")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_mms(config: RunConfig | None, out: Path, figures: bool = True) -> int:
    params = config.params if config is not None else None
    length = config.length if config is not None else 1.0
    spatial, temporal = mms_verify("original", params=params, length=length,
                                   pair=ManufacturedPair())
    rows = spatial.rows() + temporal.rows()
    cols = ["kind", "size", "err_h", "order_h", "err_gamma", "order_gamma"]
    write_csv(out / "mms.csv", cols, [[r[c] for c in cols] for r in rows])
    ok = spatial.observed >= SPATIAL_ORDER_MIN and temporal.observed >= TEMPORAL_ORDER_MIN
    write_json(out / "mms.json", {"spatial_order": spatial.observed,
                                  "temporal_order": temporal.observed, "ok": ok})
    if figures:
        from . import plotting
        plotting.plot_orders(spatial, temporal, out / "mms.png")
    return EXIT_OK if ok else EXIT_CHECK


def _workers_default():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def build_parser():
    p = argparse.ArgumentParser(prog="surfilm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="more logging (-v info, -vv debug)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        if config_required:
            sp.add_argument("config", help="configuration file")
        else:
            sp.add_argument("config", nargs="?", help="configuration file (optional)")
        sp.add_argument("-o", "--output", help="output directory")
        sp.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    common(sub.add_parser("run", help="run one simulation"))
    sw = sub.add_parser("sweep", help="eps self-convergence sweep")
    common(sw)
    sw.add_argument("--eps", type=float, nargs="+", help="override [sweep] eps_list")
    sw.add_argument("--workers", type=int, default=_workers_default(),
                    help="parallel member runs (default: available CPUs)")
    common(sub.add_parser("mms", help="manufactured-solution order check"), False)
    sub.add_parser("check-config", help="validate a configuration").add_argument("config")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config) if args.config else None
        if args.command == "check-config":
            print(f"{args.config}: ok ({config.n_cells} cells, scheme {config.scheme})")
            return EXIT_OK
        figures = False if args.no_figures else None
        if args.command == "mms":
            out = (output_dir(config, args.output) if config is not None
                   else _bare_output(args.output))
            return cmd_mms(config, out, figures is None and (config is None or config.figures))
        out = output_dir(config, args.output)
        if args.command == "run":
            return cmd_run(config, out, figures)
        return cmd_sweep(config, out, args.eps, max(1, args.workers), figures)
    except ConfigError as exc:
        print(f"surfilm: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"surfilm: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _bare_output(flag):
    d = Path(flag or os.environ.get(OUTPUT_ENV) or "out")
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {d}: {exc}") from None
    return d


if __name__ == "__main__":
    sys.exit(main())
