"""Run configuration: an INI-style sectioned key/value file.

Grammar (all keys lower case, ``#`` or ``;`` start a comment)::

    [grid]      n_cells (required), length = 1
    [model]     G = 1, D = 0.1, sigma = linear | logarithmic, sigma_s = 1,
                beta = 1, gamma_inf, sign = 1, gamma_max (logarithmic only),
                eps = 0.01, eta1 = 0.875, scheme = regularized | original
    [initial]   preset = cosine | constant | file
                cosine:   h_mean = 1, h_amp = 0.5, gamma_mean = 1,
                          gamma_amp = 0.5, mode = 1
                constant: h = 1, gamma = 1
                file:     path (CSV with columns x, h, gamma), lifted = false
    [control]   t_end (required), dt0 = dx^2, dt_min = 1e-12,
                dt_max = 2 dx^2, fixed = false
    [output]    directory = out, snapshots = 5 (evenly spaced, excluding
                t = 0), ledger_every = 1, figures = true
    [sweep]     eps_list = 0.1, 0.01, 0.001, 0.0001, samples = 11

Errors name the offending line.
"""

from __future__ import annotations

import configparser
import csv
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .constitutive import DEFAULT_ETA1, ETA, ModelParams, SigmaModel
from .dynamics import SCHEMES, State, StepControl, lift
from .grid import Grid

OUTPUT_ENV = "SURFILM_OUTPUT_DIR"

_KEYS = {
    "grid": {"n_cells", "length"},
    "model": {"g", "d", "sigma", "sigma_s", "beta", "gamma_inf", "sign", "gamma_max",
              "eps", "eta1", "scheme"},
    "initial": {"preset", "h_mean", "h_amp", "gamma_mean", "gamma_amp", "mode", "h",
                "gamma", "path", "lifted"},
    "control": {"t_end", "dt0", "dt_min", "dt_max", "fixed"},
    "output": {"directory", "snapshots", "ledger_every", "figures"},
    "sweep": {"eps_list", "samples"},
}
_REQUIRED = {"grid": ("n_cells",), "control": ("t_end",)}


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class InitialData:
    preset: str = "cosine"
    h_mean: float = 1.0
    h_amp: float = 0.5
    gamma_mean: float = 1.0
    gamma_amp: float = 0.5
    mode: int = 1
    h: float = 1.0
    gamma: float = 1.0
    path: str | None = None
    lifted: bool = False

    def arrays(self, grid: Grid):
        """Unlifted (h0, Gamma0) at the cell centres."""
        x = grid.cell_centers
        if self.preset == "constant":
            return np.full(x.size, self.h), np.full(x.size, self.gamma)
        if self.preset == "cosine":
            c = np.cos(self.mode * math.pi * x / grid.length)
            return self.h_mean + self.h_amp * c, self.gamma_mean + self.gamma_amp * c
        return read_profile(self.path, grid)


@dataclass(frozen=True)
class RunConfig:
    n_cells: int
    t_end: float
    length: float = 1.0
    G: float = 1.0
    D: float = 0.1
    sigma: SigmaModel = field(default_factory=lambda: SigmaModel.linear(1.0, 1.0))
    eps: float = 1e-2
    eta1: float = DEFAULT_ETA1
    scheme: str = "regularized"
    initial: InitialData = field(default_factory=InitialData)
    dt0: float | None = None
    dt_min: float = 1e-12
    dt_max: float | None = None
    fixed_dt: bool = False
    directory: str = "out"
    snapshots: int = 5
    ledger_every: int = 1
    figures: bool = True
    eps_list: tuple = (1e-1, 1e-2, 1e-3, 1e-4)
    samples: int = 11

    @property
    def grid(self) -> Grid:
        return Grid(self.n_cells, self.length)

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.G, self.D, self.sigma, self.eps, self.eta1)

    def with_eps(self, eps: float) -> "RunConfig":
        return replace(self, eps=float(eps))

    def control(self) -> StepControl:
        dx2 = self.grid.dx ** 2
        dt0 = self.dt0 if self.dt0 is not None else dx2
        if self.fixed_dt:
            return StepControl.fixed(dt0, dt_min=min(self.dt_min, dt0))
        dt_max = self.dt_max if self.dt_max is not None else 2.0 * dx2
        return StepControl(dt=min(dt0, dt_max), dt_min=self.dt_min, dt_max=dt_max)

    def initial_state(self) -> State:
        """Initial data, lifted onto the barriers for the regularized scheme."""
        grid = self.grid
        h0, g0 = self.initial.arrays(grid)
        if self.scheme == "regularized" and not self.initial.lifted:
            h0, g0 = lift(h0, g0, self.eps)
        return State.from_arrays(grid, h0, g0, 0.0)

    def snapshot_times(self):
        k = self.snapshots
        # 12 significant digits keep snapshot file names tidy
        return [float(f"{self.t_end * (i + 1) / k:.12g}") for i in range(k)] if k > 0 else []


def read_profile(path, grid: Grid):
    """Read (h, gamma) columns from a CSV with header x, h, gamma."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"h", "gamma"} <= set(rows[0]):
        raise ConfigError(f"{path}: need CSV columns h and gamma")
    if len(rows) != grid.n_cells:
        raise ConfigError(f"{path}: {len(rows)} rows, grid has {grid.n_cells} cells")
    try:
        h = np.array([float(r["h"]) for r in rows])
        g = np.array([float(r["gamma"]) for r in rows])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: unreadable number ({exc})") from None
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(g))):
        raise ConfigError(f"{path}: non-finite values")
    return h, g


def _line_map(text):
    """(section, key) -> 1-based line number, plus section header lines."""
    lines, section = {}, None
    for i, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            lines.setdefault((section, None), i)
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            lines[(section, m.group(1).strip().lower())] = i
    return lines


class _Reader:
    def __init__(self, cp, lines):
        self.cp = cp
        self.lines = lines

    def line(self, section, key=None):
        return self.lines.get((section, key), self.lines.get((section, None)))

    def raw(self, section, key):
        if not self.cp.has_section(section) or not self.cp.has_option(section, key):
            return None
        return self.cp.get(section, key).strip()

    def get(self, section, key, conv, default=None, check=None, why=""):
        text = self.raw(section, key)
        if text is None:
            return default
        try:
            value = conv(text)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {text!r} is not a valid {conv.__name__}",
                              self.line(section, key)) from None
        if check is not None and not check(value):
            raise ConfigError(f"[{section}] {key} = {text} {why}", self.line(section, key))
        return value


def _bool(text):
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


_bool.__name__ = "boolean"


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError(text)
    return int(v)


_int.__name__ = "integer"


def _floats(text):
    return tuple(float(s) for s in text.replace(",", " ").split())


_floats.__name__ = "list of numbers"


def _positive(v):
    return v > 0 and math.isfinite(v)


def parse_config(text: str, base_dir: str | Path | None = None) -> RunConfig:
    """Parse and validate a configuration text."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}",
                          getattr(exc, "lineno", None)) from None
    lines = _line_map(text)
    r = _Reader(cp, lines)

    for section in cp.sections():
        if section not in _KEYS:
            raise ConfigError(f"unknown section [{section}]", r.line(section))
        for key in cp.options(section):
            if key not in _KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", r.line(section, key))
    for section, keys in _REQUIRED.items():
        for key in keys:
            if r.raw(section, key) is None:
                raise ConfigError(f"missing required key [{section}] {key}", r.line(section))

    kw = {}
    kw["n_cells"] = r.get("grid", "n_cells", _int, check=lambda v: v >= 4, why="must be >= 4")
    kw["length"] = r.get("grid", "length", float, 1.0, _positive, "must be positive")

    kw["G"] = r.get("model", "g", float, 1.0, _positive, "must be positive")
    kw["D"] = r.get("model", "d", float, 0.1, _positive, "must be positive")
    kw["eps"] = r.get("model", "eps", float, 1e-2, lambda v: 0 < v < 1,
                      "must lie in (0, 1)")
    kw["eta1"] = r.get("model", "eta1", float, DEFAULT_ETA1, lambda v: ETA < v < 1,
                       f"must lie in (eta, 1) = ({ETA}, 1)")
    kw["scheme"] = r.get("model", "scheme", str, "regularized", lambda v: v in SCHEMES,
                         f"must be one of {', '.join(SCHEMES)}")
    variant = r.get("model", "sigma", str, "linear",
                    lambda v: v in ("linear", "logarithmic"), "must be linear or logarithmic")
    sigma_s = r.get("model", "sigma_s", float, 1.0)
    beta = r.get("model", "beta", float, 1.0)
    try:
        if variant == "linear":
            for key in ("gamma_inf", "sign", "gamma_max"):
                if r.raw("model", key) is not None:
                    raise ConfigError(f"[model] {key} only applies to sigma = logarithmic",
                                      r.line("model", key))
            kw["sigma"] = SigmaModel.linear(sigma_s, beta)
        else:
            for key in ("gamma_inf", "gamma_max"):
                if r.raw("model", key) is None:
                    raise ConfigError(f"sigma = logarithmic needs [model] {key}",
                                      r.line("model", "sigma"))
            kw["sigma"] = SigmaModel.logarithmic(
                sigma_s, beta, r.get("model", "gamma_inf", float),
                r.get("model", "sign", _int, 1), r.get("model", "gamma_max", float))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid surface tension model: {exc}", r.line("model", "sigma")) from None

    preset = r.get("initial", "preset", str, "cosine",
                   lambda v: v in ("cosine", "constant", "file"),
                   "must be cosine, constant or file")
    ini = {"preset": preset}
    if preset == "cosine":
        for key, default in (("h_mean", 1.0), ("h_amp", 0.5), ("gamma_mean", 1.0),
                             ("gamma_amp", 0.5)):
            ini[key] = r.get("initial", key, float, default)
        ini["mode"] = r.get("initial", "mode", _int, 1, lambda v: v >= 1,
                            "must be a positive integer")
        for which in ("h", "gamma"):
            mean, amp = ini[f"{which}_mean"], ini[f"{which}_amp"]
            if not abs(amp) < mean:
                raise ConfigError(
                    f"[initial] {which}_amp = {amp} must be smaller than {which}_mean = {mean}",
                    r.line("initial", f"{which}_amp"))
    elif preset == "constant":
        ini["h"] = r.get("initial", "h", float, 1.0, _positive, "must be positive")
        ini["gamma"] = r.get("initial", "gamma", float, 1.0, _positive, "must be positive")
    else:
        path = r.raw("initial", "path")
        if path is None:
            raise ConfigError("preset = file needs [initial] path", r.line("initial", "preset"))
        if base_dir is not None and not Path(path).is_absolute():
            path = str(Path(base_dir) / path)
        ini["path"] = path
        ini["lifted"] = r.get("initial", "lifted", _bool, False)
    kw["initial"] = InitialData(**ini)

    kw["t_end"] = r.get("control", "t_end", float, check=lambda v: v >= 0 and math.isfinite(v),
                        why="must be nonnegative")
    kw["dt0"] = r.get("control", "dt0", float, None, _positive, "must be positive")
    kw["dt_min"] = r.get("control", "dt_min", float, 1e-12, _positive, "must be positive")
    kw["dt_max"] = r.get("control", "dt_max", float, None, _positive, "must be positive")
    kw["fixed_dt"] = r.get("control", "fixed", _bool, False)
    if kw["dt0"] is not None and kw["dt_max"] is not None and kw["dt0"] > kw["dt_max"]:
        raise ConfigError("[control] dt0 exceeds dt_max", r.line("control", "dt0"))

    kw["directory"] = r.get("output", "directory", str, "out")
    kw["snapshots"] = r.get("output", "snapshots", _int, 5, lambda v: v >= 0,
                            "must be nonnegative")
    kw["ledger_every"] = r.get("output", "ledger_every", _int, 1, lambda v: v >= 1,
                               "must be >= 1")
    kw["figures"] = r.get("output", "figures", _bool, True)

    eps_list = r.get("sweep", "eps_list", _floats, (1e-1, 1e-2, 1e-3, 1e-4))
    if eps_list is not None:
        check_eps_list(eps_list, r.line("sweep", "eps_list"))
    kw["eps_list"] = tuple(eps_list)
    kw["samples"] = r.get("sweep", "samples", _int, 11, lambda v: v >= 2, "must be >= 2")
    return RunConfig(**kw)


def check_eps_list(eps_list, line=None):
    if len(eps_list) < 3:
        raise ConfigError(f"eps_list needs at least 3 entries for rates, got {len(eps_list)}",
                          line)
    if not all(0 < e < 1 for e in eps_list):
        raise ConfigError("every eps must lie in (0, 1)", line)
    if not all(a > b for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("eps_list must be strictly decreasing", line)


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)
