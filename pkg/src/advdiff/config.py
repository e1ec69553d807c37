"""Experiment configuration: TOML with dotted sections, defaults from ``data/schema.toml``.

Everything statically checkable is validated at load time; errors carry the
dotted key path of the offending entry.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .amplitude import AmplitudeFunction
from .coefficients import CoefficientSet, EllipticityError, Profile, build_coefficients, closed_size
from .forward import Problem, TimeGrid
from .grid import Grid, GridError, build_grid, read_field_csv
from .inverse import METHODS
from .operator import assemble_operator
from .sources import KINDS as SOURCE_KINDS
from .sources import source_field
from .transform import EXPONENT_GUARD, default_shift


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def load_schema() -> dict:
    text = resources.files("advdiff").joinpath("data/schema.toml").read_text()
    return tomllib.loads(text)


def _merge(defaults: dict, user: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(path, "unknown key")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(path, "expected a table")
            out[key] = _merge(defaults[key], value, path + ".")
        else:
            out[key] = value
    return out


def flatten(cfg: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in cfg.items():
        if isinstance(value, dict):
            flat.update(flatten(value, f"{prefix}{key}."))
        else:
            flat[f"{prefix}{key}"] = value
    return flat


def _resolve_path(value: str, base: Path) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


@dataclass
class Experiment:
    """A validated configuration with the objects it defines."""

    config: dict
    base_dir: Path
    grid: Grid
    coeffs: CoefficientSet
    rho: AmplitudeFunction
    problem: Problem
    f_true: np.ndarray
    M: float
    name: str = "experiment"

    def metadata(self) -> dict:
        """Resolved configuration plus every derived default actually used."""
        return {
            "config": self.config,
            "derived": {
                "h": list(self.grid.h),
                "unknowns": self.grid.size,
                "dt": self.problem.time_grid.dt,
                "n_steps": self.problem.time_grid.n_steps,
                "a0": self.coeffs.a0,
                "peclet": self.coeffs.peclet,
                "symmetric": self.problem.operator.symmetric,
                "M": self.M,
                "rho0": self.rho.rho0(self.problem.T),
                "rho_c1_norm": self.rho.c1_norm(self.problem.T),
                "krylov": {"method": "gmres+ilu", "rtol": self.config["time"]["tol"], "maxiter": "10*n"},
                "exponent_guard": EXPONENT_GUARD,
                "near_zero_threshold": 1e-14 * self.rho.sup(self.problem.T) * self.problem.T,
            },
        }


def _check(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ConfigError(key, message)


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _profile(sec: dict, key: str, index: int | None = None) -> Profile:
    _check(sec["kind"] in Profile.KINDS, f"{key}.kind", f"expected one of {Profile.KINDS}")
    value = sec["value"]
    amp = sec["amplitude"]
    if index is not None:
        value = value[index] if isinstance(value, list) and len(value) > 1 else (value[0] if isinstance(value, list) else value)
        amp = amp[index] if isinstance(amp, list) and len(amp) > 1 else (amp[0] if isinstance(amp, list) else amp)
    _check(_num(value), f"{key}.value", "expected a number")
    _check(_num(amp), f"{key}.amplitude", "expected a number")
    return Profile(sec["kind"], float(value), tuple(sec["slope"]), float(amp), tuple(sec["wavenumber"]))


def _build_grid(cfg) -> Grid:
    g = cfg["grid"]
    _check(g["dim"] in (1, 2) and _is_int(g["dim"]), "grid.dim", "must be 1 or 2")
    n = g["n_interior"] if isinstance(g["n_interior"], list) else [g["n_interior"]]
    _check(len(n) in (1, g["dim"]), "grid.n_interior", f"expected 1 or {g['dim']} entries")
    for v in n:
        _check(_is_int(v) and v >= 2, "grid.n_interior", f"interior node counts must be integers >= 2, got {v}")
    ext = g["extents"]
    _check(isinstance(ext, list) and len(ext) == g["dim"], "grid.extents", f"expected {g['dim']} [lo, hi] pairs")
    for pair in ext:
        _check(isinstance(pair, list) and len(pair) == 2 and all(_num(x) for x in pair) and pair[1] > pair[0],
               "grid.extents", f"invalid interval {pair}")
    try:
        return build_grid(g["dim"], ext, n)
    except GridError as exc:
        raise ConfigError("grid", str(exc)) from exc


def _build_coeffs(cfg, grid: Grid, base: Path) -> CoefficientSet:
    d = grid.dim
    sec = cfg["coeffs"]
    a_sec = sec["a"]
    if a_sec["file"]:
        path = _resolve_path(a_sec["file"], base)
        _check(path.exists(), "coeffs.a.file", f"file not found: {path}")
        p_vals = read_field_csv(path)
        _check(p_vals.size == closed_size(grid), "coeffs.a.file",
               f"expected {closed_size(grid)} values on the closed node set, got {p_vals.size}")
        p = p_vals.real
    else:
        p = grid.evaluate(_profile(a_sec, "coeffs.a"), closed=True)
    diag = a_sec["diag"] or [1.0] * d
    _check(len(diag) == d and all(_num(x) for x in diag), "coeffs.a.diag", f"expected {d} numbers")
    _check(_num(a_sec["offdiag"]), "coeffs.a.offdiag", "expected a number")
    _check(d == 2 or a_sec["offdiag"] == 0.0, "coeffs.a.offdiag", "only meaningful in 2D")
    a = p[:, None, None] * np.diag(np.asarray(diag, dtype=float))[None, :, :]
    if d == 2:
        a[:, 0, 1] += a_sec["offdiag"]
        a[:, 1, 0] += a_sec["offdiag"]

    b_sec = sec["b"]
    if b_sec["file"]:
        _check(len(b_sec["file"]) == d, "coeffs.b.file", f"expected {d} files")
        b = []
        for k, name in enumerate(b_sec["file"]):
            path = _resolve_path(name, base)
            _check(path.exists(), f"coeffs.b.file[{k}]", f"file not found: {path}")
            b.append(read_field_csv(path, grid).real)
    else:
        for key in ("value", "amplitude"):
            v = b_sec[key]
            _check(not isinstance(v, list) or len(v) in (1, d), f"coeffs.b.{key}", f"expected 1 or {d} entries")
        b = [_profile(b_sec, "coeffs.b", k) for k in range(d)]

    c_sec = sec["c"]
    if c_sec["file"]:
        path = _resolve_path(c_sec["file"], base)
        _check(path.exists(), "coeffs.c.file", f"file not found: {path}")
        c = read_field_csv(path, grid).real
    else:
        c = _profile(c_sec, "coeffs.c")
    try:
        return build_coefficients(grid, a=a, b=b, c=c)
    except EllipticityError as exc:
        raise ConfigError("coeffs.a", str(exc)) from exc
    except GridError as exc:
        raise ConfigError("coeffs", str(exc)) from exc


def _build_rho(cfg) -> AmplitudeFunction:
    r = cfg["rho"]
    kind = r["kind"]
    _check(kind in AmplitudeFunction.KINDS, "rho.kind", f"expected one of {AmplitudeFunction.KINDS}")
    try:
        if kind == "constant":
            return AmplitudeFunction.constant(r["value"])
        if kind == "affine":
            return AmplitudeFunction.affine(r["value"], r["slope"])
        if kind == "sinusoidal-offset":
            return AmplitudeFunction.sinusoidal(r["offset"], r["amplitude"], r["frequency"], r["phase"])
        return AmplitudeFunction.tabulated(r["times"], r["values"])
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError("rho", str(exc)) from exc


def _source(cfg, grid: Grid, base: Path) -> np.ndarray:
    s = cfg["source"]
    if s["file"]:
        path = _resolve_path(s["file"], base)
        _check(path.exists(), "source.file", f"file not found: {path}")
        try:
            return read_field_csv(path, grid).real
        except GridError as exc:
            raise ConfigError("source.file", str(exc)) from exc
    _check(s["kind"] in SOURCE_KINDS, "source.kind", f"expected one of {SOURCE_KINDS}")
    _check(s["width"] > 0, "source.width", "must be positive")
    return source_field(grid, s["kind"], scale=s["scale"], mode=s["mode"], mode2=s["mode2"],
                        weight=s["weight"], center=s["center"], width=s["width"], box=s["box"])


def _validate_scalars(cfg, grid: Grid, command: str | None) -> None:
    t = cfg["time"]
    _check(_num(t["T"]) and t["T"] > 0, "time.T", "must be positive")
    _check(_is_int(t["n_steps"]) and t["n_steps"] >= 0, "time.n_steps", "must be a non-negative integer")
    _check(_num(t["theta"]) and 0.5 <= t["theta"] <= 1.0, "time.theta", "must lie in [0.5, 1]")
    _check(_num(t["tol"]) and t["tol"] > 0, "time.tol", "must be positive")
    _check(_is_int(t["stride"]) and t["stride"] >= 1, "time.stride", "must be a positive integer")

    tr = cfg["transform"]
    Ns = tr["N"] if isinstance(tr["N"], list) else [tr["N"]]
    _check(len(Ns) > 0 and all(_num(n) and n > 1 for n in Ns), "transform.N", "every N must exceed 1")
    _check(_num(tr["M"]), "transform.M", "expected a number")
    _check(tr["r_min"] > 0, "transform.r_min", "must be positive")
    _check(tr["r_max"] == 0 or tr["r_max"] > tr["r_min"], "transform.r_max", "must be 0 (auto) or exceed r_min")
    _check(_is_int(tr["n_radii"]) and tr["n_radii"] >= 1, "transform.n_radii", "must be a positive integer")
    _check(_is_int(tr["n_angles"]) and tr["n_angles"] >= 1, "transform.n_angles", "must be a positive integer")
    _check(tr["residual_r_max"] > 0, "transform.residual_r_max", "must be positive")
    sa = tr["s_asymptotic"]
    _check(len(sa) >= 3 and all(b > a for a, b in zip(sa, sa[1:])), "transform.s_asymptotic",
           "need at least three increasing values")

    inv = cfg["inverse"]
    _check(inv["method"] in METHODS, "inverse.method", f"expected one of {METHODS}")
    _check(_num(inv["noise_level"]) and inv["noise_level"] >= 0, "inverse.noise_level", "must be non-negative")
    _check(_num(inv["tau"]) and inv["tau"] > 1, "inverse.tau", "must exceed 1")
    _check(_num(inv["alpha"]) and inv["alpha"] > 0, "inverse.alpha", "must be positive")
    _check(_num(inv["step"]) and inv["step"] >= 0, "inverse.step", "must be non-negative (0: automatic)")
    _check(_is_int(inv["power_steps"]) and inv["power_steps"] >= 1, "inverse.power_steps", "must be a positive integer")
    _check(_is_int(inv["max_iter"]) and inv["max_iter"] >= 0, "inverse.max_iter", "must be a non-negative integer")
    _check(_is_int(inv["n_modes"]) and 0 <= inv["n_modes"] <= grid.size, "inverse.n_modes",
           f"must lie in [0, {grid.size}]")
    _check(isinstance(inv["seeds"], list) and len(inv["seeds"]) > 0 and all(_is_int(s) for s in inv["seeds"]),
           "inverse.seeds", "expected a non-empty list of integers")

    sp = cfg["spectrum"]
    _check(_is_int(sp["k"]) and sp["k"] >= 1, "spectrum.k", "must be a positive integer")
    _check(sp["propagator"] in ("scheme", "exact"), "spectrum.propagator", "expected scheme or exact")
    _check(sp["method"] in ("auto", "dense", "iterative"), "spectrum.method", "expected auto, dense or iterative")
    if command == "spectrum" and sp["propagator"] == "exact":
        _check(grid.size <= 4096 and sp["method"] != "iterative", "spectrum.propagator",
               "the exact propagator needs dense assembly (<= 4096 unknowns)")
    if command == "spectrum" and sp["method"] == "dense":
        _check(grid.size <= 4096, "spectrum.method", "more than 4096 unknowns; use method = \"iterative\"")


def load_config(path=None, overrides: dict | None = None, command: str | None = None) -> Experiment:
    """Read, merge with defaults, validate and build an :class:`Experiment`."""
    user = {}
    base = Path.cwd()
    name = "experiment"
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError("--config", f"file not found: {path}")
        try:
            user = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("--config", f"not valid TOML: {exc}") from exc
        base = path.parent
        name = path.stem
    if overrides:
        user = _merge_user(user, overrides)
    cfg = _merge(load_schema(), user)
    return build_experiment(cfg, base, name, command)


def _merge_user(user: dict, overrides: dict) -> dict:
    out = copy.deepcopy(user)
    for key, value in overrides.items():
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


def build_experiment(cfg: dict, base: Path, name: str = "experiment", command: str | None = None) -> Experiment:
    grid = _build_grid(cfg)
    _validate_scalars(cfg, grid, command)
    coeffs = _build_coeffs(cfg, grid, base)
    rho = _build_rho(cfg)
    T = float(cfg["time"]["T"])
    rho0 = rho.rho0(T)
    if cfg["rho"]["assert_positive"] or command == "verify":
        _check(rho0 > 0, "rho", f"amplitude must be positive on [0, T]; its infimum is {rho0:.6g}")
    for k, s in enumerate(cfg["transform"]["s_asymptotic"]):
        M_probe = cfg["transform"]["M"] if cfg["transform"]["M"] >= 0 else default_shift(coeffs.c_sup)
        _check(abs(s + M_probe) * T <= EXPONENT_GUARD, f"transform.s_asymptotic[{k}]",
               f"|s + M| T exceeds the exponent guard {EXPONENT_GUARD:g}")
    f = _source(cfg, grid, base)
    inv = cfg["inverse"]
    if inv["data_file"]:
        p = _resolve_path(inv["data_file"], base)
        _check(p.exists(), "inverse.data_file", f"file not found: {p}")
    n_steps = cfg["time"]["n_steps"] or max(grid.shape)
    operator = assemble_operator(grid, coeffs)
    if command == "invert":
        _check(not (inv["method"] == "spectral" and not operator.symmetric), "inverse.method",
               "spectral reconstruction needs symmetry_flag (b == 0 everywhere)")
    problem = Problem(grid, coeffs, TimeGrid(T, n_steps), rho, f, operator)
    M = float(cfg["transform"]["M"]) if cfg["transform"]["M"] >= 0 else default_shift(coeffs.c_sup)
    return Experiment(cfg, base, grid, coeffs, rho, problem, f, M, name)


def describe(exp: Experiment) -> str:
    return json.dumps(exp.metadata(), indent=2, sort_keys=True)
