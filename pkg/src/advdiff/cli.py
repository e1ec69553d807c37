"""Command-line front end: ``advdiff {forward,invert,verify,spectrum} --config FILE``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure,
4 a verification report failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy import integrate

from .config import ConfigError, Experiment, describe, load_config
from .forward import LinearSolveError, solve_forward, write_trajectory
from .grid import GridError, read_field_csv, write_field_csv
from .inverse import (
    DivergenceError,
    InverseRun,
    SourceToFinalMap,
    add_noise,
    reconstruct_cgne,
    reconstruct_landweber,
    reconstruct_spectral,
    reconstruct_tikhonov,
    singular_spectrum,
)
from .sources import dirichlet_eigenvalue
from .transform import (
    SECTORS,
    ExponentOverflowError,
    asymptotic_check,
    classify_sector,
    sample_plan,
    transform_residual,
    verify_lemma_rho,
    verify_lemma_uhat,
)

log = logging.getLogger("advdiff")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_VERIFICATION = 0, 2, 3, 4
NUMERICAL_ERRORS = (LinearSolveError, DivergenceError, ExponentOverflowError, RuntimeError, np.linalg.LinAlgError)


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_rows(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def reference_final(exp: Experiment):
    """Continuous ``u(., T)`` for an eigenmode source and constant isotropic diffusion.

    Returns ``None`` when no closed form applies (advection, variable or
    anisotropic coefficients, non-eigenmode sources, files).
    """
    cfg = exp.config
    a, c, src = cfg["coeffs"]["a"], cfg["coeffs"]["c"], cfg["source"]
    iso = a["kind"] == "constant" and not a["file"] and a["offdiag"] == 0.0 and len(set(a["diag"] or [1.0])) == 1
    if not (iso and not exp.coeffs.has_advection and c["kind"] == "constant" and not c["file"]
            and src["kind"] == "eigenmode" and not src["file"]):
        return None
    diffusivity = a["value"] * (a["diag"][0] if a["diag"] else 1.0)
    lam = dirichlet_eigenvalue(exp.grid, src["mode"], diffusivity) - c["value"]
    T = exp.problem.T
    amp, _ = integrate.quad(lambda t: exp.rho(t) * np.exp(-lam * (T - t)), 0.0, T, epsabs=0.0, epsrel=1e-13, limit=200)
    return amp * exp.f_true


def cmd_forward(exp: Experiment, out: Path, jobs: int = 1) -> int:
    cfg = exp.config
    traj = solve_forward(exp.problem, theta=cfg["time"]["theta"], tol=cfg["time"]["tol"], stride=cfg["time"]["stride"])
    write_trajectory(traj, out / "trajectory")
    write_field_csv(out / "final.csv", exp.grid, traj.final)
    meta = exp.metadata()
    ref = reference_final(exp)
    if ref is not None:
        meta["reference"] = {
            "kind": "eigenmode closed form",
            "max_abs_error": float(np.max(np.abs(traj.final - ref))),
            "l2_error": exp.grid.norm(traj.final - ref),
        }
    _dump(out / "metadata_forward.json", meta)
    return EXIT_OK


def _synthetic_data(exp: Experiment, A: SourceToFinalMap):
    inv = exp.config["inverse"]
    if inv["data_file"]:
        path = Path(inv["data_file"])
        path = path if path.is_absolute() else exp.base_dir / path
        return {None: read_field_csv(path, exp.grid).real}, None
    clean = A(exp.f_true)
    return {seed: add_noise(clean, inv["noise_level"], seed) for seed in inv["seeds"]}, exp.f_true


def _reconstruct(exp: Experiment, data, f_true, seed):
    inv = exp.config["inverse"]
    t = exp.config["time"]
    run = InverseRun(
        exp.problem, data, noise_level=inv["noise_level"], method=inv["method"], max_iter=inv["max_iter"],
        tau=inv["tau"], alpha=inv["alpha"], step=inv["step"] or None, n_modes=inv["n_modes"] or None,
        seed=seed, f_true=f_true, theta=t["theta"], tol=t["tol"],
    )
    if run.method == "cgne":
        return reconstruct_cgne(run)
    if run.method == "landweber":
        return reconstruct_landweber(run, power_steps=inv["power_steps"])
    if run.method == "tikhonov":
        return reconstruct_tikhonov(run)
    return reconstruct_spectral(run)


def cmd_invert(exp: Experiment, out: Path, jobs: int = 1) -> int:
    t = exp.config["time"]
    A = SourceToFinalMap(exp.problem, t["theta"], t["tol"])
    datasets, f_true = _synthetic_data(exp, A)
    keys = list(datasets)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(lambda key: _reconstruct(exp, datasets[key], f_true, key), keys))
    rows = []
    for key, res in zip(keys, results):
        sub = out / ("observed" if key is None else f"seed_{key}")
        res.write(sub, exp.grid)
        write_field_csv(sub / "data.csv", exp.grid, datasets[key])
        m = res.metrics or {}
        rows.append(["" if key is None else key, res.iterations, res.residual, res.stopping_reason,
                     m.get("rel_l2", ""), m.get("max_abs", "")])
    if f_true is not None:
        rel = [r[4] for r in rows]
        mx = [r[5] for r in rows]
        rows.append(["median", "", float(np.median([r[2] for r in rows])), "",
                     float(np.median(rel)), float(np.median(mx))])
    _write_rows(out / "aggregate.csv", ["seed", "iterations", "residual", "stopping_reason", "rel_l2", "max_abs"], rows)
    _dump(out / "metadata_invert.json", exp.metadata())
    return EXIT_OK


def cmd_verify(exp: Experiment, out: Path, jobs: int = 1) -> int:
    cfg = exp.config
    tr = cfg["transform"]
    T = exp.problem.T
    Ns = tr["N"] if isinstance(tr["N"], list) else [tr["N"]]
    r_max = tr["r_max"] or None
    plan = dict(T=T, r_min=tr["r_min"], r_max=r_max, n_radii=tr["n_radii"], n_angles=tr["n_angles"])
    traj = solve_forward(exp.problem, theta=cfg["time"]["theta"], tol=cfg["time"]["tol"], stride=cfg["time"]["stride"])
    flags = {}

    def lemma_rho(N):
        return verify_lemma_rho(exp.rho, T, N, sample_plan(("C",), N=N, **plan))

    def lemma_uhat(N):
        return verify_lemma_uhat(traj, exp.f_true, exp.rho, exp.M, sample_plan(SECTORS, N=N, **plan), N)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        rho_reports = list(pool.map(lemma_rho, Ns))
        uhat_reports = list(pool.map(lemma_uhat, Ns))
    for N, rep in zip(Ns, rho_reports):
        rep.write(out / f"lemma_rho_N{N:g}")
        flags[f"lemma_rho_N{N:g}"] = rep.passed
    for N, rep in zip(Ns, uhat_reports):
        rep.write(out / f"lemma_uhat_N{N:g}")
        flags[f"lemma_uhat_N{N:g}"] = rep.passed

    res_plan = sample_plan(("A", "B", "C"), N=Ns[0], T=T, r_min=tr["r_min"], r_max=tr["residual_r_max"],
                           n_radii=tr["n_radii"], n_angles=tr["n_angles"])
    rows = [[s.real, s.imag, classify_sector(s, Ns[0]), transform_residual(traj, exp.f_true, exp.rho, s, exp.M)]
            for s in res_plan]
    _write_rows(out / "transform_residual.csv", ["s_re", "s_im", "sector", "residual"], rows)
    flags["transform_residual_finite"] = bool(np.all(np.isfinite([r[3] for r in rows])))

    asym = asymptotic_check(exp.rho, traj, exp.M, tr["s_asymptotic"])
    _dump(out / "asymptotic.json", asym.to_dict())
    flags["asymptotic"] = asym.passed

    passed = all(flags.values())
    _dump(out / "verify.json", {"pass": passed, "checks": flags})
    _dump(out / "metadata_verify.json", exp.metadata())
    return EXIT_OK if passed else EXIT_VERIFICATION


def cmd_spectrum(exp: Experiment, out: Path, jobs: int = 1) -> int:
    sp = exp.config["spectrum"]
    t = exp.config["time"]
    spec = singular_spectrum(exp.problem, sp["k"], propagator=sp["propagator"], method=sp["method"],
                             theta=t["theta"], tol=t["tol"])
    values = spec.values if spec.values is not None else np.concatenate([spec.largest, spec.smallest])
    header = ["index", "sigma"]
    cols = [values]
    if spec.closed_form is not None and spec.values is not None:
        header += ["closed_form", "scheme_form"]
        cols += [spec.closed_form, spec.scheme_form]
    if spec.values is not None:
        index = list(range(1, values.size + 1))
    else:
        n = exp.grid.size
        index = list(range(1, spec.largest.size + 1)) + list(range(n - spec.smallest.size + 1, n + 1))
    rows = [[i] + [float(c[j]) for c in cols] for j, i in enumerate(index)]
    _write_rows(out / "spectrum.csv", header, rows)
    meta = exp.metadata()
    meta["spectrum"] = {"method": spec.method, "propagator": spec.propagator,
                        "sigma_max": float(spec.largest[0]), "sigma_min": float(spec.smallest[-1]),
                        "all_positive": bool(np.all(values > 0))}
    _dump(out / "metadata_spectrum.json", meta)
    return EXIT_OK


COMMANDS = {"forward": cmd_forward, "invert": cmd_invert, "verify": cmd_verify, "spectrum": cmd_spectrum}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advdiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="TOML experiment file")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker threads for independent sub-runs")
        p.add_argument("--describe", action="store_true", help="print the resolved configuration and exit")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _fail(out: Path | None, code: int, kind: str, exc: Exception) -> int:
    payload = {"error": kind, "message": str(exc), "exit_code": code}
    if isinstance(exc, ConfigError):
        payload["key"] = exc.key
    if isinstance(exc, LinearSolveError):
        payload.update(step=exc.step, residual=exc.residual)
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    if out is not None:
        _dump(out / "error.json", payload)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = args.out
    try:
        exp = load_config(args.config, command=args.command)
    except (ConfigError, GridError, ValueError) as exc:
        if out is None and args.config is not None and not args.describe:
            out = Path("runs") / args.config.stem
        return _fail(out, EXIT_VALIDATION, "validation", exc)
    if args.describe:
        print(describe(exp))
        return EXIT_OK
    if out is None:
        out = Path(exp.config["output"]["dir"] or Path("runs") / exp.name)
        if not out.is_absolute():
            out = exp.base_dir / out if exp.config["output"]["dir"] else out
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](exp, out, args.jobs)
    except NUMERICAL_ERRORS as exc:
        return _fail(out, EXIT_NUMERICAL, "numerical", exc)
    except (ConfigError, GridError, ValueError) as exc:
        return _fail(out, EXIT_VALIDATION, "validation", exc)


if __name__ == "__main__":
    sys.exit(main())
