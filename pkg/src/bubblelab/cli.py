"""Batch driver: one subcommand per module, JSON configs in, CSV/JSON out.

Every subcommand writes into ``--out`` and leaves a ``manifest.json`` there
holding the fully resolved configuration and the list of files written.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.  Errors
are reported as one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from scipy.integrate import quad

from . import __version__

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

DEFAULTS = {
    "n": 6,
    "T": 1e-2,
    "R": 20.0,
    "sigma": 0.9,
    "alpha": 0.1,
    "a": 0.3,
    "profiles": {"r_max": 1000.0, "nodes": 2048, "eigen_domain": 40.0, "eigen_nodes": 4000},
    "spectrum": {"R_domain": 40.0, "M": 4000, "coercivity_R": [10.0, 20.0, 40.0],
                 "coercivity_M": 8000},
    "residual_scan": {"T_list": [1e-2, 1e-3, 1e-4], "R_list": [10.0, 20.0, 40.0]},
    "ode": {"A_R": 1.0, "iterations": 30, "nodes": 200, "coupling": False},
    "inner": {"R_list": [10.0, 20.0, 40.0], "tau_span": 2.0, "M": 600},
    "simulate": {"stop_fraction": 0.25, "nx": 400, "nr": 200, "cells_per_lambda": 8.0,
                 "cfl": 0.1, "dt_max": 1e-4, "scheme": "pr", "regrid_every": 50,
                 "max_steps": 200000, "sup_max": 1e14},
    "rate_fit": {"window": None, "min_records": 20},
}


class ConfigError(Exception):
    """Invalid or missing configuration."""


def load_schema() -> dict:
    text = resources.files("bubblelab").joinpath("schema/config.schema.json").read_text()
    return json.loads(text)


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def resolve_config(path=None, overrides: dict | None = None) -> dict:
    """User file and flag overrides, validated, merged over the defaults."""
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
    user.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        jsonschema.validate(user, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from exc
    return _merge(DEFAULTS, user)


def _write_manifest(out: Path, command: str, cfg: dict, files: list, results: dict) -> Path:
    doc = {"command": command, "version": __version__, "config": cfg,
           "outputs": sorted(str(Path(f).relative_to(out)) for f in files),
           "results": results}
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _write_rows(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_profiles(cfg: dict, out: Path):
    from .bubble import _cfg, bubble_U, kernel_Z0, kernel_Z1_axi, pi_profile
    from .correction import correction_h
    from .profiles import RadialProfile, default_grid
    from .spectral import negative_eigenpair, tilde_Z

    dim = _cfg(cfg["n"])
    opt = cfg["profiles"]
    r = default_grid(opt["r_max"], opt["nodes"])
    profiles = [
        RadialProfile(r, bubble_U(r, dim), "U", dim.n),
        RadialProfile(r, kernel_Z0(r, dim), "Z0", dim.n),
        RadialProfile(r, kernel_Z1_axi(r, np.zeros_like(r), dim), "Z1_axis", dim.n),
        RadialProfile(r, pi_profile(r, dim), "pi", dim.n),
        correction_h(dim, opt["r_max"], opt["nodes"]),
        tilde_Z(dim, r[r > 0]),
    ]
    eig = negative_eigenpair(dim, opt["eigen_domain"], opt["eigen_nodes"])
    files = [p.to_csv(out / f"{p.name}.csv") for p in profiles]
    files.append(eig.Z.with_values(eig.Z.values, "Z").to_csv(out / "Z.csv"))
    return files, {"mu0": eig.mu0, "profiles": [Path(f).stem for f in files]}


def cmd_spectrum(cfg: dict, out: Path):
    from .spectral import coercivity_constant, negative_eigenpair

    opt = cfg["spectrum"]
    eig = negative_eigenpair(cfg["n"], opt["R_domain"], opt["M"])
    files = list(eig.to_files(out, "Z"))
    rows = []
    for R in opt["coercivity_R"]:
        c = coercivity_constant(cfg["n"], R, opt["coercivity_M"])
        rows.append((R, c.gamma_R, c.constrained_min, c.unconstrained_min))
    files.append(_write_rows(out / "coercivity.csv",
                             ["R", "gamma_R", "constrained_min", "unconstrained_min"], rows))
    res = {"mu0": eig.mu0, "gap": eig.gap, "decay_rate": eig.decay_rate,
           "sqrt_abs_mu0": float(np.sqrt(abs(eig.mu0))),
           "gamma_R": {str(r[0]): r[1] for r in rows}}
    return files, res


def cmd_residual_scan(cfg: dict, out: Path):
    from .residual import NormSpec, residual_scan

    spec = NormSpec(cfg["n"], cfg["alpha"], cfg["sigma"], cfg["a"])
    opt = cfg["residual_scan"]
    table = residual_scan(opt["T_list"], opt["R_list"], spec)
    files = [table.to_csv(out / "scan.csv")]
    res = {"spread": table.spread(), "ratios": table.ratios().tolist()}
    try:
        res["R_power"], res["R_power_stderr"] = table.R_power()
    except ValueError:
        pass
    return files, res


def cmd_ode(cfg: dict, out: Path):
    from .param_odes import solve_reduced_system

    opt = cfg["ode"]
    state = solve_reduced_system(A_R=opt["A_R"], cfg=cfg["n"], T=cfg["T"], sigma=cfg["sigma"],
                                 coupling=opt["coupling"], iterations=opt["iterations"],
                                 nodes=opt["nodes"])
    files = [state.to_csv(out / "params.csv"), state.log_json(out / "iterations.json")]
    return files, {"n1": state.n1_norms(), "iterations": len(state.log)}


def _orthogonalise(f, kernel, R, n):
    w = lambda s: s ** (n - 1)  # noqa: E731
    num = quad(lambda s: f(s) * kernel(s) * w(s), 0, 2 * R, limit=400)[0]
    den = quad(lambda s: kernel(s) ** 2 * w(s), 0, 2 * R, limit=400)[0]
    return lambda s: f(s) - num / den * kernel(s)


def cmd_inner(cfg: dict, out: Path):
    from .bubble import _cfg, bubble_dU, bubble_U_pm1, kernel_Z0
    from .inner_modes import mode0_inverse, mode0_parabolic, mode1_inverse

    dim = _cfg(cfg["n"])
    opt = cfg["inner"]
    rows = []
    for R in opt["R_list"]:
        h0 = _orthogonalise(lambda s: bubble_U_pm1(s, dim), lambda s: kernel_Z0(s, dim), R, dim.n)
        h1 = _orthogonalise(lambda s: bubble_U_pm1(s, dim), lambda s: bubble_dU(s, dim), R, dim.n)
        inv0 = mode0_inverse(h0, dim, R, a=cfg["a"])
        inv1 = mode1_inverse(h1, R, dim)
        r = np.linspace(0.05, 1.9 * R, 400)
        rows.append((R, inv0.round_trip_error(r), inv0.bound_constant,
                     inv1.round_trip_error(r), inv1.decay_constant(cfg["a"])))
    files = [_write_rows(out / "inverses.csv",
                         ["R", "mode0_round_trip", "mode0_bound", "mode1_round_trip",
                          "mode1_decay"], rows)]
    R = float(cfg["R"])
    h0 = _orthogonalise(lambda s: bubble_U_pm1(s, dim), lambda s: kernel_Z0(s, dim), R, dim.n)
    run = mode0_parabolic(lambda r, tau: h0(r), R, 1.0, 1.0 + opt["tau_span"], dim, M=opt["M"],
                          a=cfg["a"])
    files.append(run.to_csv(out / "parabolic.csv"))
    return files, {"growth_rate": run.growth_rate(), "mu0": run.mu0}


def _run_config(cfg: dict):
    from .pdesim import RunConfig

    opt = cfg["simulate"]
    keys = ("nx", "nr", "cells_per_lambda", "cfl", "dt_max", "scheme", "regrid_every",
            "max_steps", "sup_max")
    return RunConfig(**{k: opt[k] for k in keys})


def cmd_simulate(cfg: dict, out: Path):
    from .ansatz import GeometryConfig, ParamPath
    from .pdesim import run_from_ansatz

    path = ParamPath(cfg["n"], cfg["T"], cfg["sigma"])
    geom = GeometryConfig(cfg["T"])
    run = run_from_ansatz(path, geom, stop_fraction=cfg["simulate"]["stop_fraction"],
                          config=_run_config(cfg))
    run.write(out)
    files = [out / "trace.csv", out / "final.bin", out / "final.json", out / "final_axis.csv"]
    lam = np.asarray(run.trace.lam_num)
    lam0 = np.asarray(path.lam0(np.asarray(run.trace.t)))
    res = {"termination": run.trace.termination, "records": len(lam),
           "t_final": run.trace.t[-1], "lam_ratio_min": float(np.min(lam / lam0)),
           "lam_ratio_max": float(np.max(lam / lam0)), "boundary_ratio": run.boundary_ratio,
           "run_manifest": run.manifest}
    # run.write leaves its own manifest; the CLI manifest supersedes it
    return files, res


def cmd_rate_fit(cfg: dict, out: Path):
    from .pdesim import RunTrace, fit_rate

    opt = cfg["rate_fit"]
    trace_path = opt.get("trace")
    if not trace_path or not Path(trace_path).is_file():
        raise ConfigError(f"rate-fit needs an existing trace file, got {trace_path!r}")
    trace = RunTrace.from_csv(trace_path, cfg["n"])
    window = tuple(opt["window"]) if opt.get("window") else None
    fit = fit_rate(trace, cfg["n"], window, min_records=opt["min_records"])
    doc = fit.to_dict()
    target = out / "ratefit.json"
    target.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return [target], doc


COMMANDS = {
    "profiles": cmd_profiles,
    "spectrum": cmd_spectrum,
    "residual-scan": cmd_residual_scan,
    "ode": cmd_ode,
    "inner": cmd_inner,
    "simulate": cmd_simulate,
    "rate-fit": cmd_rate_fit,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bubblelab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON configuration file")
        p.add_argument("--out", type=Path, default=Path("out") / name, help="output directory")
        p.add_argument("--n", type=int)
        p.add_argument("--T", type=float)
        p.add_argument("--R", type=float)
        if name == "rate-fit":
            p.add_argument("--trace", help="trace CSV written by 'simulate'")
    return parser


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.config, {"n": args.n, "T": args.T, "R": args.R})
        if getattr(args, "trace", None):
            cfg["rate_fit"]["trace"] = args.trace
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        files, results = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except Exception as exc:  # every module failure is numerical from the CLI's view
        return _fail(EXIT_NUMERIC, exc)
    _write_manifest(out, args.command, cfg, files, results)
    print(json.dumps({"command": args.command, "out": str(out)}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
