"""Command-line harness: simulate, filter, compare, tabulate densities.

Every output file gets a JSON sidecar (``<file>.json``) recording the
configuration, library version and command line.  Exit codes: 0 ok,
2 configuration or usage error, 3 capability mismatch, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    CapabilityError,
    CflViolation,
    ConfigError,
    CtmcFilterError,
    GridTooCoarse,
    ShapeError,
    UnknownPreset,
)
from .filtering import compare, posterior_rows, run_filter, write_posterior_csv
from .lattice import LatticeProvider, build_lattice
from .model import ModelSpec
from .pde import DensityTable, PdeGrid, PdeProvider, build_provider, solve_density_system
from .sim import Scenario, preset, read_observations_csv, simulate_observations, write_observations_csv
from .telegraph import ExactTwoStateProvider
from .wonham import milstein_filter, quasi_exact_filter

METHODS = ("exact", "quasi", "milstein", "pde", "lattice")
EXIT_OK, EXIT_CONFIG, EXIT_CAPABILITY, EXIT_NUMERIC = 0, 2, 3, 4
CONFIG_KEYS = {"alpha", "Q", "p0", "sigma", "T", "n_obs", "seed", "stride"}


def _fail_config(msg):
    raise ConfigError(msg)


def load_config(path) -> tuple[Scenario, dict]:
    """Read and validate a scenario JSON file; returns the scenario and the raw dict."""
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        _fail_config(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        _fail_config(f"config {path} is not valid JSON: {exc}")
    return scenario_from_dict(raw), raw


def scenario_from_dict(raw) -> Scenario:
    if not isinstance(raw, dict):
        _fail_config("config must be a JSON object")
    missing = sorted({"alpha", "Q", "p0", "sigma", "T", "n_obs"} - raw.keys())
    if missing:
        _fail_config(f"config is missing keys: {', '.join(missing)}")
    unknown = sorted(raw.keys() - CONFIG_KEYS)
    if unknown:
        _fail_config(f"unknown config keys: {', '.join(unknown)}")
    try:
        alpha = np.asarray(raw["alpha"], dtype=float)
        q = np.asarray(raw["Q"], dtype=float)
        p0 = np.asarray(raw["p0"], dtype=float)
        sigma = float(raw["sigma"])
        T = float(raw["T"])
    except (TypeError, ValueError) as exc:
        _fail_config(f"alpha, Q, p0, sigma and T must be numeric: {exc}")
    for key in ("n_obs", "seed", "stride"):
        if key in raw and (not isinstance(raw[key], int) or isinstance(raw[key], bool)):
            _fail_config(f"{key} must be an integer")
    if alpha.ndim != 1 or p0.ndim != 1 or q.ndim != 2:
        _fail_config("alpha and p0 must be lists, Q a list of lists")
    if not (alpha.size == p0.size == q.shape[0]):
        _fail_config(f"dimension mismatch: alpha {alpha.size}, p0 {p0.size}, Q {q.shape}")
    stride = raw.get("stride", 1)
    if stride < 1:
        _fail_config("stride must be >= 1")
    try:
        model = ModelSpec.from_arrays(alpha, q, p0, sigma)
        return Scenario(model, T, raw["n_obs"], raw.get("seed", 0), stride)
    except (CtmcFilterError, ValueError) as exc:
        _fail_config(f"invalid model: {exc}")


def scenario_to_dict(sc: Scenario) -> dict:
    out = sc.model.to_dict()
    out.update(T=sc.T, n_obs=sc.n_obs, seed=sc.seed, stride=sc.stride)
    return out


def _scenario(args) -> Scenario:
    if args.config and args.preset:
        _fail_config("give either --config or --preset, not both")
    if args.config:
        sc, _ = load_config(args.config)
    elif args.preset:
        try:
            sc = preset(args.preset, sigma=args.sigma)
        except UnknownPreset:
            _fail_config(f"unknown preset {args.preset!r}")
    else:
        _fail_config("a scenario is required (--config or --preset)")
    if getattr(args, "seed", None) is not None:
        sc = Scenario(sc.model, sc.T, sc.n_obs, args.seed, sc.stride)
    return sc


def _sidecar(path, sc: Scenario, argv, **extra):
    info = {
        "library": "ctmcfilter",
        "version": __version__,
        "command": list(argv),
        "config": scenario_to_dict(sc),
    }
    info.update(extra)
    Path(str(path) + ".json").write_text(json.dumps(info, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


def _observations(args, sc: Scenario):
    if args.obs:
        try:
            obs = read_observations_csv(args.obs)
        except (OSError, KeyError, ValueError) as exc:
            _fail_config(f"cannot read observations {args.obs}: {exc}")
    else:
        obs = simulate_observations(sc)
    stride = args.stride if args.stride is not None else sc.stride
    if stride < 1:
        _fail_config("stride must be >= 1")
    return obs.strided(stride)


def make_runner(method: str, model, args):
    """Callable ``obs -> FilterTrajectory`` for one method name."""
    if method == "exact":
        if model.d != 2:
            raise CapabilityError("exact filter requires two states")
        prov = ExactTwoStateProvider.from_model(model)
        return lambda obs: run_filter(obs, prov, model.p0, "exact")
    if method == "pde":
        if getattr(args, "pde_table", None):
            table = DensityTable.load(args.pde_table)
            prov = build_provider(table, model.sigma)
        else:
            grid = (lambda h: PdeGrid.reference_scale(h)) if getattr(args, "reference_grid", False) else None
            prov = PdeProvider(model, grid, getattr(args, "pde_mode", "layer"))
        return lambda obs: run_filter(obs, prov, model.p0, "pde")
    if method == "lattice":
        n = getattr(args, "lattice_steps", 4)
        if n < 1:
            _fail_config("--lattice-steps must be >= 1")
        prov = LatticeProvider(model, n)
        return lambda obs: run_filter(obs, prov, model.p0, "lattice")
    if method == "quasi":
        mode = getattr(args, "quasi_mode", "stepwise")
        return lambda obs: _retag(quasi_exact_filter(obs, model, mode=mode), "quasi")
    if method == "milstein":
        return lambda obs: milstein_filter(obs, model)
    _fail_config(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def _retag(traj, name):
    traj.info["variant"] = traj.method
    traj.method = name
    return traj


def _truth(obs, n_rows):
    if obs.true_states is None or len(obs.true_states) != n_rows:
        return None
    return np.asarray(obs.true_states)


def _timing(traj):
    s = traj.step_seconds
    return {
        "per_step_ms_mean": float(np.mean(s) * 1e3) if s.size else 0.0,
        "per_step_ms_median": float(np.median(s) * 1e3) if s.size else 0.0,
        "per_step_ms": (s * 1e3).tolist(),
    }


def cmd_simulate(args, argv):
    sc = _scenario(args)
    obs = simulate_observations(sc)
    write_observations_csv(args.out, obs, truth=args.truth)
    _sidecar(args.out, sc, argv, n_obs=obs.n, h=obs.h)
    return EXIT_OK


def cmd_filter(args, argv):
    sc = _scenario(args)
    obs = _observations(args, sc)
    traj = make_runner(args.method, sc.model, args)(obs)
    write_posterior_csv(args.out, traj, sc.model.alpha, method=traj.method)
    _sidecar(args.out, sc, argv, method=args.method, h=obs.h, n_steps=obs.n,
             degenerate_steps=int(traj.degenerate.sum()), timing=_timing(traj), info=traj.info)
    return EXIT_OK


def cmd_compare(args, argv):
    sc = _scenario(args)
    requested = [m.strip() for m in args.methods.split(",") if m.strip()]
    methods = list(dict.fromkeys(requested))
    if len(methods) < len(requested):
        warnings.warn(f"duplicate methods dropped: {requested} -> {methods}", stacklevel=2)
    if len(methods) < 2:
        _fail_config("compare needs at least two distinct methods")
    obs = _observations(args, sc)
    runners = {m: make_runner(m, sc.model, args) for m in methods}
    trajs = {m: runners[m](obs) for m in methods}
    truth = _truth(obs, obs.n + 1)
    if truth is not None and truth[0] < 0:
        truth = truth.copy()
        truth[0] = 0  # the initial row is excluded from every statistic
    pairs = {}
    for a_i, a in enumerate(methods):
        for b in methods[a_i + 1:]:
            pairs[f"{a}|{b}"] = compare(trajs[a], trajs[b], truth, sc.model.alpha)
    report = {
        "library": "ctmcfilter",
        "version": __version__,
        "command": list(argv),
        "config": scenario_to_dict(sc),
        "h": obs.h,
        "n_steps": obs.n,
        "methods": methods,
        "pairs": pairs,
        "timing": {m: _timing(t) for m, t in trajs.items()},
    }
    Path(args.report).write_text(json.dumps(report, indent=2, default=_json_default) + "\n")
    if args.out:
        rows = None
        for m in methods:
            r = posterior_rows(trajs[m], sc.model.alpha, method=m)
            rows = r if rows is None else rows + r[1:]
        with open(args.out, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
        _sidecar(args.out, sc, argv, methods=methods)
    return EXIT_OK


def _parse_grid(text):
    try:
        lo, hi, n = text.split(",")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        _fail_config(f"--grid expects zmin,zmax,n, got {text!r}")
    if n < 10:
        raise GridTooCoarse(f"need at least 10 grid points, got {n}")
    if not hi > lo:
        _fail_config("--grid needs zmax > zmin")
    return np.linspace(lo, hi, n)


def density_columns(method, model, h, z, args):
    """Names and values of ``g_i`` and ``g_ij`` columns for one engine."""
    d = model.d
    if method == "exact":
        if d != 2:
            raise CapabilityError("exact densities require two states")
        prov = ExactTwoStateProvider.from_model(model)
    elif method == "pde":
        grid = (lambda hh: PdeGrid.reference_scale(hh)) if getattr(args, "reference_grid", False) else None
        prov = PdeProvider(model, grid, getattr(args, "pde_mode", "layer"))
    elif method == "lattice":
        prov = LatticeProvider(model, getattr(args, "lattice_steps", 4))
    else:
        _fail_config(f"densities supports exact, pde and lattice, not {method!r}")
    cond = prov.conditional_matrix(z, h)
    marg = prov.marginal_vector(z, h)
    names = [f"g_{i + 1}" for i in range(d)] + [f"g_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    cols = [marg[i] for i in range(d)] + [cond[i, j] for i in range(d) for j in range(d)]
    return names, cols, prov


def cmd_densities(args, argv):
    sc = _scenario(args)
    z = _parse_grid(args.grid)
    h = args.h if args.h is not None else sc.T / sc.n_obs
    if not h > 0:
        _fail_config("--h must be positive")
    names, cols, prov = density_columns(args.method, sc.model, h, z, args)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["z"] + names)
        for k in range(z.size):
            w.writerow([repr(float(z[k]))] + [repr(float(c[k])) for c in cols])
    extra = {}
    if args.method == "lattice":
        mix = Path(args.out).with_name(Path(args.out).stem + "_mixtures.csv")
        _write_mixtures(mix, build_lattice(sc.model, h, args.lattice_steps))
        extra["mixtures"] = str(mix)
    _sidecar(args.out, sc, argv, method=args.method, h=h, **extra)
    return EXIT_OK


def _write_mixtures(path, law):
    d = law.joint.shape[0]
    probs = law.probs
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mean"] + [f"w_{i + 1}" for i in range(d)]
                   + [f"w_{i + 1}{j + 1}" for i in range(d) for j in range(d)])
        p = law.p_lattice
        for k, m in enumerate(law.support):
            row = [repr(float(m))] + [repr(float(probs[i, k])) for i in range(d)]
            row += [repr(float(law.joint[i, j, k] / p[i, j])) if p[i, j] > 1e-14 else "0.0"
                    for i in range(d) for j in range(d)]
            w.writerow(row)


def cmd_pde_table(args, argv):
    sc = _scenario(args)
    h = args.h if args.h is not None else sc.T / sc.n_obs
    if args.reference_grid:
        grid = PdeGrid.reference_scale(h)
    elif args.nx is not None or args.nt is not None:
        base = PdeGrid.for_model(sc.model.alpha, h)
        grid = PdeGrid(base.x_min, base.x_max, args.nx or base.nx, args.nt or base.nt)
    else:
        grid = None
    table = solve_density_system(sc.model, h, grid, args.pde_mode)
    out = args.out if str(args.out).endswith(".npz") else str(args.out) + ".npz"
    table.save(out)
    col = table.mass_history.sum(axis=2)
    _sidecar(out, sc, argv, h=h, mode=table.mode,
             grid={"x_min": table.grid.x_min, "x_max": table.grid.x_max, "nx": table.grid.nx, "nt": table.grid.nt},
             max_mass_defect=float(np.abs(col - 1.0).max()))
    return EXIT_OK


def _attach_negative_values(argv):
    # argparse reads "--grid -4,4,801" as two options; glue such values on
    out, k = [], 0
    while k < len(argv):
        if argv[k] == "--grid" and k + 1 < len(argv) and argv[k + 1].startswith("-"):
            out.append(f"--grid={argv[k + 1]}")
            k += 2
        else:
            out.append(argv[k])
            k += 1
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctmcfilter", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_opts(sp):
        sp.add_argument("--config", help="scenario JSON (alpha, Q, p0, sigma, T, n_obs, seed, stride)")
        sp.add_argument("--preset", help="built-in scenario: two-state or five-state")
        sp.add_argument("--sigma", type=float, default=None, help="noise scale for presets")
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")

    def engine_opts(sp):
        sp.add_argument("--lattice-steps", type=int, default=4)
        sp.add_argument("--quasi-mode", choices=("stepwise", "oneshot"), default="stepwise")
        sp.add_argument("--pde-mode", choices=("layer", "inject", "mollified"), default="layer")
        sp.add_argument("--reference-grid", action="store_true", help="3000 nodes on [-5, 5], dt = 1/2000")

    sp = sub.add_parser("simulate", help="simulate an observation series")
    scenario_opts(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--truth", action="store_true", help="include true_state and true_J columns")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("filter", help="run one filter")
    scenario_opts(sp)
    engine_opts(sp)
    sp.add_argument("--obs", help="observation CSV (simulated from the scenario if omitted)")
    sp.add_argument("--method", choices=METHODS, required=True)
    sp.add_argument("--stride", type=int, default=None)
    sp.add_argument("--pde-table", help="prebuilt table from the pde-table command")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("compare", help="run several filters on one series")
    scenario_opts(sp)
    engine_opts(sp)
    sp.add_argument("--obs")
    sp.add_argument("--methods", required=True, help="comma-separated, e.g. exact,pde,lattice")
    sp.add_argument("--stride", type=int, default=None)
    sp.add_argument("--report", required=True)
    sp.add_argument("--out", help="long-format CSV of all posteriors")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("densities", help="tabulate g_i and g_ij on a z-grid")
    scenario_opts(sp)
    engine_opts(sp)
    sp.add_argument("--method", choices=("exact", "pde", "lattice"), required=True)
    sp.add_argument("--h", type=float, default=None)
    sp.add_argument("--grid", required=True, help="zmin,zmax,n")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_densities)

    sp = sub.add_parser("pde-table", help="solve the transport system and store the table")
    scenario_opts(sp)
    sp.add_argument("--h", type=float, default=None)
    sp.add_argument("--nx", type=int, default=None)
    sp.add_argument("--nt", type=int, default=None)
    sp.add_argument("--reference-grid", action="store_true")
    sp.add_argument("--pde-mode", choices=("layer", "inject", "mollified"), default="layer")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_pde_table)
    return p


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, CapabilityError):
        return EXIT_CAPABILITY
    if isinstance(exc, (ConfigError, GridTooCoarse, CflViolation, ShapeError, UnknownPreset, OSError)):
        return EXIT_CONFIG
    return EXIT_NUMERIC


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    argv = _attach_negative_values(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args, argv)
    except (CtmcFilterError, OSError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"ctmcfilter: error: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
