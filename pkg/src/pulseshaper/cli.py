"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 partial result.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .integrate import IntegrationError, IntegratorSettings, integrate_flow, write_trajectory_csv
from .koopman import BistableSystem, EigenfunctionEvaluator, prepare
from .levelset import (
    GridSpec,
    LevelCurve,
    extract_level_contours_grid,
    extract_separatrix_grid,
    sweep,
    trace_level_curve_monotone,
    trace_separatrix_monotone,
)
from .model import (
    FAMILIES,
    ConeSpec,
    ModelConfigError,
    Pulse,
    _rebuild,
    build_model,
    load_model,
    model_config,
)
from .monotone import check_kamke, search_cones
from .spectral import FixedPointError, EigenDecompositionError, find_fixed_point, fixed_point_report
from .switching import DEFAULT_EPS, alpha_for_time, write_switch_map_csv

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_PARTIAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# argument helpers

def _resolve_model(spec: str):
    path = Path(spec)
    if path.is_file():
        return load_model(path.read_text())
    if spec in FAMILIES:
        return build_model(spec)
    raise UsageError(f"--model must be a config file or one of {sorted(FAMILIES)}")


def _floats(text: str, n: int | None = None, what: str = "value") -> list:
    try:
        vals = [float(v) for v in text.replace(" ", "").split(",") if v != ""]
    except ValueError:
        raise UsageError(f"cannot parse {what} {text!r}") from None
    if n is not None and len(vals) != n:
        raise UsageError(f"{what} needs {n} comma-separated numbers")
    return vals


def _range(text: str, what: str):
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"{what} must look like lo:hi:count")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UsageError(f"cannot parse {what} {text!r}") from None
    return lo, hi, n


def _clean(obj):
    """Make an object JSON-safe: non-finite floats become strings."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def _emit(text: str, out: str | None) -> list:
    if out is None:
        sys.stdout.write(text)
        return []
    Path(out).write_text(text)
    return [out]


def _settings_of(args) -> dict:
    skip = {"func", "command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _write_manifest(args, model, outputs, started) -> None:
    if not outputs:
        return
    manifest = {
        "command": args.command,
        "model_config": model_config(model),
        "settings": _settings_of(args),
        "outputs": outputs,
        "wall_time": time.perf_counter() - started,
        "version": __version__,
    }
    Path(f"{outputs[0]}.manifest.json").write_text(_dump(manifest))


def _system(model) -> BistableSystem:
    return prepare(model)


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args, model) -> tuple[int, list]:
    if args.x0 in ("source", "target"):
        system = _system(model)
        x0 = getattr(system, args.x0).location
    else:
        x0 = np.array(_floats(args.x0, model.dim, "--x0"))
    mu, tau = _floats(args.pulse, 2, "--pulse")
    pulse = Pulse(mu, tau)
    if not args.t_end > 0:
        raise UsageError("--t-end must be positive")
    settings = IntegratorSettings(rtol=args.rtol, atol=args.atol, stiff=True if args.stiff else None)
    try:
        traj = integrate_flow(model, x0, pulse, args.t_end, settings)
    except IntegrationError as exc:
        t = "?" if exc.time is None else f"{exc.time:.6g}"
        print(f"integration failed at t={t}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC, []
    write_trajectory_csv(args.out, traj)
    return EXIT_OK, [args.out]


def cmd_fixed_points(args, model) -> tuple[int, list]:
    if args.guesses:
        try:
            guesses = json.loads(Path(args.guesses).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read --guesses: {exc}") from None
        if not isinstance(guesses, list):
            raise UsageError("--guesses must hold a JSON list of state vectors")
    else:
        guesses = [model.source_guess.tolist(), model.target_guess.tolist()]
    entries, stable = [], []
    for g in guesses:
        try:
            g = np.asarray(g, dtype=float)
            if g.shape != (model.dim,):
                raise UsageError(f"guess {g.tolist()} does not have {model.dim} components")
            fp = find_fixed_point(model, g, args.newton_tol)
        except (FixedPointError, EigenDecompositionError) as exc:
            entries.append({"guess": g.tolist(), "error": str(exc)})
            continue
        rep = fixed_point_report(fp)
        rep["guess"] = g.tolist()
        entries.append(rep)
        if fp.is_stable and not any(np.allclose(fp.location, s, rtol=1e-8, atol=1e-10)
                                    for s in stable):
            stable.append(fp.location)
    doc = {"model": model.name, "fixed_points": entries, "stable_count": len(stable)}
    outputs = _emit(_dump(doc), args.out)
    return (EXIT_OK if len(stable) >= 2 else EXIT_PARTIAL), outputs


def _grid_spec(args) -> GridSpec:
    try:
        return GridSpec(_range(args.mu, "--mu"), _range(args.tau, "--tau"), args.log_axes)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_switch_map(args, model) -> tuple[int, list]:
    if not args.eps > 0:
        raise UsageError("--eps must be positive")
    spec = _grid_spec(args)
    system = _system(model)
    grid = sweep(system, spec, args.eps, jobs=args.jobs)
    write_switch_map_csv(args.out, grid.flat())
    return EXIT_OK, [args.out]


def _is_monotone(model, system) -> bool:
    if system.target.complex_dominant:
        return False
    if model.declared_monotone:
        return True
    return check_kamke(model, n_samples=2000).passed


def cmd_level_sets(args, model) -> tuple[int, list]:
    if not args.eps > 0:
        raise UsageError("--eps must be positive")
    if not args.tol > 0:
        raise UsageError("--tol must be positive")
    system = _system(model)
    if args.times is not None:
        alphas = [alpha_for_time(T, system.target.rate, args.eps) for T in args.times]
    else:
        alphas = list(args.alphas or [])
    if any(not a > 0 for a in alphas):
        raise UsageError("levels must be positive")
    if not alphas and not args.separatrix:
        raise UsageError("give --alphas, --times or --separatrix")
    branches = ["lower", "upper"] if args.branch == "both" else [args.branch]
    curves: list[LevelCurve] = []
    monotone = _is_monotone(model, system)
    if monotone:
        if not model.declared_monotone:
            # sampled Kamke pass: trace as monotone
            system = BistableSystem(_rebuild(model, declared_monotone=True),
                                    system.source, system.target, system.settings)
        lo, hi, n = _range(args.mu, "--mu")
        mus = np.linspace(lo, hi, n)
        bracket = tuple(_floats(args.tau_bracket, 2, "--tau-bracket"))
        ev = EigenfunctionEvaluator.for_target(system)
        for a in alphas:
            for b in branches:
                curves.append(trace_level_curve_monotone(system, a, b, mus, bracket, args.tol,
                                                         args.eps, evaluator=ev, jobs=args.jobs))
        if args.separatrix:
            curves.append(trace_separatrix_monotone(system, mus, bracket, args.tol, jobs=args.jobs))
    else:
        grid = sweep(system, _grid_spec(args), args.eps, jobs=args.jobs)
        curves.extend(extract_level_contours_grid(grid, alphas))
        if args.separatrix:
            curves.extend(extract_separatrix_grid(grid))
    doc = {
        "model": model.name,
        "method": "monotone_bisection" if monotone else "grid_contours",
        "eps": args.eps,
        "curves": [c.to_dict() for c in curves],
    }
    return EXIT_OK, _emit(_dump(doc), args.out)


def cmd_monotone(args, model) -> tuple[int, list]:
    kw = dict(n_samples=args.samples, kamke_tol=args.kamke_tol, u_max=args.u_max)
    if args.samples < 1:
        raise UsageError("--samples must be positive")
    if args.cone == "auto":
        if model.dim > 8:
            raise UsageError("--cone auto is limited to n <= 8")
        passing, reports = search_cones(model, **kw)
        worst = min(reports, key=lambda r: r.worst_violation)
        doc = {
            "mode": "auto",
            "signatures_checked": len(reports),
            "passing": [list(r.cone.signs) for r in passing],
            "best": worst.to_dict(),
        }
    else:
        if args.cone == "model":
            cone = model.cone
        elif args.cone == "standard":
            cone = ConeSpec.standard(model.dim)
        else:
            signs = _floats(args.cone, model.dim, "--cone")
            try:
                cone = ConeSpec(tuple(int(s) for s in signs))
            except ValueError as exc:
                raise UsageError(str(exc)) from None
        doc = check_kamke(model, cone=cone, **kw).to_dict()
        doc["mode"] = "single"
    return EXIT_OK, _emit(_dump(doc), args.out)


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pulseshaper", description="Pulse-driven switching of bistable ODE systems.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def common(sp):
        sp.add_argument("--model", required=True, help="model config file or family name")
        sp.add_argument("--jobs", type=int, default=None,
                        help="worker threads (default: $PULSESHAPER_JOBS or CPU count)")

    s = sub.add_parser("simulate", help="integrate one pulsed trajectory")
    common(s)
    s.add_argument("--x0", required=True, help="comma list, or 'source' / 'target'")
    s.add_argument("--pulse", default="0,0", help="mu,tau")
    s.add_argument("--t-end", type=float, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--stiff", action="store_true")
    s.add_argument("--rtol", type=float, default=1e-8)
    s.add_argument("--atol", type=float, default=1e-10)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fixed-points", help="locate the stable equilibria")
    common(s)
    s.add_argument("--guesses", help="JSON file with a list of initial guesses")
    s.add_argument("--newton-tol", type=float, default=1e-6)
    s.add_argument("--out")
    s.set_defaults(func=cmd_fixed_points)

    def grid(sp, mu_default="0.05:20:20"):
        sp.add_argument("--mu", default=mu_default, help="lo:hi:count")
        sp.add_argument("--tau", default="0.05:20:20", help="lo:hi:count")
        sp.add_argument("--log-axes", action="store_true")
        sp.add_argument("--eps", type=float, default=DEFAULT_EPS)

    s = sub.add_parser("switch-map", help="sweep r(mu, tau) on a grid")
    common(s)
    grid(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_switch_map)

    s = sub.add_parser("level-sets", help="trace level curves of r")
    common(s)
    grid(s, "0.05:20:30")
    lv = s.add_mutually_exclusive_group()
    lv.add_argument("--alphas", type=float, nargs="+")
    lv.add_argument("--times", type=float, nargs="+", help="convergence times, mapped to alpha")
    s.add_argument("--branch", choices=("lower", "upper", "both"), default="both")
    s.add_argument("--separatrix", action="store_true")
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("--tau-bracket", default="0.05,20", help="lo,hi for monotone bisection")
    s.add_argument("--out")
    s.set_defaults(func=cmd_level_sets)

    s = sub.add_parser("monotone-check", help="sample the Kamke conditions")
    common(s)
    s.add_argument("--samples", type=int, default=10_000)
    s.add_argument("--cone", default="model", help="auto | standard | model | comma signature")
    s.add_argument("--kamke-tol", type=float, default=1e-9)
    s.add_argument("--u-max", type=float, default=20.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_monotone)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs is not None and args.jobs < 1:
        parser.error("--jobs must be at least 1")
    started = time.perf_counter()
    try:
        model = _resolve_model(args.model)
        code, outputs = args.func(args, model)
    except (UsageError, ModelConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"pulseshaper: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FixedPointError, EigenDecompositionError, IntegrationError, ValueError) as exc:
        print(f"pulseshaper: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _write_manifest(args, model, outputs, started)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
