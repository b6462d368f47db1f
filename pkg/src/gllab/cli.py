"""Command-line entry point: ``gllab solve | verify | scenario``.

Exit codes: 0 success, 1 assertion failure, 2 usage or configuration error,
3 numerical non-convergence.

Every flag has a config-file equivalent: ``--config FILE`` reads a JSON object
with flat keys named like the flags (``theta_min`` for ``--theta-min``);
flags given on the command line override file values.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import scenarios
from .grid import CHART_IDS, ChartError

EXIT_OK, EXIT_ASSERT, EXIT_USAGE, EXIT_NONCONV = 0, 1, 2, 3

CHART_ALIASES = {"product": "product_s1_hemisphere", "ellipsoid": "solid_ellipsoid", "rz": "half_ellipse_rz"}
INITS = ("constant", "noise", "vortex", "exact")

SOLVE_DEFAULTS: dict[str, Any] = {
    "chart": "disk",
    "res": [64],
    "eps": 0.1,
    "eps_sweep": None,
    "l": 1.5,
    "init": "vortex",
    "seed": 0,
    "out": None,
    "threads": None,
    "tol": 1e-8,
    "max_steps": 20000,
    "k": 2,
    "allow_underresolved": False,
    "eta": 0.05,
    "sigma": 0.25,
    "theta_min": 1.0,
}

# vector fields accepted by ``verify stationarity``; "outward" is deliberately
# not tangent to the boundary and is rejected by the admissibility gate
VECTOR_FIELD_LIBRARY = {**scenarios.VECTOR_FIELDS, "outward": lambda x: np.array(x, dtype=float)}

VERIFY_CHECKS = ("residual", "max-modulus", "first-variation", "monotonicity", "eta-scan", "singular-set",
                 "stationarity")


class UsageError(Exception):
    """Invalid configuration; maps to exit code 2."""


# --------------------------------------------------------------------------- #
# configuration


def _csv_floats(s: str) -> list[float]:
    return [float(v) for v in s.replace(",", " ").split()]


def _csv_ints(s: str) -> list[int]:
    return [int(v) for v in s.replace(",", " ").split()]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with flat keys mirroring the flags")
    p.add_argument("--chart", help=f"chart id ({', '.join(CHART_IDS)}; aliases: {', '.join(CHART_ALIASES)})")
    p.add_argument("--res", type=_csv_ints, help="cells per axis: N or N,M[,K]")
    p.add_argument("--eps", type=float)
    p.add_argument("--eps-sweep", dest="eps_sweep", type=_csv_floats, help="comma-separated list of eps values")
    p.add_argument("--l", type=float, help="ellipse semi-axis along z")
    p.add_argument("--init", choices=INITS)
    p.add_argument("--k", type=int, help="winding of the exact product solution")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output root (default: $GLLAB_OUT or ./gllab-runs)")
    p.add_argument("--threads", type=int, help="worker threads (default: CPU count)")
    p.add_argument("--tol", type=float, help="residual tolerance")
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--theta-min", dest="theta_min", type=float)
    p.add_argument("--allow-underresolved", dest="allow_underresolved", action="store_true", default=None)


def load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def merge_config(defaults: dict[str, Any], args: argparse.Namespace, keys: Sequence[str]) -> dict[str, Any]:
    """``defaults`` <- config file <- explicit flags."""
    file_cfg = load_config(getattr(args, "config", None))
    unknown = set(file_cfg) - set(keys)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    cfg = {**defaults, **file_cfg}
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def chart_for(cfg: dict[str, Any]):
    """Build the configured chart (``res`` may be one entry or one per axis)."""
    from .grid import build_chart

    cid = CHART_ALIASES.get(cfg["chart"], cfg["chart"])
    if cid not in CHART_IDS:
        raise UsageError(f"unknown chart {cfg['chart']!r}")
    res = cfg["res"]
    res = [res] if np.isscalar(res) else list(res)
    if cid == "product_s1_hemisphere" and len(res) == 1:
        res = [res[0], 8, 8]  # the exact solutions vary only along the circle
    params: dict[str, Any] = {}
    if cid in ("half_ellipse_rz", "solid_ellipsoid"):
        params["l"] = float(cfg["l"])
    try:
        return build_chart(cid, res[0] if len(res) == 1 else tuple(res), params)
    except ChartError as exc:
        raise UsageError(str(exc)) from exc


def initial_field(chart, cfg: dict[str, Any], eps: float):
    from .solver import exact_product_solution, init_constant, init_noise, init_vortex

    init = cfg["init"]
    if init == "exact":
        try:
            return exact_product_solution(chart, int(cfg["k"]))
        except ChartError as exc:
            raise UsageError(str(exc)) from exc
    if init == "constant":
        return init_constant(chart, eps)
    if init == "noise":
        return init_noise(chart, eps, seed=int(cfg["seed"]))
    center = None
    if chart.grid.chart_id == "half_ellipse_rz":
        center = (0.5, 0.0)
    return init_vortex(chart, eps, center=center)


def validate_resolution(chart, eps: float, cfg: dict[str, Any]) -> None:
    """``eps >= 4 h`` unless ``--allow-underresolved`` (which still refuses ``eps < 2 h``)."""
    from .solver import UnderResolved, check_resolution

    if cfg["init"] == "exact":
        return  # constant-modulus solution: no core to resolve
    try:
        check_resolution(eps, chart.grid.max_spacing, bool(cfg["allow_underresolved"]))
    except UnderResolved as exc:
        raise UsageError(f"under-resolved: {exc}") from exc


def _out_dir(kind: str, cfg: dict[str, Any]) -> Path:
    """``<root>/<kind>-<hash>``; the hash ignores settings that cannot change results."""
    h = scenarios.config_hash({"command": kind, **{k: v for k, v in cfg.items() if k not in ("out", "threads")}})
    return scenarios.output_root(cfg.get("out")) / f"{kind}-{h[:12]}"


def _print_checks(checks) -> None:
    for c in checks:
        print(c.line())


# --------------------------------------------------------------------------- #
# commands


def cmd_solve(args: argparse.Namespace) -> int:
    from .field import save_field
    from .solver import SolverConfig, SolverError, gradient_flow

    cfg = merge_config(SOLVE_DEFAULTS, args, list(SOLVE_DEFAULTS))
    if cfg["init"] not in INITS:
        raise UsageError(f"unknown init {cfg['init']!r}")
    chart = chart_for(cfg)
    if cfg["init"] == "exact":
        eps_list = [float(np.exp(-int(cfg["k"]) ** 2))]
    else:
        eps_list = [float(e) for e in (cfg["eps_sweep"] or [cfg["eps"]])]
    for eps in eps_list:
        validate_resolution(chart, eps, cfg)
    initial = {eps: initial_field(chart, cfg, eps) for eps in eps_list}
    run_dir = _out_dir("solve", cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(scenarios.dump_json({"command": "solve", **cfg}))
    ctx = scenarios.RunContext("solve", cfg, run_dir)
    status = EXIT_OK
    for eps in eps_list:
        tag = f"eps{eps!r}"
        with ctx.stage(f"solve-{tag}") as st:
            f0 = initial[eps]
            scfg = SolverConfig(residual_tol=float(cfg["tol"]), max_steps=int(cfg["max_steps"]))
            try:
                f, rep = gradient_flow(f0, scfg)
            except SolverError as exc:
                f, rep = exc.field, exc.report
                rep.message = str(exc)
            save_field(f, ctx.field_path(f"u_{tag}"), command="solve")
            rep.save(ctx.table_path(f"solve_{tag}.json"), ctx.table_path(f"history_{tag}.csv"))
            st.update(epsilon=eps, steps=rep.steps, newton_iterations=rep.newton_iterations,
                      final_residual=rep.final_residual, converged=rep.converged,
                      max_modulus=float(np.max(np.abs(f.compact))), message=rep.message)
            ctx.check("residual", rep.final_residual, "<=", float(cfg["tol"]))
            if not rep.converged:
                status = EXIT_NONCONV
    _write_report(ctx, "solve")
    _print_checks(ctx.checks)
    print(f"run directory: {run_dir}")
    return status


def _write_report(ctx: scenarios.RunContext, command: str) -> dict[str, Any]:
    asserted = [c for c in ctx.checks if c.asserted]
    report = {
        "command": command,
        "config_hash": scenarios.config_hash({"command": command, **ctx.config}),
        "stages": ctx.stages,
        "checks": [c.__dict__ for c in ctx.checks],
        "passed": all(c.passed for c in asserted),
    }
    (ctx.run_dir / "report.json").write_text(scenarios.dump_json(report))
    (ctx.run_dir / "metadata.json").write_text(scenarios.dump_json({"stage_seconds": ctx.timings}))
    return report


def cmd_verify(args: argparse.Namespace) -> int:
    from .analysis import (
        AdmissibleVectorField,
        AnalysisError,
        EnergyMeasure,
        eta_scan,
        first_variation,
        monotonicity_report,
        singular_set,
        stationarity_residual,
        weighted_norm,
    )
    from .field import FieldError, load_field
    from .solver import gl_residual, residual_norm

    run_dir = Path(args.run_dir)
    keys = ["eta", "sigma", "theta_min", "seed", "tol", "vector_fields", "eta_radius", "probe_radius"]
    defaults = {"eta": 0.05, "sigma": 0.25, "theta_min": 1.0, "seed": 0, "tol": 1e-6,
                "vector_fields": list(scenarios.VECTOR_FIELDS), "eta_radius": 0.2, "probe_radius": 0.1}
    cfg = merge_config(defaults, args, keys)
    checks = args.checks or list(VERIFY_CHECKS)
    bad = [c for c in checks if c not in VERIFY_CHECKS]
    if bad:
        raise UsageError(f"unknown checks {bad}; choose from {VERIFY_CHECKS}")
    dumps = sorted((run_dir / "fields").glob("*.bin")) if (run_dir / "fields").is_dir() else []
    if args.field:
        dumps = [d for d in dumps if d.stem == args.field]
    if not dumps:
        raise UsageError(f"no field dump in {run_dir / 'fields'}")
    fields = []
    for d in dumps:
        try:
            fields.append((d.stem, load_field(d)))
        except FieldError as exc:
            raise UsageError(str(exc)) from exc

    # the admissibility gate runs before any verification
    vfs = {}
    if "stationarity" in checks:
        for name in cfg["vector_fields"]:
            if name not in VECTOR_FIELD_LIBRARY:
                raise UsageError(f"unknown vector field {name!r}")
            for stem, f in fields:
                X = AdmissibleVectorField.from_function(f.chart, VECTOR_FIELD_LIBRARY[name], name)
                if not X.admissible:
                    raise UsageError(f"vector field {name!r} rejected: boundary tangency norm "
                                     f"{X.boundary_tangency_norm:.3e} on {stem}")
                vfs[(stem, name)] = X

    ctx = scenarios.RunContext("verify", cfg, run_dir)
    for stem, f in fields:
        chart = f.chart
        if "residual" in checks:
            with ctx.stage(f"{stem}/residual"):
                r = residual_norm(chart, chart.ops.to_compact(gl_residual(f)))
                ctx.check("residual", r, "<=", float(cfg["tol"]))
        if "max-modulus" in checks:
            with ctx.stage(f"{stem}/max-modulus"):
                ctx.check("max_modulus", float(np.max(np.abs(f.compact))), "<=", 1 + 1e-8)
        if "first-variation" in checks:
            with ctx.stage(f"{stem}/first-variation"):
                rng = np.random.default_rng(int(cfg["seed"]))
                worst = 0.0
                for _ in range(10):
                    z = rng.standard_normal(chart.ops.n0) + 1j * rng.standard_normal(chart.ops.n0)
                    worst = max(worst, abs(first_variation(f, z)) / weighted_norm(chart, z))
                ctx.check("first_variation", worst, "<=", 1e-6)
        center = _vortex_center(f)
        measure = EnergyMeasure.of(f)
        h = chart.grid.max_spacing
        if "monotonicity" in checks:
            with ctx.stage(f"{stem}/monotonicity"):
                try:
                    radii = np.linspace(4 * h, 0.4, 20)
                    mr = monotonicity_report(measure, [center], radii)[0]
                    ctx.check("nondecreasing", mr.nondecreasing, "==", True)
                    ctx.check("chi_fit", mr.chi_fit, "<=", 0.05)
                except AnalysisError as exc:
                    ctx.record("skipped", str(exc))
        if "eta-scan" in checks:
            with ctx.stage(f"{stem}/eta-scan"):
                try:
                    es = eta_scan(f, float(cfg["eta_radius"]), float(cfg["sigma"]), float(cfg["eta"]))
                    ctx.check("counterexamples", es.n_counterexamples, "==", 0)
                except AnalysisError as exc:
                    ctx.record("skipped", str(exc))
        if "singular-set" in checks:
            with ctx.stage(f"{stem}/singular-set"):
                try:
                    ss = singular_set(measure, float(cfg["probe_radius"]), float(cfg["theta_min"]))
                    ctx.check("size", ss.size, ">=", 0, asserted=False)
                except (AnalysisError, ChartError) as exc:
                    ctx.record("skipped", str(exc))
        if "stationarity" in checks:
            with ctx.stage(f"{stem}/stationarity"):
                from .field import energy

                E = energy(f)
                for name in cfg["vector_fields"]:
                    X = vfs[(stem, name)]
                    r = stationarity_residual(f, X)
                    ctx.check(name, abs(r) / (E * X.c1_norm), "<=", 0.02)

    report_path = run_dir / "report.json"
    try:
        report = json.loads(report_path.read_text()) if report_path.exists() else {}
    except json.JSONDecodeError:
        report = {}
    asserted = [c for c in ctx.checks if c.asserted]
    report["verify"] = {"checks": [c.__dict__ for c in ctx.checks], "stages": ctx.stages,
                        "passed": all(c.passed for c in asserted)}
    report_path.write_text(scenarios.dump_json(report))
    _print_checks(ctx.checks)
    return EXIT_OK if report["verify"]["passed"] else EXIT_ASSERT


def _vortex_center(f) -> tuple[float, ...]:
    """Node of smallest modulus (the vortex core) as a point."""
    grid = f.chart.grid
    mod = np.where(grid.active, np.abs(f.values), np.inf)
    node = np.unravel_index(int(np.argmin(mod)), grid.dims)
    return tuple(float(v) for v in grid.coords[node])


# flags accepted by ``scenario run`` and the scenario config key they set
SCENARIO_FLAG_KEYS = {"eps": "eps", "eps_sweep": "eps_sweep", "l": "ls", "seed": "seed", "tol": "tol",
                      "eta": "eta", "sigma": "sigma", "theta_min": "theta_min", "res": "res"}


def cmd_scenario(args: argparse.Namespace) -> int:
    from .solver import SolverError

    if args.action == "list":
        for name in scenarios.list_scenarios():
            print(f"{name}\t{scenarios.get(name).description}")
        return EXIT_OK
    if not args.name:
        raise UsageError("scenario run needs a name")
    try:
        sc = scenarios.get(args.name)
    except scenarios.UnknownScenario:
        raise UsageError(f"unknown scenario {args.name!r}; known: {scenarios.list_scenarios()}") from None
    overrides = load_config(args.config)
    for flag, key in SCENARIO_FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is None:
            continue
        if key == "ls":
            v = [v]
        elif key == "res" and isinstance(v, list):
            v = v[0]
        if key not in sc.defaults:
            raise UsageError(f"--{flag.replace('_', '-')} does not apply to scenario {sc.name!r}")
        overrides[key] = v
    threads = args.threads or os.cpu_count() or 1
    try:
        scenarios.resolve_config(sc.name, overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    try:
        res = scenarios.run(sc.name, overrides, out=args.out, threads=threads)
    except scenarios.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONV if isinstance(exc.cause, SolverError) else EXIT_ASSERT
    _print_checks(res.checks)
    print(f"run directory: {res.run_dir}")
    return EXIT_OK if res.passed else EXIT_ASSERT


# --------------------------------------------------------------------------- #
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gllab", description="Ginzburg-Landau critical-point laboratory")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve for a critical point and write a run directory")
    _add_common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="re-run analysis verifiers on the fields of a run directory")
    p.add_argument("run_dir")
    p.add_argument("checks", nargs="*", help=f"subset of {', '.join(VERIFY_CHECKS)}")
    p.add_argument("--field", help="only the field dump with this stem")
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("scenario", help="list or run registered scenarios")
    p.add_argument("action", choices=("list", "run"))
    p.add_argument("name", nargs="?")
    _add_common(p)
    p.set_defaults(func=cmd_scenario)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except scenarios.ScenarioError as exc:
        from .solver import SolverError

        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONV if isinstance(exc.cause, SolverError) else EXIT_ASSERT


if __name__ == "__main__":
    sys.exit(main())
