"""Named, reproducible experiment pipelines with built-in oracles.

A scenario is a fixed configuration plus an ordered list of stages.  Running
it writes a run directory::

    config.json     the complete parameter set (flat keys)
    report.json     stage outputs and checks; byte-stable across reruns
    metadata.json   timestamps, wall times, thread count, library versions
    fields/         field dumps (``.bin`` + ``.json`` sidecar)
    tables/         CSV tables

Every entry of ``report["checks"]`` carries ``asserted``: asserted checks
decide ``report["passed"]``; the rest are diagnostics, recorded, not asserted.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterator

import numpy as np

from . import __version__

CONFIG_VERSION = 1
DEFAULT_OUT = "gllab-runs"


class ScenarioError(RuntimeError):
    """A stage failed; ``stage`` names it and ``cause`` is the original exception."""

    def __init__(self, scenario: str, stage: str, cause: BaseException):
        super().__init__(f"scenario {scenario!r} failed in stage {stage!r}: {cause}")
        self.scenario = scenario
        self.stage = stage
        self.cause = cause


class UnknownScenario(KeyError):
    pass


# --------------------------------------------------------------------------- #
# plumbing


def to_jsonable(v: Any) -> Any:
    """Plain JSON types; non-finite floats become strings so the file stays strict JSON."""
    if isinstance(v, dict):
        return {str(k): to_jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [to_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return to_jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        x = float(v)
        return x if np.isfinite(x) else repr(x)
    if v is None or isinstance(v, str):
        return v
    return str(v)


def dump_json(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def config_hash(config: dict[str, Any]) -> str:
    canon = json.dumps(to_jsonable(config), sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canon.encode()).hexdigest()


def output_root(out: str | os.PathLike | None = None) -> Path:
    """``out`` if given, else ``$GLLAB_OUT``, else ``./gllab-runs``."""
    if out is not None:
        return Path(out)
    return Path(os.environ.get("GLLAB_OUT", DEFAULT_OUT))


@dataclass
class Check:
    name: str
    stage: str
    value: Any
    threshold: Any
    relation: str
    passed: bool
    asserted: bool = True

    def line(self) -> str:
        tag = ("PASS" if self.passed else "FAIL") if self.asserted else "INFO"
        return f"[{tag}] {self.stage}/{self.name}: {self.value!r} {self.relation} {self.threshold!r}"


_RELATIONS: dict[str, Callable[[Any, Any], bool]] = {
    "<=": lambda v, t: v <= t,
    ">=": lambda v, t: v >= t,
    "==": lambda v, t: v == t,
    "in": lambda v, t: t[0] <= v <= t[1],
}


@dataclass
class RunContext:
    """Mutable state of one scenario run; stages write through it."""

    name: str
    config: dict[str, Any]
    run_dir: Path
    threads: int = 1
    checks: list[Check] = field(default_factory=list)
    stages: dict[str, Any] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    current: str = ""

    @contextmanager
    def stage(self, name: str) -> Iterator[dict[str, Any]]:
        self.current = name
        data = self.stages.setdefault(name, {})
        t0 = time.perf_counter()
        try:
            yield data
        except ScenarioError:
            raise
        except Exception as exc:
            raise ScenarioError(self.name, name, exc) from exc
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    def check(self, name: str, value: Any, relation: str, threshold: Any, asserted: bool = True) -> bool:
        v = to_jsonable(value)
        ok = bool(_RELATIONS[relation](value, threshold)) if value is not None else False
        self.checks.append(Check(name, self.current, v, to_jsonable(threshold), relation, ok, asserted))
        return ok

    def record(self, name: str, value: Any) -> None:
        """Diagnostic value: recorded, not asserted."""
        self.stages.setdefault(self.current, {})[name] = to_jsonable(value)

    def field_path(self, stem: str) -> Path:
        p = self.run_dir / "fields"
        p.mkdir(parents=True, exist_ok=True)
        return p / stem

    def table_path(self, name: str) -> Path:
        p = self.run_dir / "tables"
        p.mkdir(parents=True, exist_ok=True)
        return p / name


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    defaults: dict[str, Any]
    stages: tuple[str, ...]
    body: Callable[[RunContext], None]
    oracle: str = ""


@dataclass
class RunResult:
    run_dir: Path
    report: dict[str, Any]
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return bool(self.report["passed"])


REGISTRY: dict[str, Scenario] = {}


def register(s: Scenario) -> Scenario:
    REGISTRY[s.name] = s
    return s


def list_scenarios() -> list[str]:
    return list(REGISTRY)


def get(name: str) -> Scenario:
    try:
        return REGISTRY[name]
    except KeyError:
        raise UnknownScenario(name) from None


def resolve_config(name: str, overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    """Scenario defaults updated by ``overrides``; unknown keys are an error."""
    sc = get(name)
    cfg = dict(sc.defaults)
    for k, v in (overrides or {}).items():
        if k not in cfg:
            raise ValueError(f"scenario {name!r} has no config key {k!r} (known: {sorted(cfg)})")
        cfg[k] = v
    return cfg


def run(name: str, overrides: dict[str, Any] | None = None, out: str | os.PathLike | None = None,
        threads: int = 1, run_dir: str | os.PathLike | None = None) -> RunResult:
    """Run a registered scenario and write its run directory.

    The report depends only on the configuration: thread count, timings and
    timestamps go to ``metadata.json``.
    """
    sc = get(name)
    cfg = resolve_config(name, overrides)
    h = config_hash({"scenario": name, "config_version": CONFIG_VERSION, **cfg})
    rdir = Path(run_dir) if run_dir is not None else output_root(out) / f"{name}-{h[:12]}"
    rdir.mkdir(parents=True, exist_ok=True)
    (rdir / "config.json").write_text(dump_json({"scenario": name, "config_version": CONFIG_VERSION, **cfg}))
    ctx = RunContext(name, cfg, rdir, threads=max(1, int(threads)))
    started = datetime.now(timezone.utc).isoformat()
    error: ScenarioError | None = None
    try:
        sc.body(ctx)
    except ScenarioError as exc:
        error = exc
    asserted = [c for c in ctx.checks if c.asserted]
    report = {
        "scenario": name,
        "config_version": CONFIG_VERSION,
        "config_hash": h,
        "oracle": sc.oracle,
        "stages": ctx.stages,
        "checks": [c.__dict__ for c in ctx.checks],
        "n_asserted": len(asserted),
        "n_failed": sum(not c.passed for c in asserted),
        "passed": error is None and all(c.passed for c in asserted),
        "error": None if error is None else {"stage": error.stage, "type": type(error.cause).__name__,
                                             "message": str(error.cause)},
    }
    (rdir / "report.json").write_text(dump_json(report))
    meta = {
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "stage_seconds": ctx.timings,
        "threads": ctx.threads,
        "gllab": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "platform": platform.platform(),
    }
    (rdir / "metadata.json").write_text(dump_json(meta))
    result = RunResult(rdir, report, ctx.checks)
    if error is not None:
        raise error
    return result


# --------------------------------------------------------------------------- #
# exact-product


def _exact_product(ctx: RunContext) -> None:
    from .field import energy, save_field
    from .grid import build_chart
    from .hodge import DiscreteOneForm, extract_psi, hodge_decompose
    from .solver import SolverConfig, exact_product_solution, gl_residual, gradient_flow
    from .analysis import write_profile_csv

    cfg = ctx.config
    cross = int(cfg["cross_res"])
    rows = []
    for k in cfg["ks"]:
        tag = f"k{k}"
        with ctx.stage(f"residual-{tag}") as st:
            res, fields = [], {}
            for n in cfg["resolutions"]:
                chart = build_chart("product_s1_hemisphere", (int(n), cross, cross), {})
                f = exact_product_solution(chart, int(k))
                fields[n] = f
                r = gl_residual(f)
                res.append(float(np.max(np.abs(r[chart.grid.active]))))
            eps = fields[cfg["resolutions"][0]].epsilon
            st["epsilon"] = eps
            st["residual_max"] = res
            ratios = [res[i] / res[i + 1] for i in range(len(res) - 1)]
            st["ratios"] = ratios
            for i, q in enumerate(ratios):
                ctx.check(f"residual_ratio_{cfg['resolutions'][i]}_{cfg['resolutions'][i + 1]}", q, "in",
                          (cfg["ratio_band"][0], cfg["ratio_band"][1]))
        with ctx.stage(f"energy-{tag}") as st:
            exact = 4 * np.pi**2 * ((1 - k * k * eps * eps) * k * k / 2 + k**4 * eps**2 / 4)
            st["analytic"] = exact
            errs = {}
            for n, f in fields.items():
                e = energy(f)
                errs[str(n)] = abs(e - exact) / exact
                rows.append({"k": k, "resolution": n, "residual_max": res[list(fields).index(n)],
                             "energy": e, "analytic": exact, "relative_error": errs[str(n)]})
            st["relative_error"] = errs
            finest = str(cfg["resolutions"][-1])
            ctx.check("energy_relative_error", errs[finest], "<=", cfg["energy_rtol"])
            f = fields[cfg["resolutions"][-1]]
            save_field(f, ctx.field_path(f"exact_{tag}"), k=k)
        with ctx.stage(f"solve-{tag}") as st:
            f, srep = gradient_flow(f, SolverConfig(residual_tol=cfg["solve_tol"]))
            st.update(steps=srep.steps, converged=srep.converged, final_residual=srep.final_residual)
            ctx.check("flow_steps_from_exact", srep.steps, "<=", 5)
        with ctx.stage(f"psi-{tag}") as st:
            ex = extract_psi([f], residual_tol=cfg["psi_residual_tol"])[0]
            chart = f.chart
            ds = DiscreteOneForm.from_function(chart, _ds_field)
            rel = (ex.psi - ds).norm() / ds.norm()
            mu = energy(f) / abs(np.log(eps))
            diffuse = ex.psi.integral_half_norm2()
            gap = abs(mu - diffuse)
            st.update(harmonic_defect=ex.harmonic_defect, psi_minus_ds=rel, mu_total=mu,
                      psi_half_norm2=diffuse, measure_gap=gap)
            ctx.check("harmonic_defect", ex.harmonic_defect, "<=", 1e-4)
            ctx.check("psi_minus_ds", rel, "<=", 2 * k * k * eps * eps + 1e-4)
            ctx.check("measure_gap_fraction", gap / mu, "<=", 0.01)
    with ctx.stage("hodge-ds") as st:
        chart = build_chart("product_s1_hemisphere", (int(cfg["resolutions"][-1]), cross, cross), {})
        ds = DiscreteOneForm.from_function(chart, _ds_field)
        split = hodge_decompose(ds)
        rel = (split.harmonic - ds).norm() / ds.norm()
        st.update(recovery_error=rel, orthogonality=split.orthogonality())
        ctx.check("ds_recovery", rel, "<=", 1e-6)
        ctx.check("orthogonality", max(split.orthogonality().values()), "<=", 1e-8)
    write_profile_csv(ctx.table_path("exact_product.csv"), rows,
                      ["k", "resolution", "residual_max", "energy", "analytic", "relative_error"])


def _ds_field(x: np.ndarray) -> np.ndarray:
    out = np.zeros(x.shape)
    out[..., 0] = 1.0
    return out


register(Scenario(
    name="exact-product",
    description="constant-modulus solutions e^{iks} on S^1 x hemisphere: residual order, energy, psi = ds",
    defaults={"ks": [2, 3], "resolutions": [64, 128], "cross_res": 8, "ratio_band": [3.5, 4.5],
              "energy_rtol": 0.005, "psi_residual_tol": 1e-6, "solve_tol": 1e-6},
    stages=("residual", "energy", "psi", "solve", "hodge-ds"),
    body=_exact_product,
    oracle="u_k = (1 - k^2 eps_k^2)^{1/2} e^{iks}, eps_k = e^{-k^2}; "
           "E = 4 pi^2 [(1 - k^2 eps^2) k^2 / 2 + k^4 eps^2 / 4]",
))


# --------------------------------------------------------------------------- #
# disk-vortex


def _bump(x: np.ndarray, c=(0.0, 0.0), rho: float = 0.8) -> np.ndarray:
    d = np.hypot(x[..., 0] - c[0], x[..., 1] - c[1]) / rho
    out = np.zeros_like(d)
    m = d < 1
    out[m] = np.exp(1 - 1 / (1 - d[m] ** 2))
    return out


VECTOR_FIELDS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "radial": lambda x: _bump(x)[..., None] * x,
    "rotation": lambda x: np.stack([-x[..., 1], x[..., 0]], -1),
    "translation": lambda x: _bump(x, (0.2, 0.1), 0.6)[..., None] * np.array([1.0, 0.0]),
    "shear": lambda x: _bump(x)[..., None] * np.stack([x[..., 1], 0 * x[..., 0]], -1),
    "hyperbolic": lambda x: _bump(x)[..., None] * np.stack([x[..., 0], -x[..., 1]], -1),
}


def disk_chart(eps: float, cells_per_eps: float, radius: float = 1.0):
    from .grid import build_chart

    n = int(round(2 * radius / (eps / cells_per_eps)))
    return build_chart("disk", n, {"radius": radius})


def solve_disk_vortex(eps: float, cells_per_eps: float, tol: float = 1e-8):
    from .solver import SolverConfig, gradient_flow, init_vortex

    chart = disk_chart(eps, cells_per_eps)
    return gradient_flow(init_vortex(chart, eps, center=(0.0, 0.0)), SolverConfig(residual_tol=tol))


def _disk_vortex(ctx: RunContext) -> None:
    from .analysis import (
        AdmissibleVectorField,
        EnergyMeasure,
        courant_lebesgue_search,
        eta_scan,
        first_variation,
        monotonicity_report,
        singular_set,
        stationarity_residual,
        weighted_norm,
        write_profile_csv,
    )
    from .field import energy, grad_norm2, save_field
    from .solver import NonConvergence

    cfg = ctx.config
    eps = float(cfg["eps"])
    with ctx.stage("solve") as st:
        f, srep = solve_disk_vortex(eps, cfg["cells_per_eps"], cfg["tol"])
        if not srep.converged:
            raise NonConvergence(f"disk vortex stalled at residual {srep.final_residual:.3e}", srep, f)
        srep.save(ctx.table_path("solve_report.json"), ctx.table_path("solve_history.csv"))
        save_field(f, ctx.field_path("u"), scenario="disk-vortex")
        mod = float(np.max(np.abs(f.compact)))
        st.update(steps=srep.steps, newton_iterations=srep.newton_iterations,
                  final_residual=srep.final_residual, max_modulus=mod, energy=energy(f))
        ctx.check("residual", srep.final_residual, "<=", 1e-6)
        ctx.check("max_modulus", mod, "<=", 1 + 1e-8)
    with ctx.stage("first-variation") as st:
        rng = np.random.default_rng(int(cfg["seed"]))
        worst = 0.0
        for _ in range(int(cfg["n_zeta"])):
            z = rng.standard_normal(f.chart.ops.n0) + 1j * rng.standard_normal(f.chart.ops.n0)
            worst = max(worst, abs(first_variation(f, z)) / weighted_norm(f.chart, z))
        st["max_ratio"] = worst
        ctx.check("first_variation", worst, "<=", 1e-6)
    chart = f.chart
    h = float(chart.grid.max_spacing)
    measure = EnergyMeasure.of(f)
    with ctx.stage("monotonicity") as st:
        radii = np.linspace(4 * h, 0.4, int(cfg["n_radii"]))
        mr = monotonicity_report(measure, [(0.0, 0.0)], radii, slack=0.02, chi_flag=cfg["chi_max"])[0]
        st.update(chi_fit=mr.chi_fit, nondecreasing=mr.nondecreasing)
        ctx.check("nondecreasing", mr.nondecreasing, "==", True)
        ctx.check("chi_fit", mr.chi_fit, "<=", cfg["chi_max"])
        write_profile_csv(ctx.table_path("monotonicity.csv"),
                          [{"radius": r, "value": v} for r, v in zip(mr.profile.radii, mr.profile.values)],
                          ["radius", "value"])
    with ctx.stage("courant-lebesgue") as st:
        rows, fits = [], {}
        for e in cfg["cl_eps_sweep"]:
            g = f if e == eps else solve_disk_vortex(float(e), cfg["cells_per_eps"], cfg["tol"])[0]
            cl = courant_lebesgue_search(g, (0.0, 0.0))
            fits[repr(float(e))] = cl.c_fit
            grad_eps = float(e) * float(np.sqrt(np.max(np.where(g.chart.grid.active, grad_norm2(g), 0.0))))
            rows.append({"eps": float(e), "radius": cl.radius, "value": cl.value, "bulk": cl.bulk,
                         "c_fit": cl.c_fit, "sup_grad_times_eps": grad_eps})
        cs = list(fits.values())
        spread = max(cs) / min(cs)
        c_ref = max(cs)
        within = all(r["value"] <= c_ref * r["bulk"] / abs(np.log(r["eps"])) * (1 + 1e-12) for r in rows)
        st.update(c_fit=fits, spread=spread, rows=rows)
        ctx.check("c_fit_spread", spread, "<=", 2.0)
        ctx.check("radius_found_for_common_C", within, "==", True)
        # gradient bound |grad u| <= C / eps: its constant is unknown, so only the observed values are reported
        ctx.check("sup_grad_times_eps", max(r["sup_grad_times_eps"] for r in rows), "<=", float("inf"),
                  asserted=False)
        write_profile_csv(ctx.table_path("courant_lebesgue.csv"), rows,
                          ["eps", "radius", "value", "bulk", "c_fit", "sup_grad_times_eps"])
    with ctx.stage("eta-scan") as st:
        es = eta_scan(f, cfg["eta_radius"], sigma=cfg["sigma"], eta=cfg["eta"])
        st.update(small_energy_centers=es.n_small_energy, counterexamples=es.n_counterexamples)
        ctx.check("counterexamples", es.n_counterexamples, "==", 0)
        ctx.check("small_energy_centers", es.n_small_energy, ">=", 1, asserted=False)
    with ctx.stage("singular-set") as st:
        ss = singular_set(measure, cfg["probe_radius"], cfg["theta_min"])
        st.update(size=ss.size, max_density=float(np.nanmax(ss.density)),
                  nodes=[list(map(int, n)) for n in ss.nodes()[:64]])
        ctx.check("singular_nodes", ss.size, ">=", 1, asserted=False)
    with ctx.stage("stationarity") as st:
        fine = solve_disk_vortex(eps, 2 * cfg["cells_per_eps"], cfg["tol"])[0]
        rows = []
        for name, fn in VECTOR_FIELDS.items():
            vals = []
            for g in (f, fine):
                X = AdmissibleVectorField.from_function(g.chart, fn, name)
                E = energy(g)
                vals.append((stationarity_residual(g, X), E * X.c1_norm))
            (r0, s0), (r1, s1) = vals
            rows.append({"field": name, "residual": r0, "scale": s0, "residual_fine": r1, "scale_fine": s1})
            ctx.check(f"{name}_relative", abs(r0) / s0, "<=", cfg["stat_tol"])
            # second order: the residual drops ~4x when h halves (up to roundoff for symmetric fields)
            ctx.check(f"{name}_refinement", abs(r1), "<=", max(abs(r0) / 3.0, 1e-9 * s1))
        st["fields"] = rows
        write_profile_csv(ctx.table_path("stationarity.csv"), rows,
                          ["field", "residual", "scale", "residual_fine", "scale_fine"])


register(Scenario(
    name="disk-vortex",
    description="degree-one Neumann vortex on the unit disk: criticality, monotonicity, "
                "Courant-Lebesgue, eta scan, singular set, stationarity",
    defaults={"eps": 0.05, "cells_per_eps": 4, "tol": 1e-8, "seed": 0, "n_zeta": 10, "n_radii": 20,
              "chi_max": 0.05, "cl_eps_sweep": [0.1, 0.05, 0.025], "eta": 0.05, "sigma": 0.25,
              "eta_radius": 0.2, "probe_radius": 0.1, "theta_min": 1.0, "stat_tol": 0.02},
    stages=("solve", "first-variation", "monotonicity", "courant-lebesgue", "eta-scan", "singular-set",
            "stationarity"),
    body=_disk_vortex,
))


# --------------------------------------------------------------------------- #
# ellipsoid-minmax


def _ellipsoid_minmax(ctx: RunContext) -> None:
    from .field import save_field
    from .minmax import mountain_pass, sweep_family

    cfg = ctx.config
    rows = []
    for ell in cfg["ls"]:
        asserted = float(ell) in [float(v) for v in cfg["asserted_ls"]]
        tubes = []
        for eps in cfg["eps_sweep"]:
            tag = f"l{ell}-eps{eps}"
            with ctx.stage(f"minmax-{tag}") as st:
                fam = sweep_family(float(eps), float(ell), cfg["n_radial"], cfg["n_angular"])
                rep = mountain_pass(fam, flow_budget=int(cfg["flow_budget"]), threads=ctx.threads)
                rep.write_trajectories(ctx.table_path(f"trajectories_{tag}.csv"))
                d = rep.to_dict()
                st.update(d)
                ctx.check("c_over_log_eps", rep.energy_over_log_eps, "in", tuple(cfg["band"]), asserted)
                ctx.check("polish_converged", rep.polish_converged, "==", True, asserted)
                if rep.polished is not None:
                    save_field(rep.polished, ctx.field_path(f"saddle_{tag}"), ell=ell)
                    z = abs(rep.vortex_location[1])
                    ctx.check("vortex_arc_distance_cells", rep.arc_distance_cells, "<=", 2.0, asserted)
                    ctx.check("vortex_equator_offset", z, "<=", 0.1 * float(ell), asserted)
                    tube = rep.tube_fractions.get(f"{cfg['tube_eps']}eps")
                    tubes.append(tube)
                    ctx.check("tube_fraction", tube, ">=", 0.5, asserted)
                    if rep.harmonic_fraction is not None:
                        ctx.check("harmonic_fraction", rep.harmonic_fraction, "<=", 1e-5, asserted)
                rows.append({"l": float(ell), "eps": float(eps), "c_eps": rep.c_eps,
                             "c_over_log_eps": rep.energy_over_log_eps,
                             "saddle_energy": rep.polished_energy, "saddle_residual": rep.polished_residual,
                             "vortex_r": rep.vortex_location[0] if rep.vortex_location else None,
                             "vortex_z": rep.vortex_location[1] if rep.vortex_location else None,
                             "arc_distance_cells": rep.arc_distance_cells,
                             "tube_fraction": rep.tube_fractions.get(f"{cfg['tube_eps']}eps")})
        with ctx.stage(f"trend-l{ell}"):
            # eps_sweep is ordered by decreasing eps; the tube fraction should not drop
            mono = len(tubes) == len(cfg["eps_sweep"]) and all(
                b >= a for a, b in zip(tubes, tubes[1:]))
            ctx.check("tube_fraction_nondecreasing", mono, "==", True, asserted)
    _write_rows(ctx.table_path("minmax.csv"), rows)


def _write_rows(path: Path, rows: list[dict[str, Any]]) -> None:
    from .analysis import write_profile_csv

    cols = list(rows[0]) if rows else []
    write_profile_csv(path, [{k: ("" if v is None else v) for k, v in r.items()} for r in rows], cols)


register(Scenario(
    name="ellipsoid-minmax",
    description="rotationally symmetric min-max on the solid ellipsoid r^2 + z^2/l^2 <= 1: sweep, "
                "mountain pass, saddle polish, equator concentration",
    defaults={"eps_sweep": [0.1, 0.05, 0.025], "ls": [3.0, 1.5], "asserted_ls": [3.0], "n_radial": 8,
              "n_angular": 16, "flow_budget": 40, "band": [0.1, 50.0], "tube_eps": 8},
    stages=("minmax", "trend"),
    body=_ellipsoid_minmax,
))


# --------------------------------------------------------------------------- #
# half-ball-reflection


def _half_ball(ctx: RunContext) -> None:
    from .field import ComplexField, save_field
    from .grid import build_chart
    from .solver import NonConvergence, SolverConfig, gradient_flow, init_vortex, reflect_even

    cfg = ctx.config
    n = int(cfg["res"])
    eps = float(cfg["eps"])
    chart = build_chart("half_ball", (n, n, n // 2), {"radius": 1.0, "metric_bump": cfg["metric_bump"]})
    with ctx.stage("solve") as st:
        f, srep = gradient_flow(init_vortex(chart, eps), SolverConfig(residual_tol=cfg["tol"]))
        if not srep.converged:
            raise NonConvergence(f"half-ball vortex stalled at {srep.final_residual:.3e}", srep, f)
        st.update(steps=srep.steps, final_residual=srep.final_residual)
        save_field(f, ctx.field_path("half_ball"))
    with ctx.stage("reflect") as st:
        full, rr = reflect_even(f, flag_tol=cfg["flag_tol"])
        save_field(full, ctx.field_path("reflected"))
        st.update(rr.to_dict())
        ctx.check("residual_ratio", rr.ratio, "<=", 2.0)
        ctx.check("neumann_flagged", rr.neumann_flagged, "==", False)
    with ctx.stage("negative-control") as st:
        ctrl = ComplexField(chart.grid.coords[..., 2] + 0j, eps, chart, {"init": "x3"})
        _, cr = reflect_even(ctrl, flag_tol=cfg["flag_tol"])
        st.update(cr.to_dict())
        ctx.check("control_flagged", cr.neumann_flagged, "==", True)


register(Scenario(
    name="half-ball-reflection",
    description="even reflection of a Neumann half-ball solution across the flat face",
    defaults={"res": 24, "eps": 0.25, "metric_bump": 0.3, "tol": 1e-8, "flag_tol": 0.1},
    stages=("solve", "reflect", "negative-control"),
    body=_half_ball,
))
