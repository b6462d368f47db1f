"""The twelve acceptance criteria, one test each.

Every test prints ``CRITERION n: PASS|FAIL <summary>``; the lines are also
collected into an "acceptance criteria" section of the terminal summary.
"""

from __future__ import annotations

import json
import time

import numpy as np
import pytest

from gllab import scenarios
from gllab.analysis import first_variation
from gllab.field import ComplexField, decompose_energy, energy, energy_density, gradient_decomposition
from gllab.grid import build_chart
from gllab.hodge import DiscreteOneForm, hodge_decompose


@pytest.fixture
def verdict(request):
    def emit(n: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {title}" + (f" -- {detail}" if detail else "")
        print(line)
        request.config.acceptance_lines.append(line)
        assert ok, line

    return emit


def _failed(checks, prefix=""):
    return [c.line() for c in checks if c.asserted and not c.passed and c.stage.startswith(prefix)]


def _stage_checks(result, prefix):
    return [c for c in result.checks if c.stage.startswith(prefix)]


@pytest.fixture(scope="module")
def exact_product(tmp_path_factory):
    t0 = time.perf_counter()
    res = scenarios.run("exact-product", out=tmp_path_factory.mktemp("ep"))
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def disk_vortex_run(tmp_path_factory):
    return scenarios.run("disk-vortex", out=tmp_path_factory.mktemp("dv"))


def _stage_seconds(res, prefix):
    meta = json.loads((res.run_dir / "metadata.json").read_text())
    return sum(v for k, v in meta["stage_seconds"].items() if k.startswith(prefix))


def test_criterion_01_exact_solution_oracle(exact_product, verdict):
    res, _ = exact_product
    checks = [c for c in res.checks if c.stage.startswith(("residual-", "energy-"))]
    seconds = _stage_seconds(res, "residual-") + _stage_seconds(res, "energy-")
    bad = _failed(checks)
    ratios = [c.value for c in checks if c.name.startswith("residual_ratio")]
    errs = [c.value for c in checks if c.name == "energy_relative_error"]
    ok = not bad and len(ratios) == 2 and len(errs) == 2 and seconds < 10
    verdict(1, "exact-solution oracle", ok,
            f"residual ratios {np.round(ratios, 3).tolist()}, energy errors {errs}, {seconds:.1f}s {bad}")


def test_criterion_02_psi_extraction(exact_product, verdict):
    res, _ = exact_product
    checks = _stage_checks(res, "psi-")
    bad = _failed(checks)
    vals = {f"{c.stage}/{c.name}": c.value for c in checks}
    ok = not bad and len(checks) == 6
    verdict(2, "psi extraction", ok, f"{vals} {bad}")


def _random_field(chart, rng, eps=0.2):
    v = 1.5 * (rng.standard_normal(chart.grid.dims) + 1j * rng.standard_normal(chart.grid.dims))
    return ComplexField(v, eps, chart)


def test_criterion_03_algebraic_identities(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    charts = [build_chart("disk", 24, {}), build_chart("half_ball", (12, 12, 8), {"metric_bump": 0.3})]
    worst_e = worst_g = 0.0
    for i in range(100):
        f = _random_field(charts[i % 2], rng)
        dens = energy_density(f)
        parts = decompose_energy(f)
        worst_e = max(worst_e, float(np.max(np.abs(parts.sum(axis=1) - dens) / np.maximum(np.abs(dens), 1e-300))))
        total, gparts = gradient_decomposition(f)
        scale = np.maximum(np.abs(total), 1e-12 * np.max(total))
        worst_g = max(worst_g, float(np.max(np.abs(gparts.sum(axis=1) - total) / scale)))
    worst_fd = 0.0
    disk = charts[0]
    for _ in range(20):
        f = _random_field(disk, rng)
        f = f.with_values(0.5 * f.values)
        z = rng.standard_normal(disk.grid.dims) + 1j * rng.standard_normal(disk.grid.dims)
        t = 1e-5
        fd = (energy(f.with_values(f.values + t * z)) - energy(f.with_values(f.values - t * z))) / (2 * t)
        worst_fd = max(worst_fd, abs(first_variation(f, z) - fd) / abs(fd))
    seconds = time.perf_counter() - t0
    ok = worst_e <= 1e-10 and worst_g <= 1e-10 and worst_fd <= 1e-6 and seconds < 5
    verdict(3, "algebraic identities", ok,
            f"energy {worst_e:.1e}, gradient {worst_g:.1e}, first variation vs FD {worst_fd:.1e}, {seconds:.2f}s")


def test_criterion_04_criticality(disk_vortex_run, verdict):
    checks = _stage_checks(disk_vortex_run, "solve") + _stage_checks(disk_vortex_run, "first-variation")
    seconds = _stage_seconds(disk_vortex_run, "solve") + _stage_seconds(disk_vortex_run, "first-variation")
    bad = _failed(checks)
    ok = not bad and len(checks) == 3 and seconds < 120
    verdict(4, "criticality", ok, f"{ {c.name: c.value for c in checks} } {seconds:.1f}s {bad}")


def test_criterion_05_monotonicity(disk_vortex_run, verdict):
    checks = _stage_checks(disk_vortex_run, "monotonicity")
    bad = _failed(checks)
    verdict(5, "monotonicity", not bad and len(checks) == 2, f"{ {c.name: c.value for c in checks} } {bad}")


def test_criterion_06_courant_lebesgue(disk_vortex_run, verdict):
    checks = _stage_checks(disk_vortex_run, "courant-lebesgue")
    bad = _failed(checks)
    verdict(6, "Courant-Lebesgue radius", not bad and sum(c.asserted for c in checks) == 2,
            f"{ {c.name: c.value for c in checks} } {bad}")


def test_criterion_07_eta_ellipticity(disk_vortex_run, verdict):
    checks = _stage_checks(disk_vortex_run, "eta-scan")
    bad = _failed(checks)
    verdict(7, "eta-ellipticity scan", not bad and any(c.name == "counterexamples" for c in checks),
            f"{ {c.name: c.value for c in checks} } {bad}")


def test_criterion_08_stationarity(disk_vortex_run, verdict):
    checks = _stage_checks(disk_vortex_run, "stationarity")
    bad = _failed(checks)
    n_fields = sum(c.name.endswith("_relative") for c in checks)
    verdict(8, "stationarity", not bad and n_fields >= 5,
            f"{n_fields} vector fields, worst relative {max(c.value for c in checks if c.name.endswith('_relative')):.2e} {bad}")


def test_criterion_09_hodge_suite(exact_product, verdict):
    t0 = time.perf_counter()
    chart = build_chart("solid_ellipsoid", (20, 20, 40), {"l": 1.5})
    rng = np.random.default_rng(9)
    worst_h = worst_o = 0.0
    for _ in range(10):
        om = DiscreteOneForm(rng.standard_normal(chart.ops.n1), chart)
        sp = hodge_decompose(om)
        worst_h = max(worst_h, sp.harmonic.norm() / om.norm())
        worst_o = max(worst_o, max(sp.orthogonality().values()))
    seconds = time.perf_counter() - t0
    res, _ = exact_product
    ds = _stage_checks(res, "hodge-ds")
    bad = _failed(ds)
    ok = worst_h <= 1e-5 and worst_o <= 1e-8 and not bad and len(ds) == 2 and seconds < 30
    verdict(9, "Hodge suite", ok,
            f"ellipsoid harmonic {worst_h:.1e}, orthogonality {worst_o:.1e}, "
            f"{ {c.name: c.value for c in ds} }, {seconds:.1f}s {bad}")


def test_criterion_10_minmax(tmp_path, verdict):
    t0 = time.perf_counter()
    res = scenarios.run("ellipsoid-minmax", out=tmp_path, threads=8)
    seconds = time.perf_counter() - t0
    asserted = [c for c in res.checks if c.asserted]
    bad = _failed(asserted)
    for c in asserted:
        print(c.line())
    ok = not bad and len(asserted) >= 19 and seconds < 480
    verdict(10, "ellipsoid min-max", ok, f"{len(bad)} of {len(asserted)} checks failed, {seconds:.0f}s: {bad}")


def test_criterion_11_reflection(tmp_path, verdict):
    res = scenarios.run("half-ball-reflection", out=tmp_path)
    bad = _failed(res.checks)
    verdict(11, "reflection", not bad and len(res.checks) == 3, f"{ {c.name: c.value for c in res.checks} } {bad}")


def test_criterion_12_determinism(tmp_path, verdict):
    over = {"eps_sweep": [0.1, 0.05]}
    a = scenarios.run("ellipsoid-minmax", over, out=tmp_path / "t1", threads=1)
    b = scenarios.run("ellipsoid-minmax", over, out=tmp_path / "t8", threads=8)
    same = (a.run_dir / "report.json").read_bytes() == (b.run_dir / "report.json").read_bytes()
    verdict(12, "determinism", same, "report.json byte-identical across --threads 1 and 8")
