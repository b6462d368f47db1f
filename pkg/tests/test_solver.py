import json
import warnings

import numpy as np
import pytest

from gllab.field import ComplexField, energy
from gllab.grid import ChartError, build_chart
from gllab.solver import (
    FlowInstability,
    SolverConfig,
    UnderResolved,
    check_resolution,
    dt_stability,
    exact_product_solution,
    gl_residual,
    gradient_flow,
    init_constant,
    init_noise,
    init_vortex,
    newton_polish,
    reflect_even,
    residual_compact,
    residual_norm,
)


def test_resolution_gate():
    with pytest.raises(UnderResolved):
        check_resolution(0.01, 0.01)
    with pytest.raises(UnderResolved):
        check_resolution(0.03, 0.01)
    with pytest.warns(UserWarning):
        check_resolution(0.03, 0.01, allow_underresolved=True)
    with pytest.warns(UserWarning):
        check_resolution(0.05, 0.01)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        check_resolution(0.1, 0.01)


def test_step_size_is_capped_by_stability_limit():
    assert SolverConfig().step_size(0.1) == pytest.approx(dt_stability(0.1))
    with pytest.raises(ValueError):
        SolverConfig(dt=1.0).step_size(0.1)


def test_constant_unit_field_is_critical(small_disk):
    f = init_constant(small_disk, 0.1)
    assert np.max(np.abs(gl_residual(f))) < 1e-12


def test_flow_decreases_energy_from_noise(small_disk):
    f0 = init_noise(small_disk, 0.25, seed=3)
    f, rep = gradient_flow(f0, SolverConfig(max_steps=60, residual_tol=1e-14), use_newton=False)
    energies = [e for _, e in rep.energy_history]
    assert all(b <= a + 1e-12 * abs(a) for a, b in zip(energies, energies[1:]))
    assert energy(f) < energy(f0)
    assert not rep.converged and rep.steps == 60


def test_vortex_solve_converges_with_modulus_bound(small_disk):
    f, rep = gradient_flow(init_vortex(small_disk, 0.25), SolverConfig(residual_tol=1e-9))
    assert rep.converged and rep.final_residual <= 1e-9
    assert rep.max_modulus <= 1 + 1e-8
    assert rep.newton_iterations >= 1
    # the core stays at the center by symmetry
    mod = np.where(small_disk.grid.active, np.abs(f.values), np.inf)
    node = np.unravel_index(np.argmin(mod), mod.shape)
    assert np.allclose(np.abs(small_disk.grid.coords[node]), small_disk.grid.spacing[0] / 2)


def test_newton_converges_quadratically_from_perturbation(small_disk):
    f, _ = gradient_flow(init_vortex(small_disk, 0.25), SolverConfig(residual_tol=1e-11))
    x = small_disk.grid.coords
    pert = f.with_values(f.values + 1e-3 * (x[..., 0] ** 2 + 1j * x[..., 1]))
    _, rep = newton_polish(pert, SolverConfig(residual_tol=1e-12))
    res = [r for _, r in rep.residual_history]
    assert rep.converged
    assert res[2] < 10 * res[1] ** 2 / res[0]  # superlinear contraction


def test_newton_refuses_far_start(small_disk):
    with pytest.raises(ValueError):
        newton_polish(init_noise(small_disk, 0.25), SolverConfig())


def test_exact_product_solution_residual_is_second_order():
    res = []
    for n in (32, 64):
        chart = build_chart("product_s1_hemisphere", (n, 8, 8), {})
        f = exact_product_solution(chart, 2)
        res.append(np.max(np.abs(gl_residual(f)[chart.grid.active])))
    assert 3.5 <= res[0] / res[1] <= 4.5
    with pytest.raises(ChartError):
        exact_product_solution(build_chart("disk", 16, {}), 2)


def test_residual_norm_is_volume_normalized(small_disk):
    r = np.ones(small_disk.ops.n0)
    assert residual_norm(small_disk, r) == pytest.approx(1.0)


def test_modified_potential_residual_agrees_inside_unit_disk(small_disk):
    f = init_vortex(small_disk, 0.2)
    u = 0.9 * f.compact
    a = residual_compact(small_disk, u, 0.2, "quartic")
    b = residual_compact(small_disk, u, 0.2, "modified")
    assert np.allclose(a, b)


def test_reflection_of_half_ball_solution():
    chart = build_chart("half_ball", (16, 16, 8), {"metric_bump": 0.3})
    f, rep = gradient_flow(init_vortex(chart, 0.25), SolverConfig(residual_tol=1e-9))
    assert rep.converged
    full, rr = reflect_even(f)
    assert full.chart.grid.dims == (16, 16, 16)
    assert rr.ratio <= 2.0
    assert not rr.neumann_flagged
    # the mirror image duplicates the residual exactly: the full-ball norm is sqrt(2) x
    _, raw = reflect_even(init_vortex(chart, 0.25))
    assert raw.ratio == pytest.approx(np.sqrt(2), rel=1e-12)
    ctrl = ComplexField(chart.grid.coords[..., 2] + 0j, 0.25, chart)
    assert reflect_even(ctrl)[1].neumann_flagged
    with pytest.raises(ChartError):
        reflect_even(init_vortex(build_chart("disk", 16, {}), 0.25))


def test_flow_instability_is_detected(small_disk, monkeypatch):
    import gllab.solver as solver

    # a reaction with the wrong sign makes the semi-implicit step increase energy
    monkeypatch.setattr(solver, "reaction", lambda u, eps, potential="quartic": 50 * u / eps**2)
    with pytest.raises(FlowInstability) as exc:
        gradient_flow(init_noise(small_disk, 0.25), SolverConfig(max_steps=50), use_newton=False)
    assert exc.value.report.steps >= 3


def test_report_save(tmp_path, small_disk):
    _, rep = gradient_flow(init_vortex(small_disk, 0.25), SolverConfig(max_steps=5, residual_tol=1e-14),
                           use_newton=False)
    rep.save(tmp_path / "r.json", tmp_path / "r.csv")
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["steps"] == 5
    lines = (tmp_path / "r.csv").read_bytes().split(b"\n")
    assert lines[0] == b"step,energy,residual"
    assert b"\r" not in (tmp_path / "r.csv").read_bytes()
