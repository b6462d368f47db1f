import numpy as np
import pytest

from gllab.grid import ChartError, build_chart
from gllab.minmax import (
    arc_distance,
    equator_concentration,
    equatorial_seed,
    euler_lagrange_residual,
    locate_saddle_radius,
    mountain_pass,
    planted_ring,
    reduced_chart,
    reduced_energy,
    sweep_family,
    vortex_location,
)
from gllab.solver import init_vortex


@pytest.fixture(scope="module")
def family():
    return sweep_family(0.1, 3.0)


@pytest.fixture(scope="module")
def report(family):
    return mountain_pass(family, flow_budget=40)


def test_reduced_chart_has_equator_row():
    ch = reduced_chart(0.1, 3.0)
    z = ch.grid.coords[0, :, 1]
    assert np.min(np.abs(z)) < 1e-12
    assert ch.grid.max_spacing <= 0.1 / 4 * 1.05


def test_reduced_energy_requires_rz_chart():
    ch = build_chart("disk", (16, 16), {})
    with pytest.raises(ChartError):
        reduced_energy(init_vortex(ch, 0.3))


def test_sweep_family_layout(family):
    p = family.parameters
    assert len(p) == 1 + 8 * 16
    assert np.all(np.hypot(p[:, 0], p[:, 1]) <= 1 + 1e-12)
    assert family.boundary.sum() == 16
    mi = family.mirror_index()
    assert np.allclose(p[mi, 0], p[:, 0]) and np.allclose(p[mi, 1], -p[:, 1])
    assert np.array_equal(mi[mi], np.arange(len(p)))
    with pytest.raises(ValueError):
        sweep_family(0.1, 3.0, n_radial=4)
    with pytest.raises(ValueError):
        sweep_family(0.1, 3.0, n_angular=17)


def test_boundary_members_are_constant_with_zero_energy(family):
    k = int(np.flatnonzero(family.boundary)[3])
    f = family.member(k)
    vals = f.values[f.chart.grid.active]
    assert np.allclose(vals, vals[0]) and abs(abs(vals[0]) - 1) < 1e-12
    assert reduced_energy(f) == pytest.approx(0.0, abs=1e-12)


def test_mirror_members_have_equal_energy(family):
    mi = family.mirror_index()
    for k in (5, 40, 77):
        assert reduced_energy(family.member(k)) == pytest.approx(reduced_energy(family.member(mi[k])), rel=1e-10)


def test_arc_distance():
    assert arc_distance(3.0, np.array([1.0, 0.0])) == pytest.approx(0.0, abs=1e-9)
    assert arc_distance(3.0, np.array([0.5, 0.0])) == pytest.approx(0.5, abs=1e-6)
    assert arc_distance(1.0, np.array([0.0, 0.0])) == pytest.approx(1.0, abs=1e-9)


def test_vortex_location_finds_planted_ring():
    ch = reduced_chart(0.1, 3.0)
    f = planted_ring(ch, 0.1, 0.6, 0.0)
    _, (r, z) = vortex_location(f)
    h = ch.grid.max_spacing
    assert abs(r - 0.6) <= h and abs(z) <= h


def test_equatorial_seed_is_smoother_than_ring():
    ch = reduced_chart(0.1, 3.0)
    ring = planted_ring(ch, 0.1, 0.7, 0.0)
    seed = equatorial_seed(ch, 0.1, 0.7)
    assert reduced_energy(seed) < reduced_energy(ring)
    assert vortex_location(seed)[1][0] == pytest.approx(vortex_location(ring)[1][0], abs=ch.grid.max_spacing)


def test_locate_saddle_radius_interior():
    ch = reduced_chart(0.1, 3.0)
    r = locate_saddle_radius(ch, 0.1)
    assert 0.5 < r < 0.975


def test_mountain_pass_report(report, family):
    rep = report
    statuses = {m.status for m in rep.members}
    assert statuses <= {"flowed", "mirror", "pruned", "boundary"}
    assert "flowed" in statuses and "mirror" in statuses
    assert rep.c_eps <= rep.initial_max + 1e-9
    for m in rep.members:
        if m.status == "flowed":
            assert all(b <= a + 1e-9 for a, b in zip(m.trajectory, m.trajectory[1:]))
            assert m.flowed_energy <= rep.c_eps + 1e-12
    assert rep.energy_over_log_eps == pytest.approx(rep.c_eps / abs(np.log(0.1)))
    assert 0.1 <= rep.energy_over_log_eps <= 50


def test_polished_saddle_is_critical_and_equatorial(report):
    rep = report
    assert rep.polish_converged
    assert rep.polished_residual <= 1e-8
    f = rep.polished
    assert euler_lagrange_residual(f) == pytest.approx(rep.polished_residual, rel=1e-6)
    assert abs(rep.vortex_location[1]) <= rep.spacing
    assert rep.harmonic_fraction <= 1e-5
    assert rep.polished_max_modulus <= 1 + 1e-8
    assert equator_concentration(f, 8 * 0.1) == pytest.approx(rep.tube_fractions["8eps"], rel=1e-12)


def test_mountain_pass_is_thread_independent(family, report):
    other = mountain_pass(family, flow_budget=40, threads=4, polish=False)
    assert other.c_eps == report.c_eps and other.argmax_index == report.argmax_index
    assert [m.trajectory for m in other.members] == [m.trajectory for m in report.members]
