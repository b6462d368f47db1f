import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gllab.analysis import first_variation
from gllab.field import (
    ComplexField,
    FieldError,
    decompose_energy,
    energy,
    energy_density,
    gradient_decomposition,
    load_field,
    modified_potential,
    phase_winding,
    polar_decompose,
    save_field,
    square_loop,
    u_cross_du,
)
from gllab.grid import build_chart
from gllab.solver import init_vortex

DISK = build_chart("disk", 24, {"radius": 1.0})
BUMPY = build_chart("half_ball", (12, 12, 8), {"metric_bump": 0.3})


def random_field(chart, seed, eps=0.2, amp=1.5):
    rng = np.random.default_rng(seed)
    v = amp * (rng.standard_normal(chart.grid.dims) + 1j * rng.standard_normal(chart.grid.dims))
    return ComplexField(v, eps, chart)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), which=st.sampled_from(["disk", "bumpy"]))
def test_energy_parts_sum_to_density(seed, which):
    f = random_field(DISK if which == "disk" else BUMPY, seed)
    dens = energy_density(f)
    parts = decompose_energy(f)
    assert np.allclose(parts.sum(axis=1), dens, rtol=1e-10, atol=0)
    # inside the unit disk every part is nonnegative
    v = f.values / np.maximum(1.0, np.abs(f.values))
    inside = decompose_energy(f.with_values(v))
    assert np.all(inside >= -1e-12 * inside.max())


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_gradient_parts_sum_to_gradient(seed):
    f = random_field(BUMPY, seed)
    total, parts = gradient_decomposition(f)
    assert np.allclose(parts.sum(axis=1), total, rtol=1e-10, atol=1e-12 * total.max())


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), theta=st.floats(0, 2 * np.pi))
def test_energy_is_gauge_invariant(seed, theta):
    f = random_field(DISK, seed)
    g = f.with_values(np.exp(1j * theta) * f.values)
    assert energy(g) == pytest.approx(energy(f), rel=1e-12)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_first_variation_matches_finite_differences(seed):
    f = random_field(DISK, seed, amp=0.7)
    rng = np.random.default_rng(seed + 1)
    z = rng.standard_normal(DISK.grid.dims) + 1j * rng.standard_normal(DISK.grid.dims)
    t = 1e-5
    fd = (energy(f.with_values(f.values + t * z)) - energy(f.with_values(f.values - t * z))) / (2 * t)
    assert first_variation(f, z) == pytest.approx(fd, rel=1e-6)


def test_modified_potential_is_c1_at_one():
    W, dW = modified_potential(np.array([1 - 1e-9, 1.0, 1 + 1e-9]))
    assert np.allclose(W, 0, atol=1e-16)
    assert np.allclose(dW, 0, atol=1e-8)
    assert modified_potential(2.0) == (1.0, 2.0)
    with pytest.raises(FieldError):
        modified_potential(-0.1)


def test_cross_form_is_exact_for_pure_phase():
    chart = build_chart("product_s1_hemisphere", (32, 8, 8), {})
    a, k = 0.9, 3
    f = ComplexField.from_function(chart, 0.1, lambda x: a * np.exp(1j * k * x[..., 0]))
    psi = u_cross_du(f)
    ops = chart.ops
    along_s = ops.edge_axis == 0
    assert np.allclose(psi.values[along_s], a * a * k)
    assert np.allclose(psi.values[~along_s], 0)


def test_polar_form_reconstructs_field_and_vortex_winds_once(small_disk):
    f = init_vortex(small_disk, 0.1, center=(0.0, 0.0))
    pf = polar_decompose(f, rho_min=0.5)
    m = pf.valid_mask
    assert np.allclose(pf.rho[m] * np.exp(1j * pf.phi[m]), f.values[m])
    c = (16, 16)
    assert phase_winding(f, square_loop(small_disk.grid, c, 6)) == 1
    conj = f.with_values(np.conj(f.values))
    assert phase_winding(conj, square_loop(small_disk.grid, c, 6)) == -1


def test_field_shape_and_epsilon_validation(small_disk):
    with pytest.raises(FieldError):
        ComplexField(np.zeros((3, 3)), 0.1, small_disk)
    with pytest.raises(FieldError):
        ComplexField(np.zeros(small_disk.grid.dims), 0.0, small_disk)


def test_field_dump_roundtrip_and_corruption(tmp_path, small_disk):
    f = init_vortex(small_disk, 0.1)
    save_field(f, tmp_path / "u_eps0.1", note="x")
    raw = np.fromfile(tmp_path / "u_eps0.1.bin", dtype="<f8")
    assert raw.size == 2 * np.prod(small_disk.grid.dims)
    assert raw[0] == f.values.flat[0].real and raw[1] == f.values.flat[0].imag
    g = load_field(tmp_path / "u_eps0.1.bin")
    assert np.array_equal(g.values, f.values) and g.epsilon == 0.1
    (tmp_path / "u_eps0.1.bin").write_bytes(b"\0" * 24)
    with pytest.raises(FieldError):
        load_field(tmp_path / "u_eps0.1")
