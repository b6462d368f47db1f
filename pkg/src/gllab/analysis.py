"""Energy-measure analytics: densities, monotonicity, Courant-Lebesgue radii,
eta-ellipticity scans, singular sets and the inner-variation identity."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from .field import ComplexField, energy_density, potential_density
from .grid import Chart, ChartError, metric_ball, node_point
from .solver import residual_compact
from .stencil import psum

logger = logging.getLogger("gllab.analysis")


class AnalysisError(ValueError):
    pass


# --------------------------------------------------------------------------- #
# energy measure


@dataclass(eq=False)
class EnergyMeasure:
    """Cell masses ``e_eps(u) sqrt(det g) dV`` (full grid shape), optionally over ``|log eps|``."""

    cell_mass: np.ndarray
    log_eps: float
    normalized: bool
    chart: Chart
    epsilon: float

    @classmethod
    def of(cls, f: ComplexField, normalized: bool = True, potential: str = "quartic") -> EnergyMeasure:
        ops = f.chart.ops
        mass = ops.to_full(energy_density(f, potential) * ops.w)
        log_eps = abs(float(np.log(f.epsilon)))
        if normalized:
            mass = mass / log_eps
        return cls(mass, log_eps, normalized, f.chart, f.epsilon)

    @property
    def total(self) -> float:
        return psum(self.chart.ops.to_compact(self.cell_mass))

    def ball_mass(self, center, radius: float) -> float:
        sel = metric_ball(self.chart.grid, center, radius)
        return psum(self.cell_mass[sel])


def _dim_weight(r: float | np.ndarray, n: int, power: int = 2) -> float | np.ndarray:
    return np.asarray(r, dtype=float) ** (power - n)


# --------------------------------------------------------------------------- #
# density profiles and monotonicity


@dataclass
class DensityProfile:
    center: tuple[int, ...]
    radii: np.ndarray
    values: np.ndarray
    chi: float

    def nondecreasing(self, slack: float = 0.02) -> bool:
        v = self.values
        return bool(np.all(v[1:] >= (1.0 - slack) * v[:-1]))


def _center_node(chart: Chart, center) -> tuple[int, ...]:
    grid = chart.grid
    c = np.asarray(center)
    if c.dtype.kind in "iu":
        node = tuple(int(v) for v in c)
    else:
        node = tuple(int(v) for v in np.clip(np.floor((c - np.asarray(grid.origin)) / np.asarray(grid.spacing)),
                                             0, np.asarray(grid.dims) - 1))
    if not grid.active[node]:
        raise AnalysisError(f"center {center} is outside the mask")
    return node


def density_profile(measure: EnergyMeasure, center, radii: Sequence[float], chi: float = 0.0) -> DensityProfile:
    """``e^{chi r} r^{2-n} mu(B_r(center))`` over increasing radii."""
    grid = measure.chart.grid
    node = _center_node(measure.chart, center)
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or np.any(np.diff(radii) <= 0):
        raise AnalysisError("radii must be strictly increasing")
    n = grid.ndim
    vals = np.array([np.exp(chi * r) * _dim_weight(r, n) * measure.ball_mass(node, r) for r in radii])
    return DensityProfile(node, radii, vals, chi)


@dataclass
class MonotonicityResult:
    center: tuple[int, ...]
    chi_fit: float
    nondecreasing: bool
    flagged: bool
    profile: DensityProfile


def fit_chi(radii: np.ndarray, values: np.ndarray, slack: float = 0.02) -> float:
    """Smallest ``chi >= 0`` with ``e^{chi r_{i+1}} v_{i+1} >= (1-slack) e^{chi r_i} v_i`` for all i."""
    chi = 0.0
    for i in range(len(radii) - 1):
        a, b = values[i], values[i + 1]
        if a <= 0:
            continue
        if b <= 0:
            return float("inf")
        need = np.log((1.0 - slack) * a / b) / (radii[i + 1] - radii[i])
        chi = max(chi, float(need))
    return chi


def monotonicity_report(
    measure: EnergyMeasure,
    centers: Sequence,
    radii: Sequence[float],
    slack: float = 0.02,
    chi_flag: float = 0.05,
) -> list[MonotonicityResult]:
    """Fitted monotonicity exponent per center; profiles needing ``chi > chi_flag`` are flagged."""
    if len(radii) < 3:
        raise AnalysisError("need at least 3 radii")
    out = []
    for c in centers:
        prof = density_profile(measure, c, radii, 0.0)
        chi = fit_chi(prof.radii, prof.values, slack)
        out.append(MonotonicityResult(prof.center, chi, prof.nondecreasing(slack), chi > chi_flag, prof))
    return out


# --------------------------------------------------------------------------- #
# Courant-Lebesgue


def _interpolator(chart: Chart, values: np.ndarray) -> RegularGridInterpolator:
    grid = chart.grid
    axes = [grid.axis_coords(a) for a in range(grid.ndim)]
    return RegularGridInterpolator(axes, values, method="linear", bounds_error=False, fill_value=None)


def _sphere_points(n: int, count: int) -> tuple[np.ndarray, float]:
    """Quadrature directions on the unit sphere ``S^{n-1}`` and the weight per point."""
    if n == 2:
        t = 2 * np.pi * (np.arange(count) + 0.5) / count
        return np.stack([np.cos(t), np.sin(t)], axis=1), 2 * np.pi / count
    if n == 3:
        k = np.arange(count) + 0.5
        z = 1 - 2 * k / count
        phi = np.pi * (1 + 5**0.5) * k
        s = np.sqrt(1 - z * z)
        return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1), 4 * np.pi / count
    raise AnalysisError(f"no sphere quadrature for n={n}")


@dataclass
class CourantLebesgueResult:
    radius: float
    value: float
    bulk: float
    c_fit: float
    radii: np.ndarray
    values: np.ndarray
    log_eps: float

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["radii"] = [float(v) for v in self.radii]
        d["values"] = [float(v) for v in self.values]
        return d


def shell_functional(f: ComplexField, center: np.ndarray, radii: np.ndarray, n_dirs: int | None = None) -> np.ndarray:
    """``r^{3-n} int_{dB_r} |d_nu u|^2 + r^{2-n} int_{B_r} (1-|u|^2)^2 / (2 eps^2)`` per radius.

    The shell term is a sphere quadrature of the interpolated radial derivative
    (central gradient); the bulk term sums over cells with centers inside ``B_r``.
    """
    chart = f.chart
    grid = chart.grid
    n = grid.ndim
    if np.any(chart.metric.diag[grid.active] != 1.0):
        raise AnalysisError("Courant-Lebesgue search is implemented for flat charts")
    grad = np.moveaxis(chart.ops.to_full(chart.ops.central_gradient(f.compact)), -1, 0)
    interps = [_interpolator(chart, grad[a]) for a in range(n)]
    pot = chart.ops.to_full(potential_density(np.abs(f.compact), f.epsilon) * 2.0 * chart.ops.w)
    out = []
    for r in radii:
        count = n_dirs or max(64, int(8 * np.pi * r / grid.max_spacing)) ** (n - 1)
        dirs, dw = _sphere_points(n, count)
        pts = center[None, :] + r * dirs
        du_nu = sum(interps[a](pts) * dirs[:, a] for a in range(n))
        shell = psum(np.abs(du_nu) ** 2) * dw * r ** (n - 1)
        ball = psum(pot[metric_ball(grid, center, r)])
        out.append(r ** (3 - n) * shell + r ** (2 - n) * ball)
    return np.array(out)


def courant_lebesgue_search(f: ComplexField, center, n_radii: int = 24) -> CourantLebesgueResult:
    """Best radius in ``(sqrt(eps), eps^{1/4})`` for the shell functional.

    ``c_fit`` is the smallest constant with
    ``value <= c_fit |log eps|^{-1} (eps^{1/4})^{2-n} int_{B_{eps^{1/4}}} e_eps``.
    Ties go to the smallest radius.
    """
    chart = f.chart
    grid = chart.grid
    eps = f.epsilon
    lo, hi = np.sqrt(eps), eps**0.25
    c = node_point(grid, _center_node(chart, center)) if np.asarray(center).dtype.kind in "iu" \
        else np.asarray(center, float)
    # the sphere of radius eps^{1/4} must stay inside the domain
    dist = _distance_to_exterior(chart, c)
    if hi >= dist:
        raise AnalysisError(f"eps^(1/4)={hi:.3f} exceeds distance {dist:.3f} to the chart boundary")
    radii = lo + (hi - lo) * (np.arange(n_radii) + 0.5) / n_radii
    if (hi - lo) < 3 * grid.max_spacing:
        raise AnalysisError("search interval is not resolvable at this spacing")
    vals = shell_functional(f, c, radii)
    k = int(np.argmin(vals))  # argmin returns the first (smallest-radius) minimizer
    log_eps = abs(np.log(eps))
    measure = EnergyMeasure.of(f, normalized=False)
    bulk = hi ** (2 - grid.ndim) * measure.ball_mass(c, hi)
    c_fit = float(vals[k] * log_eps / bulk) if bulk > 0 else 0.0
    return CourantLebesgueResult(float(radii[k]), float(vals[k]), float(bulk), c_fit, radii, vals, float(log_eps))


def _distance_to_exterior(chart: Chart, c: np.ndarray) -> float:
    grid = chart.grid
    from .grid import chart_distance

    d = chart_distance(grid, c)
    outside = ~grid.active
    own = min(float(np.min(np.where(outside, d, np.inf))), np.inf)
    box = min(min(c[a] - grid.origin[a], grid.origin[a] + grid.dims[a] * grid.spacing[a] - c[a])
              for a in range(grid.ndim) if not grid.periodic[a])
    return min(own, box)


# --------------------------------------------------------------------------- #
# ball filters


def _ball_footprint(grid, radius: float) -> np.ndarray:
    half = [int(np.ceil(radius / h)) for h in grid.spacing]
    axes = [np.arange(-k, k + 1) * h for k, h in zip(half, grid.spacing)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return sum(m * m for m in mesh) < radius * radius


def _pad(grid, arr: np.ndarray, fp: np.ndarray, fill: float) -> tuple[np.ndarray, list[int]]:
    pads = [(s // 2, s // 2) for s in fp.shape]
    out = arr
    for a, (p, _) in enumerate(pads):
        width = [(0, 0)] * arr.ndim
        width[a] = (p, p)
        if grid.periodic[a]:
            out = np.pad(out, width, mode="wrap")
        else:
            out = np.pad(out, width, mode="constant", constant_values=fill)
    return out, [p for p, _ in pads]


def ball_sums(grid, values: np.ndarray, radius: float) -> np.ndarray:
    """``sum_{y in B_r(x)} values(y)`` for every node x (cell-center inclusion)."""
    fp = _ball_footprint(grid, radius)
    padded, p = _pad(grid, values, fp, 0.0)
    out = ndimage.correlate(padded, fp.astype(float), mode="constant", cval=0.0)
    return out[tuple(slice(k, k + d) for k, d in zip(p, grid.dims))]


def ball_minimum(grid, values: np.ndarray, radius: float) -> np.ndarray:
    fp = _ball_footprint(grid, radius)
    v = np.where(grid.active, values, np.inf)
    padded, p = _pad(grid, v, fp, np.inf)
    out = ndimage.minimum_filter(padded, footprint=fp, mode="constant", cval=np.inf)
    return out[tuple(slice(k, k + d) for k, d in zip(p, grid.dims))]


# --------------------------------------------------------------------------- #
# eta scan


@dataclass
class EtaScanResult:
    ball_radius: float
    eta: float
    sigma: float
    scaled_energy: np.ndarray  # full shape, nan outside the mask
    min_modulus: np.ndarray
    passes_energy: np.ndarray
    counterexamples: list[tuple[int, ...]]

    @property
    def n_counterexamples(self) -> int:
        return len(self.counterexamples)

    @property
    def n_small_energy(self) -> int:
        return int(np.count_nonzero(self.passes_energy))


def eta_scan(f: ComplexField, ball_radius: float, sigma: float = 0.25, eta: float = 0.05) -> EtaScanResult:
    """Scaled energy ``r^{2-n} int_{B_r} e / |log(eps/r)|`` and ``min|u|`` on ``B_{r/4}`` at every node.

    Centers with scaled energy ``<= eta`` but ``min|u| < 1 - sigma`` are
    counterexamples (sorted by node index).
    """
    grid = f.chart.grid
    if ball_radius < 8 * grid.max_spacing:
        raise AnalysisError(f"ball radius {ball_radius} below 8 spacings")
    if ball_radius <= f.epsilon:
        raise AnalysisError("ball radius must exceed eps")
    measure = EnergyMeasure.of(f, normalized=False)
    n = grid.ndim
    scaled = ball_radius ** (2 - n) * ball_sums(grid, measure.cell_mass, ball_radius) \
        / abs(np.log(f.epsilon / ball_radius))
    minmod = ball_minimum(grid, np.abs(f.values), ball_radius / 4)
    small = grid.active & (scaled <= eta)
    bad = small & (minmod < 1.0 - sigma)
    counter = [tuple(int(v) for v in idx) for idx in np.argwhere(bad)]
    return EtaScanResult(ball_radius, eta, sigma, np.where(grid.active, scaled, np.nan),
                         np.where(grid.active, minmod, np.nan), small, counter)


# --------------------------------------------------------------------------- #
# singular set


@dataclass
class SingularSet:
    mask: np.ndarray
    density: np.ndarray  # r^{2-n} mu(B_r(p)) at every node (nan outside)
    r_probe: float
    theta_min: float

    @property
    def size(self) -> int:
        return int(np.count_nonzero(self.mask))

    def nodes(self) -> np.ndarray:
        return np.argwhere(self.mask)


def ball_densities(measure: EnergyMeasure, r_probe: float) -> np.ndarray:
    grid = measure.chart.grid
    if r_probe < 2 * grid.max_spacing:
        raise ChartError(f"probe radius {r_probe} below resolvable scale")
    dens = _dim_weight(r_probe, grid.ndim) * ball_sums(grid, measure.cell_mass, r_probe)
    return np.where(grid.active, dens, np.nan)


def singular_set(measure: EnergyMeasure, r_probe: float, theta_min: float) -> SingularSet:
    """Nodes whose ball density ``r^{2-n} mu(B_r(p))`` reaches ``theta_min``."""
    if theta_min <= 0:
        raise AnalysisError("theta_min must be positive")
    dens = ball_densities(measure, r_probe)
    mask = np.nan_to_num(dens, nan=-np.inf) >= theta_min
    return SingularSet(mask, dens, r_probe, theta_min)


# --------------------------------------------------------------------------- #
# inner variations


@dataclass(eq=False)
class AdmissibleVectorField:
    """Chart vector field with its chart Jacobian ``DX[..., i, j] = d_i X^j`` at nodes."""

    X: np.ndarray
    DX: np.ndarray
    boundary_tangency_norm: float
    chart: Chart
    label: str = ""

    @property
    def admissible(self) -> bool:
        return self.boundary_tangency_norm <= 1e-10

    @property
    def c1_norm(self) -> float:
        act = self.chart.grid.active
        return float(np.max(np.abs(self.X[act]))) + float(np.max(np.abs(self.DX[act])))

    def __add__(self, other: AdmissibleVectorField) -> AdmissibleVectorField:
        return AdmissibleVectorField(self.X + other.X, self.DX + other.DX,
                                     max(self.boundary_tangency_norm, other.boundary_tangency_norm), self.chart)

    def __mul__(self, c: float) -> AdmissibleVectorField:
        return AdmissibleVectorField(c * self.X, c * self.DX, abs(c) * self.boundary_tangency_norm, self.chart)

    __rmul__ = __mul__

    @classmethod
    def from_function(
        cls, chart: Chart, fn: Callable[[np.ndarray], np.ndarray], label: str = "", delta: float = 1e-6
    ) -> AdmissibleVectorField:
        """Sample ``fn`` at nodes; Jacobian by centered differences of ``fn``; tangency at boundary feet."""
        x = chart.grid.coords
        n = chart.grid.ndim
        X = np.asarray(fn(x), dtype=float)
        DX = np.empty(X.shape[:-1] + (n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = delta
            DX[..., i, :] = (fn(x + e) - fn(x - e)) / (2 * delta)
        act = chart.grid.active[..., None]
        X = np.where(act, X, 0.0)
        DX = np.where(act[..., None], DX, 0.0)
        nrm = chart.normal
        tang = 0.0
        if nrm is not None and len(nrm.nodes):
            foot = nrm.foot
            g = chart.metric_fn(foot)
            tang = float(np.max(np.abs(np.sum(g * np.asarray(fn(foot)) * nrm.nu, axis=-1))))
        return cls(X, DX, tang, chart, label)


def _christoffel_field(chart: Chart, x: np.ndarray, delta: float = 1e-6) -> np.ndarray:
    """``Gamma[..., k, i, j]`` of the chart's diagonal metric at points ``x``."""
    n = x.shape[-1]
    G = chart.metric_fn(x)
    dG = np.empty(x.shape[:-1] + (n, n))  # dG[..., i, k] = d_i G_k
    for i in range(n):
        e = np.zeros(n)
        e[i] = delta
        dG[..., i, :] = (chart.metric_fn(x + e) - chart.metric_fn(x - e)) / (2 * delta)
    gam = np.zeros(x.shape[:-1] + (n, n, n))
    for k in range(n):
        for i in range(n):
            for j in range(n):
                val = 0.0
                if j == k:
                    val = val + dG[..., i, k]
                if i == k:
                    val = val + dG[..., j, k]
                if i == j:
                    val = val - dG[..., k, i]
                gam[..., k, i, j] = 0.5 * val / G[..., k]
    return gam


def stationarity_residual(f: ComplexField, X: AdmissibleVectorField, potential: str = "quartic") -> float:
    """``int e_eps(u) div_g X - <nabla X, du (x) du> dvol`` with ``(du (x) du)_ij = Re(d_i u conj d_j u)``.

    Uses the central gradient for ``du`` and the matching energy density.
    """
    if not X.admissible:
        raise AnalysisError(f"vector field is not admissible (tangency norm {X.boundary_tangency_norm:.3e})")
    chart = f.chart
    ops = chart.ops
    x = ops.to_compact(chart.grid.coords)
    D = ops.central_gradient(f.compact)  # (n0, n) covariant components
    ginv = ops.ginv
    Xc = ops.to_compact(X.X)
    DXc = ops.to_compact(X.DX)  # [., i, j] = d_i X^j
    gam = _christoffel_field(chart, x)  # [., k, i, j]
    # covariant derivative nabla_i X^j = d_i X^j + Gamma^j_{ik} X^k
    cov = DXc + np.einsum("pjik,pk->pij", gam, Xc)
    div = np.einsum("pii->p", cov)
    T = np.real(D[:, :, None] * np.conj(D[:, None, :]))  # Re(d_i u conj d_j u)
    # <nabla X, du (x) du> = g^{ik} nabla_i X^j T_{kj} (diagonal g)
    pair = np.einsum("pi,pij,pij->p", ginv, cov, T)
    grad2 = np.sum(ginv * np.abs(D) ** 2, axis=1)
    e = 0.5 * grad2 + potential_density(np.abs(f.compact), f.epsilon, potential)
    return psum(ops.w * (e * div - pair))


def first_variation(f: ComplexField, zeta: np.ndarray | ComplexField, potential: str = "quartic") -> float:
    """``dE_eps(u)(zeta) = int <grad u, grad zeta> + (|u|^2-1) eps^-2 u . zeta``, discretely exact."""
    chart = f.chart
    ops = chart.ops
    z = zeta.values if isinstance(zeta, ComplexField) else np.asarray(zeta)
    zc = ops.to_compact(z) if z.shape == chart.grid.dims else z
    r = residual_compact(chart, f.compact, f.epsilon, potential)
    return psum(ops.w * np.real(r * np.conj(zc)))


def weighted_norm(chart: Chart, zeta: np.ndarray) -> float:
    ops = chart.ops
    z = np.asarray(zeta)
    zc = ops.to_compact(z) if z.shape == chart.grid.dims else z
    return float(np.sqrt(psum(ops.w * np.abs(zc) ** 2)))


# --------------------------------------------------------------------------- #
# tables


def write_profile_csv(path: str | Path, rows: Sequence[dict[str, Any]], columns: Sequence[str]) -> None:
    """CSV with a header row, '.' decimals and LF line endings."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for row in rows:
            wr.writerow([_fmt(row[c]) for c in columns])


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "pass" if v else "fail"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list)):
        return " ".join(str(int(t)) for t in v)
    return str(v)


__all__ = [
    "AdmissibleVectorField",
    "CourantLebesgueResult",
    "DensityProfile",
    "EnergyMeasure",
    "EtaScanResult",
    "MonotonicityResult",
    "SingularSet",
    "courant_lebesgue_search",
    "density_profile",
    "eta_scan",
    "first_variation",
    "monotonicity_report",
    "singular_set",
    "stationarity_residual",
]
