"""Rotationally reduced min-max on the solid ellipsoid.

Fields invariant under rotation about the z-axis live on the half-ellipse
``{(r, z): r >= 0, r^2 + z^2/l^2 <= 1}``; the ``half_ellipse_rz`` chart carries
the volume density ``2 pi r``, so chart energies are the 3D energies.  A
two-parameter sweep ``y -> v_{y,eps}`` over the closed unit disk (constant ``y``
on the boundary circle) is deformed by gradient flow; the largest flowed
energy bounds the min-max value from above, and its member is polished to a
critical point.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp

from .field import ComplexField, energy
from .grid import Chart, ChartError, build_chart
from .solver import (
    SolverConfig,
    dt_stability,
    flow_steps,
    newton_polish,
    residual_compact,
    residual_norm,
)
from .stencil import psum, symmetric_lu

logger = logging.getLogger("gllab.minmax")

BATCH = 8  # pruning granularity; fixed so results do not depend on the worker count


class MinMaxError(RuntimeError):
    pass


# --------------------------------------------------------------------------- #
# reduced fields


def reduced_chart(epsilon: float, ell: float, cells_per_eps: float = 4.0) -> Chart:
    """Half-ellipse chart with spacing ``~eps / cells_per_eps`` and a node row at ``z = 0``."""
    h = epsilon / cells_per_eps
    nr = max(8, int(round(1.0 / h)))
    nz = max(8, int(round(2 * ell / h)))
    nz += 1 - nz % 2  # odd: a node row on the equator plane z = 0
    return build_chart("half_ellipse_rz", (nr, nz), {"l": ell})


def reduced_energy(f: ComplexField) -> float:
    """``2 pi int (|d_r u|^2 + |d_z u|^2)/2 + W(|u|)/eps^2  r dr dz``."""
    if f.chart.grid.chart_id != "half_ellipse_rz":
        raise ChartError("reduced energy needs the half_ellipse_rz chart")
    return energy(f, potential="modified")


def euler_lagrange_residual(f: ComplexField) -> float:
    """Normalized residual of the reduced (modified-potential) Euler-Lagrange equation."""
    r = residual_compact(f.chart, f.compact, f.epsilon, "modified")
    return residual_norm(f.chart, r)


def gl_residual_norm(f: ComplexField) -> float:
    return residual_norm(f.chart, residual_compact(f.chart, f.compact, f.epsilon, "quartic"))


# --------------------------------------------------------------------------- #
# sweep family


def profile_member(chart: Chart, epsilon: float, y: np.ndarray) -> np.ndarray:
    """``v_{y,eps}(x) = min(|x-w|/eps, 1) (x-w)/|x-w|`` with ``w = -y/(1-|y|)``; ``v = y`` if ``|y| = 1``.

    ``x = (r, z)`` is identified with ``r + i z``.  Returns full-shape values.
    """
    y = np.asarray(y, dtype=float)
    ny = float(np.hypot(y[0], y[1]))
    x = chart.grid.coords
    if ny >= 1.0:
        return np.full(chart.grid.dims, complex(y[0], y[1]) / ny)
    w = -y / (1.0 - ny)
    d = (x[..., 0] - w[0]) + 1j * (x[..., 1] - w[1])
    a = np.abs(d)
    unit = np.where(a > 0, d / np.where(a > 0, a, 1.0), 0.0)
    return np.minimum(a / epsilon, 1.0) * unit


@dataclass(eq=False)
class SweepFamily:
    chart: Chart
    epsilon: float
    ell: float
    parameters: np.ndarray  # (m, 2) points of the closed unit disk, index order fixed
    n_radial: int
    n_angular: int

    def member(self, k: int) -> ComplexField:
        y = self.parameters[k]
        return ComplexField(profile_member(self.chart, self.epsilon, y), self.epsilon, self.chart,
                            {"y": [float(y[0]), float(y[1])], "member": k})

    @property
    def boundary(self) -> np.ndarray:
        return np.isclose(np.hypot(self.parameters[:, 0], self.parameters[:, 1]), 1.0)

    def mirror_index(self) -> np.ndarray:
        """Index of the member with ``y2 -> -y2`` (its z-reflection)."""
        p = self.parameters
        out = np.empty(len(p), dtype=int)
        for k, (a, b) in enumerate(p):
            d = np.hypot(p[:, 0] - a, p[:, 1] + b)
            out[k] = int(np.argmin(d))
        return out


def sweep_family(epsilon: float, ell: float, n_radial: int = 8, n_angular: int = 16,
                 cells_per_eps: float = 4.0, chart: Chart | None = None) -> SweepFamily:
    """Polar parameter grid ``y = (i/n_radial) e^{i 2 pi j / n_angular}`` plus ``y = 0``.

    The outermost ring ``i = n_radial`` is the boundary circle ``|y| = 1``.
    """
    if n_radial < 8 or n_angular < 16:
        raise ValueError("parameter resolution must be at least 8 radial x 16 angular")
    if n_angular % 2:
        raise ValueError("n_angular must be even (mirror pairs)")
    chart = chart or reduced_chart(epsilon, ell, cells_per_eps)
    pts = [(0.0, 0.0)]
    for i in range(1, n_radial + 1):
        rho = i / n_radial
        for j in range(n_angular):
            t = 2 * np.pi * j / n_angular
            pts.append((rho * np.cos(t), rho * np.sin(t)))
    params = np.array(pts)
    params[np.abs(params) < 1e-15] = 0.0
    return SweepFamily(chart, epsilon, ell, params, n_radial, n_angular)


# --------------------------------------------------------------------------- #
# mountain pass


@dataclass
class MemberRecord:
    index: int
    y: tuple[float, float]
    initial_energy: float
    flowed_energy: float | None
    status: str  # "flowed" | "mirror" | "pruned" | "boundary"
    trajectory: list[float] = field(default_factory=list)


@dataclass
class MinMaxReport:
    epsilon: float
    ell: float
    c_eps: float
    argmax_index: int
    argmax_y: tuple[float, float]
    initial_max: float
    flow_budget: int
    energy_over_log_eps: float
    polished_energy: float | None = None
    polished_residual: float | None = None
    polished_gl_residual: float | None = None
    polished_max_modulus: float | None = None
    polish_converged: bool = False
    vortex_location: tuple[float, float] | None = None
    vortex_node: tuple[int, int] | None = None
    arc_distance: float | None = None
    arc_distance_cells: float | None = None
    tube_fractions: dict[str, float] = field(default_factory=dict)
    harmonic_fraction: float | None = None
    seed_radius: float | None = None
    spacing: float = 0.0
    members: list[MemberRecord] = field(default_factory=list)
    polished: ComplexField | None = field(default=None, repr=False)

    def to_dict(self, include_members: bool = False) -> dict[str, Any]:
        d = {k: v for k, v in asdict(self).items() if k not in ("members", "polished")}
        if include_members:
            d["members"] = [asdict(m) for m in self.members]
        return d

    def write_trajectories(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["y_index", "step", "energy"])
            for m in self.members:
                for step, e in enumerate(m.trajectory):
                    wr.writerow([m.index, step, repr(float(e))])


def mountain_pass(
    family: SweepFamily,
    flow_budget: int = 40,
    threads: int = 1,
    polish: bool = True,
    polish_steps: int = 4000,
) -> MinMaxReport:
    """Flow every member for ``flow_budget`` steps and take the largest energy.

    Members are visited in decreasing initial energy (ties by index) in
    batches of fixed size; a member whose initial energy does not exceed the
    largest flowed energy so far cannot raise the maximum (the flow only
    lowers energy) and is skipped.  Mirror images ``y2 -> -y2`` reuse their
    partner's flow.
    """
    chart, eps = family.chart, family.epsilon
    ops = chart.ops
    dt = dt_stability(eps)
    lu = symmetric_lu(sp.diags(ops.w) + dt * ops.stiffness)
    m = len(family.parameters)
    members = [family.member(k) for k in range(m)]
    e0 = np.array([reduced_energy(f) for f in members])
    mirror = family.mirror_index()
    canonical = np.array([k if family.parameters[k, 1] <= 0 else mirror[k] for k in range(m)])
    records = [MemberRecord(k, (float(family.parameters[k, 0]), float(family.parameters[k, 1])),
                            float(e0[k]), None, "pending") for k in range(m)]
    flowed: dict[int, ComplexField] = {}
    boundary = family.boundary
    for k in np.flatnonzero(boundary):
        records[k].status = "boundary"
        records[k].flowed_energy = float(e0[k])
        records[k].trajectory = [float(e0[k])]

    def run(k: int) -> tuple[ComplexField, list[float]]:
        return flow_steps(members[k], flow_budget, potential="modified", dt=dt, lu=lu)

    order = sorted((k for k in range(m) if not boundary[k] and canonical[k] == k), key=lambda k: (-e0[k], k))
    best = max([0.0] + [float(e0[k]) for k in np.flatnonzero(boundary)])
    pool = ThreadPoolExecutor(max_workers=max(1, threads)) if threads > 1 else None
    try:
        for b in range(0, len(order), BATCH):
            batch = [k for k in order[b:b + BATCH] if e0[k] > best]
            for k in order[b:b + BATCH]:
                if e0[k] <= best:
                    records[k].status = "pruned"
            if not batch:
                continue
            results = list(pool.map(run, batch)) if pool else [run(k) for k in batch]
            for k, (f, traj) in zip(batch, results):
                flowed[k] = f
                records[k].status = "flowed"
                records[k].flowed_energy = traj[-1]
                records[k].trajectory = traj
            best = max([best] + [records[k].flowed_energy for k in batch])
    finally:
        if pool:
            pool.shutdown()
    for k in range(m):
        c = canonical[k]
        if c != k and not boundary[k]:
            records[k].status = "mirror" if records[c].status == "flowed" else records[c].status
            records[k].flowed_energy = records[c].flowed_energy
            records[k].trajectory = list(records[c].trajectory)

    cand = [(rec.flowed_energy, -rec.index) for rec in records if rec.status in ("flowed", "boundary")]
    c_eps, neg_idx = max(cand)
    arg = -neg_idx
    rep = MinMaxReport(
        epsilon=eps, ell=family.ell, c_eps=float(c_eps), argmax_index=arg,
        argmax_y=records[arg].y, initial_max=float(np.max(e0)), flow_budget=flow_budget,
        energy_over_log_eps=float(c_eps / abs(np.log(eps))), spacing=float(chart.grid.max_spacing),
        members=records,
    )
    if polish and arg in flowed:
        _polish(rep, flowed[arg], polish_steps)
    return rep


def equatorial_seed(chart: Chart, epsilon: float, r0: float) -> ComplexField:
    """Planted ring at ``(r0, 0)`` with the gradient part of its phase removed.

    The phase one-form of a planted vortex carries a spurious exact component
    (the vortex image is missing); subtracting it via a Neumann Poisson solve
    gives a seed whose current is divergence free, much closer to the
    critical point than the raw profile.
    """
    from .hodge import solve_neumann_poisson

    ops = chart.ops
    u = planted_ring(chart, epsilon, r0, 0.0).compact
    om = np.angle(u[ops.edge_head] * np.conj(u[ops.edge_tail])) / ops.edge_h
    alpha = solve_neumann_poisson(chart, ops.d0.T @ (ops.edge_mass * om))
    return ComplexField.from_compact(u * np.exp(-1j * alpha), epsilon, chart)


def _equator_symmetry(chart: Chart):
    """Projection onto ``u(r, -z) = conj u(r, z)`` (kills the z-instability and the phase mode)."""
    ops = chart.ops

    def proj(uc: np.ndarray) -> np.ndarray:
        u = ops.to_full(uc)
        return ops.to_compact(0.5 * (u + np.conj(u[:, ::-1])))

    return proj


def ring_energy_scan(chart: Chart, epsilon: float, radii: np.ndarray, relax_steps: int = 10,
                     lu=None) -> np.ndarray:
    """Energy of core-relaxed equatorial seeds; its maximiser locates the saddle ring radius."""
    dt = dt_stability(epsilon)
    if lu is None:
        ops = chart.ops
        lu = symmetric_lu(sp.diags(ops.w) + dt * ops.stiffness)
    out = np.empty(len(radii))
    for i, r0 in enumerate(radii):
        _, traj = flow_steps(equatorial_seed(chart, epsilon, float(r0)), relax_steps,
                             potential="modified", dt=dt, lu=lu)
        out[i] = traj[-1]
    return out


def locate_saddle_radius(chart: Chart, epsilon: float, r_min: float = 0.5, r_max: float = 0.975) -> float:
    """Parabolic refinement of the argmax of :func:`ring_energy_scan` on a ``eps/2`` grid."""
    step = epsilon / 2
    radii = np.arange(r_min, r_max + 1e-12, step)
    e = ring_energy_scan(chart, epsilon, radii)
    i = int(np.argmax(e))
    if 0 < i < len(radii) - 1:
        a, b, c = e[i - 1], e[i], e[i + 1]
        den = a - 2 * b + c
        if den < 0:
            return float(radii[i] + 0.5 * step * (a - c) / den)
    return float(radii[i])


def _polish(rep: MinMaxReport, start: ComplexField, max_steps: int) -> None:
    """Find the mountain-pass critical point near the sweep maximum.

    The flowed argmax member sits near a saddle, which gradient flow cannot
    polish (it slides off towards the minimum).  Instead the saddle radius is
    located on the equator by an energy scan of relaxed ring seeds, and
    Newton's method is run in the equator-symmetric class from that seed
    (with nearby radii as fallbacks).
    """
    chart, eps = start.chart, start.epsilon
    proj = _equator_symmetry(chart)
    r_star = locate_saddle_radius(chart, eps)
    rep.seed_radius = r_star
    cfg = SolverConfig(max_newton=max(10, min(max_steps, 60)), residual_tol=1e-8)
    best = None
    for r0 in (r_star, r_star + eps / 2, r_star - eps / 2, r_star + eps):
        seed, _ = flow_steps(equatorial_seed(chart, eps, r0), 10, potential="modified")
        f, srep = newton_polish(seed, cfg, _raise=False, project=proj)
        res = srep.residual_history[-1][1] if srep.residual_history else np.inf
        if best is None or res < best[2]:
            best = (f, srep, res)
        if srep.converged:
            break
        logger.info("Newton from r0=%.4f stalled at residual %.3e", r0, res)
    f, srep, _ = best
    rep.polished = f
    rep.polish_converged = srep.converged
    rep.polished_energy = reduced_energy(f)
    rep.polished_residual = euler_lagrange_residual(f)
    rep.polished_gl_residual = gl_residual_norm(f)
    rep.polished_max_modulus = float(np.max(np.abs(f.compact)))
    loc = vortex_location(f)
    rep.vortex_node = loc[0]
    rep.vortex_location = loc[1]
    dist = arc_distance(rep.ell, np.array(loc[1]))
    rep.arc_distance = dist
    rep.arc_distance_cells = dist / f.chart.grid.max_spacing
    rep.tube_fractions = {f"{k}eps": equator_concentration(f, k * f.epsilon) for k in (4, 8, 16)}
    try:
        from .hodge import extract_psi

        ex = extract_psi([f], residual_tol=1e-6)[0]
        rep.harmonic_fraction = ex.harmonic_fraction
    except Exception as exc:  # noqa: BLE001
        logger.info("psi extraction skipped: %s", exc)


# --------------------------------------------------------------------------- #
# diagnostics


def vortex_location(f: ComplexField) -> tuple[tuple[int, int], tuple[float, float]]:
    """Grid argmin of ``|u|`` (ties: smallest lexicographic index) and its ``(r, z)``."""
    grid = f.chart.grid
    mod = np.where(grid.active, np.abs(f.values), np.inf)
    flat = int(np.argmin(mod))  # first minimum in C order
    node = tuple(int(v) for v in np.unravel_index(flat, grid.dims))
    x = grid.coords[node]
    return node, (float(x[0]), float(x[1]))


def arc_distance(ell: float, p: np.ndarray, samples: int = 20001) -> float:
    """Euclidean distance from ``p = (r, z)`` to the arc ``r^2 + z^2/l^2 = 1, r >= 0``."""
    t = np.linspace(-np.pi / 2, np.pi / 2, samples)
    arc = np.stack([np.cos(t), ell * np.sin(t)], axis=1)
    return float(np.min(np.hypot(arc[:, 0] - p[0], arc[:, 1] - p[1])))


def equator_concentration(f: ComplexField, rho: float) -> float:
    """Fraction of the 3D energy within distance ``rho`` of the equator circle ``{r = 1, z = 0}``."""
    chart = f.chart
    ops = chart.ops
    x = ops.to_compact(chart.grid.coords)
    dens = ops.to_compact(ops.to_full(_density(f))) * ops.w
    tube = np.hypot(x[:, 0] - 1.0, x[:, 1]) < rho
    total = psum(dens)
    return float(psum(dens[tube]) / total) if total > 0 else 0.0


def _density(f: ComplexField) -> np.ndarray:
    from .field import energy_density

    return energy_density(f, potential="modified")


def planted_ring(chart: Chart, epsilon: float, r0: float, z0: float) -> ComplexField:
    """Degree-one vortex at ``(r0, z0)`` in the reduced plane (a vortex ring in 3D)."""
    x = chart.grid.coords
    d = (x[..., 0] - r0) + 1j * (x[..., 1] - z0)
    a = np.abs(d)
    vals = np.tanh(a / epsilon) * np.where(a > 0, d / np.where(a > 0, a, 1.0), 0.0)
    return ComplexField(vals, epsilon, chart, {"init": "ring", "r0": r0, "z0": z0})
