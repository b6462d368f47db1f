"""Neumann Ginzburg-Landau solves: semi-implicit flow, Newton polish, reflection."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .field import ComplexField, energy, modified_potential
from .grid import BOUNDARY, Chart, ChartError, build_chart
from .stencil import psum, symmetric_lu

logger = logging.getLogger("gllab.solver")


class SolverError(RuntimeError):
    """Base class for solver failures; carries the report so far."""

    def __init__(self, message: str, report: SolveReport | None = None, field: ComplexField | None = None):
        super().__init__(message)
        self.report = report
        self.field = field


class FlowInstability(SolverError):
    pass


class NonConvergence(SolverError):
    pass


class UnderResolved(ValueError):
    pass


@dataclass
class SolverConfig:
    dt: float | None = None  # default 0.4 * eps^2
    max_steps: int = 20000
    residual_tol: float = 1e-8
    newton_after: float = 5e-2
    damping: float = 0.5
    max_newton: int = 25
    max_step: float = 0.5
    potential: str = "quartic"
    record_every: int = 1

    def step_size(self, epsilon: float) -> float:
        limit = dt_stability(epsilon)
        dt = limit if self.dt is None else float(self.dt)
        if dt <= 0 or dt > limit * (1 + 1e-12):
            raise ValueError(f"dt={dt} outside (0, {limit}] for eps={epsilon}")
        return dt


@dataclass
class SolveReport:
    final_residual: float = np.inf
    steps: int = 0
    newton_iterations: int = 0
    energy_history: list[tuple[int, float]] = field(default_factory=list)
    residual_history: list[tuple[int, float]] = field(default_factory=list)
    converged: bool = False
    max_modulus: float = 0.0
    newton_fallbacks: int = 0
    message: str = ""

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["energy_history"] = [list(x) for x in self.energy_history]
        d["residual_history"] = [list(x) for x in self.residual_history]
        return d

    def save(self, json_path: str | Path, csv_path: str | Path | None = None) -> None:
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        if csv_path is not None:
            res = dict(self.residual_history)
            with open(csv_path, "w", newline="") as fh:
                wr = csv.writer(fh, lineterminator="\n")
                wr.writerow(["step", "energy", "residual"])
                for step, e in self.energy_history:
                    r = res.get(step, "")
                    wr.writerow([step, repr(float(e)), "" if r == "" else repr(float(r))])


def dt_stability(epsilon: float) -> float:
    return 0.4 * epsilon**2


def check_resolution(epsilon: float, spacing: float, allow_underresolved: bool = False) -> None:
    """Vortex cores need ``eps >= 4h`` (``2h`` when allowed): error below that, warning below 6h."""
    if epsilon < 2 * spacing:
        raise UnderResolved(f"eps={epsilon} < 2h={2 * spacing}")
    if epsilon < 4 * spacing and not allow_underresolved:
        raise UnderResolved(f"eps={epsilon} < 4h={4 * spacing} (use allow_underresolved)")
    if epsilon < 6 * spacing:
        warnings.warn(f"eps={epsilon} < 6h={6 * spacing}: vortex core barely resolved", stacklevel=2)


# --------------------------------------------------------------------------- #
# residual


def reaction(u: np.ndarray, epsilon: float, potential: str = "quartic") -> np.ndarray:
    """``-dF/du`` for the potential: ``(1-|u|^2)u/eps^2`` or ``-W'(|u|) u/|u| / eps^2``."""
    if potential == "quartic":
        return (1.0 - np.abs(u) ** 2) * u / epsilon**2
    rho = np.abs(u)
    _, dW = modified_potential(rho)
    safe = np.where(rho > 0, rho, 1.0)
    return -np.where(rho > 0, dW / safe, 0.0) * u / epsilon**2


def residual_compact(chart: Chart, u: np.ndarray, epsilon: float, potential: str = "quartic") -> np.ndarray:
    ops = chart.ops
    return (ops.stiffness @ u) / ops.w - reaction(u, epsilon, potential)


def gl_residual(f: ComplexField, potential: str = "quartic") -> np.ndarray:
    """Node residual of ``-Lap_g u - eps^-2 (1-|u|^2) u`` with mirror-ghost Neumann rows."""
    return f.chart.ops.to_full(residual_compact(f.chart, f.compact, f.epsilon, potential))


def residual_norm(chart: Chart, r: np.ndarray) -> float:
    """sqrt(det g)-weighted L2 norm divided by sqrt(vol)."""
    w = chart.ops.w
    return float(np.sqrt(psum(w * np.abs(r) ** 2) / psum(w)))


# --------------------------------------------------------------------------- #
# flow


def _record(report: SolveReport, step: int, e: float, r: float | None) -> None:
    report.energy_history.append((step, float(e)))
    if r is not None:
        report.residual_history.append((step, float(r)))


def gradient_flow(
    initial: ComplexField,
    config: SolverConfig | None = None,
    use_newton: bool = True,
) -> tuple[ComplexField, SolveReport]:
    """L2 steepest descent with implicit Laplacian and explicit reaction.

    Switches to :func:`newton_polish` once the residual drops below
    ``config.newton_after``; a stagnating Newton phase hands back to the flow.
    """
    cfg = config or SolverConfig()
    chart, eps = initial.chart, initial.epsilon
    if not np.all(np.isfinite(initial.values)):
        raise ValueError("initial field is not finite")
    ops = chart.ops
    dt = cfg.step_size(eps)
    lu = symmetric_lu(sp.diags(ops.w) + dt * ops.stiffness)
    u = initial.compact.copy()
    report = SolveReport()
    e_prev = energy(initial, cfg.potential)
    r = residual_norm(chart, residual_compact(chart, u, eps, cfg.potential))
    _record(report, 0, e_prev, r)
    increases = 0
    newton_block = 0
    step = 0
    while True:
        if r <= cfg.residual_tol:
            report.converged = True
            break
        if use_newton and newton_block <= 0 and r <= cfg.newton_after:
            cand, nrep = newton_polish(ComplexField.from_compact(u, eps, chart), cfg, _raise=False)
            report.newton_iterations += nrep.newton_iterations
            for k, (s_, e_) in enumerate(nrep.energy_history[1:], 1):
                _record(report, step, e_, nrep.residual_history[k][1])
            if nrep.converged:
                u = cand.compact
                r = nrep.final_residual
                report.converged = True
                break
            report.newton_fallbacks += 1
            newton_block = 200
            logger.info("newton stagnated (%s); continuing flow", nrep.message)
        if step >= cfg.max_steps:
            break
        rhs = ops.w * (u + dt * reaction(u, eps, cfg.potential))
        sol = lu.solve(np.column_stack([rhs.real, rhs.imag]))
        u = sol[:, 0] + 1j * sol[:, 1]
        step += 1
        newton_block -= 1
        fld = ComplexField.from_compact(u, eps, chart)
        e = energy(fld, cfg.potential)
        r = residual_norm(chart, residual_compact(chart, u, eps, cfg.potential))
        if step % cfg.record_every == 0:
            _record(report, step, e, r)
        if e > e_prev + 1e-10 * max(1.0, abs(e_prev)):
            increases += 1
            if increases >= 3:
                report.steps = step
                report.message = "energy increased on 3 consecutive steps"
                raise FlowInstability(report.message, report, fld)
        else:
            increases = 0
        e_prev = e
    report.steps = step
    out = ComplexField.from_compact(u, eps, chart, **initial.meta)
    report.final_residual = r
    report.max_modulus = float(np.max(np.abs(u)))
    if report.energy_history[-1][0] != step or not report.converged:
        _record(report, step, energy(out, cfg.potential), r)
    if not report.converged:
        report.message = report.message or f"not converged after {step} steps (residual {r:.3e})"
    return out, report


def flow_steps(f: ComplexField, n_steps: int, potential: str = "quartic", dt: float | None = None,
               lu=None) -> tuple[ComplexField, list[float]]:
    """Plain semi-implicit flow for a fixed number of steps; returns energies per step."""
    chart, eps = f.chart, f.epsilon
    ops = chart.ops
    dt = dt_stability(eps) if dt is None else dt
    if lu is None:
        lu = symmetric_lu(sp.diags(ops.w) + dt * ops.stiffness)
    u = f.compact.copy()
    energies = [energy(f, potential)]
    for _ in range(n_steps):
        rhs = ops.w * (u + dt * reaction(u, eps, potential))
        sol = lu.solve(np.column_stack([rhs.real, rhs.imag]))
        u = sol[:, 0] + 1j * sol[:, 1]
        energies.append(energy(ComplexField.from_compact(u, eps, chart), potential))
    return ComplexField.from_compact(u, eps, chart, **f.meta), energies


# --------------------------------------------------------------------------- #
# Newton


def hessian(chart: Chart, u: np.ndarray, epsilon: float) -> sp.csr_matrix:
    """Real Hessian of the discrete quartic energy, unknowns interleaved (re, im)."""
    ops = chart.ops
    n = ops.n0
    K = sp.kron(ops.stiffness, sp.identity(2), format="csr")
    a, b = u.real, u.imag
    m2 = a * a + b * b
    c = ops.w / epsilon**2
    d_aa = c * (m2 - 1.0 + 2 * a * a)
    d_bb = c * (m2 - 1.0 + 2 * b * b)
    d_ab = c * 2 * a * b
    idx = np.arange(n)
    rows = np.concatenate([2 * idx, 2 * idx + 1, 2 * idx, 2 * idx + 1])
    cols = np.concatenate([2 * idx, 2 * idx + 1, 2 * idx + 1, 2 * idx])
    data = np.concatenate([d_aa, d_bb, d_ab, d_ab])
    return (K + sp.csr_matrix((data, (rows, cols)), shape=(2 * n, 2 * n))).tocsr()


def newton_step(chart: Chart, u: np.ndarray, epsilon: float) -> np.ndarray:
    """Solve ``H du = -grad E`` with the global phase fixed at one node.

    The rotation mode ``i u`` is an exact null vector of ``H`` at a critical
    point.  At the node of largest modulus the update is restricted to the
    direction of ``u`` itself, which removes that mode while keeping the
    system sparse; solved by sparse LU.
    """
    ops = chart.ops
    n = ops.n0
    H = hessian(chart, u, epsilon)
    r = residual_compact(chart, u, epsilon)
    g = np.empty(2 * n)
    g[0::2] = (ops.w * r).real
    g[1::2] = (ops.w * r).imag
    j = int(np.argmax(np.abs(u)))
    if abs(u[j]) > 1e-8:
        # basis change P: unknown 2j becomes the coefficient along u_j/|u_j|, unknown 2j+1 is dropped
        uh = u[j] / abs(u[j])
        keep = np.ones(2 * n, dtype=bool)
        keep[2 * j + 1] = False
        rows = np.arange(2 * n)
        cols = np.where(keep, np.cumsum(keep) - 1, 2 * j)
        vals = np.ones(2 * n)
        vals[2 * j], vals[2 * j + 1] = uh.real, uh.imag
        P = sp.csr_matrix((vals, (rows, cols)), shape=(2 * n, 2 * n - 1))
        A = (P.T @ H @ P).tocsc()
        sol = P @ symmetric_lu(A).solve(-(P.T @ g))
    else:
        sol = symmetric_lu(H).solve(-g)
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("non-finite Newton step")
    return sol[0::2] + 1j * sol[1::2]


def newton_polish(
    f: ComplexField,
    config: SolverConfig | None = None,
    _raise: bool = True,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[ComplexField, SolveReport]:
    """Damped Newton iteration on the discrete GL equation.

    Each step is accepted after halving (factor ``config.damping``) until the
    residual norm decreases.  Failure to decrease is reported as stagnation.
    ``project`` (compact -> compact) maps every iterate back into a symmetry
    class; Newton steps are equivariant, so this only removes roundoff drift
    along symmetry-breaking unstable directions.
    """
    cfg = config or SolverConfig()
    chart, eps = f.chart, f.epsilon
    u = f.compact.copy()
    if project is not None:
        u = project(u)
    report = SolveReport()
    r = residual_norm(chart, residual_compact(chart, u, eps))
    _record(report, 0, energy(f), r)
    if r > cfg.newton_after and _raise:
        raise ValueError(f"residual {r:.3e} above newton_after={cfg.newton_after}")
    for it in range(cfg.max_newton):
        if r <= cfg.residual_tol:
            report.converged = True
            break
        try:
            du = newton_step(chart, u, eps)
        except (RuntimeError, np.linalg.LinAlgError) as exc:
            report.message = f"linear solve failed: {exc}"
            break
        # trust region in modulus units: no node moves by more than max_step
        t = min(1.0, cfg.max_step / max(float(np.max(np.abs(du))), 1e-300))
        accepted = False
        for _ in range(12):
            cand = u + t * du
            if project is not None:
                cand = project(cand)
            rc = residual_norm(chart, residual_compact(chart, cand, eps))
            if rc < r:
                accepted = True
                break
            t *= cfg.damping
        report.newton_iterations = it + 1
        if not accepted:
            report.message = "Newton step failed to reduce the residual"
            break
        u, r = cand, rc
        _record(report, it + 1, energy(ComplexField.from_compact(u, eps, chart)), r)
    else:
        report.converged = r <= cfg.residual_tol
    if r <= cfg.residual_tol:
        report.converged = True
    report.final_residual = r
    report.max_modulus = float(np.max(np.abs(u)))
    out = ComplexField.from_compact(u, eps, chart, **f.meta)
    if not report.converged and not report.message:
        report.message = f"Newton did not converge (residual {r:.3e})"
    return out, report


# --------------------------------------------------------------------------- #
# reflection


@dataclass
class ReflectionReport:
    half_residual: float
    full_residual: float
    neumann_violation: float
    neumann_flagged: bool
    ratio: float

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _away_from_cap(chart: Chart) -> np.ndarray:
    """Masked-in nodes not adjacent to the curved (spherical) boundary."""
    grid = chart.grid
    R = grid.params["radius"]
    x = grid.coords
    r = np.sqrt(np.sum(x * x, axis=-1))
    return grid.active & (r < R - 1.5 * grid.max_spacing)


def neumann_violation(f: ComplexField) -> float:
    """RMS of the second-order extrapolated normal derivative on the flat face ``x3 = 0``."""
    grid = f.chart.grid
    u = f.values
    h = grid.spacing[2]
    face = _away_from_cap(f.chart)[:, :, 0]
    dn = (-2 * u[:, :, 0] + 3 * u[:, :, 1] - u[:, :, 2]) / h
    vals = np.abs(dn[face])
    return float(np.sqrt(np.mean(vals**2))) if vals.size else 0.0


def reflect_even(f: ComplexField, flag_tol: float = 0.1) -> tuple[ComplexField, ReflectionReport]:
    """Even reflection across ``x3 = 0``: ``u~(x', x3) = u(x', |x3|)`` on the full ball.

    Returns the reflected field and interior residual norms (unnormalized
    weighted L2 over nodes away from the spherical cap) of both fields.
    """
    chart = f.chart
    grid = chart.grid
    if grid.chart_id != "half_ball":
        raise ChartError(f"reflect_even needs a half_ball chart, got {grid.chart_id}")
    n1, n2, n3 = grid.dims
    full_chart = build_chart("ball", (n1, n2, 2 * n3), {"radius": grid.params["radius"],
                                                        "metric_bump": grid.params.get("metric_bump", 0.0)})
    vals = np.concatenate([f.values[:, :, ::-1], f.values], axis=2)
    full = ComplexField(vals, f.epsilon, full_chart, dict(f.meta))

    # compare on full-ball nodes whose whole stencil is active in the mirrored
    # half-ball (the two masks differ where the flat face meets the cap)
    mirrored = np.concatenate([grid.active[:, :, ::-1], grid.active], axis=2)
    sel = ndimage.binary_erosion(mirrored & full_chart.grid.active, border_value=0)
    sel &= _away_from_cap(full_chart)

    def interior_norm(fld: ComplexField, mask: np.ndarray) -> float:
        r = gl_residual(fld)
        return float(np.sqrt(psum(fld.chart.weights[mask] * np.abs(r[mask]) ** 2)))

    half_res = interior_norm(f, sel[:, :, n3:])
    full_res = interior_norm(full, sel)
    viol = neumann_violation(f)
    ratio = full_res / half_res if half_res > 0 else (0.0 if full_res == 0 else np.inf)
    return full, ReflectionReport(half_res, full_res, viol, viol > flag_tol, ratio)


# --------------------------------------------------------------------------- #
# initial data


def init_constant(chart: Chart, epsilon: float, value: complex = 1.0) -> ComplexField:
    return ComplexField(np.full(chart.grid.dims, value, dtype=complex), epsilon, chart, {"init": "constant"})


def init_noise(chart: Chart, epsilon: float, seed: int = 0, amplitude: float = 0.5) -> ComplexField:
    rng = np.random.default_rng(seed)
    dims = chart.grid.dims
    vals = amplitude * (rng.uniform(-1, 1, dims) + 1j * rng.uniform(-1, 1, dims)) / np.sqrt(2)
    return ComplexField(vals, epsilon, chart, {"init": "noise", "seed": seed})


def init_vortex(chart: Chart, epsilon: float, center=None, degree: int = 1, axes=(0, 1)) -> ComplexField:
    """Planted ``tanh(d/eps) e^{i deg theta}`` about a core in the plane of ``axes``."""
    x = chart.grid.coords
    c = np.zeros(2) if center is None else np.asarray(center, float)
    dx = x[..., axes[0]] - c[0]
    dy = x[..., axes[1]] - c[1]
    d = np.hypot(dx, dy)
    vals = np.tanh(d / epsilon) * np.exp(1j * degree * np.arctan2(dy, dx))
    return ComplexField(vals, epsilon, chart, {"init": "vortex", "center": c.tolist(), "degree": degree})


def exact_product_solution(chart: Chart, k: int) -> ComplexField:
    """``(1 - k^2 eps^2)^{1/2} e^{iks}`` with ``eps = e^{-k^2}`` on the product chart."""
    if chart.grid.chart_id != "product_s1_hemisphere":
        raise ChartError("exact solution lives on the product chart")
    eps = float(np.exp(-(k**2)))
    s = chart.grid.coords[..., 0]
    amp = np.sqrt(1.0 - k * k * eps * eps)
    return ComplexField(amp * np.exp(1j * k * s), eps, chart, {"init": "exact", "k": k})


def boundary_nodes(chart: Chart) -> np.ndarray:
    return chart.grid.mask == BOUNDARY
