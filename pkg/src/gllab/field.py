"""Complex order-parameter fields, energies and pointwise decompositions."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .grid import Chart, build_chart, sibling
from .stencil import psum


class FieldError(ValueError):
    pass


@dataclass(eq=False)
class ComplexField:
    """Node values of ``u`` on a chart, with the GL parameter attached.

    ``values`` has the grid's full shape; exterior entries are kept at zero.
    """

    values: np.ndarray
    epsilon: float
    chart: Chart
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise FieldError("epsilon must be positive")
        v = np.asarray(self.values, dtype=complex)
        if v.shape != self.chart.grid.dims:
            raise FieldError(f"values shape {v.shape} != grid dims {self.chart.grid.dims}")
        self.values = np.where(self.chart.grid.active, v, 0.0)

    @property
    def compact(self) -> np.ndarray:
        return self.chart.ops.to_compact(self.values)

    def with_values(self, values: np.ndarray, **meta: Any) -> ComplexField:
        return ComplexField(values, self.epsilon, self.chart, {**self.meta, **meta})

    @classmethod
    def from_compact(cls, compact: np.ndarray, epsilon: float, chart: Chart, **meta: Any) -> ComplexField:
        return cls(chart.ops.to_full(np.asarray(compact, dtype=complex)), epsilon, chart, dict(meta))

    @classmethod
    def from_function(cls, chart: Chart, epsilon: float, fn, **meta: Any) -> ComplexField:
        x = chart.grid.coords
        vals = np.broadcast_to(np.asarray(fn(x), dtype=complex), chart.grid.dims)
        return cls(np.array(vals), epsilon, chart, dict(meta))


# --------------------------------------------------------------------------- #
# derivatives


def gradient(f: ComplexField) -> np.ndarray:
    """Covariant chart gradient, full shape ``dims + (ndim,)``.

    Central differences inside, second-order one-sided next to missing nodes.
    """
    ops = f.chart.ops
    return ops.to_full(ops.central_gradient(f.compact))


def grad_norm2(f: ComplexField) -> np.ndarray:
    """``|grad u|_g^2`` from the central gradient (full shape)."""
    g = gradient(f)
    return np.sum(f.chart.metric.inv_diag * np.abs(g) ** 2, axis=-1)


def _pair_terms(f: ComplexField):
    ops = f.chart.ops
    u = f.compact
    fwd, bwd = ops.one_sided(u)
    return ops, u, fwd, bwd


def energy_density(f: ComplexField, potential: str = "quartic") -> np.ndarray:
    """``e_eps(u)`` per node (compact), gradient part averaged over one-sided stencils."""
    ops, u, fwd, bwd = _pair_terms(f)
    grad2 = 0.5 * np.sum(ops.ginv * (np.abs(fwd) ** 2 + np.abs(bwd) ** 2), axis=1)
    return 0.5 * grad2 + potential_density(np.abs(u), f.epsilon, potential)


def potential_density(rho: np.ndarray, epsilon: float, potential: str = "quartic") -> np.ndarray:
    if potential == "quartic":
        return (1.0 - rho**2) ** 2 / (4.0 * epsilon**2)
    if potential == "modified":
        return modified_potential(rho)[0] / epsilon**2
    raise FieldError(f"unknown potential {potential!r}")


def energy(f: ComplexField, potential: str = "quartic") -> float:
    """Total discrete energy ``sum_cells e * sqrt_det * cellvol``."""
    return psum(energy_density(f, potential) * f.chart.ops.w)


def modified_potential(t):
    """``W(t)`` and ``W'(t)``: quartic below 1, ``(t-1)^2`` above."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise FieldError("modified potential needs t >= 0")
    low = t <= 1.0
    W = np.where(low, (t * t - 1.0) ** 2 / 4.0, (t - 1.0) ** 2)
    dW = np.where(low, (t * t - 1.0) * t, 2.0 * (t - 1.0))
    if W.ndim == 0:
        return float(W), float(dW)
    return W, dW


def decompose_energy(f: ComplexField) -> np.ndarray:
    """Four parts of ``e_eps(u)`` per node (compact, shape ``(n0, 4)``), nonnegative where ``|u| <= 1``.

    Columns: ``(1-|u|^2)|grad u|^2/2``, ``|grad |u|^2|^2/8``, ``|u x grad u|^2/2``,
    ``(1-|u|^2)^2/(4 eps^2)``.  ``grad |u|^2`` is ``2 Re(conj(u) grad u)`` in the
    same discrete derivatives, so the parts sum to the density exactly.
    """
    ops, u, fwd, bwd = _pair_terms(f)
    m2 = np.abs(u) ** 2
    parts = np.zeros((ops.n0, 4))
    for D in (fwd, bwd):
        z = np.conj(u)[:, None] * D
        parts[:, 0] += 0.5 * np.sum(ops.ginv * (1.0 - m2)[:, None] * np.abs(D) ** 2, axis=1)
        parts[:, 1] += 0.5 * np.sum(ops.ginv * z.real**2, axis=1)
        parts[:, 2] += 0.5 * np.sum(ops.ginv * z.imag**2, axis=1)
    parts *= 0.5
    parts[:, 3] = (1.0 - m2) ** 2 / (4.0 * f.epsilon**2)
    return parts


def gradient_decomposition(f: ComplexField) -> tuple[np.ndarray, np.ndarray]:
    """``|grad u|^2`` and its three parts per node (compact), from the central gradient.

    Parts: ``(1-|u|^2)|grad u|^2``, ``|grad |u|^2|^2 / 4``, ``|u x grad u|^2``, with
    ``grad |u|^2 = 2 Re(conj(u) grad u)`` and ``u x grad u = Im(conj(u) grad u)``.
    """
    ops = f.chart.ops
    u = f.compact
    D = ops.central_gradient(u)
    z = np.conj(u)[:, None] * D
    total = np.sum(ops.ginv * np.abs(D) ** 2, axis=1)
    parts = np.stack(
        [
            (1.0 - np.abs(u) ** 2) * total,
            0.25 * np.sum(ops.ginv * (2.0 * z.real) ** 2, axis=1),
            np.sum(ops.ginv * z.imag**2, axis=1),
        ],
        axis=1,
    )
    return total, parts


def cross_gradient(f: ComplexField) -> np.ndarray:
    """Node vector ``u^1 grad u^2 - u^2 grad u^1`` from the central gradient (full shape)."""
    g = gradient(f)
    u = f.values[..., None]
    return u.real * g.imag - u.imag * g.real


def u_cross_du(f: ComplexField):
    """Edge 1-form ``|u_t| |u_h| arg(conj(u_t) u_h) / h`` discretizing ``u x du = rho^2 dphi``.

    The principal phase difference makes the edge integral exact for
    constant-modulus fields ``a e^{i phi}`` with phase jumps below ``pi``; the
    chord form ``Im(conj(u_t) u_h) / h`` would carry a spurious
    ``sin(dphi)/dphi`` factor.
    """
    from .hodge import DiscreteOneForm

    ops = f.chart.ops
    u = f.compact
    ut, uh = u[ops.edge_tail], u[ops.edge_head]
    vals = np.abs(ut) * np.abs(uh) * np.angle(np.conj(ut) * uh) / ops.edge_h
    return DiscreteOneForm(vals, f.chart)


# --------------------------------------------------------------------------- #
# polar form and winding


@dataclass(eq=False)
class PolarForm:
    rho: np.ndarray
    phi: np.ndarray
    X: np.ndarray
    valid_mask: np.ndarray
    seed: tuple[int, ...]


def polar_decompose(f: ComplexField, rho_min: float = 0.5, seed=None) -> PolarForm:
    """Modulus, BFS-unwrapped phase and ``X = (1 - rho)/eps^2``.

    The phase is propagated from ``seed`` (default: the valid node of largest
    modulus, lowest index) through face neighbours with ``rho >= rho_min``,
    adding multiples of 2*pi so each step jumps by less than pi.  Nodes not
    reached are excluded from ``valid_mask``.
    """
    grid = f.chart.grid
    rho = np.abs(f.values)
    ok = grid.active & (rho >= rho_min)
    if not ok.any():
        raise FieldError("no valid seed: |u| < rho_min everywhere")
    if seed is None:
        seed = np.unravel_index(int(np.argmax(np.where(ok, rho, -1.0))), grid.dims)
    seed = tuple(int(s) for s in seed)
    if not ok[seed]:
        raise FieldError("seed node has |u| < rho_min")
    raw = np.angle(f.values)
    phi = np.zeros(grid.dims)
    seen = np.zeros(grid.dims, dtype=bool)
    phi[seed] = raw[seed]
    seen[seed] = True
    queue = deque([seed])
    n = grid.ndim
    while queue:
        idx = queue.popleft()
        for a in range(n):
            for k in (-1, 1):
                j = list(idx)
                j[a] += k
                if grid.periodic[a]:
                    j[a] %= grid.dims[a]
                elif not 0 <= j[a] < grid.dims[a]:
                    continue
                jt = tuple(j)
                if seen[jt] or not ok[jt]:
                    continue
                jump = raw[jt] - phi[idx]
                jump -= 2 * np.pi * np.round(jump / (2 * np.pi))
                if abs(abs(jump) - np.pi) < 1e-15:
                    raise FieldError(f"phase jump of exactly pi between {idx} and {jt}")
                phi[jt] = phi[idx] + jump
                seen[jt] = True
                queue.append(jt)
    X = (1.0 - rho) / f.epsilon**2
    return PolarForm(rho=rho, phi=np.where(seen, phi, 0.0), X=np.where(grid.active, X, 0.0),
                     valid_mask=seen, seed=seed)


def phase_winding(f: ComplexField, loop) -> int:
    """Winding number of ``u`` along a closed loop of node indices.

    The loop is closed automatically; each edge contributes its principal
    phase jump.  An edge jump of at least ``0.99*pi`` is ambiguous and raises.
    """
    loop = [tuple(int(v) for v in node) for node in loop]
    vals = np.array([f.values[node] for node in loop])
    if np.any(np.abs(vals) < 0.5):
        raise FieldError("loop passes through |u| < 0.5")
    nxt = np.roll(vals, -1)
    jumps = np.angle(nxt * np.conj(vals))
    if np.any(np.abs(jumps) >= 0.99 * np.pi):
        raise FieldError("ambiguous winding: phase jump near pi on a loop edge")
    total = float(np.sum(jumps)) / (2 * np.pi)
    return int(round(total))


def square_loop(grid, center, half_width: int) -> list[tuple[int, ...]]:
    """Counter-clockwise square loop of nodes in the first two axes."""
    ci, cj = (int(c) for c in center[:2])
    rest = tuple(int(c) for c in center[2:])
    k = half_width
    pts = []
    for i in range(ci - k, ci + k):
        pts.append((i, cj - k))
    for j in range(cj - k, cj + k):
        pts.append((ci + k, j))
    for i in range(ci + k, ci - k, -1):
        pts.append((i, cj + k))
    for j in range(cj + k, cj - k, -1):
        pts.append((ci - k, j))
    return [p + rest for p in pts]


# --------------------------------------------------------------------------- #
# dumps


def save_field(f: ComplexField, path: str | Path, **meta: Any) -> None:
    """JSON sidecar plus interleaved little-endian float64 ``(re, im)`` per node."""
    path = Path(path)
    sidecar = {
        "grid": f.chart.grid.header(),
        "epsilon": f.epsilon,
        "layout": "interleaved re,im float64 little-endian, row-major over grid dims",
        "meta": {**f.meta, **meta},
    }
    sibling(path, ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True, default=str) + "\n")
    inter = np.empty(f.values.shape + (2,), dtype="<f8")
    inter[..., 0] = f.values.real
    inter[..., 1] = f.values.imag
    inter.tofile(sibling(path, ".bin"))


def load_field(path: str | Path) -> ComplexField:
    path = Path(path)
    try:
        sidecar = json.loads(sibling(path, ".json").read_text())
        hdr = sidecar["grid"]
        chart = build_chart(hdr["chart_id"], hdr["dims"], hdr["params"])
        raw = np.fromfile(sibling(path, ".bin"), dtype="<f8")
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise FieldError(f"cannot read field dump {path}: {exc}") from exc
    if raw.size != 2 * int(np.prod(chart.grid.dims)):
        raise FieldError(f"field dump {path} has {raw.size} values, expected {2 * np.prod(chart.grid.dims)}")
    raw = raw.reshape(chart.grid.dims + (2,))
    return ComplexField(raw[..., 0] + 1j * raw[..., 1], float(sidecar["epsilon"]), chart, sidecar.get("meta", {}))
