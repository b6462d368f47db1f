"""Discrete 1-forms on grid edges and their Hodge decomposition.

A 1-form is stored by its values on the edges of the chart's edge complex
(``omega_e ~ omega(e_axis)`` at the edge midpoint).  The exterior derivatives
``d0`` (nodes -> edges) and ``d1`` (edges -> faces) satisfy ``d1 d0 = 0``
exactly; the metric enters through the diagonal edge mass ``M1``.  With the
natural (mirror) boundary rows this realises the normal-trace condition: the
adjoint ``d* = W^-1 d0^T M1`` carries no boundary flux.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .grid import Chart, build_chart, sibling
from .stencil import psum, symmetric_lu

if TYPE_CHECKING:
    from .field import ComplexField

logger = logging.getLogger("gllab.hodge")


class HodgeError(ValueError):
    pass


@dataclass(eq=False)
class DiscreteOneForm:
    """Edge values of a 1-form on a chart's edge complex."""

    values: np.ndarray
    chart: Chart

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.chart.ops.n1,):
            raise HodgeError(f"one-form needs {self.chart.ops.n1} edge values, got {v.shape}")
        self.values = v

    # arithmetic ----------------------------------------------------------
    def __add__(self, other: DiscreteOneForm) -> DiscreteOneForm:
        return DiscreteOneForm(self.values + other.values, self.chart)

    def __sub__(self, other: DiscreteOneForm) -> DiscreteOneForm:
        return DiscreteOneForm(self.values - other.values, self.chart)

    def __mul__(self, c: float) -> DiscreteOneForm:
        return DiscreteOneForm(c * self.values, self.chart)

    __rmul__ = __mul__

    # metric --------------------------------------------------------------
    def inner(self, other: DiscreteOneForm) -> float:
        """``<omega, eta>_g = sum_e m_e omega_e eta_e``."""
        return psum(self.chart.ops.edge_mass * self.values * other.values)

    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self), 0.0)))

    def node_components(self) -> np.ndarray:
        """Covariant components per node (full shape ``dims + (ndim,)``).

        Average of the adjacent edges along each axis; a node with a single
        adjacent edge takes that edge's value.
        """
        ops = self.chart.ops
        acc = np.zeros((ops.n0, ops.ndim))
        cnt = np.zeros((ops.n0, ops.ndim))
        np.add.at(acc, (ops.edge_tail, ops.edge_axis), self.values)
        np.add.at(acc, (ops.edge_head, ops.edge_axis), self.values)
        np.add.at(cnt, (ops.edge_tail, ops.edge_axis), 1.0)
        np.add.at(cnt, (ops.edge_head, ops.edge_axis), 1.0)
        return ops.to_full(np.where(cnt > 0, acc / np.maximum(cnt, 1.0), 0.0))

    def pointwise_norm2(self) -> np.ndarray:
        """``|omega|_g^2`` per node (compact), averaged over adjacent edges like the energy density."""
        ops = self.chart.ops
        sq = self.values**2
        out = np.zeros(ops.n0)
        g = ops.ginv[ops.edge_tail, ops.edge_axis]
        gh = ops.ginv[ops.edge_head, ops.edge_axis]
        np.add.at(out, ops.edge_tail, 0.5 * g * sq)
        np.add.at(out, ops.edge_head, 0.5 * gh * sq)
        return out

    def integral_half_norm2(self) -> float:
        """``int |omega|_g^2 / 2``, equal to ``||omega||^2 / 2``."""
        return 0.5 * self.inner(self)

    # constructors --------------------------------------------------------
    @classmethod
    def zeros(cls, chart: Chart) -> DiscreteOneForm:
        return cls(np.zeros(chart.ops.n1), chart)

    @classmethod
    def from_function(cls, chart: Chart, fn) -> DiscreteOneForm:
        """Sample covariant components ``fn(x) -> (..., ndim)`` at edge midpoints."""
        ops = chart.ops
        x = chart.grid.coords.reshape(-1, chart.grid.ndim)[ops.active_flat]
        mid = x[ops.edge_tail].copy()
        mid[np.arange(ops.n1), ops.edge_axis] += 0.5 * ops.edge_h
        comps = np.asarray(fn(mid), dtype=float)
        return cls(comps[np.arange(ops.n1), ops.edge_axis], chart)

    @classmethod
    def exact(cls, chart: Chart, f: np.ndarray) -> DiscreteOneForm:
        """``df`` for a scalar node field (full shape or compact)."""
        ops = chart.ops
        f = np.asarray(f)
        fc = ops.to_compact(f) if f.shape == chart.grid.dims else f
        return cls(ops.d0 @ fc, chart)

    # io ------------------------------------------------------------------
    def save(self, path: str | Path, **meta) -> None:
        path = Path(path)
        side = {"grid": self.chart.grid.header(), "n_edges": int(self.values.size),
                "layout": "float64 little-endian edge values in edge order (axis-major)", "meta": meta}
        sibling(path, ".json").write_text(json.dumps(side, indent=2, sort_keys=True, default=str) + "\n")
        self.values.astype("<f8").tofile(sibling(path, ".bin"))

    @classmethod
    def load(cls, path: str | Path) -> DiscreteOneForm:
        path = Path(path)
        try:
            side = json.loads(sibling(path, ".json").read_text())
            hdr = side["grid"]
            chart = build_chart(hdr["chart_id"], hdr["dims"], hdr["params"])
            vals = np.fromfile(sibling(path, ".bin"), dtype="<f8")
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise HodgeError(f"cannot read form dump {path}: {exc}") from exc
        return cls(vals, chart)


# --------------------------------------------------------------------------- #
# operators


def d(form: DiscreteOneForm) -> np.ndarray:
    """Face values of ``d omega`` (``d_a omega_b - d_b omega_a`` per plaquette, ``a < b``)."""
    return form.chart.ops.d1 @ form.values


def d_star(form: DiscreteOneForm) -> np.ndarray:
    """Node divergence ``d* omega = W^-1 d0^T M1 omega`` (full shape).

    This is the discrete ``-(1/sqrt g) d_i(sqrt g g^ij omega_j)`` with zero
    boundary flux, and satisfies ``<d* omega, f>_W = <omega, df>_M1`` exactly.
    """
    ops = form.chart.ops
    return ops.to_full(ops.d0.T @ (ops.edge_mass * form.values) / ops.w)


def scalar_inner(chart: Chart, f: np.ndarray, g: np.ndarray) -> float:
    """``sum_nodes w f g`` for full-shape scalar fields."""
    ops = chart.ops
    return psum(ops.w * ops.to_compact(f) * ops.to_compact(g))


def boundary_flux(form: DiscreteOneForm) -> np.ndarray:
    """Normal components ``omega(nu)`` at boundary nodes, from node components."""
    chart = form.chart
    nrm = chart.normal
    if nrm is None or len(nrm.nodes) == 0:
        return np.zeros(0)
    comps = form.node_components()
    idx = tuple(np.asarray(nrm.nodes).T)
    return np.sum(comps[idx] * nrm.nu, axis=-1)


# --------------------------------------------------------------------------- #
# decomposition


@dataclass(eq=False)
class HodgeSplit:
    harmonic: DiscreteOneForm
    exact: DiscreteOneForm
    coexact: DiscreteOneForm
    residual_norm: float
    alpha: np.ndarray | None = None
    flagged: bool = False

    def orthogonality(self) -> dict[str, float]:
        """Pairwise inner products relative to the product of norms.

        Each norm is floored at ``1e-6 ||omega||`` so that a part which vanishes
        to roundoff does not turn roundoff into an O(1) ratio.
        """
        parts = {"harmonic": self.harmonic, "exact": self.exact, "coexact": self.coexact}
        floor = 1e-6 * (self.harmonic + self.exact + self.coexact).norm()
        out = {}
        names = list(parts)
        for i in range(3):
            for j in range(i + 1, 3):
                a, b = parts[names[i]], parts[names[j]]
                den = max(a.norm(), floor) * max(b.norm(), floor)
                out[f"{names[i]}-{names[j]}"] = abs(a.inner(b)) / den if den > 0 else 0.0
        return out

    def harmonicity(self) -> dict[str, float]:
        """Norms of ``dh``, ``d*h`` relative to ``||h||`` (0 when ``h = 0``)."""
        h = self.harmonic
        n = h.norm()
        ops = h.chart.ops
        dh = d(h)
        dsh = ops.to_compact(d_star(h))
        if n == 0:
            return {"d": 0.0, "d_star": 0.0}
        return {
            "d": float(np.sqrt(psum(ops.face_mass * dh**2))) / n if dh.size else 0.0,
            "d_star": float(np.sqrt(psum(ops.w * dsh**2))) / n,
        }


class _HodgeSolvers:
    """Cached factorizations for one chart."""

    def __init__(self, chart: Chart) -> None:
        self.chart = chart
        self.ops = chart.ops

    @cached_property
    def poisson(self):
        """LU of the stiffness matrix pinned at one node per connected component."""
        ops = self.ops
        K = ops.stiffness.tocsr()
        ncomp, labels = connected_components(K, directed=False)
        pins = np.array([int(np.flatnonzero(labels == c)[0]) for c in range(ncomp)])
        keep = np.ones(ops.n0, dtype=bool)
        keep[pins] = False
        Kr = K[keep][:, keep].tocsc()
        return symmetric_lu(Kr), keep, labels, ncomp

    @cached_property
    def d2(self) -> sp.csr_matrix | None:
        """Face -> cube operator for 3D charts (``None`` otherwise)."""
        ops = self.ops
        if ops.ndim != 3 or ops.n2 == 0:
            return None
        f = ops.faces
        # face id by (pair, anchor node); pairs (01, 02, 12) -> 0, 1, 2
        face_at = np.full((3, ops.n0), -1, dtype=np.int64)
        pid = np.where((f["a"] == 0) & (f["b"] == 1), 0, np.where(f["a"] == 0, 1, 2))
        face_at[pid, f["c0"]] = np.arange(ops.n2)
        # complementary axis and orientation sign: (01)->2 '+', (02)->1 '-', (12)->0 '+'
        comp = {0: (2, 1.0), 1: (1, -1.0), 2: (0, 1.0)}
        rows, cols, data = [], [], []
        nodes = np.arange(ops.n0)
        step = [ops.neighbour_index(a, 1).ravel()[ops.active_flat] for a in range(3)]
        # cube anchored at node i exists if all six faces exist
        near = []
        far = []
        ok = np.ones(ops.n0, dtype=bool)
        for p in range(3):
            c, _ = comp[p]
            lo = face_at[p, nodes]
            nb = step[c]
            hi = np.where(nb >= 0, face_at[p, np.maximum(nb, 0)], -1)
            ok &= (lo >= 0) & (hi >= 0)
            near.append(lo)
            far.append(hi)
        cubes = np.flatnonzero(ok)
        nc = len(cubes)
        if nc == 0:
            return None
        r = np.arange(nc)
        for p in range(3):
            c, sgn = comp[p]
            hc = ops.h[c]
            rows += [r, r]
            cols += [far[p][cubes], near[p][cubes]]
            data += [np.full(nc, sgn / hc), np.full(nc, -sgn / hc)]
        return sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(nc, ops.n2))

    @cached_property
    def curl_system(self):
        """LU of ``d1 M1^-1 d1^T + d2^T d2`` (nonsingular without 2-cohomology)."""
        ops = self.ops
        A = ops.d1 @ sp.diags(1.0 / ops.edge_mass) @ ops.d1.T
        if self.d2 is not None:
            A = A + self.d2.T @ self.d2
        A = A.tocsc()
        try:
            return symmetric_lu(A), A
        except RuntimeError:
            return None, A


_SOLVERS: dict[int, _HodgeSolvers] = {}


def _solvers(chart: Chart) -> _HodgeSolvers:
    key = id(chart)
    s = _SOLVERS.get(key)
    if s is None or s.chart is not chart:
        s = _HodgeSolvers(chart)
        _SOLVERS[key] = s
        if len(_SOLVERS) > 16:
            _SOLVERS.pop(next(iter(_SOLVERS)))
    return s


def solve_neumann_poisson(chart: Chart, rhs: np.ndarray) -> np.ndarray:
    """Solve ``K alpha = rhs`` (compact) with mean-zero ``alpha`` per component.

    ``rhs`` must sum to zero on each connected component (it does for ``d0^T M1 omega``).
    """
    ops = chart.ops
    lu, keep, labels, ncomp = _solvers(chart).poisson
    alpha = np.zeros(ops.n0)
    alpha[keep] = lu.solve(rhs[keep])
    for c in range(ncomp):
        sel = labels == c
        alpha[sel] -= psum(ops.w[sel] * alpha[sel]) / psum(ops.w[sel])
    return alpha


def hodge_decompose(form: DiscreteOneForm, tol: float = 1e-10) -> HodgeSplit:
    """Split ``omega = h + d alpha + delta beta`` orthogonally in ``L^2_g``.

    ``alpha`` is the mean-zero Neumann potential (``K alpha = d0^T M1 omega``).
    The co-exact part is ``M1^-1 d1^T gamma`` with ``d1 M1^-1 d1^T gamma = d1 omega``;
    the remainder ``h`` is closed, co-closed and carries no boundary flux.
    """
    chart = form.chart
    ops = chart.ops
    om = form.values
    alpha = solve_neumann_poisson(chart, ops.d0.T @ (ops.edge_mass * om))
    exact = ops.d0 @ alpha
    coexact = np.zeros(ops.n1)
    flagged = False
    if ops.n2:
        rhs = ops.d1 @ (om - exact)
        if np.any(rhs):
            lu, A = _solvers(chart).curl_system
            if lu is not None:
                gamma = lu.solve(rhs)
            else:
                gamma, info = spla.cg(A, rhs, rtol=1e-13, maxiter=20 * A.shape[0])
                flagged = info != 0
            coexact = (ops.d1.T @ gamma) / ops.edge_mass
    harmonic = om - exact - coexact
    # residual: how well the defining conditions of each part hold
    nrm = max(form.norm(), 1e-300)
    split = HodgeSplit(
        DiscreteOneForm(harmonic, chart), DiscreteOneForm(exact, chart), DiscreteOneForm(coexact, chart),
        0.0, alpha=ops.to_full(alpha), flagged=flagged,
    )
    dh = d(split.harmonic)
    dsh = ops.d0.T @ (ops.edge_mass * harmonic)
    res = np.sqrt(psum(dh**2) + psum(dsh**2)) if dh.size else np.sqrt(psum(dsh**2))
    split.residual_norm = float(res) / nrm
    if split.residual_norm > tol * max(1.0, float(np.max(1.0 / ops.edge_h))) ** 2:
        split.flagged = True
    return split


# --------------------------------------------------------------------------- #
# psi


@dataclass(eq=False)
class PsiExtraction:
    epsilon: float
    psi: DiscreteOneForm
    split: HodgeSplit
    d_norm: float
    d_star_norm: float
    normal_norm: float

    @property
    def harmonic_defect(self) -> float:
        """``||psi - harmonic(psi)|| / ||psi||`` (0 for ``psi = 0``)."""
        n = self.psi.norm()
        return (self.psi - self.split.harmonic).norm() / n if n > 0 else 0.0

    @property
    def harmonic_fraction(self) -> float:
        n = self.psi.norm()
        return self.split.harmonic.norm() / n if n > 0 else 0.0


def extract_psi(fields: Sequence[ComplexField], residual_tol: float = 1e-6) -> list[PsiExtraction]:
    """``psi_k = |log eps_k|^{-1/2} u_k x du_k`` and its harmonic part for each field.

    Fields whose GL residual exceeds ``residual_tol`` are rejected.
    """
    from .field import u_cross_du
    from .solver import gl_residual, residual_norm

    out = []
    for f in fields:
        if f.epsilon >= 1.0:
            raise HodgeError("extract_psi needs eps < 1")
        r = residual_norm(f.chart, f.chart.ops.to_compact(gl_residual(f)))
        if r > residual_tol:
            raise HodgeError(f"field not converged: residual {r:.3e} > {residual_tol:.1e}")
        psi = u_cross_du(f) * (1.0 / np.sqrt(abs(np.log(f.epsilon))))
        split = hodge_decompose(psi)
        ops = f.chart.ops
        n = max(psi.norm(), 1e-300)
        dps = d(psi)
        dsp = ops.to_compact(d_star(psi))
        flux = boundary_flux(psi)
        out.append(PsiExtraction(
            epsilon=f.epsilon, psi=psi, split=split,
            d_norm=float(np.sqrt(psum(ops.face_mass * dps**2))) / n if dps.size else 0.0,
            d_star_norm=float(np.sqrt(psum(ops.w * dsp**2))) / n,
            normal_norm=float(np.sqrt(np.mean(flux**2))) if flux.size else 0.0,
        ))
    return out
