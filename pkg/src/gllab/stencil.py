"""Edge/face complex of a masked structured grid and the shared stencils.

Nodes are masked-in cells.  An edge joins two masked-in face neighbours along
one axis (wrapping on periodic axes); a face is a plaquette whose four corners
are masked-in.  Missing neighbours act as mirror ghosts, so the discrete
energy's exact gradient is the compact Laplacian with natural Neumann rows.
"""

from __future__ import annotations

from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import PERIODIC, shifted

if TYPE_CHECKING:
    from .grid import Chart


def psum(x: np.ndarray) -> float:
    """Deterministic pairwise sum over a contiguous copy of ``x``."""
    return float(np.sum(np.ascontiguousarray(x).ravel()))


def symmetric_lu(A: sp.spmatrix) -> spla.SuperLU:
    """Sparse LU of a structurally symmetric matrix.

    A symmetric fill-reducing ordering with near-diagonal pivoting keeps the
    fill several times smaller than the default column ordering, whose
    partial pivoting scrambles the elimination order when the diagonal
    carries large ``1/eps^2`` terms.
    """
    return spla.splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=1e-3,
                     options={"SymmetricMode": True})


class Discretization:
    """Index maps, edge/face lists and assembled operators for one chart."""

    def __init__(self, chart: Chart) -> None:
        self.chart = chart
        grid = chart.grid
        self.grid = grid
        self.dims = grid.dims
        self.ndim = grid.ndim
        self.h = np.asarray(grid.spacing)
        self.active = grid.active
        self.active_flat = np.flatnonzero(self.active.ravel())
        self.n0 = len(self.active_flat)
        lookup = np.full(int(np.prod(self.dims)), -1, dtype=np.int64)
        lookup[self.active_flat] = np.arange(self.n0)
        self.lookup = lookup.reshape(self.dims)
        self.w_full = chart.weights
        self.w = self.w_full.ravel()[self.active_flat]
        self.ginv_full = chart.metric.inv_diag
        self._build_edges()

    # ------------------------------------------------------------------ #
    def periodic(self, axis: int) -> bool:
        return self.grid.sides[axis][0] == PERIODIC

    def neighbour_index(self, axis: int, k: int) -> np.ndarray:
        """Compact index of the node ``k`` steps along ``axis`` (-1 if absent)."""
        return shifted(self.lookup, k, axis, self.periodic(axis), fill=-1)

    def _build_edges(self) -> None:
        tails, heads, axes, mass = [], [], [], []
        for a in range(self.ndim):
            nb = self.neighbour_index(a, 1)
            ok = (self.lookup >= 0) & (nb >= 0)
            t = self.lookup[ok]
            hd = nb[ok]
            wg = self.w * self.ginv_full[..., a].ravel()[self.active_flat]
            tails.append(t)
            heads.append(hd)
            axes.append(np.full(len(t), a, dtype=np.int64))
            mass.append(0.5 * (wg[t] + wg[hd]))
        self.edge_tail = np.concatenate(tails)
        self.edge_head = np.concatenate(heads)
        self.edge_axis = np.concatenate(axes)
        self.edge_mass = np.concatenate(mass)
        self.edge_h = self.h[self.edge_axis]
        self.n1 = len(self.edge_tail)

    # ------------------------------------------------------------------ #
    def to_compact(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values).reshape(-1, *np.shape(values)[self.ndim:])[self.active_flat]

    def to_full(self, compact: np.ndarray, dtype=None) -> np.ndarray:
        tail = compact.shape[1:]
        out = np.zeros((int(np.prod(self.dims)),) + tail, dtype=dtype or compact.dtype)
        out[self.active_flat] = compact
        return out.reshape(self.dims + tail)

    @cached_property
    def d0(self) -> sp.csr_matrix:
        """Node -> edge difference operator ``(f_head - f_tail) / h``."""
        rows = np.arange(self.n1)
        inv_h = 1.0 / self.edge_h
        data = np.concatenate([inv_h, -inv_h])
        return sp.csr_matrix(
            (data, (np.concatenate([rows, rows]), np.concatenate([self.edge_head, self.edge_tail]))),
            shape=(self.n1, self.n0),
        )

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """``K = d0^T M1 d0``; ``u^T K u / 2`` is the discrete Dirichlet energy."""
        M1 = sp.diags(self.edge_mass)
        return (self.d0.T @ M1 @ self.d0).tocsr()

    # ------------------------------------------------------------------ #
    def one_sided(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Forward and backward differences per node and axis (0 across missing neighbours).

        Returns compact arrays of shape ``(n0, ndim)``.
        """
        u = np.asarray(u)
        diff = (u[self.edge_head] - u[self.edge_tail]) / self.edge_h
        fwd = np.zeros((self.n0, self.ndim), dtype=diff.dtype)
        bwd = np.zeros((self.n0, self.ndim), dtype=diff.dtype)
        fwd[self.edge_tail, self.edge_axis] = diff
        bwd[self.edge_head, self.edge_axis] = diff
        return fwd, bwd

    @cached_property
    def ginv(self) -> np.ndarray:
        return self.ginv_full.reshape(-1, self.ndim)[self.active_flat]

    # ------------------------------------------------------------------ #
    @cached_property
    def _central_plan(self):
        plan = []
        for a in range(self.ndim):
            p1 = self.neighbour_index(a, 1).ravel()[self.active_flat]
            m1 = self.neighbour_index(a, -1).ravel()[self.active_flat]
            p2 = self.neighbour_index(a, 2).ravel()[self.active_flat]
            m2 = self.neighbour_index(a, -2).ravel()[self.active_flat]
            # p2/m2 only count when reached through a present p1/m1
            p2 = np.where(p1 >= 0, p2, -1)
            m2 = np.where(m1 >= 0, m2, -1)
            plan.append((p1, m1, p2, m2))
        return plan

    def central_gradient(self, u: np.ndarray) -> np.ndarray:
        """Chart-gradient (covariant components) of compact node values.

        Central differences where both neighbours exist, second-order one-sided
        where two nodes exist on one side, first-order with one, else zero.
        """
        u = np.asarray(u)
        out = np.zeros((self.n0, self.ndim) + u.shape[1:], dtype=u.dtype if u.dtype.kind == "c" else float)
        ext = np.concatenate([u, np.zeros((1,) + u.shape[1:], dtype=u.dtype)])  # index -1 -> 0
        for a, (p1, m1, p2, m2) in enumerate(self._central_plan):
            h = self.h[a]
            up1, um1, up2, um2 = ext[p1], ext[m1], ext[p2], ext[m2]
            hp1, hm1, hp2, hm2 = p1 >= 0, m1 >= 0, p2 >= 0, m2 >= 0
            c = np.where(hp1 & hm1, 1, np.where(hp2, 2, np.where(hm2, 3, np.where(hp1, 4, np.where(hm1, 5, 0)))))
            if u.ndim > 1:
                c = c.reshape((-1,) + (1,) * (u.ndim - 1))
            g = np.select(
                [c == 1, c == 2, c == 3, c == 4, c == 5],
                [
                    (up1 - um1) / (2 * h),
                    (-3 * u + 4 * up1 - up2) / (2 * h),
                    (3 * u - 4 * um1 + um2) / (2 * h),
                    (up1 - u) / h,
                    (u - um1) / h,
                ],
                default=0.0,
            )
            out[:, a] = g
        return out

    # ------------------------------------------------------------------ #
    @cached_property
    def faces(self):
        """Plaquettes as ``(bottom, top, left, right, axis_a, axis_b, corners)`` compact arrays.

        With ``a < b``: bottom/top are a-edges at ``i`` and ``i + e_b``;
        left/right are b-edges at ``i`` and ``i + e_a``.
        """
        edge_id = {}
        for a in range(self.ndim):
            sel = self.edge_axis == a
            ids = np.full(self.n0, -1, dtype=np.int64)
            ids[self.edge_tail[sel]] = np.flatnonzero(sel)
            edge_id[a] = ids  # a-edge leaving each node, by tail
        out = {k: [] for k in ("bottom", "top", "left", "right", "a", "b", "c0", "c1", "c2", "c3")}
        for a in range(self.ndim):
            for b in range(a + 1, self.ndim):
                ia = self.neighbour_index(a, 1).ravel()[self.active_flat]
                ib = self.neighbour_index(b, 1).ravel()[self.active_flat]
                nb_full = shifted(self.neighbour_index(a, 1), 1, b, self.periodic(b), fill=-1)
                iab = nb_full.ravel()[self.active_flat]
                ok = (ia >= 0) & (ib >= 0) & (iab >= 0)
                i0 = np.flatnonzero(ok)
                bottom = edge_id[a][i0]
                top = edge_id[a][ib[i0]]
                left = edge_id[b][i0]
                right = edge_id[b][ia[i0]]
                good = (bottom >= 0) & (top >= 0) & (left >= 0) & (right >= 0)
                out["bottom"].append(bottom[good])
                out["top"].append(top[good])
                out["left"].append(left[good])
                out["right"].append(right[good])
                cnt = int(good.sum())
                out["a"].append(np.full(cnt, a))
                out["b"].append(np.full(cnt, b))
                out["c0"].append(i0[good])
                out["c1"].append(ia[i0][good])
                out["c2"].append(ib[i0][good])
                out["c3"].append(iab[i0][good])
        return {k: (np.concatenate(v) if v else np.zeros(0, dtype=np.int64)) for k, v in out.items()}

    @cached_property
    def n2(self) -> int:
        return len(self.faces["bottom"])

    @cached_property
    def d1(self) -> sp.csr_matrix:
        """Edge -> face operator ``d_a w_b - d_b w_a``."""
        f = self.faces
        n2 = self.n2
        rows = np.arange(n2)
        ha = self.h[f["a"]]
        hb = self.h[f["b"]]
        data = np.concatenate([1 / ha, -1 / ha, -1 / hb, 1 / hb])
        cols = np.concatenate([f["right"], f["left"], f["top"], f["bottom"]])
        return sp.csr_matrix((data, (np.tile(rows, 4), cols)), shape=(n2, self.n1))

    @cached_property
    def face_mass(self) -> np.ndarray:
        f = self.faces
        if self.n2 == 0:
            return np.zeros(0)
        wg = self.w[:, None] * self.ginv
        corners = [f["c0"], f["c1"], f["c2"], f["c3"]]
        val = sum(wg[c, f["a"]] * self.ginv[c, f["b"]] for c in corners) / 4.0
        return val
