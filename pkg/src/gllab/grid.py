"""Structured grids, diagonal chart metrics and boundary normals.

Nodes sit at cell centers of a rectangular index lattice.  A cell mask selects
the computational domain; masked-in cells are labelled interior or boundary.
Every chart carries a diagonal metric ``g = diag(G_1, ..., G_n)`` given as a
function of chart coordinates, and the boundary as a list of level-set pieces
``F(x) = 0`` (domain is ``F < 0``) used for normals and convexity checks.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Iterator, Sequence

import numpy as np

EXTERIOR = 0
INTERIOR = 1
BOUNDARY = 2

CHART_IDS = (
    "box",
    "disk",
    "ball",
    "product_s1_hemisphere",
    "half_ellipse_rz",
    "half_ball",
    "solid_ellipsoid",
)

# side kinds for the faces of the index box
WALL = "wall"
AXIS = "axis"
PERIODIC = "periodic"


class ChartError(ValueError):
    """Raised for unknown charts or unusable resolutions."""


@dataclass(frozen=True, eq=False)
class StructuredGrid:
    chart_id: str
    dims: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...]
    periodic: tuple[bool, ...]
    sides: tuple[tuple[str, str], ...]
    mask: np.ndarray
    params: dict[str, Any] = field(default_factory=dict)
    pruned: int = 0

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def cellvol(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def active(self) -> np.ndarray:
        return self.mask != EXTERIOR

    @property
    def max_spacing(self) -> float:
        return float(max(self.spacing))

    def axis_coords(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * h

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``dims + (ndim,)``."""
        axes = [self.axis_coords(a) for a in range(self.ndim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def header(self) -> dict[str, Any]:
        return {
            "chart_id": self.chart_id,
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "origin": list(self.origin),
            "periodic": list(self.periodic),
            "params": _jsonable(self.params),
        }


@dataclass(frozen=True, eq=False)
class MetricField:
    g: np.ndarray
    sqrt_det: np.ndarray
    g_inv: np.ndarray
    lam: float

    @property
    def diag(self) -> np.ndarray:
        return np.diagonal(self.g, axis1=-2, axis2=-1)

    @property
    def inv_diag(self) -> np.ndarray:
        return np.diagonal(self.g_inv, axis1=-2, axis2=-1)


@dataclass(frozen=True, eq=False)
class BoundaryNormal:
    """Inward unit normals (w.r.t. g) at boundary nodes.

    ``shape_ops[k]`` is the symmetric matrix of ``xi -> <nabla_xi nu, xi>``
    in the g-orthonormal tangent basis ``tangents[k]``.
    """

    nodes: np.ndarray  # (m, ndim) integer indices
    foot: np.ndarray  # (m, ndim) projected boundary points
    nu: np.ndarray  # (m, ndim)
    tangents: np.ndarray  # (m, ndim-1, ndim)
    shape_ops: np.ndarray  # (m, ndim-1, ndim-1)

    def shape_op_quadform(self, k: int, xi: np.ndarray) -> float:
        """Evaluate ``<nabla_xi nu, xi>`` for a tangent vector in tangent-basis coordinates."""
        xi = np.asarray(xi, dtype=float)
        return float(xi @ self.shape_ops[k] @ xi)


@dataclass(frozen=True, eq=False)
class Chart:
    grid: StructuredGrid
    metric: MetricField
    normal: BoundaryNormal
    metric_fn: Callable[[np.ndarray], np.ndarray]
    pieces: tuple[Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]], ...]

    def __iter__(self) -> Iterator[Any]:
        return iter((self.grid, self.metric, self.normal))

    @property
    def ndim(self) -> int:
        return self.grid.ndim

    @cached_property
    def weights(self) -> np.ndarray:
        """Per-node volume weights ``sqrt_det * cellvol`` (zero outside the mask)."""
        return np.where(self.grid.active, self.metric.sqrt_det * self.grid.cellvol, 0.0)

    @cached_property
    def volume(self) -> float:
        return float(np.sum(self.weights))

    @cached_property
    def ops(self):
        from .stencil import Discretization

        return Discretization(self)


# --------------------------------------------------------------------------- #
# chart definitions


def _flat_metric(n: int) -> Callable[[np.ndarray], np.ndarray]:
    def fn(x: np.ndarray) -> np.ndarray:
        return np.ones(x.shape[:-1] + (n,))

    return fn


def _bump_metric(n: int, a: float) -> Callable[[np.ndarray], np.ndarray]:
    # conformal factor even in every coordinate, so reflections preserve it
    def fn(x: np.ndarray) -> np.ndarray:
        f = 1.0 + a * np.sum(x * x, axis=-1)
        return np.repeat(f[..., None], n, axis=-1)

    return fn


def _product_metric(x: np.ndarray) -> np.ndarray:
    out = np.ones(x.shape)
    out[..., 2] = np.sin(x[..., 1]) ** 2
    return out


def _sphere_piece(radius: float, scale: Sequence[float] | None = None):
    """Level set sum((x_i/scale_i)^2) - 1 (ellipsoid when scale given)."""

    def piece(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = np.ones(x.shape[-1]) * radius if scale is None else np.asarray(scale, float)
        F = np.sum((x / s) ** 2, axis=-1) - 1.0
        grad = 2.0 * x / s**2
        return F, grad

    return piece


def _plane_piece(axis: int, value: float, sign: float):
    """Level set sign*(value - x_axis): sign=+1 for a lower wall, -1 for an upper wall."""

    def piece(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        F = sign * (value - x[..., axis])
        grad = np.zeros(x.shape)
        grad[..., axis] = -sign
        return F, grad

    return piece


def _resolution(resolution: int | Sequence[int], n: int) -> tuple[int, ...]:
    if np.isscalar(resolution):
        return (int(resolution),) * n
    res = tuple(int(r) for r in resolution)  # type: ignore[union-attr]
    if len(res) != n:
        raise ChartError(f"expected {n} resolution entries, got {len(res)}")
    return res


def build_chart(
    chart_id: str,
    resolution: int | Sequence[int],
    params: dict[str, Any] | None = None,
) -> Chart:
    """Build a grid/metric/normal triple for one of the built-in charts.

    Args:
        chart_id: one of ``CHART_IDS``.
        resolution: cells per axis (an int is broadcast to every axis).
        params: chart parameters, e.g. ``l`` for ellipse charts, ``radius``
            for balls, ``metric_bump`` for the reflected half-ball metric.

    Returns:
        A :class:`Chart`; it unpacks as ``grid, metric, normal``.
    """
    params = dict(params or {})
    if chart_id not in CHART_IDS:
        raise ChartError(f"unknown chart_id {chart_id!r}")

    if chart_id == "box":
        if np.isscalar(resolution):
            n = int(params.get("ndim", 3))
        else:
            n = len(resolution)  # type: ignore[arg-type]
        dims = _resolution(resolution, n)
        lengths = params.get("lengths", params.get("side", 1.0))
        lengths = tuple(float(v) for v in np.broadcast_to(lengths, (n,)))
        periodic = tuple(bool(v) for v in np.broadcast_to(params.get("periodic", False), (n,)))
        origin = tuple(0.0 for _ in range(n))
        sides = tuple((PERIODIC, PERIODIC) if p else (WALL, WALL) for p in periodic)
        metric_fn = _flat_metric(n)
        inside = None
        pieces = []
        for a in range(n):
            if not periodic[a]:
                pieces.append(_plane_piece(a, 0.0, 1.0))
                pieces.append(_plane_piece(a, lengths[a], -1.0))
        params.update(lengths=list(lengths), periodic=list(periodic))

    elif chart_id in ("disk", "ball"):
        n = 2 if chart_id == "disk" else 3
        dims = _resolution(resolution, n)
        R = float(params.get("radius", 1.0))
        lengths = (2 * R,) * n
        origin = (-R,) * n
        periodic = (False,) * n
        sides = ((WALL, WALL),) * n
        a = float(params.get("metric_bump", 0.0))
        metric_fn = _bump_metric(n, a) if a else _flat_metric(n)
        inside = lambda x: np.sum(x * x, axis=-1) <= R * R  # noqa: E731
        pieces = [_sphere_piece(R)]
        params.update(radius=R)

    elif chart_id == "product_s1_hemisphere":
        n = 3
        dims = _resolution(resolution, n)
        lengths = (2 * np.pi, np.pi / 2, 2 * np.pi)
        origin = (0.0, 0.0, 0.0)
        periodic = (True, False, True)
        sides = ((PERIODIC, PERIODIC), (AXIS, WALL), (PERIODIC, PERIODIC))
        metric_fn = _product_metric
        inside = None
        pieces = [_plane_piece(1, np.pi / 2, -1.0)]

    elif chart_id == "half_ellipse_rz":
        n = 2
        dims = _resolution(resolution, n)
        ell = float(params.get("l", 1.0))
        lengths = (1.0, 2 * ell)
        origin = (0.0, -ell)
        periodic = (False, False)
        sides = ((AXIS, WALL), (WALL, WALL))
        metric_fn = _flat_metric(2)
        inside = lambda x: x[..., 0] ** 2 + (x[..., 1] / ell) ** 2 <= 1.0  # noqa: E731
        pieces = [_sphere_piece(1.0, (1.0, ell))]
        params.update(l=ell)

    elif chart_id == "half_ball":
        n = 3
        dims = _resolution(resolution, n)
        R = float(params.get("radius", 1.0))
        lengths = (2 * R, 2 * R, R)
        origin = (-R, -R, 0.0)
        periodic = (False,) * 3
        sides = ((WALL, WALL),) * 3
        a = float(params.get("metric_bump", 0.0))
        metric_fn = _bump_metric(n, a) if a else _flat_metric(n)
        inside = lambda x: np.sum(x * x, axis=-1) <= R * R  # noqa: E731
        pieces = [_sphere_piece(R), _plane_piece(2, 0.0, 1.0)]
        params.update(radius=R)

    else:  # solid_ellipsoid
        n = 3
        dims = _resolution(resolution, n)
        ell = float(params.get("l", 1.0))
        lengths = (2.0, 2.0, 2 * ell)
        origin = (-1.0, -1.0, -ell)
        periodic = (False,) * 3
        sides = ((WALL, WALL),) * 3
        metric_fn = _flat_metric(3)
        inside = lambda x: x[..., 0] ** 2 + x[..., 1] ** 2 + (x[..., 2] / ell) ** 2 <= 1.0  # noqa: E731
        pieces = [_sphere_piece(1.0, (1.0, 1.0, ell))]
        params.update(l=ell)

    if min(dims) < 8:
        raise ChartError(f"resolution must be >= 8 per axis, got {dims}")
    spacing = tuple(float(L) / d for L, d in zip(lengths, dims))

    probe = StructuredGrid(chart_id, dims, spacing, origin, periodic, sides,
                           np.ones(dims, dtype=np.int8), params)
    raw = np.ones(dims, dtype=bool) if inside is None else inside(probe.coords)
    labels, pruned = _classify_and_prune(raw, sides)
    _check_resolvable(labels)
    grid = StructuredGrid(chart_id, dims, spacing, origin, periodic, sides, labels, params, pruned)

    metric = _metric_field(grid, metric_fn)
    if chart_id == "half_ellipse_rz":
        # volume density of the solid of revolution: energies on this chart are
        # the 3D energies of theta-invariant fields
        metric = dataclasses.replace(metric, sqrt_det=metric.sqrt_det * 2 * np.pi * grid.coords[..., 0])
    normal = _boundary_normals(grid, metric_fn, pieces)
    return Chart(grid, metric, normal, metric_fn, tuple(pieces))


# --------------------------------------------------------------------------- #
# mask classification


def shifted(arr: np.ndarray, k: int, axis: int, periodic: bool, fill: Any = 0) -> np.ndarray:
    """Return ``out[i] = arr[i + k]`` along ``axis`` (wrapping if periodic)."""
    if periodic:
        return np.roll(arr, -k, axis=axis)
    out = np.full_like(arr, fill)
    n = arr.shape[axis]
    if abs(k) >= n:
        return out
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    if k >= 0:
        src[axis] = slice(k, n)
        dst[axis] = slice(0, n - k)
    else:
        src[axis] = slice(0, n + k)
        dst[axis] = slice(-k, n)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _face_exits(active: np.ndarray, sides) -> np.ndarray:
    """True where a masked-in cell has a missing neighbour across a physical wall."""
    exits = np.zeros(active.shape, dtype=bool)
    for a, (lo, hi) in enumerate(sides):
        if lo == PERIODIC:
            continue
        for k, kind in ((-1, lo), (1, hi)):
            nb = shifted(active, k, a, False, fill=False)
            missing = active & ~nb
            if kind == AXIS:
                # the array edge on this side is a symmetry axis, not a wall
                edge = [slice(None)] * active.ndim
                edge[a] = 0 if k < 0 else -1
                in_array = np.ones(active.shape, dtype=bool)
                in_array[tuple(edge)] = False
                missing &= in_array
            exits |= missing
    return exits


def classify(active: np.ndarray, sides) -> np.ndarray:
    """Label masked-in cells as interior or boundary."""
    labels = np.zeros(active.shape, dtype=np.int8)
    exits = _face_exits(active, sides)
    labels[active] = INTERIOR
    labels[active & exits] = BOUNDARY
    return labels


def _has_interior_neighbour(labels: np.ndarray, sides) -> np.ndarray:
    interior = labels == INTERIOR
    out = np.zeros(labels.shape, dtype=bool)
    for a, (lo, _) in enumerate(sides):
        per = lo == PERIODIC
        out |= shifted(interior, 1, a, per, fill=False)
        out |= shifted(interior, -1, a, per, fill=False)
    return out


def _classify_and_prune(active: np.ndarray, sides) -> tuple[np.ndarray, int]:
    active = active.copy()
    pruned = 0
    while True:
        labels = classify(active, sides)
        bad = (labels == BOUNDARY) & ~_has_interior_neighbour(labels, sides)
        if not bad.any():
            return labels, pruned
        pruned += int(bad.sum())
        active &= ~bad


def _check_resolvable(labels: np.ndarray) -> None:
    interior = labels == INTERIOR
    for a in range(labels.ndim):
        runs = np.max(np.sum(interior, axis=a)) if interior.any() else 0
        if runs < 4:
            raise ChartError("resolution too small: fewer than 4 interior cells across")


# --------------------------------------------------------------------------- #
# metric and normals


def _metric_field(grid: StructuredGrid, metric_fn) -> MetricField:
    diag = metric_fn(grid.coords)
    if np.any(diag <= 0):
        raise ChartError("metric is not positive definite")
    n = grid.ndim
    eye = np.eye(n)
    g = diag[..., :, None] * eye
    g_inv = (1.0 / diag)[..., :, None] * eye
    sqrt_det = np.sqrt(np.prod(diag, axis=-1))
    active = grid.active
    lam = float(min(diag[active].min(), 1.0 / diag[active].max()))
    return MetricField(g=g, sqrt_det=sqrt_det, g_inv=g_inv, lam=lam)


def christoffel(metric_fn, x: np.ndarray, delta: float = 1e-6) -> np.ndarray:
    """Christoffel symbols ``Gamma[k, i, j]`` of a diagonal metric at one point."""
    n = x.shape[-1]
    G = metric_fn(x)
    dG = np.empty((n, n))  # dG[i, k] = d_i G_k
    for i in range(n):
        e = np.zeros(n)
        e[i] = delta
        dG[i] = (metric_fn(x + e) - metric_fn(x - e)) / (2 * delta)
    gam = np.zeros((n, n, n))
    for k in range(n):
        for i in range(n):
            for j in range(n):
                val = 0.0
                if j == k:
                    val += dG[i, k]
                if i == k:
                    val += dG[j, k]
                if i == j:
                    val -= dG[k, i]
                gam[k, i, j] = 0.5 * val / G[k]
    return gam


def _project(piece, x: np.ndarray, iters: int = 30) -> np.ndarray:
    for _ in range(iters):
        F, grad = piece(x)
        x = x - F * grad / np.dot(grad, grad)
        if abs(F) < 1e-15:
            break
    return x


def _inward_normal(piece, metric_fn, x: np.ndarray) -> np.ndarray:
    _, grad = piece(x)
    ginv = 1.0 / metric_fn(x)
    up = -ginv * grad
    return up / np.sqrt(np.sum(ginv * grad * grad))


def _boundary_normals(grid: StructuredGrid, metric_fn, pieces) -> BoundaryNormal:
    n = grid.ndim
    nodes = np.argwhere(grid.mask == BOUNDARY)
    m = len(nodes)
    foot = np.zeros((m, n))
    nu = np.zeros((m, n))
    tangents = np.zeros((m, max(n - 1, 0), n))
    shape_ops = np.zeros((m, max(n - 1, 0), max(n - 1, 0)))
    if not pieces or m == 0:
        return BoundaryNormal(nodes, foot, nu, tangents, shape_ops)
    delta = 1e-5
    for k, idx in enumerate(nodes):
        x = grid.coords[tuple(idx)]
        # pick the boundary piece closest to the node
        best, dist = None, np.inf
        for piece in pieces:
            F, gr = piece(x)
            d = abs(F) / max(np.linalg.norm(gr), 1e-300)
            if d < dist:
                best, dist = piece, d
        p = _project(best, x.copy())
        v = _inward_normal(best, metric_fn, p)
        G = metric_fn(p)
        # g-orthonormal tangent basis by Gram-Schmidt against nu
        basis = [v]
        tans = []
        for e in np.eye(n):
            t = e.copy()
            for b in basis:
                t = t - np.sum(G * t * b) * b
            nt = np.sqrt(np.sum(G * t * t))
            if nt > 1e-8 and len(tans) < n - 1:
                t = t / nt
                basis.append(t)
                tans.append(t)
        T = np.array(tans)
        gam = christoffel(metric_fn, p)
        S = np.zeros((n - 1, n - 1))
        for i, xi in enumerate(T):
            pp = _project(best, p + delta * xi)
            pm = _project(best, p - delta * xi)
            dnu = (_inward_normal(best, metric_fn, pp) - _inward_normal(best, metric_fn, pm)) / (2 * delta)
            cov = dnu + np.einsum("kij,i,j->k", gam, xi, v)
            for j, eta in enumerate(T):
                S[i, j] = np.sum(G * cov * eta)
        foot[k], nu[k], tangents[k] = p, v, T
        shape_ops[k] = 0.5 * (S + S.T)
    return BoundaryNormal(nodes, foot, nu, tangents, shape_ops)


def convexity_check(chart: Chart) -> dict[str, Any]:
    """Largest value of ``<nabla_xi nu, xi>`` over boundary nodes and unit tangents.

    A non-positive value certifies a convex boundary.
    """
    normal = chart.normal
    if len(normal.nodes) == 0:
        raise ChartError("chart has no boundary nodes")
    if normal.shape_ops.shape[1] == 0:
        return {"max_value": 0.0, "node": normal.nodes[0].tolist(), "count": len(normal.nodes)}
    top = np.linalg.eigvalsh(normal.shape_ops)[:, -1]
    k = int(np.argmax(top))
    return {"max_value": float(top[k]), "node": normal.nodes[k].tolist(), "count": int(len(top))}


# --------------------------------------------------------------------------- #
# balls


def chart_distance(grid: StructuredGrid, center: np.ndarray) -> np.ndarray:
    """Chart-coordinate distance from ``center`` to every node (minimum image on periodic axes)."""
    d2 = np.zeros(grid.dims)
    for a in range(grid.ndim):
        x = grid.axis_coords(a) - center[a]
        if grid.periodic[a]:
            L = grid.spacing[a] * grid.dims[a]
            x = x - L * np.round(x / L)
        shape = [1] * grid.ndim
        shape[a] = -1
        d2 = d2 + (x**2).reshape(shape)
    return np.sqrt(d2)


def node_point(grid: StructuredGrid, node: Sequence[int] | np.ndarray) -> np.ndarray:
    node = np.asarray(node)
    if node.dtype.kind in "iu":
        return grid.coords[tuple(node)]
    return node.astype(float)


def metric_ball(grid: StructuredGrid, center_node, radius: float) -> np.ndarray:
    """Boolean cell set of masked-in cells whose center lies within ``radius``.

    ``center_node`` is an integer node index or a float chart point.
    """
    if radius < 2 * grid.max_spacing:
        raise ChartError(f"radius {radius} below resolvable scale {2 * grid.max_spacing}")
    c = node_point(grid, center_node)
    return (chart_distance(grid, c) < radius) & grid.active


# --------------------------------------------------------------------------- #
# serialization


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def sibling(path: str | Path, suffix: str) -> Path:
    """``path`` with a trailing ``.json``/``.bin`` replaced by ``suffix`` (other dots are kept)."""
    path = Path(path)
    name = path.name
    for known in (".metric.bin", ".json", ".bin"):
        if name.endswith(known):
            name = name[: -len(known)]
            break
    return path.with_name(name + suffix)


def save_chart(chart: Chart, path: str | Path) -> None:
    """Write a JSON header plus raw little-endian float64 metric components."""
    path = Path(path)
    header = chart.grid.header()
    header["metric_file"] = sibling(path, ".metric.bin").name
    header["metric_layout"] = "g_ij row-major over nodes, components (i,j) row-major"
    sibling(path, ".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    chart.metric.g.astype("<f8").tofile(sibling(path, ".metric.bin"))


def load_chart(path: str | Path) -> Chart:
    path = Path(path)
    header = json.loads(sibling(path, ".json").read_text())
    params = dict(header["params"])
    chart = build_chart(header["chart_id"], header["dims"], params)
    stored = np.fromfile(sibling(path, ".metric.bin"), dtype="<f8")
    if stored.size != chart.metric.g.size or not np.array_equal(stored, chart.metric.g.ravel()):
        raise ChartError("stored metric does not match the rebuilt chart")
    return chart
