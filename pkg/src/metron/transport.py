"""Parallel transport along polylines and over the sample grid.

Transport is classical fourth-order Runge-Kutta with a fixed, uniform
number of steps per polyline segment; no adaptive stepping, so repeated
runs are bit-for-bit reproducible. Three fibre types share one driver,
distinguished by the generator of the linear flow on the flattened
fibre (row-major vec):

    hom     P' = Gamma_u P - P Gamma*_u        (endomorphism intertwiners)
    form    Q' = Gamma_u Q + Q Gamma_u^T       (bilinear forms)
    vector  v' = -Gamma_u^T v                  (sections of E)

where Gamma_u = sum_i u_i Gamma_i along the tangent u. A section is
parallel exactly when it is constant under this transport, so loop
holonomy and disagreement between alternative grid routes measure the
failure of a candidate to solve the underlying first-order system.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .bundle import ChartDomain, Connection

__all__ = [
    "PolylinePath",
    "TransportResult",
    "Grid",
    "transport_hom",
    "transport_form",
    "transport_vector",
    "transport_operator",
    "loop_holonomy_hom",
    "GridTransporter",
    "spanning_tree_extend",
]

MIN_STEPS_PER_SEGMENT = 8
DEFAULT_STEPS_PER_SEGMENT = 32


@dataclass
class PolylinePath:
    """Ordered interior vertices joined by straight segments."""

    vertices: tuple
    steps_per_segment: int = DEFAULT_STEPS_PER_SEGMENT

    def __post_init__(self):
        self.vertices = tuple(np.asarray(v, dtype=float) for v in self.vertices)
        if len(self.vertices) < 2:
            raise ValueError("path needs at least two vertices")
        if self.steps_per_segment < MIN_STEPS_PER_SEGMENT:
            raise ValueError(
                f"steps_per_segment must be >= {MIN_STEPS_PER_SEGMENT}"
            )
        for a, b in zip(self.vertices, self.vertices[1:]):
            if np.allclose(a, b):
                raise ValueError("consecutive vertices must be distinct")

    def validate_inside(self, domain: ChartDomain):
        for v in self.vertices:
            if not domain.contains(v):
                raise ValueError(f"path vertex {tuple(v)} leaves the chart domain")

    @property
    def closed(self) -> bool:
        return bool(np.allclose(self.vertices[0], self.vertices[-1]))

    def reversed(self) -> "PolylinePath":
        return PolylinePath(tuple(reversed(self.vertices)), self.steps_per_segment)


@dataclass
class TransportResult:
    end_frame: np.ndarray
    local_truncation_estimate: float


def _contract(u, gammas: np.ndarray) -> np.ndarray:
    gu = u[0] * gammas[0]
    for i in range(1, len(u)):
        gu = gu + u[i] * gammas[i]
    return gu


def _kron_left(a: np.ndarray, eye: np.ndarray) -> np.ndarray:
    # kron(a, eye) without np.kron overhead
    rr = a.shape[0] * eye.shape[0]
    return np.multiply.outer(a, eye).transpose(0, 2, 1, 3).reshape(rr, rr)


def _kron_right(eye: np.ndarray, a: np.ndarray) -> np.ndarray:
    rr = a.shape[0] * eye.shape[0]
    return np.multiply.outer(eye, a).transpose(0, 2, 1, 3).reshape(rr, rr)


def _generator_factory(kind: str, conn: Connection, dual: Connection | None):
    r = conn.r
    eye = np.eye(r)
    if kind == "hom":
        if dual is None:
            raise ValueError("hom transport needs the target connection")

        def gen(x, u):
            gu = _contract(u, conn.coeff_at(x))
            gsu = _contract(u, dual.coeff_at(x))
            return _kron_left(gu, eye) - _kron_right(eye, gsu.T)

    elif kind == "form":

        def gen(x, u):
            gu = _contract(u, conn.coeff_at(x))
            return _kron_left(gu, eye) + _kron_right(eye, gu)

    elif kind == "vector":

        def gen(x, u):
            return -_contract(u, conn.coeff_at(x)).T

    else:
        raise ValueError(f"unknown fibre kind {kind!r}")
    return gen


def _rk4_segment(gen, a: np.ndarray, b: np.ndarray, steps: int, state: np.ndarray):
    """Integrate Y' = M(x(t)) Y from a to b with the classical scheme."""
    u = b - a
    h = 1.0 / steps
    y = state
    for k in range(steps):
        t0 = k * h
        x0 = a + t0 * u
        xm = a + (t0 + h / 2.0) * u
        x1 = a + (t0 + h) * u
        m0 = gen(x0, u)
        mm = gen(xm, u)
        m1 = gen(x1, u)
        k1 = m0 @ y
        k2 = mm @ (y + (h / 2.0) * k1)
        k3 = mm @ (y + (h / 2.0) * k2)
        k4 = m1 @ (y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def _transport_state(kind, conn, dual, path: PolylinePath, state: np.ndarray, steps=None):
    path.validate_inside(conn.domain)
    gen = _generator_factory(kind, conn, dual)
    steps = path.steps_per_segment if steps is None else steps
    y = state
    for a, b in zip(path.vertices, path.vertices[1:]):
        y = _rk4_segment(gen, a, b, steps, y)
    return y


def _transport_with_estimate(kind, conn, dual, path, value: np.ndarray, estimate: bool):
    flat = value.reshape(-1)
    end = _transport_state(kind, conn, dual, path, flat)
    if estimate:
        fine = _transport_state(
            kind, conn, dual, path, flat, steps=2 * path.steps_per_segment
        )
        # Richardson: coarse-fine gap over (2^4 - 1) estimates the fine error.
        est = float(np.abs(end - fine).max()) / 15.0
        end = end
    else:
        est = 0.0
    return TransportResult(end.reshape(value.shape), est)


def transport_hom(
    conn: Connection,
    dual: Connection,
    path: PolylinePath,
    phi0: np.ndarray,
    estimate: bool = True,
) -> TransportResult:
    """Transport an endomorphism value so that it stays an intertwiner
    candidate between conn-transport and dual-transport along the path."""
    phi0 = np.asarray(phi0, dtype=float)
    if phi0.shape != (conn.r, conn.r):
        raise ValueError(f"initial frame must be {conn.r}x{conn.r}")
    return _transport_with_estimate("hom", conn, dual, path, phi0, estimate)


def transport_form(
    conn: Connection, path: PolylinePath, q0: np.ndarray, estimate: bool = True
) -> TransportResult:
    q0 = np.asarray(q0, dtype=float)
    if q0.shape != (conn.r, conn.r):
        raise ValueError(f"initial form must be {conn.r}x{conn.r}")
    return _transport_with_estimate("form", conn, None, path, q0, estimate)


def transport_vector(
    conn: Connection, path: PolylinePath, v0: np.ndarray, estimate: bool = True
) -> TransportResult:
    v0 = np.asarray(v0, dtype=float)
    if v0.shape != (conn.r,):
        raise ValueError(f"initial vector must have length {conn.r}")
    return _transport_with_estimate("vector", conn, None, path, v0, estimate)


def transport_operator(
    kind: str,
    conn: Connection,
    dual: Connection | None,
    a: np.ndarray,
    b: np.ndarray,
    steps: int,
) -> np.ndarray:
    """Flow operator of the transport ODE along the segment a -> b,
    acting on the flattened fibre. One integration serves every initial
    value, which is what makes grid extension of a whole basis cheap."""
    gen = _generator_factory(kind, conn, dual)
    dim = conn.r if kind == "vector" else conn.r * conn.r
    return _rk4_segment(gen, np.asarray(a, float), np.asarray(b, float), steps, np.eye(dim))


def loop_holonomy_hom(conn: Connection, dual: Connection, loop: PolylinePath) -> np.ndarray:
    """Linear operator (on flattened endomorphisms) of transport around a
    closed polyline. Solutions of the intertwining system are fixed points."""
    if not loop.closed:
        raise ValueError("loop must be closed (first vertex == last vertex)")
    loop.validate_inside(conn.domain)
    op = np.eye(conn.r * conn.r)
    gen = _generator_factory("hom", conn, dual)
    for a, b in zip(loop.vertices, loop.vertices[1:]):
        op = _rk4_segment(gen, a, b, loop.steps_per_segment, op)
    return op


class Grid:
    """Sample grid as a graph: axis-aligned edges, BFS spanning tree.

    Nodes are the chart's interior sample points in lexicographic order.
    The spanning tree is grown by breadth-first search from the base
    node, scanning neighbours axis by axis, +direction before
    -direction, so the construction is deterministic.
    """

    def __init__(self, domain: ChartDomain, counts: tuple[int, ...] | None = None):
        self.domain = domain
        self.counts = tuple(counts or domain.samples_per_axis)
        if any(n < 3 for n in self.counts):
            raise ValueError("grid too coarse: need at least 3 nodes per axis")
        self.nodes = domain.sample_points(self.counts)
        self.shape = self.counts
        self._strides = np.cumprod((1,) + tuple(reversed(self.counts[1:])))[::-1]

    def index_of(self, multi: tuple[int, ...]) -> int:
        return int(np.dot(multi, self._strides))

    def multi_of(self, index: int) -> tuple[int, ...]:
        out = []
        for s in self._strides:
            out.append(index // s)
            index %= s
        return tuple(out)

    def nearest_node(self, point) -> int:
        d = np.abs(self.nodes - np.asarray(point, float)).sum(axis=1)
        return int(np.argmin(d))

    @cached_property
    def edges(self) -> list[tuple[int, int]]:
        out = []
        m = len(self.counts)
        for idx in range(len(self.nodes)):
            multi = self.multi_of(idx)
            for axis in range(m):
                if multi[axis] + 1 < self.counts[axis]:
                    nb = list(multi)
                    nb[axis] += 1
                    out.append((idx, self.index_of(tuple(nb))))
        return out

    def neighbors(self, idx: int):
        multi = self.multi_of(idx)
        for axis in range(len(self.counts)):
            for step in (1, -1):
                coord = multi[axis] + step
                if 0 <= coord < self.counts[axis]:
                    nb = list(multi)
                    nb[axis] = coord
                    yield self.index_of(tuple(nb))

    def spanning_tree(self, root: int):
        """(tree_edges ordered parent->child by discovery, non_tree_edges)."""
        seen = {root}
        order = [root]
        tree = []
        head = 0
        while head < len(order):
            u = order[head]
            head += 1
            for v in self.neighbors(u):
                if v not in seen:
                    seen.add(v)
                    order.append(v)
                    tree.append((u, v))
        tree_set = {frozenset(e) for e in tree}
        non_tree = [e for e in self.edges if frozenset(e) not in tree_set]
        return tree, non_tree


class GridTransporter:
    """Per-edge flow operators over a grid, shared by all candidates.

    extend() pushes base-point values through the spanning tree;
    discrepancy_matrix() stacks, for each non-tree edge, the difference
    between transporting along the edge and the value already assigned
    to the far node. For genuine solutions every column is numerically
    zero; the stacked map is therefore the certification operator for a
    candidate subspace.
    """

    def __init__(
        self,
        kind: str,
        conn: Connection,
        dual: Connection | None,
        grid: Grid,
        base_index: int,
        steps_per_segment: int = DEFAULT_STEPS_PER_SEGMENT,
    ):
        self.kind = kind
        self.conn = conn
        self.dual = dual
        self.grid = grid
        self.base_index = base_index
        self.steps = steps_per_segment
        self.fibre_dim = conn.r if kind == "vector" else conn.r * conn.r
        self.tree_edges, self.non_tree_edges = grid.spanning_tree(base_index)
        self._tree_ops = [
            transport_operator(
                kind, conn, dual, grid.nodes[u], grid.nodes[v], self.steps
            )
            for (u, v) in self.tree_edges
        ]
        self._non_tree_ops = [
            transport_operator(
                kind, conn, dual, grid.nodes[u], grid.nodes[v], self.steps
            )
            for (u, v) in self.non_tree_edges
        ]

    def extend(self, values: np.ndarray) -> np.ndarray:
        """values: (k, fibre_dim) at the base node -> (k, N, fibre_dim)."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        k = values.shape[0]
        fields = np.zeros((k, len(self.grid.nodes), self.fibre_dim))
        fields[:, self.base_index, :] = values
        for (u, v), op in zip(self.tree_edges, self._tree_ops):
            fields[:, v, :] = fields[:, u, :] @ op.T
        return fields

    def discrepancies(self, fields: np.ndarray) -> np.ndarray:
        """(k, n_non_tree_edges, fibre_dim) transport mismatches."""
        k = fields.shape[0]
        out = np.zeros((k, len(self.non_tree_edges), self.fibre_dim))
        for e, ((u, v), op) in enumerate(zip(self.non_tree_edges, self._non_tree_ops)):
            out[:, e, :] = fields[:, u, :] @ op.T - fields[:, v, :]
        return out

    def residuals(self, fields: np.ndarray) -> np.ndarray:
        d = self.discrepancies(fields)
        if d.shape[1] == 0:
            return np.zeros(fields.shape[0])
        return np.abs(d).reshape(fields.shape[0], -1).max(axis=1)


def get_transporter(
    kind: str,
    conn: Connection,
    dual: Connection | None,
    grid: Grid,
    base_index: int,
    steps_per_segment: int,
) -> GridTransporter:
    """GridTransporter with per-connection caching.

    Building the per-edge flow operators dominates a solve; the cache
    lets the symmetric and antisymmetric form solves (and a metricity
    certificate plus its index computation) share one construction. The
    cache lives on the connection object itself so entries cannot
    outlive or collide with recycled objects.
    """
    cache = conn.__dict__.setdefault("_transporter_cache", [])
    for entry in cache:
        if (
            entry["kind"] == kind
            and entry["dual"] is dual
            and entry["counts"] == grid.counts
            and entry["base"] == base_index
            and entry["steps"] == steps_per_segment
        ):
            return entry["transporter"]
    transporter = GridTransporter(kind, conn, dual, grid, base_index, steps_per_segment)
    cache.append(
        {
            "kind": kind,
            "dual": dual,
            "counts": grid.counts,
            "base": base_index,
            "steps": steps_per_segment,
            "transporter": transporter,
        }
    )
    return transporter


def spanning_tree_extend(
    conn: Connection,
    dual: Connection | None,
    x0,
    value0: np.ndarray,
    grid: Grid,
    kind: str = "hom",
    steps_per_segment: int = DEFAULT_STEPS_PER_SEGMENT,
):
    """Extend a base-point value over the grid by tree transport.

    Returns (field, residual): field has shape (N, r, r) (or (N, r) for
    vectors) over the grid nodes, residual is the worst transport
    mismatch over the redundant (non-tree) edges. Residual within the
    transport tolerance certifies that the value extends to a genuine
    solution of the parallelism system on the chart.
    """
    base_index = grid.nearest_node(x0)
    if not np.allclose(grid.nodes[base_index], np.asarray(x0, float), atol=1e-12):
        raise ValueError("base point must be a grid node")
    value0 = np.asarray(value0, dtype=float)
    transporter = GridTransporter(kind, conn, dual, grid, base_index, steps_per_segment)
    fields = transporter.extend(value0.reshape(1, -1))
    residual = float(transporter.residuals(fields)[0])
    shape = (len(grid.nodes),) + value0.shape
    return fields[0].reshape(shape), residual
