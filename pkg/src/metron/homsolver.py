"""Solve the first-order linear system for parallel sections of the
endomorphism bundle and of the bilinear-form bundles.

An endomorphism field phi intertwines two connections when

    d_i P = Gamma_i P - P Gamma*_i          (P = matrix of phi),

a bilinear form q is parallel when

    d_i Q = Gamma_i Q + Q Gamma_i^T.

Both are linear connections on a finite-dimensional fibre, so the space
of global solutions on a box chart is finite dimensional and every
solution value at the base point is annihilated by the curvature of the
induced connection and by all of its covariant derivatives. The solver
therefore runs two independent mechanisms:

1. Infinitesimal: intersect the kernels of the induced curvature
   operators and their covariant derivatives at the base point until the
   dimension stabilises (prolongation). The recursions

       hom:   (B, B*) -> (d_l B - [Gamma_l, B], d_l B* - [Gamma*_l, B*])
       form:   B      ->  d_l B - [Gamma_l, B]

   generate each new order symbolically, so no discretisation error
   enters the constraints.

2. Transport: extend every stabilised candidate over the sample grid
   through the spanning tree and measure the mismatch on the redundant
   edges. Directions whose mismatch exceeds the transport tolerance are
   discarded. The two mechanisms have independent tolerances so that an
   algebraic bug cannot silently compensate an integration bug.

The retained dimension is a certified lower bound for the true solution
dimension, and an upper bound as well once the kernel intersection has
stabilised.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import symmatrix as sm
from .bundle import ChartDomain, Connection, curvature
from .transport import (
    DEFAULT_STEPS_PER_SEGMENT,
    Grid,
    get_transporter,
    transport_operator,
)

__all__ = [
    "SolveOptions",
    "SolutionSpace",
    "hom_curvature_operator",
    "stabilized_constraint_subspace",
    "solve_hom",
    "solve_parallel_forms",
    "local_system_residual",
    "symmetric_basis",
    "antisymmetric_basis",
    "nullspace",
]

GENERATOR_DROP_REL = 1e-9
FD_STENCIL_FRACTION = 1.5e-3
# 6th-order central first-derivative stencil at offsets -3h..3h
_FD_OFFSETS = (-3, -2, -1, 1, 2, 3)
_FD_WEIGHTS = (-1.0, 9.0, -45.0, 45.0, -9.0, 1.0)  # divide by 60 h


@dataclass
class SolveOptions:
    """Knobs shared by the solvers; defaults match the shipped tolerances."""

    grid_per_axis: int | None = None
    steps_per_segment: int = DEFAULT_STEPS_PER_SEGMENT
    max_order: int = 3
    kernel_cutoff: float = 1e-8
    transport_tol: float = 1e-7
    base_point: tuple | None = None
    seed: int = 0

    def grid_counts(self, domain: ChartDomain) -> tuple[int, ...]:
        if self.grid_per_axis is None:
            return domain.samples_per_axis
        return (self.grid_per_axis,) * domain.m


@dataclass
class SolutionSpace:
    """Certified basis of parallel sections, with grid extensions."""

    kind: str  # 'hom', 'symmetric', 'antisymmetric'
    base_point: tuple
    basis: np.ndarray  # (dimension, r, r)
    dimension: int
    certified_residual: float
    stabilized: bool
    stabilization_order: int
    constraint_dim: int  # dimension of the infinitesimal candidate space
    grid: Grid | None
    extensions: np.ndarray  # (dimension, n_nodes, r, r)
    flags: tuple[str, ...] = ()

    @property
    def certified_upper_bound(self) -> bool:
        return self.stabilized

    def contains(self, matrix: np.ndarray, tol: float = 1e-8) -> bool:
        """Whether a matrix lies in the span of the basis (Frobenius)."""
        v = np.asarray(matrix, float).reshape(-1)
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return True
        if self.dimension == 0:
            return False
        b = self.basis.reshape(self.dimension, -1)
        coeff = b @ v
        return bool(np.linalg.norm(v - b.T @ coeff) <= tol * nv)


def symmetric_basis(r: int) -> np.ndarray:
    """Orthonormal (Frobenius) basis of symmetric matrices, rows = vec."""
    rows = []
    for i in range(r):
        e = np.zeros((r, r))
        e[i, i] = 1.0
        rows.append(e.reshape(-1))
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for i in range(r):
        for j in range(i + 1, r):
            e = np.zeros((r, r))
            e[i, j] = e[j, i] = inv_sqrt2
            rows.append(e.reshape(-1))
    return np.array(rows)


def antisymmetric_basis(r: int) -> np.ndarray:
    rows = []
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for i in range(r):
        for j in range(i + 1, r):
            e = np.zeros((r, r))
            e[i, j] = inv_sqrt2
            e[j, i] = -inv_sqrt2
            rows.append(e.reshape(-1))
    return np.array(rows)


NULLSPACE_NOISE_FLOOR = 1e-10


def nullspace(matrix: np.ndarray, rel_cutoff: float) -> np.ndarray:
    """Orthonormal rows spanning the numerical kernel of matrix.

    Rows are expected to be normalised to unit scale; singular values
    below an absolute noise floor never count towards the rank, so a
    constraint block that vanishes identically (up to evaluation
    roundoff) cannot masquerade as a genuine restriction.
    """
    rows, cols = matrix.shape
    if rows == 0:
        return np.eye(cols)
    u, s, vt = np.linalg.svd(matrix)
    if s.size == 0 or s[0] <= NULLSPACE_NOISE_FLOOR:
        return np.eye(cols)
    cutoff = max(rel_cutoff * s[0], NULLSPACE_NOISE_FLOOR)
    rank = int((s > cutoff).sum())
    return vt[rank:]


def hom_curvature_operator(conn: Connection, dual: Connection, x, i: int, j: int) -> np.ndarray:
    """Curvature of the induced endomorphism connection at x for the
    coordinate pair (i, j), acting on row-major flattened matrices:
    P -> R_ij P - P R*_ij. Values of parallel sections lie in its kernel."""
    r = conn.r
    rij = sm.eval_matrix(curvature(conn).entries[i][j], x)
    rsij = sm.eval_matrix(curvature(dual).entries[i][j], x)
    eye = np.eye(r)
    return np.kron(rij, eye) - np.kron(eye, rsij.T)


def _commutator(a, b):
    return sm.mat_sub(sm.mat_mul(a, b), sm.mat_mul(b, a))


def _generator_orders(conn: Connection, dual: Connection | None, max_order: int):
    """Symbolic constraint generators by prolongation order.

    For the hom system each generator is a pair (B, B*) acting as
    P -> B P - P B*; for forms a single B acting as Q -> B Q + Q B^T.
    Order zero is the curvature; each next order applies the covariant
    derivative recursion along every axis.
    """
    m = conn.domain.m
    curv = curvature(conn)
    dual_curv = curvature(dual) if dual is not None else None
    order0 = []
    for i in range(m):
        for j in range(i + 1, m):
            if dual is not None:
                order0.append((curv.entries[i][j], dual_curv.entries[i][j]))
            else:
                order0.append(curv.entries[i][j])
    orders = [order0]
    for _ in range(max_order):
        prev = orders[-1]
        nxt = []
        for gen in prev:
            for l in range(m):
                if dual is not None:
                    b, bs = gen
                    nxt.append(
                        (
                            sm.mat_sub(sm.mat_diff(b, l + 1), _commutator(conn.gamma[l], b)),
                            sm.mat_sub(sm.mat_diff(bs, l + 1), _commutator(dual.gamma[l], bs)),
                        )
                    )
                else:
                    nxt.append(
                        sm.mat_sub(sm.mat_diff(gen, l + 1), _commutator(conn.gamma[l], gen))
                    )
        orders.append(nxt)
    return orders


def _constraint_rows(gen, x, eye, subspace: np.ndarray, is_hom: bool, scale_ref: float):
    """Rows of one generator's constraint operator restricted to the
    candidate subspace, normalised; None if the generator vanishes."""
    if is_hom:
        b = sm.eval_matrix(gen[0], x)
        bs = sm.eval_matrix(gen[1], x)
        magnitude = max(np.abs(b).max(), np.abs(bs).max())
        if magnitude <= GENERATOR_DROP_REL * scale_ref:
            return None, magnitude
        op = np.kron(b, eye) - np.kron(eye, bs.T)
    else:
        b = sm.eval_matrix(gen, x)
        magnitude = np.abs(b).max()
        if magnitude <= GENERATOR_DROP_REL * scale_ref:
            return None, magnitude
        op = np.kron(b, eye) + np.kron(eye, b)
    return (op @ subspace.T) / magnitude, magnitude


def stabilized_constraint_subspace(
    conn: Connection,
    dual: Connection | None,
    x0,
    max_order: int = 3,
    kernel_cutoff: float = 1e-8,
    subspace: np.ndarray | None = None,
):
    """Intersect kernels of the induced curvature and its covariant
    derivatives at x0, order by order, until two consecutive dimensions
    agree.

    Returns (candidates, stabilized, order): candidates has orthonormal
    rows in flattened-matrix coordinates, all inside `subspace` when one
    is given. Every genuine solution's value at x0 lies in the span.
    `order` is the first order whose constraints added nothing (0 when
    the curvature constraints alone already close the intersection).
    """
    r = conn.r
    eye = np.eye(r)
    if subspace is None:
        subspace = np.eye(r * r)
    generators = _generator_orders(conn, dual, max_order)
    is_hom = dual is not None
    blocks: list[np.ndarray] = []
    scale_ref = 1.0
    dim_prev = subspace.shape[0]
    dims: list[int] = []
    stabilized = False
    for order, gens in enumerate(generators):
        for gen in gens:
            rows, magnitude = _constraint_rows(gen, x0, eye, subspace, is_hom, scale_ref)
            scale_ref = max(scale_ref, magnitude)
            if rows is not None:
                blocks.append(rows)
        stacked = (
            np.vstack(blocks) if blocks else np.zeros((0, subspace.shape[0]))
        )
        kernel = nullspace(stacked, kernel_cutoff)
        dims.append(kernel.shape[0])
        if kernel.shape[0] == dim_prev or kernel.shape[0] == 0:
            stabilized = True
            break
        dim_prev = kernel.shape[0]
    candidates = kernel @ subspace
    final_dim = dims[-1]
    # report the first order whose constraints already pinned the final
    # space (later orders added nothing)
    settle_order = next(k for k, d in enumerate(dims) if d == final_dim)
    return candidates, stabilized, settle_order if stabilized else max_order


def _canonical_sign(vector: np.ndarray) -> np.ndarray:
    for v in vector:
        if abs(v) > 1e-9:
            return vector if v > 0 else -vector
    return vector


def _solve(
    kind: str,
    conn: Connection,
    dual: Connection | None,
    subspace: np.ndarray | None,
    options: SolveOptions,
) -> SolutionSpace:
    r = conn.r
    grid = Grid(conn.domain, options.grid_counts(conn.domain))
    x0_req = options.base_point if options.base_point is not None else conn.domain.center()
    base_index = grid.nearest_node(x0_req)
    x0 = grid.nodes[base_index]
    candidates, stabilized, order = stabilized_constraint_subspace(
        conn,
        dual,
        x0,
        max_order=options.max_order,
        kernel_cutoff=options.kernel_cutoff,
        subspace=subspace,
    )
    flags: list[str] = []
    if not stabilized:
        flags.append("stabilization-not-reached:lower-bound-only")
    k = candidates.shape[0]
    if k == 0:
        return SolutionSpace(
            kind=kind,
            base_point=tuple(x0),
            basis=np.zeros((0, r, r)),
            dimension=0,
            certified_residual=0.0,
            stabilized=stabilized,
            stabilization_order=order,
            constraint_dim=0,
            grid=grid,
            extensions=np.zeros((0, len(grid.nodes), r, r)),
            flags=tuple(flags),
        )
    transport_kind = "hom" if dual is not None else "form"
    transporter = get_transporter(
        transport_kind, conn, dual, grid, base_index, options.steps_per_segment
    )
    fields = transporter.extend(candidates)  # (k, N, r*r)
    disc = transporter.discrepancies(fields).reshape(k, -1)  # (k, E*d)
    if disc.shape[1] == 0:
        coeffs = np.eye(k)
        residuals = np.zeros(k)
    else:
        _, _, vt = np.linalg.svd(disc.T, full_matrices=True)
        # rows of vt: coefficient directions in the candidate space, by
        # decreasing discrepancy; walk them in reverse so the most
        # solution-like direction comes first.
        coeffs = vt[::-1]
        residuals = np.abs(coeffs @ disc).max(axis=1)
    keep = residuals <= options.transport_tol
    kept_coeffs = coeffs[keep]
    kept_residuals = residuals[keep]
    if stabilized and kept_coeffs.shape[0] < k:
        flags.append("transport-rejected-stabilized-directions")
    # deterministic ordering: by residual, then lexicographic; canonical sign
    if kept_coeffs.shape[0] > 0:
        order_idx = np.lexsort(
            tuple(kept_coeffs[:, c] for c in range(kept_coeffs.shape[1] - 1, -1, -1))
            + (kept_residuals,)
        )
        kept_coeffs = kept_coeffs[order_idx]
        kept_residuals = kept_residuals[order_idx]
        kept_coeffs = np.array([_canonical_sign(c) for c in kept_coeffs])
    basis_vecs = kept_coeffs @ candidates
    extensions = np.tensordot(kept_coeffs, fields, axes=(1, 0))
    dim = basis_vecs.shape[0]
    return SolutionSpace(
        kind=kind,
        base_point=tuple(x0),
        basis=basis_vecs.reshape(dim, r, r),
        dimension=dim,
        certified_residual=float(kept_residuals.max()) if dim else 0.0,
        stabilized=stabilized,
        stabilization_order=order,
        constraint_dim=k,
        grid=grid,
        extensions=extensions.reshape(dim, len(grid.nodes), r, r),
        flags=tuple(flags),
    )


def solve_hom(conn: Connection, dual: Connection, options: SolveOptions | None = None) -> SolutionSpace:
    """Certified basis of endomorphism fields intertwining conn and dual."""
    return _solve("hom", conn, dual, None, options or SolveOptions())


def solve_parallel_forms(
    conn: Connection, symmetry: str, options: SolveOptions | None = None
) -> SolutionSpace:
    """Certified basis of parallel symmetric or antisymmetric forms."""
    if symmetry not in ("symmetric", "antisymmetric"):
        raise ValueError("symmetry must be 'symmetric' or 'antisymmetric'")
    sub = symmetric_basis(conn.r) if symmetry == "symmetric" else antisymmetric_basis(conn.r)
    if sub.shape[0] == 0:
        grid = Grid(conn.domain, (options or SolveOptions()).grid_counts(conn.domain))
        return SolutionSpace(
            kind=symmetry,
            base_point=tuple(conn.domain.center()),
            basis=np.zeros((0, conn.r, conn.r)),
            dimension=0,
            certified_residual=0.0,
            stabilized=True,
            stabilization_order=0,
            constraint_dim=0,
            grid=grid,
            extensions=np.zeros((0, len(grid.nodes), conn.r, conn.r)),
        )
    return _solve(symmetry, conn, None, sub, options or SolveOptions())


def _owner_index(grid: Grid, node_multi, axis: int, direction: int):
    nb = list(node_multi)
    nb[axis] += direction
    if 0 <= nb[axis] < grid.counts[axis]:
        return grid.index_of(tuple(nb))
    nb[axis] = node_multi[axis] - direction
    return grid.index_of(tuple(nb))


def local_system_residual(
    space: SolutionSpace,
    conn: Connection,
    dual: Connection | None = None,
    h_fraction: float = FD_STENCIL_FRACTION,
    steps_multiplier: int = 2,
) -> float:
    """Direct-substitution residual of every basis extension.

    At each grid node the coordinate derivative of the field is taken
    with a sixth-order central stencil whose sample values are produced
    by short transports from the neighbouring grid nodes, never from the
    node under test, so a path-dependent fake cannot certify itself. The
    result is compared against the right-hand side of the first-order
    system evaluated exactly at the node; the return value is the worst
    absolute entry over nodes, axes and basis elements.
    """
    if space.dimension == 0:
        return 0.0
    kind = "hom" if space.kind == "hom" else "form"
    if kind == "hom" and dual is None:
        raise ValueError("hom residual needs the target connection")
    grid = space.grid
    m = conn.domain.m
    span = conn.domain.span
    fields = space.extensions.reshape(space.dimension, len(grid.nodes), -1)
    steps = max(16, steps_multiplier * DEFAULT_STEPS_PER_SEGMENT)
    worst = 0.0
    unit = np.eye(m)
    weight_of = dict(zip(_FD_OFFSETS, _FD_WEIGHTS))
    dual_for_transport = dual if kind == "hom" else None
    for node_idx in range(len(grid.nodes)):
        node = grid.nodes[node_idx]
        multi = grid.multi_of(node_idx)
        gamma_here = conn.coeff_at(node)
        dual_gamma_here = dual.coeff_at(node) if dual is not None else None
        for axis in range(m):
            h = h_fraction * span[axis]
            fd = np.zeros_like(fields[:, 0, :])
            for side in (1, -1):
                owner = _owner_index(grid, multi, axis, side)
                # walk the three stencil points on this side in order of
                # distance from the owner node, composing one integration
                pts = [node + side * s * h * unit[axis] for s in (1, 2, 3)]
                pts.sort(key=lambda p: float(np.abs(p - grid.nodes[owner]).sum()))
                start = grid.nodes[owner]
                op = np.eye(fields.shape[2])
                leg_steps = steps
                for p in pts:
                    op = (
                        transport_operator(kind, conn, dual_for_transport, start, p, leg_steps)
                        @ op
                    )
                    offset = int(round(float((p - node)[axis] / h)))
                    fd += weight_of[offset] * (fields[:, owner, :] @ op.T)
                    start = p
                    leg_steps = 8  # the remaining legs span only h
            fd /= 60.0 * h
            g = gamma_here[axis]
            values = fields[:, node_idx, :].reshape(space.dimension, conn.r, conn.r)
            if kind == "hom":
                rhs = np.einsum("ab,kbc->kac", g, values) - np.einsum(
                    "kab,bc->kac", values, dual_gamma_here[axis]
                )
            else:
                rhs = np.einsum("ab,kbc->kac", g, values) + np.einsum(
                    "kab,cb->kac", values, g
                )
            worst = max(worst, float(np.abs(fd.reshape(rhs.shape) - rhs).max()))
    return worst
