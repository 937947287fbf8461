"""Gauge structures over a box chart: connections, metrics, gauge maps.

Conventions, fixed once and verified by residual tests rather than by
trusting matrix algebra:

    nabla_{d/dx_i} s_a = sum_b Gamma[i][a][b] s_b        (connection)
    phi(s_a)           = sum_b phi[a][b] s_b             (gauge map)
    g[a][b]            = g(s_a, s_b)                     (metric)

With Gamma_i the (a, b) matrix above, the induced coordinate formulas
used throughout are:

    curvature        R_ij = d_i Gamma_j - d_j Gamma_i + [Gamma_j, Gamma_i]
    metric derivative (nabla g)_i = d_i G - Gamma_i G - G Gamma_i^T
    dual connection  Gamma*_i = (d_i G - G Gamma_i^T) G^{-1}
    gauge action     Gamma'_i = P^{-1} (Gamma_i P - d_i P)
    metric pushforward  G' = P^{-1} G P^{-T}

The dual construction g.nabla is an involution with fixed points exactly
the g-preserving connections; both facts are asserted numerically in the
test suite instead of being assumed.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import expr as ex
from . import symmatrix as sm

__all__ = [
    "ChartDomain",
    "Connection",
    "MetricField",
    "GaugeTransform",
    "CurvatureField",
    "zero_connection",
    "identity_metric",
    "constant_metric",
    "curvature",
    "dual_connection",
    "apply_gauge",
    "pushforward_metric",
    "metric_covariant_derivative",
    "dual_gauge_compatibility_residual",
    "levi_civita",
    "numerical_rank",
]

DET_REGULARITY_FLOOR = 1e-8
CONDITION_CEILING = 1e8
RANK_REL_CUTOFF = 1e-8


def numerical_rank(
    matrix: np.ndarray, rel_cutoff: float = RANK_REL_CUTOFF, scale: float | None = None
) -> int:
    """Rank by SVD with a cutoff relative to the largest singular value.

    Pass `scale` when the matrix is derived from data of a known size
    (for example the symmetric part of a unit-norm endomorphism): the
    cutoff is then taken relative to max(sigma_max, scale), so a matrix
    that is pure roundoff relative to its source counts as rank zero.
    """
    s = np.linalg.svd(matrix, compute_uv=False)
    if s.size == 0:
        return 0
    reference = max(float(s[0]), float(scale) if scale is not None else 0.0)
    if reference <= 0.0:
        return 0
    return int((s > rel_cutoff * reference).sum())


@dataclass
class ChartDomain:
    """Open box chart with a deterministic interior sample grid.

    Axis i carries samples_per_axis[i] nodes at the interior fractions
    (k + 1) / (n + 1), so the grid never touches the boundary and the
    box centre is a node whenever the count is odd.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    samples_per_axis: tuple[int, ...] | None = None

    def __post_init__(self):
        self.lower = tuple(float(v) for v in self.lower)
        self.upper = tuple(float(v) for v in self.upper)
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper must have the same length")
        if not self.lower:
            raise ValueError("chart needs at least one coordinate")
        if len(self.lower) > ex.MAX_VARIABLES:
            raise ValueError(f"at most {ex.MAX_VARIABLES} coordinates supported")
        for lo, up in zip(self.lower, self.upper):
            if not lo < up:
                raise ValueError(f"need lower < upper per axis, got [{lo}, {up}]")
        if self.samples_per_axis is None:
            self.samples_per_axis = (9,) * len(self.lower)
        else:
            self.samples_per_axis = tuple(int(n) for n in self.samples_per_axis)
        if len(self.samples_per_axis) != len(self.lower):
            raise ValueError("samples_per_axis must match the dimension")
        for n in self.samples_per_axis:
            if n < 1:
                raise ValueError("need at least one sample per axis")

    @property
    def m(self) -> int:
        return len(self.lower)

    @property
    def span(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    def axis_points(self, i: int, count: int | None = None) -> np.ndarray:
        n = self.samples_per_axis[i] if count is None else count
        fractions = (np.arange(n) + 1.0) / (n + 1.0)
        return self.lower[i] + fractions * (self.upper[i] - self.lower[i])

    def sample_points(self, counts: tuple[int, ...] | None = None) -> np.ndarray:
        counts = self.samples_per_axis if counts is None else counts
        axes = [self.axis_points(i, n) for i, n in enumerate(counts)]
        pts = np.array(list(itertools.product(*axes)))
        return pts

    def center(self) -> np.ndarray:
        return (np.asarray(self.lower) + np.asarray(self.upper)) / 2.0

    def contains(self, point, margin: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)
        lo = np.asarray(self.lower) + margin
        up = np.asarray(self.upper) - margin
        return bool(np.all(p > lo) and np.all(p < up))

    def with_samples(self, per_axis: int) -> "ChartDomain":
        return ChartDomain(self.lower, self.upper, (per_axis,) * self.m)


def _validate_entries(entries, domain: ChartDomain, what: str):
    for row in entries:
        for e in row:
            bad = [i for i in ex.variables(e) if i > domain.m]
            if bad:
                raise ValueError(
                    f"{what} uses x{bad[0]} but the chart has dimension {domain.m}"
                )


@dataclass
class Connection:
    """Connection coefficients Gamma[i][a][b] over a chart domain."""

    domain: ChartDomain
    r: int
    gamma: tuple  # m x r x r nested tuple of ScalarExpression

    def __post_init__(self):
        self.gamma = tuple(sm.as_matrix(g) for g in self.gamma)
        if len(self.gamma) != self.domain.m:
            raise ValueError(
                f"expected {self.domain.m} coefficient matrices, got {len(self.gamma)}"
            )
        for g in self.gamma:
            if len(g) != self.r or any(len(row) != self.r for row in g):
                raise ValueError(f"coefficient matrices must be {self.r}x{self.r}")
            _validate_entries(g, self.domain, "connection coefficient")

    @cached_property
    def _coeff_fns(self):
        return tuple(sm.compile_matrix(g) for g in self.gamma)

    def coeff_at(self, x) -> np.ndarray:
        """Evaluate all coefficients at a point, shape (m, r, r)."""
        out = np.empty((self.domain.m, self.r, self.r))
        for i, fn in enumerate(self._coeff_fns):
            out[i] = fn(x)
        return out

    def max_abs_on_grid(self) -> float:
        pts = self.domain.sample_points()
        return max(float(np.abs(self.coeff_at(p)).max()) for p in pts)


def zero_connection(domain: ChartDomain, r: int) -> Connection:
    return Connection(domain, r, tuple(sm.zeros_mat(r) for _ in range(domain.m)))


@dataclass
class MetricField:
    """Symmetric (or, with antisymmetric=True, alternating) form field."""

    domain: ChartDomain
    r: int
    entries: tuple  # r x r ScalarExpression
    declared_rank: int | None = None
    antisymmetric: bool = False

    def __post_init__(self):
        self.entries = sm.as_matrix(self.entries)
        if len(self.entries) != self.r or any(len(row) != self.r for row in self.entries):
            raise ValueError(f"form must be {self.r}x{self.r}")
        _validate_entries(self.entries, self.domain, "form coefficient")
        if self.declared_rank is None:
            self.declared_rank = self.r
        sign = -1.0 if self.antisymmetric else 1.0
        for p in self.domain.sample_points():
            mat = self.matrix_at(p)
            if float(np.abs(mat - sign * mat.T).max()) > 1e-9 * (1.0 + np.abs(mat).max()):
                kind = "antisymmetric" if self.antisymmetric else "symmetric"
                raise ValueError(f"form is not {kind} at sample point {tuple(p)}")

    @cached_property
    def _fn(self):
        return sm.compile_matrix(self.entries)

    def matrix_at(self, x) -> np.ndarray:
        return self._fn(x)

    def verify_declared_rank(self, rel_cutoff: float = RANK_REL_CUTOFF) -> bool:
        return all(
            numerical_rank(self.matrix_at(p), rel_cutoff) == self.declared_rank
            for p in self.domain.sample_points()
        )

    def regularity_margin(self) -> tuple[float, float]:
        """(min |det|, max condition number) over the sample grid."""
        min_det, max_cond = np.inf, 0.0
        for p in self.domain.sample_points():
            mat = self.matrix_at(p)
            min_det = min(min_det, abs(float(np.linalg.det(mat))))
            s = np.linalg.svd(mat, compute_uv=False)
            max_cond = max(max_cond, np.inf if s[-1] == 0 else float(s[0] / s[-1]))
        return min_det, max_cond

    def is_regular(self) -> bool:
        if self.declared_rank != self.r:
            return False
        min_det, max_cond = self.regularity_margin()
        return min_det >= DET_REGULARITY_FLOOR and max_cond <= CONDITION_CEILING


def identity_metric(domain: ChartDomain, r: int) -> MetricField:
    return MetricField(domain, r, sm.identity_mat(r), declared_rank=r)


def constant_metric(domain: ChartDomain, matrix: np.ndarray) -> MetricField:
    matrix = np.asarray(matrix, dtype=float)
    r = matrix.shape[0]
    entries = tuple(tuple(ex.const(matrix[i, j]) for j in range(r)) for i in range(r))
    return MetricField(domain, r, entries, declared_rank=numerical_rank(matrix))


@dataclass
class GaugeTransform:
    """Pointwise endomorphism phi[a][b]; invertibility is only required
    when it is used as a gauge transformation, not as a solution candidate."""

    domain: ChartDomain
    r: int
    entries: tuple

    def __post_init__(self):
        self.entries = sm.as_matrix(self.entries)
        if len(self.entries) != self.r or any(len(row) != self.r for row in self.entries):
            raise ValueError(f"gauge matrix must be {self.r}x{self.r}")
        _validate_entries(self.entries, self.domain, "gauge coefficient")

    @cached_property
    def _fn(self):
        return sm.compile_matrix(self.entries)

    def matrix_at(self, x) -> np.ndarray:
        return self._fn(x)

    def min_abs_det_on_grid(self) -> float:
        return min(
            abs(float(np.linalg.det(self.matrix_at(p))))
            for p in self.domain.sample_points()
        )

    def require_invertible(self, floor: float = DET_REGULARITY_FLOOR):
        worst = self.min_abs_det_on_grid()
        if worst < floor:
            raise ValueError(
                f"gauge transform is numerically singular on the grid (|det| = {worst:.3e})"
            )


@dataclass
class CurvatureField:
    """Curvature coefficients R[i][j][a][b], antisymmetric in (i, j)."""

    domain: ChartDomain
    r: int
    entries: tuple  # m x m nested tuple of r x r expression matrices

    def matrix_at(self, x, i: int, j: int) -> np.ndarray:
        return sm.eval_matrix(self.entries[i][j], x)

    def pairs(self):
        m = self.domain.m
        return [(i, j) for i in range(m) for j in range(i + 1, m)]

    def max_abs_on_grid(self) -> float:
        worst = 0.0
        for p in self.domain.sample_points():
            for i, j in self.pairs():
                worst = max(worst, float(np.abs(self.matrix_at(p, i, j)).max()))
        return worst

    def is_flat(self, tol: float = 1e-9) -> bool:
        return self.max_abs_on_grid() <= tol


def curvature(conn: Connection) -> CurvatureField:
    """R_ij = d_i Gamma_j - d_j Gamma_i + Gamma_j Gamma_i - Gamma_i Gamma_j."""
    cached = conn.__dict__.get("_curvature")
    if cached is not None:
        return cached
    m, r = conn.domain.m, conn.r
    entries = [[sm.zeros_mat(r) for _ in range(m)] for _ in range(m)]
    for i in range(m):
        for j in range(i + 1, m):
            gi, gj = conn.gamma[i], conn.gamma[j]
            rij = sm.mat_add(
                sm.mat_sub(sm.mat_diff(gj, i + 1), sm.mat_diff(gi, j + 1)),
                sm.mat_sub(sm.mat_mul(gj, gi), sm.mat_mul(gi, gj)),
            )
            entries[i][j] = rij
            entries[j][i] = sm.mat_neg(rij)
    field = CurvatureField(conn.domain, r, tuple(tuple(row) for row in entries))
    conn.__dict__["_curvature"] = field
    return field


def dual_connection(metric: MetricField, conn: Connection) -> Connection:
    """The metric-dual connection: Gamma*_i = (d_i G - G Gamma_i^T) G^{-1}.

    Defined by g(dual_X s, s') = X g(s, s') - g(s, nabla_X s'); applying
    it twice returns the original connection.
    """
    if metric.antisymmetric:
        raise ValueError("dual connection needs a symmetric metric")
    if not metric.is_regular():
        raise ValueError("dual connection needs a regular metric on the chart")
    g = metric.entries
    ginv = sm.inverse_mat(g)
    gamma_star = []
    for i in range(conn.domain.m):
        num = sm.mat_sub(
            sm.mat_diff(g, i + 1),
            sm.mat_mul(g, sm.mat_transpose(conn.gamma[i])),
        )
        gamma_star.append(sm.mat_mul(num, ginv))
    return Connection(conn.domain, conn.r, tuple(gamma_star))


def apply_gauge(phi: GaugeTransform, conn: Connection) -> Connection:
    """Transformed coefficients of phi . nabla . phi^{-1}."""
    phi.require_invertible()
    p = phi.entries
    pinv = sm.inverse_mat(p)
    out = []
    for i in range(conn.domain.m):
        out.append(
            sm.mat_mul(pinv, sm.mat_sub(sm.mat_mul(conn.gamma[i], p), sm.mat_diff(p, i + 1)))
        )
    return Connection(conn.domain, conn.r, tuple(out))


def pushforward_metric(phi: GaugeTransform, metric: MetricField) -> MetricField:
    """g'(s, s') = g(phi^{-1} s, phi^{-1} s'), i.e. G' = P^{-1} G P^{-T}."""
    phi.require_invertible()
    pinv = sm.inverse_mat(phi.entries)
    entries = sm.mat_mul(pinv, sm.mat_mul(metric.entries, sm.mat_transpose(pinv)))
    return MetricField(
        metric.domain,
        metric.r,
        entries,
        declared_rank=metric.declared_rank,
        antisymmetric=metric.antisymmetric,
    )


def metric_covariant_derivative(conn: Connection, metric: MetricField):
    """(nabla g)_i = d_i G - Gamma_i G - G Gamma_i^T, plus its grid residual.

    Returns (field, residual) where field[i] is an r x r expression
    matrix and residual is the maximum absolute entry over the sample
    grid. Residual zero (to tolerance) certifies that the connection
    preserves the form on the chart.
    """
    g = metric.entries
    field_entries = []
    for i in range(conn.domain.m):
        gi = conn.gamma[i]
        field_entries.append(
            sm.mat_sub(
                sm.mat_sub(sm.mat_diff(g, i + 1), sm.mat_mul(gi, g)),
                sm.mat_mul(g, sm.mat_transpose(gi)),
            )
        )
    pts = conn.domain.sample_points()
    residual = max(sm.max_abs_on_points(fe, pts) for fe in field_entries)
    return tuple(field_entries), residual


def dual_gauge_compatibility_residual(
    phi: GaugeTransform, metric: MetricField, conn: Connection
) -> float:
    """Max grid discrepancy between phi.(g.nabla) and (phi.g).(phi.nabla).

    The dual construction commutes with the gauge action in this precise
    sense; the residual should sit at numerical roundoff for any regular
    metric and invertible gauge map.
    """
    lhs = apply_gauge(phi, dual_connection(metric, conn))
    rhs = dual_connection(pushforward_metric(phi, metric), apply_gauge(phi, conn))
    pts = conn.domain.sample_points()
    worst = 0.0
    for a, b in zip(lhs.gamma, rhs.gamma):
        diff = sm.mat_sub(a, b)
        worst = max(worst, sm.max_abs_on_points(diff, pts))
    return worst


def levi_civita(metric: MetricField) -> Connection:
    """Torsion-free metric-preserving connection of a regular metric on
    the tangent bundle (chart dimension equals fibre rank).

    gamma[i][j][k] = 1/2 sum_l g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)
    """
    m = metric.domain.m
    if metric.r != m:
        raise ValueError("tangent-bundle construction needs rank == dimension")
    if not metric.is_regular():
        raise ValueError("metric must be regular")
    g = metric.entries
    ginv = sm.inverse_mat(g)
    dg = [sm.mat_diff(g, l + 1) for l in range(m)]
    gamma = []
    for i in range(m):
        rows = []
        for j in range(m):
            row = []
            for k in range(m):
                acc = ex.ZERO
                for l in range(m):
                    bracket = ex.sub(
                        ex.add(dg[i][j][l], dg[j][i][l]),
                        dg[l][i][j],
                    )
                    acc = ex.add(acc, ex.mul(ginv[k][l], bracket))
                row.append(ex.mul(ex.const(0.5), acc))
            rows.append(tuple(row))
        gamma.append(tuple(rows))
    return Connection(metric.domain, m, tuple(gamma))
