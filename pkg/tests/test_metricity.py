import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from metron.bundle import (
    apply_gauge,
    identity_metric,
    numerical_rank,
)
from metron.corpus import (
    NILPOTENT_MATRIX,
    flat_connection,
    half_plane_levi_civita,
    nilpotent_connection,
    random_constant_gauge,
    random_constant_metric,
    random_polynomial_gauge,
    square_domain,
)
from metron.homsolver import SolveOptions
from metron.metricity import (
    analyze,
    decide_metricity,
    dual_metricity_equivalence,
    gauge_index,
    index_report,
    induced_forms,
    kernel_image_split,
    parallel_form_residuals,
    split_symmetric,
)
from oracles import hom_constraint_kernel

FAST = SolveOptions(grid_per_axis=5, steps_per_segment=16)


# ---------------------------------------------------------------------------
# symmetric/antisymmetric split
# ---------------------------------------------------------------------------


def test_split_identity_endomorphism():
    g = np.diag([1.0, 3.0])
    phi_sym, phi_alt = split_symmetric(g, np.eye(2))
    assert np.allclose(phi_sym, np.eye(2))
    assert np.allclose(phi_alt, 0.0)


def test_split_euclidean_is_matrix_symmetrisation():
    rng = np.random.default_rng(1)
    p = rng.standard_normal((3, 3))
    phi_sym, phi_alt = split_symmetric(np.eye(3), p)
    assert np.allclose(phi_sym, (p + p.T) / 2.0)
    assert np.allclose(phi_alt, (p - p.T) / 2.0)
    assert np.allclose(phi_sym + phi_alt, p)


def test_split_satisfies_defining_relations():
    """Oracle: solve the defining linear relations directly and compare."""
    g = np.diag([1.0, 2.0])
    p = np.array([[0.0, 1.0], [0.0, 0.0]])
    phi_sym, phi_alt = split_symmetric(g, p)
    rng = np.random.default_rng(2)
    for _ in range(20):
        s = rng.standard_normal(2)
        t = rng.standard_normal(2)
        pair = lambda a, b: a @ g @ b  # g(s, s') with coefficient vectors
        phi_of = lambda mat, v: mat.T @ v  # operator on coefficients
        lhs = pair(phi_of(phi_sym, s), t)
        rhs = 0.5 * (pair(phi_of(p, s), t) + pair(s, phi_of(p, t)))
        assert lhs == pytest.approx(rhs, abs=1e-12)
        lhs_a = pair(phi_of(phi_alt, s), t)
        rhs_a = 0.5 * (pair(phi_of(p, s), t) - pair(s, phi_of(p, t)))
        assert lhs_a == pytest.approx(rhs_a, abs=1e-12)


def test_induced_forms_properties():
    g = np.diag([1.0, 2.0])
    q, w = induced_forms(g, np.eye(2), np.zeros((2, 2)))
    assert np.allclose(q, g)
    assert np.allclose(w, 0.0)
    # nilpotent example with phi = N under the euclidean pairing
    phi_sym, phi_alt = split_symmetric(np.eye(2), NILPOTENT_MATRIX)
    q, w = induced_forms(np.eye(2), phi_sym, phi_alt)
    assert np.allclose(q, (NILPOTENT_MATRIX + NILPOTENT_MATRIX.T) / 2.0)
    assert np.allclose(q, q.T)
    assert np.allclose(w, -w.T)
    assert numerical_rank(q) == 2


_entries = st.floats(-3.0, 3.0, allow_nan=False)


@given(
    st.lists(_entries, min_size=4, max_size=4),
    st.lists(st.floats(0.3, 3.0, allow_nan=False), min_size=2, max_size=2),
)
def test_split_properties_hypothesis(phi_entries, g_diag):
    """The two split parts always recombine to the input, and the induced
    forms always land in their symmetry classes."""
    p = np.array(phi_entries).reshape(2, 2)
    g = np.diag(g_diag)
    phi_sym, phi_alt = split_symmetric(g, p)
    assert np.abs(phi_sym + phi_alt - p).max() <= 1e-10
    q, w = induced_forms(g, phi_sym, phi_alt)
    assert np.abs(q - q.T).max() <= 1e-9 * (1.0 + np.abs(q).max())
    assert np.abs(w + w.T).max() <= 1e-9 * (1.0 + np.abs(w).max())


@given(st.lists(_entries, min_size=4, max_size=4))
def test_split_idempotent_on_symmetric_part_hypothesis(phi_entries):
    p = np.array(phi_entries).reshape(2, 2)
    g = np.array([[2.0, 0.5], [0.5, 1.0]])
    phi_sym, _ = split_symmetric(g, p)
    again, alt = split_symmetric(g, phi_sym)
    assert np.abs(again - phi_sym).max() <= 1e-10 * (1.0 + np.abs(phi_sym).max())
    assert np.abs(alt).max() <= 1e-10 * (1.0 + np.abs(phi_sym).max())


def test_split_rank_equals_induced_form_rank():
    rng = np.random.default_rng(3)
    for _ in range(10):
        g = rng.standard_normal((3, 3))
        g = g @ g.T + 0.5 * np.eye(3)
        p = rng.standard_normal((3, 3))
        phi_sym, _ = split_symmetric(g, p)
        q, _ = induced_forms(g, phi_sym, np.zeros((3, 3)))
        assert numerical_rank(q) == numerical_rank(phi_sym)


# ---------------------------------------------------------------------------
# metricity decisions
# ---------------------------------------------------------------------------


def test_flat_connection_regularly_metric():
    cert = decide_metricity(flat_connection())
    assert cert.verdict == "RegularlyMetric"
    assert (cert.dim_j, cert.dim_s2, cert.dim_omega2) == (4, 3, 1)
    assert cert.exact_sequence_ok
    assert cert.certified
    assert cert.witness_rank == 2
    assert cert.witness_min_abs_det >= 1e-8


def test_nilpotent_connection_singular_metric_only():
    cert = decide_metricity(nilpotent_connection())
    assert cert.verdict == "SingularMetricOnly"
    assert cert.dim_s2 == 1
    assert cert.max_witness_rank == 1
    assert cert.witness_rank == 1
    # witness is the rank-1 parallel form diag(1, 0), up to scale
    w = cert.witness_base / cert.witness_base[0, 0]
    assert np.abs(w - np.diag([1.0, 0.0])).max() <= 1e-9
    assert cert.exact_sequence_ok  # 2 = 1 + 1


def test_hyperbolic_levi_civita_regularly_metric():
    conn, metric = half_plane_levi_civita()
    cert = decide_metricity(conn)
    assert cert.verdict == "RegularlyMetric"
    assert cert.dim_s2 == 1
    # witness proportional to the metric across the grid
    grid = cert.spaces["symmetric"].grid
    for n in range(0, len(grid.nodes), 17):
        gm = metric.matrix_at(grid.nodes[n])
        wm = cert.witness_field[n]
        ratio = wm[0, 0] / gm[0, 0]
        assert np.abs(wm - ratio * gm).max() <= 1e-7
    assert cert.certified


def test_not_metric_verdict_has_zero_s2():
    """A connection with no nonzero parallel symmetric form at all."""
    from metron.statmodels import alpha_connection, get_family

    conn = alpha_connection(get_family("gaussian1d"), 0.5)
    cert = decide_metricity(conn, options=SolveOptions(grid_per_axis=5, steps_per_segment=48))
    assert cert.verdict == "NotMetric"
    assert cert.dim_s2 == 0
    assert cert.witness_base is None


# ---------------------------------------------------------------------------
# induced-form parallelism for certified solutions
# ---------------------------------------------------------------------------


def test_parallel_form_residuals_flat():
    conn = flat_connection()
    bundle = analyze(conn)
    for idx in range(bundle.hom_space.dimension):
        out = parallel_form_residuals(conn, bundle, idx)
        assert out["q_residual"] <= 1e-6
        assert out["omega_residual"] <= 1e-6
        assert out["phi_rank_constant"]


def test_parallel_form_residuals_nilpotent_and_hyperbolic():
    for conn in (nilpotent_connection(), half_plane_levi_civita()[0]):
        bundle = analyze(conn)
        for idx in range(bundle.hom_space.dimension):
            out = parallel_form_residuals(conn, bundle, idx)
            assert out["q_residual"] <= 1e-6
            assert out["omega_residual"] <= 1e-6
            assert out["phi_rank_constant"]


# ---------------------------------------------------------------------------
# gauge index
# ---------------------------------------------------------------------------


def test_gauge_index_flat_euclidean_zero():
    conn = flat_connection()
    value, flags, _ = gauge_index(conn, identity_metric(conn.domain, 2))
    assert value == 0
    assert flags == ()


def test_gauge_index_nilpotent_matches_enumeration_oracle():
    conn = nilpotent_connection()
    value, _, space = gauge_index(conn, identity_metric(conn.domain, 2))
    # oracle: enumerate the constant solutions of the intertwining system
    # for the euclidean dual (constants P with N P + P N^T = 0), then
    # minimise the corank of the symmetrised part over the whole space
    kernel = hom_constraint_kernel(NILPOTENT_MATRIX, -NILPOTENT_MATRIX.T)
    assert kernel.shape[0] == space.dimension == 2
    best = 2
    rng = np.random.default_rng(0)
    for _ in range(500):
        c = rng.standard_normal(kernel.shape[0])
        p = (c @ kernel).reshape(2, 2)
        sym = (p + p.T) / 2.0
        best = min(best, 2 - numerical_rank(sym))
    assert value == best == 1


def test_gauge_index_zero_for_connection_with_its_own_metric():
    conn, metric = half_plane_levi_civita()
    value, flags, space = gauge_index(conn, metric)
    assert value == 0
    # the identity is a solution because the dual equals the connection
    assert space.contains(np.eye(2))


def test_gauge_index_zero_symmetric_part_gives_full_corank():
    from metron.statmodels import alpha_connection, get_family

    conn = alpha_connection(get_family("gaussian1d"), 0.5)
    g = identity_metric(conn.domain, 2)
    value, flags, space = gauge_index(
        conn, g, SolveOptions(grid_per_axis=5, steps_per_segment=48)
    )
    # J is 1-dimensional (an antisymmetric-type solution); its symmetric
    # part vanishes, so the minimal corank equals the full rank
    assert value == 2
    assert space.dimension == 1


def test_gauge_index_empty_space_returns_rank_with_flag():
    from metron.corpus import random_polynomial_connection

    rng = np.random.default_rng(44)
    dom = square_domain(5)
    conn = random_polynomial_connection(rng, dom, 2, scale=0.4)
    value, flags, space = gauge_index(conn, identity_metric(dom, 2), FAST)
    assert space.dimension == 0
    assert value == 2
    assert "empty-solution-space" in flags


# ---------------------------------------------------------------------------
# index report
# ---------------------------------------------------------------------------


def test_index_report_flat():
    report = index_report(flat_connection(), options=FAST)
    assert report.sb == 0
    assert report.sb_given_g == 0
    assert report.ind_decision == "Zero"
    assert report.verdict == "RegularlyMetric"


def test_index_report_nilpotent():
    report = index_report(nilpotent_connection(), options=FAST)
    assert report.sb == 1
    assert report.ind_decision == "AtLeastOne"
    assert report.max_parallel_metric_rank == 1
    assert report.family_size >= 9


def test_index_report_gauge_invariance():
    conn = nilpotent_connection()
    base = index_report(conn, options=FAST)
    rng = np.random.default_rng(17)
    for k in range(3):
        phi = (
            random_constant_gauge(rng, conn.domain, 2)
            if k % 2 == 0
            else random_polynomial_gauge(rng, conn.domain, 2)
        )
        moved = index_report(apply_gauge(phi, conn), options=FAST)
        assert (moved.sb, moved.sb_given_g, moved.ind_decision) == (
            base.sb,
            base.sb_given_g,
            base.ind_decision,
        )
        assert moved.max_parallel_metric_rank == base.max_parallel_metric_rank
        assert moved.verdict == base.verdict


# ---------------------------------------------------------------------------
# triad equivalence: verdict <-> gauge index zero <-> index decision
# ---------------------------------------------------------------------------


def test_equivalence_triad_on_named_connections():
    cases = [flat_connection(), nilpotent_connection(), half_plane_levi_civita()[0]]
    for conn in cases:
        cert = decide_metricity(conn, options=FAST)
        sb, _, _ = gauge_index(conn, identity_metric(conn.domain, conn.r), FAST)
        report = index_report(conn, options=FAST, certificate=cert)
        regular = cert.verdict == "RegularlyMetric"
        assert (sb == 0) == regular
        assert (report.ind_decision == "Zero") == regular


# ---------------------------------------------------------------------------
# kernel/image decompositions
# ---------------------------------------------------------------------------


def test_decomposition_identity_phi():
    out = kernel_image_split(np.eye(2), np.eye(2))
    assert out["ranks"] == [2]
    assert out["kernels"][0].shape[1] == 0
    assert out["images"][0].shape[1] == 2
    assert out["dims_sum_ok"]


def test_decomposition_projection():
    out = kernel_image_split(np.eye(2), np.diag([1.0, 0.0]))
    assert out["ranks"] == [1]
    kernel = out["kernels"][0][:, 0]
    image = out["images"][0][:, 0]
    assert np.abs(np.abs(kernel) - np.array([0.0, 1.0])).max() <= 1e-12
    assert np.abs(np.abs(image) - np.array([1.0, 0.0])).max() <= 1e-12
    assert out["directness_margin"] >= 1e-8


def test_decomposition_nilpotent_symmetrised():
    phi_sym, _ = split_symmetric(np.eye(2), NILPOTENT_MATRIX)
    out = kernel_image_split(np.eye(2), phi_sym)
    # eigenvalues +-1/2: full rank, direct splitting
    assert out["ranks"] == [2]
    assert out["directness_margin"] >= 1e-8


def test_decomposition_requires_positive_definite_metric():
    with pytest.raises(ValueError):
        kernel_image_split(np.diag([1.0, -1.0]), np.eye(2))


def test_decomposition_rank_constant_across_grid():
    conn = nilpotent_connection()
    bundle = analyze(conn)
    hom = bundle.hom_space
    values = []
    for n, x in enumerate(hom.grid.nodes):
        g = bundle.base_metric.matrix_at(x)
        phi_sym, _ = split_symmetric(g, hom.extensions[0][n])
        values.append(phi_sym)
    out = kernel_image_split(np.eye(2), np.array(values))
    assert out["rank_constant"]


# ---------------------------------------------------------------------------
# dual metricity equivalence
# ---------------------------------------------------------------------------


def test_dual_metricity_equivalence():
    rng = np.random.default_rng(6)
    dom = square_domain(5)
    metrics = [random_constant_metric(rng, dom, 2) for _ in range(2)]
    assert dual_metricity_equivalence(flat_connection(dom), metrics, FAST)
    nil = nilpotent_connection(dom)
    nil_metrics = [random_constant_metric(rng, dom, 2) for _ in range(2)]
    assert dual_metricity_equivalence(nil, nil_metrics, FAST)
    conn, metric = half_plane_levi_civita()
    assert dual_metricity_equivalence(conn, [metric], FAST)
