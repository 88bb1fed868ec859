import numpy as np
import pytest
import scipy.io
import scipy.linalg as la
from hypothesis import given, settings
from hypothesis import strategies as st
from conftest import mesh, system
from oracle import reference_blocks, reference_load

from lsfem.assembly import (
    DofMap,
    LameParameters,
    apply_compliance,
    assemble_blocks,
    assemble_load,
    evaluate_functional,
)
from lsfem.errors import ParameterError

finite = st.floats(-1e3, 1e3, allow_nan=False)
positive = st.floats(1e-3, 1e8, allow_nan=False)


def identity_field(m):
    """Stress coefficients of the global field tau = I (row r = e_r)."""
    X = m.vertices[m.edges]
    normal = np.column_stack([X[:, 1, 1] - X[:, 0, 1], X[:, 0, 0] - X[:, 1, 0]])
    return np.concatenate([normal[:, 0], normal[:, 1]])


# -- compliance ---------------------------------------------------------------


def test_compliance_examples():
    I = np.eye(2)
    assert np.allclose(apply_compliance(I, LameParameters(1, 1)), 0.25 * I, atol=1e-16)
    off = np.array([[0.0, 1.0], [1.0, 0.0]])
    for lam in (1.0, 100.0, 1e8):
        assert np.allclose(apply_compliance(off, LameParameters(1, lam)), off / 2, atol=1e-16)
    out = apply_compliance(I, LameParameters(1, 1e8))
    assert out[0, 0] == pytest.approx(5.0e-9, rel=1e-8)
    assert out[0, 1] == 0.0


@settings(max_examples=50)
@given(finite, finite, st.lists(finite, min_size=8, max_size=8), positive, positive)
def test_compliance_is_linear(a, b, entries, mu, lam):
    p = LameParameters(mu, lam)
    s = np.array(entries[:4]).reshape(2, 2)
    t = np.array(entries[4:]).reshape(2, 2)
    lhs = apply_compliance(a * s + b * t, p)
    rhs = a * apply_compliance(s, p) + b * apply_compliance(t, p)
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-10 * (1 + np.abs(lhs).max()))


@settings(max_examples=50)
@given(st.lists(finite, min_size=3, max_size=3), positive, positive)
def test_compliance_preserves_symmetry(entries, mu, lam):
    s = np.array([[entries[0], entries[1]], [entries[1], entries[2]]])
    out = apply_compliance(s, LameParameters(mu, lam))
    assert out[0, 1] == out[1, 0]


@settings(max_examples=50)
@given(positive, positive, st.floats(1.01, 100))
def test_coefficient_bounds_and_monotonicity(mu, lam, factor):
    p, q = LameParameters(mu, lam), LameParameters(mu, lam * factor)
    assert 0 < p.c < 0.5
    assert q.c >= p.c


@pytest.mark.parametrize("mu, lam", [(0, 1), (1, 0), (-1, 1), (float("inf"), 1), (1, float("nan"))])
def test_invalid_parameters(mu, lam):
    with pytest.raises(ParameterError):
        LameParameters(mu, lam)


def test_incompressible_limit_coefficient():
    p = LameParameters(1.0, float("inf"))
    assert (p.c, p.one_minus_2c) == (0.5, 0.0)
    assert LameParameters(1.0, 1e8).one_minus_2c == pytest.approx(1 / (1e8 + 1), rel=1e-15)


# -- dof map and block structure ------------------------------------------------


def test_dof_counts_square_right_n2():
    s = system("square-right", 2)
    assert (s.n_sigma, s.n_u) == (32, 2)


@pytest.mark.parametrize("family, n", [("square-right", 4), ("lshape-uniform", 4), ("square-nonuniform", 6)])
def test_dofmap_bijection(family, n):
    m = mesh(family, n)
    dm = DofMap.for_mesh(m)
    assert dm.n_sigma == 2 * m.n_edges
    assert dm.n_u == 2 * (m.n_vertices - len(m.boundary_vertices))
    dofs = dm.vertex_dofs[dm.vertex_dofs >= 0]
    assert np.array_equal(np.sort(dofs), np.arange(dm.n_u))
    assert np.all(dm.vertex_dofs[m.boundary_vertices] == -1)
    stress = dm.stress_dof(np.arange(2)[:, None], np.arange(m.n_edges)[None, :]).ravel()
    assert np.array_equal(np.sort(stress), np.arange(dm.n_sigma))


def test_mesh_without_interior_vertex_is_rejected():
    with pytest.raises(ParameterError, match="square-right-N1"):
        assemble_blocks(mesh("square-right", 1), LameParameters())


@pytest.mark.parametrize("lam", [1.0, 100.0, 1e8])
def test_blocks_match_bruteforce_oracle(lam):
    s = system("square-right", 2, lam)
    for got, want in zip((s.A, s.B, s.C, s.D), reference_blocks(s.mesh, 1.0, lam)):
        assert got.shape == want.shape
        assert np.abs(got.toarray() - want).max() <= 1e-12 * max(1.0, np.abs(want).max())


@pytest.mark.parametrize("family, n, mu, lam", [("square-crossed", 2, 1.0, 1.0),
                                                ("square-nonuniform", 4, 2.5, 3.0),
                                                ("lshape-left", 4, 1.0, 100.0)])
def test_blocks_match_oracle_on_other_meshes(family, n, mu, lam):
    s = assemble_blocks(mesh(family, n), LameParameters(mu, lam))
    for got, want in zip((s.A, s.B, s.C, s.D), reference_blocks(s.mesh, mu, lam)):
        assert np.abs(got.toarray() - want).max() <= 1e-12 * max(1.0, np.abs(want).max())


@pytest.mark.parametrize("family", ["square-right", "square-crossed", "lshape-nonuniform"])
def test_exact_symmetry(family):
    s = system(family, 4)
    assert abs(s.A - s.A.T).max() == 0
    assert abs(s.C - s.C.T).max() == 0


def test_quadrature_degree_does_not_matter():
    m = mesh("square-nonuniform", 4)
    p = LameParameters(1.0, 7.0)
    lo, hi = assemble_blocks(m, p, quad_degree=2), assemble_blocks(m, p, quad_degree=4)
    for a, b in zip((lo.A, lo.B, lo.C, lo.D), (hi.A, hi.B, hi.C, hi.D)):
        assert abs(a - b).max() <= 1e-13


def test_assembly_is_deterministic():
    a = assemble_blocks(mesh("square-crossed", 4), LameParameters(1, 3))
    b = assemble_blocks(mesh("square-crossed", 4), LameParameters(1, 3))
    for x, y in zip((a.A, a.B, a.C, a.D), (b.A, b.B, b.C, b.D)):
        assert x.data.tobytes() == y.data.tobytes()
        assert np.array_equal(x.indices, y.indices)


@pytest.mark.parametrize("lam", [1.0, 100.0, 1e4])
def test_a_positive_definite(lam):
    A = system("square-right", 4, lam).A.toarray()
    diag = np.diag(la.cholesky(A))
    assert np.all(diag > 0)
    assert np.linalg.eigvalsh(system("square-right", 4).C.toarray()).min() > 0


def test_smallest_eigenvalue_of_a_scales_with_trace_coefficient():
    # beyond lambda ~ 1e5 the eigenvalue drops under dense roundoff (|A| eps)
    ratio = []
    for lam in (1e2, 1e3, 1e4):
        s = system("square-right", 2, lam)
        ratio.append(np.linalg.eigvalsh(s.A.toarray()).min() / s.params.one_minus_2c ** 2)
    assert np.ptp(ratio) <= 1e-4 * np.mean(ratio)


@pytest.mark.parametrize("lam", [1.0, 100.0])
def test_full_block_matrix_positive(lam, rng):
    M = system("square-right", 4, lam).full_matrix().toarray()
    assert np.abs(M - M.T).max() == 0
    x = rng.standard_normal((M.shape[0], 100))
    assert np.all(np.einsum("ik,ij,jk->k", x, M, x) > 0)
    la.cholesky(M)


def test_identity_field():
    s = system("square-right", 2)
    x = identity_field(s.mesh)
    assert x @ (s.A @ x) == pytest.approx(0.125, abs=1e-14)
    assert np.abs(s.B @ x).max() <= 1e-14
    assert np.abs(x @ s.D).max() <= 1e-14
    assert x @ s.trace_vector == pytest.approx(2.0, abs=1e-14)
    p = s.params
    assert np.allclose(s.A @ x, p.one_minus_2c ** 2 / (4 * p.mu ** 2) * s.trace_vector, atol=1e-14)


def test_deflated_full_matrix_adds_trace_mode():
    s = system("square-right", 2, 1e8, deflate=True)
    x = identity_field(s.mesh)
    M = s.full_matrix().toarray()
    xx = np.concatenate([x, np.zeros(s.n_u)])
    expected = x @ (s.A @ x) + s.deflation_weight * (x @ s.trace_vector) ** 2
    assert xx @ M @ xx == pytest.approx(expected, rel=1e-12)


def test_matrix_market_dump(tmp_path):
    s = system("square-right", 2)
    s.dump_matrix_market(tmp_path)
    for name, block in zip("ABCD", (s.A, s.B, s.C, s.D)):
        back = scipy.io.mmread(tmp_path / f"{name}.mtx")
        assert np.abs(back.toarray() - block.toarray()).max() <= 1e-15


# -- loads and the functional ----------------------------------------------------


def test_zero_load():
    m = mesh("square-right", 2)
    load = assemble_load(m, DofMap.for_mesh(m), lambda x, y: (0 * x, 0 * y))
    assert np.all(load == 0)


def test_constant_load_is_net_flux():
    m = mesh("square-crossed", 3)
    dm = DofMap.for_mesh(m)
    f = np.array([0.7, -1.3])
    load = assemble_load(m, dm, lambda x, y: (f[0] + 0 * x, f[1] + 0 * y))
    # net outward flux of each basis field: +1 / -1 on one side, cancels otherwise
    flux = np.zeros(m.n_edges)
    np.add.at(flux, m.triangle_edges.ravel(), m.triangle_edge_signs.ravel())
    assert np.allclose(load, -np.concatenate([f[0] * flux, f[1] * flux]), atol=1e-14)


def test_load_matches_oracle():
    m = mesh("square-right", 2)
    load = assemble_load(m, DofMap.for_mesh(m), lambda x, y: (np.ones_like(x), np.zeros_like(y)))
    assert np.abs(load - reference_load(m, lambda x, y: (1.0, 0.0))).max() <= 1e-12


def test_smooth_load_quadrature_error():
    m = mesh("square-right", 8)

    def f(x, y):
        return np.sin(3 * x) * np.exp(y), np.cos(x * y)

    load = assemble_load(m, DofMap.for_mesh(m), f)
    assert np.abs(load - reference_load(m, f, order=8)).max() <= 1e-6


def test_functional_zero():
    m = mesh("square-right", 2)
    dm = DofMap.for_mesh(m)
    assert evaluate_functional(m, LameParameters(), np.zeros(dm.n_sigma), np.zeros(dm.n_u)) == 0.0


def test_functional_at_zero_solution_is_load_norm():
    m = mesh("square-nonuniform", 4)
    dm = DofMap.for_mesh(m)
    value = evaluate_functional(m, LameParameters(), np.zeros(dm.n_sigma), np.zeros(dm.n_u),
                                f=lambda x, y: (np.ones_like(x), x))
    assert value == pytest.approx(4.0 / 3.0, abs=1e-13)


def test_functional_smooth_load_norm():
    from lsfem.analysis import manufactured_solution

    m = mesh("square-right", 16)
    dm = DofMap.for_mesh(m)
    _, _, f = manufactured_solution(LameParameters(1, 1))
    value = evaluate_functional(m, LameParameters(1, 1), np.zeros(dm.n_sigma), np.zeros(dm.n_u), f=f)
    # |f|^2 = pi^4 ((3 mu + lam)^2 + (lam + mu)^2) / 2
    assert value == pytest.approx(np.pi ** 4 * 10, rel=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1.0, 100.0, 1e4]))
def test_functional_equals_block_quadratic_form(seed, lam):
    s = system("square-nonuniform", 4, lam)
    r = np.random.default_rng(seed)
    sigma, u = r.standard_normal(s.n_sigma), r.standard_normal(s.n_u)
    x = np.concatenate([sigma, u])
    form = x @ (s.full_matrix() @ x)
    value = evaluate_functional(s.mesh, s.params, sigma, u)
    assert value == pytest.approx(form, rel=1e-11)
    assert value > 0


def test_functional_rejects_wrong_sizes():
    m = mesh("square-right", 2)
    with pytest.raises(ParameterError):
        evaluate_functional(m, LameParameters(), np.zeros(3), np.zeros(2))
