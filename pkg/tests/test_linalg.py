import math

import numpy as np
import pytest
import scipy.optimize as so
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from quasiunitary.linalg import (
    ContourSpec,
    LinearMap,
    SingularMatrix,
    WeightedSpace,
    contour_nodes,
    generalized_hermitian_eigs,
    gram_adjoint,
    matrix_from_json,
    matrix_to_json,
    solve,
    weighted_bilinear_norm,
    weighted_norm,
)

from conftest import random_hpd


def _brute_ratio(ratio, n, rng, samples=10_000):
    """Best sampled ratio, then polished by a local optimiser."""
    U = rng.standard_normal((samples, n)) + 1j * rng.standard_normal((samples, n))
    vals = np.array([ratio(u) for u in U])
    u0 = U[int(np.argmax(vals))]
    x0 = np.concatenate([u0.real, u0.imag])
    res = so.minimize(lambda x: -ratio(x[:n] + 1j * x[n:]), x0, method="BFGS",
                      options={"gtol": 1e-12})
    return vals.max(), -res.fun


def test_weighted_norm_identity_cases():
    I2 = WeightedSpace(np.eye(2))
    assert weighted_norm(LinearMap(I2, I2, np.eye(2))) == pytest.approx(1.0)
    dom, cod = WeightedSpace(4 * np.eye(1)), WeightedSpace(np.eye(1))
    assert weighted_norm(LinearMap(dom, cod, np.eye(1))) == pytest.approx(0.5)


def test_weighted_norm_matches_brute_force(rng):
    dom, cod = WeightedSpace(random_hpd(rng, 5)), WeightedSpace(random_hpd(rng, 5))
    T = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    got = weighted_norm(LinearMap(dom, cod, T))
    sampled, polished = _brute_ratio(lambda u: cod.norm(T @ u) / dom.norm(u), 5, rng)
    assert sampled <= got * (1 + 1e-12)
    assert polished == pytest.approx(got, rel=1e-6)


def test_bilinear_norm_cases(rng):
    left, right = WeightedSpace(random_hpd(rng, 6)), WeightedSpace(random_hpd(rng, 4))
    assert weighted_bilinear_norm(np.zeros((4, 6)), left, right) == 0.0
    I3 = WeightedSpace(np.eye(3))
    assert weighted_bilinear_norm(np.eye(3), I3, I3) == pytest.approx(1.0)
    D = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
    got = weighted_bilinear_norm(D, left, right)

    # sup over f of sup over u is attained at u = G_r^{-1} D f, giving the dual norm
    def ratio(f):
        g = np.linalg.solve(right.gram, D @ f)
        return abs(np.vdot(g, D @ f)) / (left.norm(f) * right.norm(g))

    sampled, polished = _brute_ratio(ratio, 6, rng)
    assert sampled <= got * (1 + 1e-12)
    assert polished == pytest.approx(got, rel=1e-6)


def test_sparse_power_iteration_agrees_with_dense(rng):
    n = 40
    G = sp.diags(rng.uniform(0.5, 2.0, n)).tocsc()
    T = sp.random(n, n, density=0.2, random_state=3, format="csr") + sp.identity(n)
    import quasiunitary.linalg as la
    old = la.DENSE_LIMIT
    la.DENSE_LIMIT = 10
    try:
        sparse_space = WeightedSpace(G)
    finally:
        la.DENSE_LIMIT = old
    dense_space = WeightedSpace(G.toarray())
    assert sparse_space.sparse
    a = weighted_norm(LinearMap(sparse_space, sparse_space, T))
    b = weighted_norm(LinearMap(dense_space, dense_space, T.toarray()))
    assert a == pytest.approx(b, rel=1e-6)


def test_gram_adjoint_examples(rng):
    one, nine = WeightedSpace(np.eye(1)), WeightedSpace(9 * np.eye(1))
    adj = gram_adjoint(LinearMap(one, nine, 2 * np.eye(1)))
    assert adj.matrix[0, 0] == pytest.approx(18.0)
    I3 = WeightedSpace(np.eye(3))
    T = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    np.testing.assert_allclose(gram_adjoint(LinearMap(I3, I3, T)).matrix, T.conj().T, atol=1e-14)


def test_gram_adjoint_inner_product_identity(rng):
    dom, cod = WeightedSpace(random_hpd(rng, 4)), WeightedSpace(random_hpd(rng, 6))
    T = LinearMap(dom, cod, rng.standard_normal((6, 4)) + 1j * rng.standard_normal((6, 4)))
    Ts = gram_adjoint(T)
    for _ in range(100):
        u = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        v = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        lhs, rhs = cod.inner(T.matrix @ u, v), dom.inner(u, Ts.matrix @ v)
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 7), m=st.integers(1, 7))
def test_adjoint_norm_identity(seed, n, m):
    rng = np.random.default_rng(seed)
    dom, cod = WeightedSpace(random_hpd(rng, n)), WeightedSpace(random_hpd(rng, m))
    T = LinearMap(dom, cod, rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n)))
    assert weighted_norm(gram_adjoint(T)) == pytest.approx(weighted_norm(T), rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_submultiplicative(seed):
    rng = np.random.default_rng(seed)
    dims = rng.integers(1, 7, 3)
    spaces = [WeightedSpace(random_hpd(rng, int(d))) for d in dims]
    A = LinearMap(spaces[0], spaces[1], rng.standard_normal((dims[1], dims[0])))
    B = LinearMap(spaces[1], spaces[2], rng.standard_normal((dims[2], dims[1])))
    assert weighted_norm(B.compose(A)) <= weighted_norm(A) * weighted_norm(B) * (1 + 1e-12)


def test_generalized_eigs_examples(rng):
    w, _ = generalized_hermitian_eigs(np.diag([1.0, 4.0]), np.eye(2))
    np.testing.assert_allclose(w, [1.0, 4.0])
    w, _ = generalized_hermitian_eigs(np.diag([2.0]), np.diag([4.0]))
    assert w[0] == pytest.approx(0.5)
    A = random_hpd(rng, 6, -3.0, 3.0)
    B = random_hpd(rng, 6)
    w, V = generalized_hermitian_eigs(A, B)
    res = np.linalg.norm(A @ V - B @ V * w, axis=0)
    assert res.max() <= 1e-10 * np.abs(w).max()
    np.testing.assert_allclose(V.conj().T @ B @ V, np.eye(6), atol=1e-10)
    # Rayleigh quotient oracle
    U = rng.standard_normal((6, 10_000)) + 1j * rng.standard_normal((6, 10_000))
    rq = np.real(np.einsum("ij,ij->j", U.conj(), A @ U) / np.einsum("ij,ij->j", U.conj(), B @ U))
    assert w[0] - 1e-9 <= rq.min() and rq.max() <= w[-1] + 1e-9


def test_generalized_eigs_rejects_indefinite_B():
    with pytest.raises(ValueError):
        generalized_hermitian_eigs(np.eye(2), np.diag([1.0, -1.0]))


def test_solve_examples(rng):
    rhs = rng.standard_normal((3, 2))
    np.testing.assert_allclose(solve(np.eye(3), rhs), rhs)
    np.testing.assert_allclose(solve(np.diag([2.0, 5.0]), np.array([2.0, 5.0])), [1.0, 1.0])
    A = rng.standard_normal((50, 50)) + 50 * np.eye(50)
    b = rng.standard_normal(50)
    x = solve(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(A) * np.linalg.norm(x)
    with pytest.raises(SingularMatrix):
        solve(np.array([[1.0, 1.0], [1.0, 1.0]]), b[:2])


def test_weighted_space_validation():
    with pytest.raises(ValueError):
        WeightedSpace(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        WeightedSpace(np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        WeightedSpace(np.eye(2), lumped_weights=[1.0, 0.0])


def test_circle_nodes_four_points():
    z, w = contour_nodes(ContourSpec.circle(0.0, 1.0, nodes=4))
    np.testing.assert_allclose(z, [1, 1j, -1, -1j], atol=1e-15)
    np.testing.assert_allclose(w, (2j * math.pi / 4) * z, atol=1e-15)


def test_circle_quadrature_cauchy():
    z, w = contour_nodes(ContourSpec.circle(0.0, 1.0, nodes=64))
    assert abs(np.sum(w / z) - 2j * math.pi) < 1e-12
    assert abs(np.sum(w / z ** 2)) < 1e-12


def test_circle_quadrature_converges_exponentially():
    a = 0.5 + 0.2j
    errs = []
    for n in (8, 16, 32):
        z, w = contour_nodes(ContourSpec.circle(0.0, 1.0, nodes=n))
        errs.append(abs(np.sum(w / (z - a)) - 2j * math.pi))
    # error ~ |a|^n: doubling n squares the error
    assert errs[1] < errs[0] ** 1.5 and errs[2] < errs[1] ** 1.5


def test_sector_nodes_integrate_resolvent():
    # (1/2 pi i) integral of e^{-z}/(z - lam) along the sector boundary = e^{-lam}
    spec = ContourSpec.sector(0.0, 0.25 * math.pi, 60.0, nodes_per_decade=80)
    z, w = contour_nodes(spec)
    lam = 2.0
    val = np.sum(w * np.exp(-z) / (z - lam)) / (2j * math.pi)
    assert abs(val - math.exp(-lam)) < 1e-8


def test_contour_spec_validation():
    with pytest.raises(ValueError):
        ContourSpec("ellipse")
    with pytest.raises(ValueError):
        ContourSpec.sector(0.0, math.pi, 10.0)
    with pytest.raises(ValueError):
        ContourSpec.circle(0.0, -1.0)


@pytest.mark.parametrize("sparse", [False, True])
def test_matrix_json_roundtrip(rng, sparse):
    m = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
    if sparse:
        m = sp.csc_matrix(np.where(np.abs(m) > 1.0, m, 0.0))
    back = matrix_from_json(matrix_to_json(m))
    a = m.toarray() if sparse else m
    b = back.toarray() if sp.issparse(back) else back
    np.testing.assert_array_equal(a, b)


def test_matrix_json_rejects_bad_payload():
    with pytest.raises(ValueError):
        matrix_from_json({"rows": 2, "cols": 2, "re": [1.0]})
    with pytest.raises(ValueError):
        matrix_from_json({"cols": 2})
