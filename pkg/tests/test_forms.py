import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from quasiunitary import scenarios as sc
from quasiunitary.forms import (
    SectorialityConstants,
    SesquilinearForm,
    check_resolvent_bounds,
    check_sector_inclusion,
    exterior_ray,
    resolvent,
    sector_estimates,
    sectoriality_constants,
)
from quasiunitary.linalg import WeightedSpace, gram_adjoint, weighted_norm

from conftest import random_form


def _space(m):
    return WeightedSpace(np.atleast_2d(np.asarray(m, dtype=float)))


def test_constants_of_the_V_inner_product():
    I = _space(np.eye(3))
    c = sectoriality_constants(SesquilinearForm(I, I, np.eye(3)), alpha=1.0)
    assert (c.M, c.c_V, c.omega) == (pytest.approx(1.0), pytest.approx(1.0), pytest.approx(0.0))


def test_zero_form_needs_shift():
    one = _space(1.0)
    c = sectoriality_constants(SesquilinearForm(one, one, np.zeros((1, 1))), alpha=0.5)
    assert c.omega == pytest.approx(0.5)


def _dirichlet_p1(n):
    h = 1.0 / n
    m = n - 1
    K = sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1]) / h
    M = sp.diags([np.ones(m - 1), 4 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]) * h / 6
    return K.toarray(), M.toarray()


def test_dirichlet_laplacian_constants(rng):
    K, M = _dirichlet_p1(64)
    H, V = WeightedSpace(M), WeightedSpace(K + M)
    f = SesquilinearForm(H, V, K)
    c = sectoriality_constants(f)
    # M by sampling |a(u,v)| / (|u|_V |v|_V)
    U = rng.standard_normal((K.shape[0], 4000))
    W = rng.standard_normal((K.shape[0], 4000))
    num = np.abs(np.einsum("ij,ij->j", W, K @ U))
    den = np.sqrt(np.einsum("ij,ij->j", U, (K + M) @ U) * np.einsum("ij,ij->j", W, (K + M) @ W))
    assert (num / den).max() <= c.M * (1 + 1e-12)
    # the sup is attained on u = v = top eigenvector
    lam = np.linalg.eigvalsh(np.linalg.solve(K + M, K))
    assert c.M == pytest.approx(lam.max(), rel=0.05)
    assert check_sector_inclusion(f, c).ok
    # ellipticity: Re a(u,u) + omega |u|_H^2 >= alpha |u|_V^2
    q = np.einsum("ij,ij->j", U, K @ U) + c.omega * np.einsum("ij,ij->j", U, M @ U)
    assert np.all(q >= c.alpha * np.einsum("ij,ij->j", U, (K + M) @ U) * (1 - 1e-12))


def test_sector_estimates_right_angle():
    est = sector_estimates(SectorialityConstants(M=1.0, omega=0.0, alpha=1.0, c_V=1.0), math.pi)
    assert est.D_theta == pytest.approx(math.sqrt(2.0))
    with pytest.raises(ValueError):
        sector_estimates(SectorialityConstants(1.0, 0.0, 1.0, 1.0), 0.5)


def test_resolvent_diagonal():
    I = _space(np.eye(2))
    R = resolvent(SesquilinearForm(I, I, np.diag([1.0, 2.0])), 0.0)
    np.testing.assert_allclose(R.matrix, np.diag([-1.0, -0.5]))


def test_scalar_resolvent_bound():
    one = _space(1.0)
    f = SesquilinearForm(one, one, np.ones((1, 1)))
    c = SectorialityConstants(M=1.0, omega=0.0, alpha=0.5, c_V=1.0)
    assert weighted_norm(resolvent(f, -1.0)) == pytest.approx(0.5)
    rep = check_resolvent_bounds(f, c, 0.5 * (c.theta_min + math.pi), [-1.0])
    assert rep.ok


@pytest.mark.parametrize("seed", range(5))
def test_lax_milgram_shift_and_bounds(seed):
    f = random_form(np.random.default_rng(seed), 8)
    c = sectoriality_constants(f)
    resolvent(f, -c.omega - 1.0)
    assert check_sector_inclusion(f, c).ok
    theta = 0.5 * (c.theta_min + math.pi)
    rng = np.random.default_rng(seed)
    ang = rng.uniform(theta, math.pi, 20) * rng.choice([-1, 1], 20)
    z = -c.omega + np.exp(rng.uniform(-2, 4, 20)) * np.exp(1j * ang)
    assert check_resolvent_bounds(f, c, theta, z).ok


def test_skew_two_by_two_spectrum():
    I = _space(np.eye(2))
    f = SesquilinearForm(I, I, np.array([[1.0, 1.0], [-1.0, 1.0]]))
    np.testing.assert_allclose(np.sort_complex(f.eigenvalues()), [1 - 1j, 1 + 1j])
    c = sectoriality_constants(f)
    assert check_sector_inclusion(f, c).ok


def test_nonsymmetric_graph_coupling_in_sector():
    g = sc.MetricGraph([0, 1, 2], [(0, 1), (1, 2)], [1.0, 1.0],
                       np.array([[0.0, 0.3, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    form = sc.graph_form(g, [40, 40])
    c = sectoriality_constants(form)
    assert not form.is_hermitian
    assert check_sector_inclusion(form, c).ok


def test_fourier_ray_and_wentzell_bounds():
    b = sc.build_fourier((np.arange(1, 33) * math.pi) ** 2, 8)
    for form in (b.f0, b.fe):
        c = sectoriality_constants(form)
        rep = check_resolvent_bounds(form, c, math.pi, exterior_ray(c.omega, math.pi, np.geomspace(0.1, 1e3, 20)))
        assert rep.ok
    W = sc.WentzellCoefficients
    w = sc.build_wentzell(8, W.family_member(0.0), W.family_member(0.0))
    c = sectoriality_constants(w.f0)
    rep = check_resolvent_bounds(w.f0, c, math.pi, exterior_ray(c.omega, math.pi, np.geomspace(0.1, 1e3, 20)))
    assert rep.ok


def test_hermitian_operator_has_real_spectrum(rng):
    f = random_form(rng, 10, skew=0.0)
    assert f.is_hermitian
    assert np.abs(f.eigenvalues().imag).max() < 1e-10


def test_form_json_roundtrip(rng):
    f = random_form(rng, 5)
    c = sectoriality_constants(f)
    obj = f.to_json(c)
    assert set(obj) == {"gram_H", "gram_V", "incl", "form", "constants"}
    g = SesquilinearForm.from_json(obj)
    np.testing.assert_array_equal(g.form, f.form)
    assert g.incl_is_identity


def test_form_shape_validation(rng):
    I = _space(np.eye(3))
    with pytest.raises(ValueError):
        SesquilinearForm(I, I, np.eye(2))
    with pytest.raises(ValueError):
        SesquilinearForm(I, _space(np.eye(2)), np.eye(2))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 10))
def test_resolvent_identity(seed, n):
    rng = np.random.default_rng(seed)
    f = random_form(rng, n)
    c = sectoriality_constants(f)
    z1, z2 = -c.omega - 1.0 + rng.uniform(-3, 0) + 2j * rng.standard_normal(2)
    R1, R2 = resolvent(f, z1).matrix, resolvent(f, z2).matrix
    lhs = R1 - R2
    rhs = (z2 - z1) * R1 @ R2
    scale = max(np.abs(lhs).max(), np.abs(rhs).max())
    assert np.abs(lhs - rhs).max() <= 1e-8 * scale


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 10))
def test_adjoint_resolvent(seed, n):
    rng = np.random.default_rng(seed)
    f = random_form(rng, n)
    c = sectoriality_constants(f)
    z = -c.omega - 0.5 + 3j * rng.standard_normal()
    a = resolvent(f.adjoint(), np.conj(z)).matrix
    b = gram_adjoint(resolvent(f, z)).matrix
    assert np.abs(a - b).max() <= 1e-9 * max(1.0, np.abs(b).max())


def test_adjoint_form_definition(rng):
    f = random_form(rng, 4)
    u, v = rng.standard_normal(4) + 1j * rng.standard_normal(4), rng.standard_normal(4) + 0j
    assert f.adjoint()(u, v) == pytest.approx(np.conj(f(v, u)))


def test_common_constants_need_shared_alpha():
    a = SectorialityConstants(1.0, 0.0, 0.5, 1.0)
    b = SectorialityConstants(2.0, 0.3, 0.5, 0.5)
    c = SectorialityConstants.common(a, b)
    assert (c.M, c.omega, c.c_V) == (2.0, 0.3, 1.0)
    with pytest.raises(ValueError):
        SectorialityConstants.common(a, SectorialityConstants(1.0, 0.0, 0.25, 1.0))
