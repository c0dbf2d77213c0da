import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hdica.tensorops import (
    D_MAX_DENSE,
    DenseTensor4,
    DimensionError,
    PopulationTensor,
    SpectralError,
    check_data,
    contract4,
    dense_oracle_build,
    m0_apply,
    m0_contract,
    m0_dense,
    m0_matvec,
    rank_d_spectral,
)
from oracles import dense_m0, dense_moment


def unit(rng, d):
    u = rng.standard_normal(d)
    return u / np.linalg.norm(u)


# -- contract4 ---------------------------------------------------------------

def test_contract4_hand_example():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    e1 = np.array([1.0, 0.0])
    np.testing.assert_allclose(contract4(X, e1, e1), [[0.5, 0.0], [0.0, 0.0]])


def test_contract4_canonical_directions_match_dense(rng):
    X = rng.standard_normal((20, 5))
    T = dense_moment(X)
    E = np.eye(5)
    for i, j, k, l in itertools.product(range(5), repeat=4):
        assert contract4(X, E[i], E[j], E[k], E[l]) == pytest.approx(T[i, j, k, l], rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("d", range(3, 9))
def test_contract4_every_pattern_matches_dense(rng, d):
    X = rng.standard_normal((rng.integers(5, 51), d))
    T = dense_moment(X)
    for _ in range(10):
        us = [unit(rng, d) for _ in range(4)]
        for k in range(1, 5):
            ref = T
            for u in reversed(us[:k]):
                ref = ref @ u
            got = contract4(X, *us[:k])
            assert np.abs(got - ref).max() <= 1e-10 * max(1.0, np.abs(ref).max())


def test_contract4_laplace_population(rng):
    S = rng.laplace(0, 1 / np.sqrt(2), (200_000, 3))
    e1 = np.eye(3)[0]
    v = contract4(S, e1, e1, e1)
    # E S^4 = 6 for unit-variance Laplace; cross terms vanish
    assert v[0] == pytest.approx(6.0, abs=0.3)
    assert np.abs(v[1:]).max() < 0.1


def test_contract4_rejects_bad_input(rng):
    X = rng.standard_normal((5, 3))
    with pytest.raises(DimensionError):
        contract4(X, np.ones(2) / np.sqrt(2))
    with pytest.raises(ValueError):
        contract4(X, np.ones(3))
    with pytest.raises(ValueError):
        contract4(X)
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        check_data(bad)


# -- M0 ----------------------------------------------------------------------

@given(arrays(float, 5, elements=st.floats(-10, 10)).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_m0_contract_is_three_on_unit_vectors(v):
    u = v / np.linalg.norm(v)
    assert m0_contract(u) == pytest.approx(3.0, rel=1e-12)


def test_m0_examples(rng):
    assert m0_contract(np.eye(7)[0]) == 3.0
    np.testing.assert_allclose(m0_apply(np.eye(4)), 6 * np.eye(4))
    M0 = dense_m0(6).reshape(36, 36)
    V = rng.standard_normal((6, 6))
    np.testing.assert_allclose(m0_apply(V).reshape(-1), M0 @ V.reshape(-1), atol=1e-12)
    np.testing.assert_allclose(m0_dense(6), dense_m0(6))


def test_m0_batched_and_covariance_variants(rng):
    d = 4
    V = rng.standard_normal((d, d, 3))
    np.testing.assert_allclose(m0_matvec(V.reshape(d * d, 3), d),
                               np.stack([m0_apply(V[:, :, k]).reshape(-1) for k in range(3)], 1))
    B = rng.standard_normal((d, d))
    C = B @ B.T
    # Gaussian fourth moment with covariance C, contracted on the last two modes
    T = (np.einsum("ij,kl->ijkl", C, C) + np.einsum("ik,jl->ijkl", C, C)
         + np.einsum("il,jk->ijkl", C, C))
    W = rng.standard_normal((d, d))
    np.testing.assert_allclose(m0_apply(W, cov=C), np.einsum("ijkl,kl->ij", T, W), atol=1e-10)


# -- dense oracle ------------------------------------------------------------

def test_dense_oracle_examples(rng):
    T = dense_oracle_build(np.array([[1.0, 1.0]]))
    np.testing.assert_array_equal(T.entries, np.ones((2, 2, 2, 2)))
    X = rng.standard_normal((7, 4))
    D = dense_oracle_build(X)
    for p in itertools.permutations(range(4)):
        assert np.abs(np.transpose(D.entries, p) - D.entries).max() <= 1e-12
    np.testing.assert_allclose(D.entries, dense_moment(X), atol=1e-12)


def test_dense_tensor_symmetrizes_and_limits_size(rng):
    raw = rng.standard_normal((3, 3, 3, 3))
    T = DenseTensor4(raw)
    assert np.abs(T.entries - np.transpose(T.entries, (1, 0, 3, 2))).max() <= 1e-12
    with pytest.raises(DimensionError):
        DenseTensor4(np.zeros((D_MAX_DENSE + 1,) * 4))
    with pytest.raises(DimensionError):
        dense_oracle_build(np.zeros((2, D_MAX_DENSE + 1)))


def test_contract4_matches_dense_tensor_on_random_triples(rng):
    X = rng.standard_normal((30, 6))
    D = dense_oracle_build(X)
    for _ in range(50):
        u, v, w = (unit(rng, 6) for _ in range(3))
        np.testing.assert_allclose(contract4(X, u, v, w), D.contract(u, v, w), rtol=1e-10, atol=1e-12)


# -- population tensor -------------------------------------------------------

def test_population_tensor_matches_dense_formula(rng):
    d = 4
    B, _ = np.linalg.qr(rng.standard_normal((d, d)))
    kappa = np.array([3.0, -1.2, 2.0, 0.7])
    pop = PopulationTensor(B, kappa)
    T = np.einsum("k,ik,jk,lk,mk->ijlm", kappa, B, B, B, B) + dense_m0(d)
    us = [unit(rng, d) for _ in range(4)]
    assert pop.contract(*us) == pytest.approx(float(T @ us[3] @ us[2] @ us[1] @ us[0]), rel=1e-12)
    np.testing.assert_allclose(pop.contract(*us[:3]), T @ us[2] @ us[1] @ us[0], atol=1e-12)
    np.testing.assert_allclose(pop.contract(*us[:2]), T @ us[1] @ us[0], atol=1e-12)
    np.testing.assert_allclose(pop.dense().entries, T, atol=1e-12)
    with pytest.raises(ValueError):
        pop.contract(us[0])


def test_population_deflation_matches_projected_law(rng):
    d = 3
    B = np.linalg.qr(rng.standard_normal((d, d)))[0]
    pop = PopulationTensor(B, np.array([3.0, 3.0, -1.0]))
    a = B[:, 0]
    P = np.eye(d) - np.outer(a, a)
    # law of P X: fourth moment tensor multiplied by P along every mode
    T = pop.dense().entries
    TP = np.einsum("ai,bj,ck,dl,ijkl->abcd", P, P, P, P, T)
    np.testing.assert_allclose(pop.deflated(a).dense().entries, TP, atol=1e-12)


# -- spectral solver ---------------------------------------------------------

def test_spectral_diagonal_operator(rng):
    D = np.diag([5.0, 4.0, 3.0] + [0.0] * 6)
    res = rank_d_spectral(lambda V: D @ V, 9, 3, rng, tol=1e-12)
    np.testing.assert_allclose(np.sort(res.eigenvalues)[::-1], [5, 4, 3], atol=1e-10)
    np.testing.assert_allclose(np.abs(res.U[:3, :]), np.eye(3)[:, np.argsort(-res.eigenvalues)], atol=1e-8)
    np.testing.assert_allclose(res.U.T @ res.U, np.eye(3), atol=1e-10)


def test_spectral_population_cumulant_spans_kron_axes(rng):
    d = 4
    A = np.linalg.qr(rng.standard_normal((d, d)))[0]
    pop = PopulationTensor(A, np.full(d, 3.0))
    res = rank_d_spectral(pop.cumulant_apply, d * d, d, rng, tol=1e-12)
    np.testing.assert_allclose(res.eigenvalues, 3.0, atol=1e-8)
    K = np.stack([np.kron(A[:, k], A[:, k]) for k in range(d)], 1)
    P = res.U @ res.U.T
    assert np.abs(P @ K - K).max() <= 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_spectral_projection_identities_on_psd(seed):
    rng = np.random.default_rng(seed)
    dim, r = 25, 5
    Q = np.linalg.qr(rng.standard_normal((dim, dim)))[0]
    lam = np.concatenate([rng.uniform(2, 3, r), rng.uniform(0, 1, dim - r)])
    M = (Q * lam) @ Q.T
    res = rank_d_spectral(lambda V: M @ V, dim, r, rng, tol=1e-10)
    P = res.U @ res.U.T
    assert np.abs(P @ P - P).max() <= 1e-8
    assert np.trace(P) == pytest.approx(r, abs=1e-8)
    assert res.residual <= 1e-6


def test_spectral_rejects_asymmetric_operator(rng):
    M = rng.standard_normal((6, 6))
    with pytest.raises(SpectralError):
        rank_d_spectral(lambda V: M @ V, 6, 2, rng)
    with pytest.raises(ValueError):
        rank_d_spectral(lambda V: V, 4, 5, rng)


def test_spectral_reports_rank_deficiency(rng):
    D = np.diag([1.0, 0.0, 0.0, 0.0])
    res = rank_d_spectral(lambda V: D @ V, 4, 2, rng)
    assert res.rank_deficient


def test_spectral_deterministic_given_seed():
    M = np.diag(np.arange(10.0))
    r1 = rank_d_spectral(lambda V: M @ V, 10, 3, np.random.default_rng(1))
    r2 = rank_d_spectral(lambda V: M @ V, 10, 3, np.random.default_rng(1))
    np.testing.assert_array_equal(r1.U, r2.U)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2 ** 31))
def test_contractions_are_row_order_invariant(d, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((12, d))
    u = unit(rng, d)
    perm = rng.permutation(12)
    np.testing.assert_allclose(contract4(X, u, u), contract4(X[perm], u, u), atol=1e-12)
