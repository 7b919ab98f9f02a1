import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_spd, rel_spec, spd_matrices
from hdgauss.augmentation import (
    ada_step,
    da_step_closure,
    eda_step,
    equivalent_splitting,
    geda_step,
    make_da,
    sgs_step,
)
from hdgauss.core import DenseModel, DiagonalModel, FactorTerm
from hdgauss.diagnostics import affine_kernel, autocorrelation, slowest_component
from hdgauss.rng import FixedStream, RngStream, StreamBundle
from hdgauss.scenarios import build_deblur
from hdgauss.splitting import make_splitting, make_step, run_chain


def _schur_theta(P, d):
    """theta-marginal precision of a joint precision ordered with theta first."""
    A, B, C = P[:d, :d], P[:d, d:], P[d:, d:]
    return A - B @ np.linalg.solve(C, B.T)


def _mc_cov(step, d, seed, k=100, T=2200, burn=200):
    chain = run_chain(step, np.zeros((d, k)), T, burn, StreamBundle.for_chains(seed, k))
    X = chain.retained.transpose(0, 2, 1).reshape(-1, d)
    assert X.shape[0] == (T - burn) * k
    return np.cov(X, rowvar=False)


def _split(d, seed):
    Q1 = random_spd(d, seed)
    q2 = np.random.default_rng(seed).uniform(0.5, 2.0, d)
    return Q1, q2


# -- EDA ---------------------------------------------------------------------

def test_eda_vanishing_q1_limit():
    q2 = np.array([1.0, 2.0, 3.0, 4.0])
    m = make_da(DenseModel(1e-12 * np.eye(4)), DiagonalModel(q2), "eda", omega=1.0)
    np.testing.assert_allclose(m.R.to_dense(), np.eye(4), atol=1e-11)
    S = _mc_cov(da_step_closure(m), 4, seed=1)
    assert rel_spec(S, np.diag(1 / q2)) <= 0.05


def test_eda_monte_carlo_marginal():
    Q1, q2 = _split(4, 2)
    om = 0.5 / np.linalg.eigvalsh(Q1)[-1]
    m = make_da(DenseModel(Q1), DiagonalModel(q2), "eda", omega=om)
    S = _mc_cov(da_step_closure(m), 4, seed=2)
    assert rel_spec(S, np.linalg.inv(Q1 + np.diag(q2))) <= 0.05


def test_eda_equals_exact_richardson_recursion():
    Q1, q2 = _split(5, 3)
    Q2 = np.diag(q2)
    om = 0.9 / np.linalg.eigvalsh(Q1)[-1]
    m = make_da(DenseModel(Q1), DiagonalModel(q2), "eda", omega=om)
    I = np.eye(5)
    M, N, C = equivalent_splitting(m)
    np.testing.assert_allclose(M, I / om + Q2, atol=1e-10)
    np.testing.assert_allclose(N, I / om - Q1, atol=1e-10)
    np.testing.assert_allclose(C, 2 * I / om + Q2 - Q1, atol=1e-10)
    # the sampled DA cycle has the same transition law as that recursion
    mu = np.arange(5.0)
    ka = affine_kernel(da_step_closure(m, mu), 5)
    ms = make_splitting(DenseModel(Q1 + Q2), "unified", R=I / om - Q1, exact=True)
    kb = affine_kernel(make_step(ms, mu), 5)
    np.testing.assert_allclose(ka.A, np.linalg.solve(M, N), atol=1e-10)
    np.testing.assert_allclose(ka.A, kb.A, atol=1e-10)
    np.testing.assert_allclose(ka.c, kb.c, atol=1e-10)
    np.testing.assert_allclose(ka.W, kb.W, atol=1e-10)
    Minv = np.linalg.inv(M)
    np.testing.assert_allclose(ka.W, Minv @ C @ Minv.T, atol=1e-10)


def test_eda_batched_columns():
    Q1, q2 = _split(3, 4)
    m = make_da(DenseModel(Q1), DiagonalModel(q2), "eda")
    theta = np.random.default_rng(4).standard_normal((3, 2))
    out = eda_step(m, None, theta, StreamBundle.for_chains(4, 2))
    for j in range(2):
        np.testing.assert_allclose(out[:, j], eda_step(m, None, theta[:, j], RngStream(4, j)), atol=1e-12)


def test_edaj_equals_jacobi_recursion():
    Q1 = random_spd(5, 5, dominant=True)
    q2 = np.full(5, 0.5)
    m = make_da(DenseModel(Q1), DiagonalModel(q2), "edaj", omega=0.5)
    D1 = np.diag(np.diag(Q1))
    M, N, C = equivalent_splitting(m)
    np.testing.assert_allclose(M, D1 / 0.5 + np.diag(q2), atol=1e-10)
    np.testing.assert_allclose(N, D1 / 0.5 - Q1, atol=1e-10)
    k = affine_kernel(da_step_closure(m), 5)
    np.testing.assert_allclose(k.A, np.linalg.solve(M, N), atol=1e-10)
    np.testing.assert_allclose(k.stationary_covariance(), np.linalg.inv(Q1 + np.diag(q2)), atol=1e-9)


# -- GEDA --------------------------------------------------------------------

def test_geda_identity_factor_monte_carlo():
    q2 = np.array([0.5, 1.0, 2.0, 4.0])
    fac = FactorTerm(np.eye(4), np.ones(4))
    m = make_da(None, DiagonalModel(q2), "geda", omega=0.9, factor1=fac)
    S = _mc_cov(da_step_closure(m), 4, seed=6)
    assert rel_spec(S, np.diag(1 / (1 + q2))) <= 0.05


def test_geda_u1_conditional_precision():
    rng = np.random.default_rng(7)
    G = rng.standard_normal((6, 4))
    lam = rng.uniform(0.5, 2.0, 6)
    Q1 = G.T @ np.diag(lam) @ G
    m = make_da(None, DiagonalModel(np.ones(4)), "geda", factor1=FactorTerm(G, lam))
    R = m.R.to_dense()
    np.testing.assert_allclose(R + Q1, np.eye(4) / m.omega, atol=1e-10)
    P = m.joint_precision()
    np.testing.assert_allclose(P[4:8, 4:8], np.eye(4) / m.omega, atol=1e-10)


def test_geda_joint_state_law():
    # the pair (theta, u1) is Markov; its stationary theta-block is Q^{-1}
    rng = np.random.default_rng(8)
    G = rng.standard_normal((5, 3))
    lam = rng.uniform(0.5, 2.0, 5)
    q2 = np.array([1.0, 2.0, 3.0])
    m = make_da(None, DiagonalModel(q2), "geda", factor1=FactorTerm(G, lam))

    def step(state, s):
        th, u1 = geda_step(m, None, state[:3], s, u1_prev=state[3:])
        return np.concatenate([th, u1])

    S = affine_kernel(step, 6).stationary_covariance()
    Q = G.T @ np.diag(lam) @ G + np.diag(q2)
    np.testing.assert_allclose(S[:3, :3], np.linalg.inv(Q), atol=1e-9)


def test_geda_deblur_autocorrelation():
    prob = build_deblur(256)
    step = da_step_closure(prob.model, prob.mean)
    chain = run_chain(step, np.zeros(256), 2200, 200, RngStream(9))
    X = chain.retained
    j = slowest_component(X)
    assert autocorrelation(X[:, j], 10)[10] < 0.5


def test_geda_requires_factor():
    with pytest.raises(ValueError):
        make_da(DenseModel(np.eye(2)), DiagonalModel(np.ones(2)), "geda")


# -- SGS ---------------------------------------------------------------------

def _sgs_closed_form(Q1, Q2, om):
    return Q2 + np.linalg.inv(np.linalg.inv(Q1) + om * np.eye(len(Q1)))


def test_sgs_small_omega_limit():
    Q1, q2 = _split(3, 10)
    m = make_da(DenseModel(Q1), DiagonalModel(q2), "sgs", omega=1e-6)
    Q = Q1 + np.diag(q2)
    assert np.linalg.norm(m.marginal_precision() - Q) <= 1e-4 * np.linalg.norm(Q)
    k = affine_kernel(da_step_closure(m), 3)
    Qt = np.linalg.inv(k.stationary_covariance())
    assert np.linalg.norm(Qt - Q) <= 1e-4 * np.linalg.norm(Q)


def test_sgs_monte_carlo_marginal():
    Q1, q2 = _split(4, 11)
    m = make_da(DenseModel(Q1), DiagonalModel(q2), "sgs", omega=0.1)
    S = _mc_cov(da_step_closure(m), 4, seed=11)
    assert rel_spec(np.linalg.inv(S), _sgs_closed_form(Q1, np.diag(q2), 0.1)) <= 0.05


def test_sgs_vanishing_q1():
    q2 = np.array([1.0, 2.0, 3.0])
    m = make_da(DenseModel(1e-12 * np.eye(3)), DiagonalModel(q2), "sgs", omega=0.1)
    np.testing.assert_allclose(m.marginal_precision(), np.diag(q2), atol=1e-10)


def test_sgs_kernel_matches_closed_form():
    Q1, q2 = _split(5, 12)
    m = make_da(DenseModel(Q1), DiagonalModel(q2), "sgs", omega=0.3)
    mu = np.linspace(-1, 1, 5)
    k = affine_kernel(da_step_closure(m, mu), 5)
    Qt = _sgs_closed_form(Q1, np.diag(q2), 0.3)
    np.testing.assert_allclose(np.linalg.inv(k.stationary_covariance()), Qt, atol=1e-8 * np.abs(Qt).max())
    np.testing.assert_allclose(k.stationary_mean(), mu, atol=1e-9)


def test_sgs_step_explicit_mean():
    Q1, q2 = _split(3, 13)
    m = make_da(DenseModel(Q1), DiagonalModel(q2), "sgs", omega=0.2)
    mu = np.array([1.0, -2.0, 0.5])
    z = np.zeros(6)
    # with zero noise the cycle is a contraction towards mu
    theta = np.zeros(3)
    for _ in range(400):
        theta = sgs_step(m, mu, theta, FixedStream(z))
    np.testing.assert_allclose(theta, mu, atol=1e-8)


def test_sgs_bias_monotone():
    for seed in range(5):
        Q1, q2 = _split(6, 20 + seed)
        Q = Q1 + np.diag(q2)
        errs = [np.linalg.norm(_sgs_closed_form(Q1, np.diag(q2), om) - Q) for om in (1, 0.1, 0.01, 0.001)]
        assert all(a >= b for a, b in zip(errs, errs[1:]))
        errs_impl = [np.linalg.norm(make_da(DenseModel(Q1), DiagonalModel(q2), "sgs", omega=om)
                                    .marginal_precision() - Q) for om in (1, 0.1, 0.01, 0.001)]
        assert all(a >= b for a, b in zip(errs_impl, errs_impl[1:]))


# -- ADA ---------------------------------------------------------------------

def test_adah_diagonal_is_exact_in_one_step():
    q = np.array([1.0, 3.0, 5.0])
    m = make_da(DiagonalModel(q), None, "adah")
    np.testing.assert_allclose(m.R, 0.0, atol=0)
    k = affine_kernel(lambda t, s: ada_step(m, None, t, s), 3)
    np.testing.assert_allclose(k.A, 0.0, atol=1e-15)
    np.testing.assert_allclose(k.W, np.diag(1 / q), atol=1e-15)


def test_adaj_fixed_point_precision():
    Q = random_spd(5, 30, dominant=True)
    D = np.diag(np.diag(Q))
    m = make_da(DenseModel(Q), None, "adaj", omega=0.5)
    S = affine_kernel(da_step_closure(m), 5).stationary_covariance()
    want = Q @ (2 * np.eye(5) - 0.5 * np.linalg.solve(D, Q))
    np.testing.assert_allclose(np.linalg.inv(S), want, atol=1e-8 * np.abs(want).max())


def test_adar_matches_approx_richardson_coupled():
    Q = random_spd(6, 31)
    om = 0.9 / np.linalg.eigvalsh(Q)[-1]
    m = make_da(DenseModel(Q), None, "adar", omega=om)
    ms = make_splitting(DenseModel(Q), "approx-richardson", omega=om)
    mu = np.arange(6.0)
    ada = da_step_closure(m, mu)
    mss = make_step(ms, mu)
    rng = np.random.default_rng(31)
    a = b = rng.standard_normal(6)
    for _ in range(50):
        z1, z2 = rng.standard_normal(6), rng.standard_normal(6)
        a = ada(a, FixedStream(np.concatenate([z1, z2])))
        # ADA noise sqrt(M/2)(z1 + z2) equals sqrt(M) xi with xi = (z1 + z2)/sqrt(2)
        b = mss(b, FixedStream((z1 + z2) / np.sqrt(2.0)))
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)


@pytest.mark.parametrize("scheme,ms_name", [("adah", "hogwild"), ("adar", "approx-richardson"),
                                            ("adaj", "approx-jacobi")])
def test_ada_operator_equivalence(scheme, ms_name):
    Q = random_spd(6, 32, dominant=True)
    om = 0.9 / np.linalg.eigvalsh(Q)[-1] if scheme == "adar" else 0.5
    m = make_da(DenseModel(Q), None, scheme, omega=None if scheme == "adah" else om)
    s = make_splitting(DenseModel(Q), ms_name, omega=None if scheme == "adah" else om)
    M, N, C = equivalent_splitting(m)
    v = np.random.default_rng(32).standard_normal((6, 3))
    for X, Y in ((M, s.M), (N, s.N), (C, s.noise_cov)):
        np.testing.assert_allclose(X @ v, np.asarray(Y) @ v, atol=1e-10)
    k = affine_kernel(da_step_closure(m), 6)
    np.testing.assert_allclose(k.A, np.linalg.solve(M, N), atol=1e-10)
    np.testing.assert_allclose(k.W, np.linalg.solve(M, np.linalg.solve(M, C).T), atol=1e-10)
    R = M - Q
    Qt = Q @ (np.eye(6) + np.linalg.solve(R + Q, R))
    np.testing.assert_allclose(np.linalg.inv(k.stationary_covariance()), Qt, atol=1e-8 * np.abs(Qt).max())


def test_ada_rejects_nonpositive_m():
    with pytest.raises(ValueError):
        make_da(DenseModel(np.eye(2)), None, "adar", omega=-1.0)


# -- make_da -----------------------------------------------------------------

def test_make_da_eda_default_omega():
    Q1, q2 = _split(4, 40)
    m = make_da(DenseModel(Q1), DiagonalModel(q2), "eda")
    assert m.omega == pytest.approx(0.9 / np.linalg.eigvalsh(Q1)[-1], rel=1e-6)
    assert np.linalg.eigvalsh(m.R.to_dense())[0] > 0
    assert m.equivalent_ms == "richardson"


def test_make_da_eda_out_of_range():
    Q1, q2 = _split(4, 41)
    with pytest.raises(ValueError):
        make_da(DenseModel(Q1), DiagonalModel(q2), "eda", omega=2.0 / np.linalg.eigvalsh(Q1)[-1])


@pytest.mark.parametrize("omega", [1.0, 0.5])
@pytest.mark.parametrize("off", [0.3, 0.9, 1.3])
def test_make_da_edaj_range(omega, off):
    # unit-diagonal-2 tridiagonal Q1; R = 2I/omega - Q1 is SPD iff lambda_max(Q1) < 2/omega
    Q1 = 2.0 * np.eye(4) + off * (np.eye(4, k=1) + np.eye(4, k=-1))
    spd = np.linalg.eigvalsh(Q1)[-1] < 2.0 / omega
    assert spd == (np.linalg.eigvalsh(2 * np.eye(4) / omega - Q1)[0] > 0)
    if spd:
        m = make_da(DenseModel(Q1), DiagonalModel(np.ones(4)), "edaj", omega=omega)
        np.testing.assert_allclose(m.R.to_dense(), 2 * np.eye(4) / omega - Q1, atol=1e-12)
    else:
        with pytest.raises(ValueError):
            make_da(DenseModel(Q1), DiagonalModel(np.ones(4)), "edaj", omega=omega)


def test_make_da_adar_m():
    Q = random_spd(4, 42)
    for om in (0.01, 0.3, 5.0):
        m = make_da(DenseModel(Q), None, "adar", omega=om)
        np.testing.assert_allclose(m.M_diag, np.full(4, 1 / om))


def test_make_da_unknown_scheme():
    with pytest.raises(ValueError):
        make_da(DenseModel(np.eye(2)), DiagonalModel(np.ones(2)), "nope")


# -- properties ----------------------------------------------------------------

@settings(max_examples=20)
@given(spd_matrices(max_d=8), st.integers(0, 2**31 - 1))
def test_exact_da_schur_marginal(Q1, seed):
    d = Q1.shape[0]
    q2 = np.random.default_rng(seed).uniform(0.2, 3.0, d)
    Q = Q1 + np.diag(q2)
    eda = make_da(DenseModel(Q1), DiagonalModel(q2), "eda")
    np.testing.assert_allclose(_schur_theta(eda.joint_precision(), d), Q, atol=1e-9 * np.abs(Q).max())
    G = np.linalg.cholesky(Q1).T
    geda = make_da(None, DiagonalModel(q2), "geda", factor1=FactorTerm(G, np.ones(d)))
    np.testing.assert_allclose(_schur_theta(geda.joint_precision(), d), Q, atol=1e-9 * np.abs(Q).max())
    D1 = np.diag(Q1)
    om = 0.9 / np.linalg.eigvalsh(Q1 / np.sqrt(np.outer(D1, D1)))[-1]
    edaj = make_da(DenseModel(Q1), DiagonalModel(q2), "edaj", omega=om)
    np.testing.assert_allclose(_schur_theta(edaj.joint_precision(), d), Q, atol=1e-9 * np.abs(Q).max())


@settings(max_examples=20)
@given(spd_matrices(max_d=8), st.floats(1e-3, 1.0))
def test_sgs_schur_marginal(Q1, om):
    d = Q1.shape[0]
    Q2 = np.diag(np.linspace(0.5, 2.0, d))
    m = make_da(DenseModel(Q1), DiagonalModel(np.diag(Q2)), "sgs", omega=om)
    want = _sgs_closed_form(Q1, Q2, om)
    np.testing.assert_allclose(_schur_theta(m.joint_precision(), d), want, atol=1e-8 * np.abs(want).max())
