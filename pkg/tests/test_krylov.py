import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_spd, rel_spec, spd_matrices
from hdgauss import core
from hdgauss.core import CompositeModel, DenseModel, DiagonalModel, FactorTerm, MeanSpec
from hdgauss.krylov import (
    chebyshev_apply,
    chebyshev_coefficients,
    conjugate_gradient,
    lanczos,
    perturb_local,
    sample_cg,
    sample_chebyshev,
    sample_lanczos,
    sample_po,
)
from hdgauss.rng import FixedStream, RngStream
from hdgauss.scenarios import build_deblur, deblur_precision, diagonal_toy

N_MC = 10**5


# -- Chebyshev ---------------------------------------------------------------

def test_chebyshev_narrow_interval_at_one():
    for K in (1, 5, 20):
        s = chebyshev_coefficients(1 - 1e-6, 1 + 1e-6, K)
        assert s(1.0) == pytest.approx(1.0, abs=1e-6)


def test_chebyshev_gershgorin_interval_accuracy():
    # interval [0, 6] from the row sums of [[4, 2], [2, 3]]
    lam = np.linalg.eigvalsh([[4.0, 2.0], [2.0, 3.0]])
    s = chebyshev_coefficients(0.0, 6.0, 30)
    assert np.max(np.abs(s(lam) - lam ** -0.5)) <= 1e-3


def test_chebyshev_coefficient_decay():
    for K in (10, 15, 30):
        c = chebyshev_coefficients(0.1, 10.0, K).coeffs
        assert abs(c[K]) < abs(c[1])


def test_chebyshev_matches_numpy_interpolant():
    K, lo, hi = 12, 0.5, 7.0
    s = chebyshev_coefficients(lo, hi, K)
    ref = np.polynomial.chebyshev.chebinterpolate(lambda y: ((y + (hi + lo) / (hi - lo)) * (hi - lo) / 2) ** -0.5, K)
    np.testing.assert_allclose(np.r_[s.coeffs[0] / 2, s.coeffs[1:]], ref, atol=1e-12)


def test_chebyshev_degenerate_interval():
    with pytest.raises(ValueError):
        chebyshev_coefficients(2.0, 2.0, 5)


def test_chebyshev_scaled_identity():
    z = np.random.default_rng(0).standard_normal(6)
    out = sample_chebyshev(DenseModel(4.0 * np.eye(6)), K=20, z=z)
    series = chebyshev_coefficients(0.0, 4.0, 20)
    np.testing.assert_allclose(out, series(4.0) * z, atol=1e-12)  # scalar series oracle
    np.testing.assert_allclose(out, z / 2, atol=1e-6)


def test_chebyshev_order_one_rejected():
    with pytest.raises(ValueError):
        sample_chebyshev(DenseModel(np.eye(2)), K=1, z=np.ones(2))


@given(spd_matrices(max_d=16), st.integers(2, 40))
def test_chebyshev_scalar_oracle(A, K):
    lam, U = np.linalg.eigh(A)
    lo, hi = core.gershgorin_bounds(DenseModel(A))
    s = chebyshev_coefficients(lo, hi, K)
    z = np.random.default_rng(K).standard_normal(A.shape[0])
    got = chebyshev_apply(s, lambda v: A @ v, z)
    want = U @ (s(lam) * (U.T @ z))
    np.testing.assert_allclose(got, want, atol=1e-8 * max(1.0, np.abs(want).max()))


def test_chebyshev_toy_covariance():
    toy = diagonal_toy()
    x = sample_chebyshev(toy, K=21, stream=RngStream(0), size=N_MC)
    S = toy.to_dense()
    assert rel_spec(np.cov(x, rowvar=False), S) <= 0.10


# -- Lanczos -----------------------------------------------------------------

def test_lanczos_scaled_identity_breaks_down():
    z = np.random.default_rng(1).standard_normal(7)
    mu = np.arange(7.0)
    theta, k = sample_lanczos(DenseModel(9.0 * np.eye(7)), mu, K=7, z=z)
    assert k == 1
    np.testing.assert_allclose(theta, mu + z / 3.0, rtol=0, atol=1e-14)


def test_lanczos_full_order_matches_dense_root():
    A = random_spd(10, 2)
    z = np.random.default_rng(2).standard_normal(10)
    lam, U = np.linalg.eigh(A)
    theta, k = sample_lanczos(DenseModel(A), K=10, z=z, reorthogonalize=True)
    assert k == 10
    np.testing.assert_allclose(theta, U @ (lam ** -0.5 * (U.T @ z)), atol=1e-6)


def test_lanczos_toy_effective_order():
    toy = diagonal_toy()
    _, k = sample_lanczos(toy, K=15, stream=RngStream(3))
    assert k == 5


@given(spd_matrices(max_d=12))
def test_lanczos_full_order_exact_covariance(A):
    d = A.shape[0]
    m = DenseModel(A)
    # the full-order map z -> Q^{-1/2} z is linear, so probing with e_j gives it exactly
    B = np.column_stack([sample_lanczos(m, K=d, z=np.eye(d)[j], reorthogonalize=True)[0] for j in range(d)])
    assert rel_spec(B @ B.T, np.linalg.inv(A)) <= 1e-6


def test_lanczos_basis_is_orthonormal():
    A = random_spd(40, 3, cond=1e3)
    b = lanczos(lambda v: A @ v, np.ones(40), 25, reorthogonalize=True)
    np.testing.assert_allclose(b.H.T @ b.H, np.eye(b.k), atol=1e-10)
    T = b.tridiagonal()
    np.testing.assert_allclose(T, T.T)


# -- perturbation-optimization -----------------------------------------------

def test_perturb_identity_term():
    b = np.array([1.0, -2.0, 0.5])
    zeta = np.array([0.3, 0.1, -0.7])
    eta = perturb_local([FactorTerm(np.eye(3), np.ones(3))], MeanSpec.from_potential(b), FixedStream(zeta))
    np.testing.assert_allclose(eta, b + zeta)


def test_perturb_two_terms_covariance():
    terms = [FactorTerm(np.eye(3), np.ones(3)), FactorTerm(2.0 * np.eye(3), np.ones(3))]
    z = perturb_local(terms, stream=RngStream(4), size=N_MC)
    np.testing.assert_allclose(np.cov(z), 5.0 * np.eye(3), atol=0.05 * 5.0)


def test_perturb_deblur_terms_covariance():
    prob = build_deblur(64)
    terms = [FactorTerm(prob.blur, 1.0 / prob.gamma), prob.prior]
    Q = deblur_precision(prob).to_dense()
    z = perturb_local(terms, stream=RngStream(5), size=N_MC)
    assert np.linalg.norm(np.cov(z) - Q) / np.linalg.norm(Q) <= 0.10


def test_po_identity_solve():
    zeta = np.array([0.2, -1.0, 0.4])
    b = np.array([1.0, 2.0, 3.0])
    theta = sample_po([FactorTerm(np.eye(3), np.ones(3))], MeanSpec.from_potential(b), stream=FixedStream(zeta))
    np.testing.assert_allclose(theta, b + zeta, atol=1e-12)


def _composite16(seed=6):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((20, 16))
    w = rng.uniform(0.5, 2.0, 20)
    terms = [FactorTerm(G, w), DiagonalModel(rng.uniform(0.5, 1.5, 16))]
    return terms, CompositeModel(terms).to_dense()


def test_po_exact_covariance():
    terms, Q = _composite16()
    x = sample_po(terms, stream=RngStream(6), tol=1e-10, size=N_MC)
    assert rel_spec(np.cov(x, rowvar=False), np.linalg.inv(Q)) <= 0.05


def test_po_mean():
    terms, Q = _composite16(7)
    mu = np.linspace(-1, 1, 16)
    x = sample_po(terms, mean=mu, stream=RngStream(7), size=20_000)
    assert np.max(np.abs(x.mean(axis=0) - mu)) <= 5 * np.sqrt(np.max(np.diag(np.linalg.inv(Q))) / 20_000)


def test_po_forced_nonconvergence():
    A = random_spd(10, 8, cond=1e4)
    with pytest.raises(core.SolverError) as err:
        sample_po([DenseModel(A)], stream=RngStream(0), max_iter=1)
    assert err.value.residual_norm > 0


def test_po_rejects_term_without_cheap_root():
    op = core.OperatorModel(lambda v: v, 3)
    with pytest.raises(TypeError):
        perturb_local([op], stream=RngStream(0))


# -- CG sampler --------------------------------------------------------------

def test_cg_scaled_identity():
    m = DenseModel(4.0 * np.eye(5))
    s = RngStream(8)
    out = [sample_cg(m, epsilon=1e-10, stream=s) for _ in range(N_MC // 5)]
    assert {o.k_used for o in out} == {1}
    x = np.array([o.theta for o in out])
    np.testing.assert_allclose(x.var(axis=0), 0.25, rtol=0.05)


def test_cg_scaled_identity_rank_one_variance():
    # one iteration spans only c, so cov = E[c c^T / (lam ||c||^2)] = I / (lam d)
    m = DenseModel(4.0 * np.eye(5))
    s = RngStream(8)
    x = np.array([sample_cg(m, epsilon=1e-10, stream=s).theta for _ in range(N_MC // 5)])
    np.testing.assert_allclose(x.var(axis=0), 1.0 / (4.0 * 5), rtol=0.05)


def test_cg_toy_rank_five_underestimates():
    toy = diagonal_toy()
    S = toy.to_dense()
    s = RngStream(9)
    draws = [sample_cg(toy, epsilon=1e-12, stream=s) for _ in range(20_000)]
    assert {o.k_used for o in draws} == {5}
    x = np.array([o.theta for o in draws])
    emp = np.cov(x, rowvar=False)
    assert np.trace(emp) < 0.6 * np.trace(S)

    # given c, the draw is y = sum_k xi_k h_k / sqrt(d_k) with covariance
    # Sigma H (H^T Sigma H)^{-1} H^T Sigma in the Krylov space of c (CG runs on Sigma)
    c = RngStream(10).normal(15)

    def draw(xi):
        return sample_cg(toy, epsilon=1e-12, stream=xi, c=c).theta

    B = np.column_stack([draw(FixedStream(np.eye(5)[j])) for j in range(5)])
    K = np.column_stack([np.linalg.matrix_power(S, j) @ c for j in range(5)])
    H = np.linalg.qr(K)[0]
    want = S @ H @ np.linalg.inv(H.T @ S @ H) @ H.T @ S
    np.testing.assert_allclose(B @ B.T, want, atol=1e-8 * np.abs(want).max())
    assert np.linalg.matrix_rank(B @ B.T, tol=1e-8) == 5


def test_cg_full_rank_exact():
    lam = np.linspace(1.0, 8.0, 8)
    U = np.linalg.qr(np.random.default_rng(11).standard_normal((8, 8)))[0]
    A = (U * lam) @ U.T
    A = 0.5 * (A + A.T)
    m = DenseModel(A)
    s = RngStream(11)
    draws = [sample_cg(m, epsilon=1e-12, stream=s) for _ in range(N_MC)]
    assert all(o.k_used == 8 for o in draws)
    x = np.array([o.theta for o in draws])
    assert rel_spec(np.cov(x, rowvar=False), np.linalg.inv(A)) <= 0.05


@given(spd_matrices(min_d=3, max_d=20))
def test_cg_sampler_shares_solver_iterates(A):
    d = A.shape[0]
    c = np.random.default_rng(d).standard_normal(d)
    out = sample_cg(DenseModel(A), epsilon=1e-10, max_iter=10 * d, c=c, perturb=False, conjugacy_tol=1.0)
    ref, info = spla.cg(A, c, rtol=1e-13, atol=0, maxiter=10 * d)
    assert np.linalg.norm(A @ out.solution - c) < 1e-9 * max(1.0, np.linalg.norm(c)) + 1e-10
    np.testing.assert_allclose(out.solution, np.linalg.solve(A, c), atol=1e-7 * np.linalg.norm(ref))


def test_cg_rejects_nonpositive_epsilon():
    with pytest.raises(ValueError):
        sample_cg(DenseModel(np.eye(2)), epsilon=0.0, stream=RngStream(0))


def test_block_cg_matches_columnwise():
    A = random_spd(12, 12, cond=100)
    B = np.random.default_rng(12).standard_normal((12, 4))
    res = conjugate_gradient(lambda v: A @ v, B, tol=1e-12)
    assert res.converged
    np.testing.assert_allclose(res.x, np.linalg.solve(A, B), atol=1e-9)
    for j in range(4):
        np.testing.assert_allclose(conjugate_gradient(lambda v: A @ v, B[:, j], tol=1e-12).x, res.x[:, j], atol=1e-9)
