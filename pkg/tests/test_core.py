import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_spd, spd_matrices
from hdgauss import core
from hdgauss.core import (
    BandModel,
    CirculantModel,
    CompositeModel,
    DenseModel,
    DiagonalModel,
    FactorTerm,
    MeanSpec,
    Side,
)
from hdgauss.scenarios import build_lattice, laplacian_kernel


# -- matvec ------------------------------------------------------------------

def test_matvec_diagonal():
    assert np.array_equal(core.matvec(DiagonalModel([2, 3]), np.ones(2)), [2, 3])


def test_matvec_circulant_first_column():
    # ring Laplacian plus I keeps the model SPD; the product with e_0 is the first column
    m = CirculantModel([3, -1, -1])
    np.testing.assert_allclose(m.matvec([1, 0, 0]), [3, -1, -1], atol=1e-12)


def test_matvec_circulant_laplacian_column():
    # (2, -1, -1) itself is singular, so it is checked as a plain operator
    op = core.circulant_operator(np.array([2.0, -1.0, -1.0]))
    np.testing.assert_allclose(op @ np.array([1.0, 0, 0]), [2, -1, -1], atol=1e-12)


def test_matvec_composite_of_square_root_factor():
    A = random_spd(8, seed=1)
    C = np.linalg.cholesky(A)
    comp = CompositeModel([FactorTerm(C.T, np.ones(8))])
    v = np.random.default_rng(0).standard_normal((8, 3))
    np.testing.assert_allclose(comp.matvec(v), A @ v, rtol=0, atol=1e-12 * np.abs(A @ v).max())


def test_matvec_dimension_mismatch():
    with pytest.raises(core.DimensionError):
        DiagonalModel([1, 2]).matvec(np.ones(3))


def _random_models(d, seed):
    rng = np.random.default_rng(seed)
    A = random_spd(d, seed)
    band = np.zeros((d, d))
    b = min(2, d - 1)
    for k in range(b + 1):
        v = rng.uniform(-1, 1, d - k)
        band += np.diag(v, -k) + (np.diag(v, k) if k else 0)
    band[np.diag_indices(d)] = np.abs(band).sum(axis=1) + 1.0
    kernel = np.zeros(d)
    kernel[0] = 3.0
    kernel[1] = kernel[-1] = -1.0 if d > 2 else -0.5
    G = rng.standard_normal((d + 2, d))
    w = rng.uniform(0.5, 2.0, d + 2)
    return [
        (DenseModel(A), A),
        (BandModel.from_dense(band), band),
        (DiagonalModel(np.arange(1, d + 1)), np.diag(np.arange(1.0, d + 1))),
        (CirculantModel(kernel), None),
        (CompositeModel([FactorTerm(G, w), DiagonalModel(np.ones(d))]), G.T @ np.diag(w) @ G + np.eye(d)),
    ]


@given(st.integers(3, 64), st.integers(0, 10_000))
def test_matvec_matches_dense_product(d, seed):
    for model, dense in _random_models(d, seed):
        if dense is None:
            dense = np.array([[model.q[(i - j) % d] for j in range(d)] for i in range(d)])
        v = np.random.default_rng(seed).standard_normal(d)
        np.testing.assert_allclose(model.matvec(v), dense @ v, rtol=0,
                                   atol=1e-10 * max(1.0, np.abs(dense @ v).max()))


def test_dense_rejects_asymmetric():
    with pytest.raises(ValueError):
        DenseModel([[2.0, 1.0], [1.0 + 1e-15, 2.0]])


def test_dense_rejects_indefinite():
    with pytest.raises(core.NotPositiveDefiniteError):
        DenseModel([[1.0, 2.0], [2.0, 1.0]])


def test_band_matvec_never_densifies(monkeypatch):
    model = build_lattice(400, 1.0, 1.0)
    monkeypatch.setattr(BandModel, "to_dense", lambda self: pytest.fail("densified"))
    v = np.ones(400)
    y = model.matvec(v)
    np.testing.assert_allclose(y, np.ones(400), atol=1e-12)  # rows of Q sum to eps = 1


def test_composite_spd_is_unverified_until_probed():
    m = CompositeModel([DiagonalModel([1.0, 2.0])])
    assert m.spd_verified is False
    assert m.verify_spd() is True and m.spd_verified


# -- Gershgorin --------------------------------------------------------------

def test_gershgorin_identity():
    assert core.gershgorin_bounds(DenseModel(np.eye(3))) == (0.0, 1.0)


def test_gershgorin_two_by_two():
    assert core.gershgorin_bounds(DenseModel([[4.0, 2.0], [2.0, 3.0]])) == (0.0, 6.0)


def test_gershgorin_lattice_interior_row():
    n = 10
    model = build_lattice(n * n, 1.0, 1.0)
    # brute-force neighbour count on the 8-neighbourhood grid
    r, c = 5, 5
    deg = sum(1 for dr in (-1, 0, 1) for dc in (-1, 0, 1)
              if (dr or dc) and 0 <= r + dr < n and 0 <= c + dc < n)
    assert deg == 8
    assert core.gershgorin_bounds(model)[1] == pytest.approx((1 + deg) + deg)


@given(spd_matrices(max_d=64))
def test_gershgorin_dominates_largest_eigenvalue(A):
    lo, hi = core.gershgorin_bounds(DenseModel(A))
    assert lo == 0.0
    assert hi >= np.linalg.eigvalsh(A)[-1] * (1 - 1e-12)


# -- circulant spectrum ------------------------------------------------------

def test_spectrum_scaled_identity():
    np.testing.assert_allclose(core.circulant_spectrum([2.5, 0, 0, 0, 0]), 2.5)


def test_spectrum_ring_laplacian():
    q = np.array([2.0, -1.0, 0.0, -1.0])
    dense = np.array([[q[(i - j) % 4] for j in range(4)] for i in range(4)])
    lam = core.circulant_spectrum(q)
    np.testing.assert_allclose(np.sort(lam), np.sort(np.linalg.eigvalsh(dense)), atol=1e-12)
    np.testing.assert_allclose(np.sort(lam), [0, 2, 2, 4], atol=1e-12)


def test_spectrum_2d_laplacian_filter():
    n = 8
    k = laplacian_kernel(n)
    op = core.circulant_operator(k, shape=(n, n))
    Delta = op @ np.eye(n * n)
    lam = core.circulant_spectrum(k, shape=(n, n)) ** 2
    np.testing.assert_allclose(np.sort(lam), np.sort(np.linalg.eigvalsh(Delta.T @ Delta)), atol=1e-9)


def test_spectrum_rejects_asymmetric_column():
    with pytest.raises(core.MalformedCirculantError):
        core.circulant_spectrum([2.0, 1.0, 0.0, 0.0])


@given(st.integers(2, 40), st.integers(0, 10_000))
def test_spectrum_inverse_transform_reconstructs(d, seed):
    rng = np.random.default_rng(seed)
    half = rng.standard_normal(d // 2 + 1)
    q = np.array([half[min(i, d - i)] for i in range(d)])
    lam = core.circulant_spectrum(q)
    back = np.fft.ifft(lam).real
    np.testing.assert_allclose(back, q, atol=1e-10)


def test_block_circulant_matches_dense():
    n = 4
    k = np.zeros((n, n))
    k[0, 0] = 5.0
    k[0, 1] = k[0, -1] = k[1, 0] = k[-1, 0] = -1.0
    m = CirculantModel(k.ravel(), shape=(n, n))
    dense = m.to_dense()
    np.testing.assert_allclose(dense, dense.T, atol=1e-12)
    np.testing.assert_allclose(np.sort(m.spectrum), np.linalg.eigvalsh(dense), atol=1e-10)


# -- triangular solve --------------------------------------------------------

def test_triangular_identity():
    rhs = np.array([1.5, -2.0, 3.0])
    np.testing.assert_array_equal(core.triangular_solve(np.eye(3), rhs), rhs)


def test_triangular_upper_two_by_two():
    L = np.array([[2.0, 0.0], [1.0, np.sqrt(2.0)]])
    w = core.triangular_solve(L, np.array([2.0, np.sqrt(2.0)]), "upper")
    np.testing.assert_allclose(w, [0.5, 1.0], atol=1e-15)
    np.testing.assert_allclose(L.T @ w, [2.0, np.sqrt(2.0)], atol=1e-15)


def test_triangular_random_residual():
    rng = np.random.default_rng(3)
    L = np.tril(rng.standard_normal((20, 20))) + 5 * np.eye(20)
    rhs = rng.standard_normal(20)
    w = core.triangular_solve(L, rhs)
    assert np.linalg.norm(L @ w - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_triangular_singular():
    with pytest.raises(core.SingularFactorError):
        core.triangular_solve(np.array([[1.0, 0.0], [1.0, 0.0]]), np.ones(2))


def test_band_triangular_matches_dense():
    A = np.diag(np.full(30, 4.0)) + np.diag(np.full(29, -1.0), 1) + np.diag(np.full(29, -1.0), -1)
    A += np.diag(np.full(28, 0.5), 2) + np.diag(np.full(28, 0.5), -2)
    m = BandModel.from_dense(A)
    C = np.linalg.cholesky(A)
    rhs = np.random.default_rng(0).standard_normal(30)
    np.testing.assert_allclose(core.band_triangular_solve(m.cholesky_band, rhs, "lower"),
                               np.linalg.solve(C, rhs), atol=1e-12)
    np.testing.assert_allclose(core.band_triangular_solve(m.cholesky_band, rhs, "upper"),
                               np.linalg.solve(C.T, rhs), atol=1e-12)


# -- band model and mean -----------------------------------------------------

def test_band_bandwidth_and_zero_outside():
    model = build_lattice(100, 1.0, 1.0)
    assert model.bandwidth == 11
    Q = model.to_dense()
    i, j = np.nonzero(Q)
    assert np.max(np.abs(i - j)) <= model.bandwidth


def test_band_from_dense_rejects_wider_matrix():
    with pytest.raises(ValueError):
        BandModel.from_dense(random_spd(5, 0), bandwidth=1)


def test_meanspec_potential_not_materialized_until_asked():
    Q = DenseModel([[2.0, 0.0], [0.0, 4.0]])
    m = MeanSpec.from_potential([2.0, 4.0])
    np.testing.assert_array_equal(m.potential_for(Q), [2.0, 4.0])
    np.testing.assert_allclose(m.mean_for(Q), [1.0, 1.0])
    np.testing.assert_allclose(MeanSpec.from_mean([1.0, 1.0]).potential_for(Q), [2.0, 4.0])


def test_solve_precision_operator_uses_cg():
    A = random_spd(12, 5)
    op = core.OperatorModel(lambda v: A @ v, 12)
    b = np.arange(12.0)
    np.testing.assert_allclose(core.solve_precision(op, b), np.linalg.solve(A, b), atol=1e-8)


# -- file formats ------------------------------------------------------------

def test_dense_csv_roundtrip(tmp_path):
    A = random_spd(5, 2)
    core.save_dense_csv(tmp_path / "a.csv", A)
    np.testing.assert_array_equal(core.load_dense_csv(tmp_path / "a.csv").matrix, A)


def test_band_file_roundtrip(tmp_path):
    m = build_lattice(16, 0.5, 1.0)
    core.save_band(tmp_path / "b.txt", m)
    m2 = core.load_band(tmp_path / "b.txt")
    np.testing.assert_array_equal(m2.to_dense(), m.to_dense())


def test_circulant_file_roundtrip(tmp_path):
    q = np.array([3.0, -1.0, 0.0, -1.0])
    core.save_vector(tmp_path / "c.txt", q)
    np.testing.assert_array_equal(core.load_circulant(tmp_path / "c.txt").q, q)


def test_affine_combination_keeps_structure():
    m = CirculantModel([3.0, -1.0, 0.0, -1.0])
    out = core.affine_combination(m, 2.0, 0.5)
    assert isinstance(out, CirculantModel)
    np.testing.assert_allclose(out.to_dense(), 2 * np.eye(4) + 0.5 * m.to_dense(), atol=1e-12)
    comp = CompositeModel([FactorTerm(sp.identity(4, format="csr"), np.ones(4))])
    op = core.affine_combination(comp, 1.0, -0.5)
    np.testing.assert_allclose(op.to_dense(), 0.5 * np.eye(4), atol=1e-12)
