"""Structural representations of Gaussian precision/covariance matrices.

Every sampler in the package talks to a matrix through the small contract
defined here: ``matvec``, ``diagonal``, Gershgorin bounds and, when the
structure allows it, a factorization or a Fourier diagonalization.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

#: Dimension up to which dense factorizations and dense checks are allowed.
DENSE_THRESHOLD = 4096
#: Dimension up to which composite models are densified for SPD probes.
SPD_PROBE_THRESHOLD = 512
#: Absolute tolerance (relative to the largest modulus) on the imaginary
#: part of a circulant spectrum.
CIRCULANT_IMAG_TOL = 1e-9


class Side(str, enum.Enum):
    """Which of the two matrices Q = Sigma^{-1} or Sigma a model stores."""

    PRECISION = "precision"
    COVARIANCE = "covariance"


class NotPositiveDefiniteError(ValueError):
    """The matrix is not symmetric positive definite."""


class DimensionError(ValueError):
    """Operand shapes do not agree with the model dimension."""


class SingularFactorError(ValueError):
    """A triangular factor has a zero diagonal entry."""


class MalformedCirculantError(ValueError):
    """The first column does not define a symmetric circulant matrix."""


class SolverError(RuntimeError):
    """An iterative linear solver did not converge.

    Attributes
    ----------
    residual_norm : float
        Norm of the residual at the last iterate.
    n_iter : int
        Number of iterations performed.
    """

    def __init__(self, message, residual_norm, n_iter):
        super().__init__(f"{message} (residual norm {residual_norm:.3e} after {n_iter} iterations)")
        self.residual_norm = float(residual_norm)
        self.n_iter = int(n_iter)


def _as_side(side) -> Side:
    return side if isinstance(side, Side) else Side(str(side).lower())


class PrecisionModel:
    """Base class of the structured matrix representations.

    Subclasses store either the precision ``Q`` or the covariance ``Sigma``
    (``side``) and must provide :meth:`matvec` and :meth:`diagonal`.
    Instances are treated as immutable.
    """

    kind = "abstract"
    dim: int
    side: Side
    spd_verified: bool = False

    def matvec(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def diagonal(self) -> np.ndarray:
        raise NotImplementedError

    def abs_row_sums(self) -> np.ndarray:
        """Row sums of ``|A_ij|`` for the stored matrix ``A``."""
        raise NotImplementedError

    def to_dense(self) -> np.ndarray:
        """Densify the stored matrix (testing and small problems only)."""
        return self.matvec(np.eye(self.dim))

    def _check_vector(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.ndim not in (1, 2) or v.shape[0] != self.dim:
            raise DimensionError(f"expected leading dimension {self.dim}, got shape {v.shape}")
        return v

    def __matmul__(self, v):
        return self.matvec(v)

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim}, side={self.side.value})"


class DenseModel(PrecisionModel):
    """Dense SPD matrix, factorized by Cholesky at construction.

    Parameters
    ----------
    matrix : array_like, shape (d, d)
        Exactly symmetric positive definite matrix.
    side : {'precision', 'covariance'}
    """

    kind = "dense"

    def __init__(self, matrix, side=Side.PRECISION):
        A = np.array(matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"dense model needs a square matrix, got {A.shape}")
        if not np.array_equal(A, A.T):
            raise ValueError("dense model must be exactly symmetric")
        try:
            self.cholesky = np.linalg.cholesky(A)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("Cholesky factorization failed") from exc
        A.setflags(write=False)
        self.cholesky.setflags(write=False)
        self.matrix = A
        self.dim = A.shape[0]
        self.side = _as_side(side)
        self.spd_verified = True

    def matvec(self, v):
        return self.matrix @ self._check_vector(v)

    def diagonal(self):
        return np.diag(self.matrix).copy()

    def abs_row_sums(self):
        return np.abs(self.matrix).sum(axis=1)

    def to_dense(self):
        return self.matrix.copy()


class BandModel(PrecisionModel):
    """Symmetric band matrix in LAPACK lower band storage.

    ``ab[k, j] = A[j + k, j]`` for ``0 <= k <= b`` and ``0 <= j < d - k``.
    The band Cholesky factor is computed at construction and kept in the same
    ``(b + 1, d)`` layout.
    """

    kind = "band"

    def __init__(self, ab, side=Side.PRECISION):
        ab = np.array(ab, dtype=float)
        if ab.ndim != 2:
            raise DimensionError("band storage must be two-dimensional")
        self.bandwidth = ab.shape[0] - 1
        self.dim = ab.shape[1]
        # entries that fall outside the matrix are ignored by LAPACK; zero them
        for k in range(1, self.bandwidth + 1):
            ab[k, self.dim - k:] = 0.0
        try:
            self.cholesky_band = sla.cholesky_banded(ab, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("band Cholesky factorization failed") from exc
        ab.setflags(write=False)
        self.cholesky_band.setflags(write=False)
        self.ab = ab
        self._csr = None
        self.side = _as_side(side)
        self.spd_verified = True

    @classmethod
    def from_dense(cls, A, bandwidth=None, side=Side.PRECISION):
        """Extract the lower band of a symmetric matrix."""
        A = np.asarray(A, dtype=float)
        if not np.array_equal(A, A.T):
            raise ValueError("band model must be exactly symmetric")
        d = A.shape[0]
        b = matrix_bandwidth(A) if bandwidth is None else int(bandwidth)
        if matrix_bandwidth(A) > b:
            raise ValueError(f"matrix has entries outside bandwidth {b}")
        ab = np.zeros((b + 1, d))
        for k in range(b + 1):
            ab[k, : d - k] = np.diagonal(A, -k)
        return cls(ab, side)

    @classmethod
    def from_diagonals(cls, diagonals: Sequence, side=Side.PRECISION):
        """Build from the main diagonal followed by sub-diagonals 1..b."""
        d = len(diagonals[0])
        ab = np.zeros((len(diagonals), d))
        for k, diag in enumerate(diagonals):
            diag = np.asarray(diag, dtype=float)
            if diag.shape[0] not in (d - k, d):
                raise DimensionError(f"diagonal {k} has length {diag.shape[0]}, expected {d - k}")
            ab[k, : d - k] = diag[: d - k]
        return cls(ab, side)

    def matvec(self, v):
        v = self._check_vector(v)
        if self._csr is None:
            self._csr = self.to_sparse()
        return self._csr @ v

    def diagonal(self):
        return self.ab[0].copy()

    def abs_row_sums(self):
        a = np.abs(self.ab)
        s = a[0].copy()
        for k in range(1, self.bandwidth + 1):
            n = self.dim - k
            s[k:] += a[k, :n]
            s[:n] += a[k, :n]
        return s

    def to_sparse(self) -> sp.csr_matrix:
        offsets, data = [0], [self.ab[0]]
        for k in range(1, self.bandwidth + 1):
            n = self.dim - k
            data += [self.ab[k, :n], self.ab[k, :n]]
            offsets += [-k, k]
        return sp.diags(data, offsets, shape=(self.dim, self.dim), format="csr")

    def to_dense(self):
        return self.to_sparse().toarray()


class DiagonalModel(PrecisionModel):
    """Diagonal matrix with strictly positive entries."""

    kind = "diagonal"

    def __init__(self, q, side=Side.PRECISION):
        q = np.array(q, dtype=float).ravel()
        if not np.all(q > 0):
            raise NotPositiveDefiniteError("diagonal entries must be positive")
        q.setflags(write=False)
        self.q = q
        self.dim = q.shape[0]
        self.side = _as_side(side)
        self.spd_verified = True

    def matvec(self, v):
        v = self._check_vector(v)
        return (self.q * v.T).T

    def diagonal(self):
        return self.q.copy()

    def abs_row_sums(self):
        return self.q.copy()

    def to_dense(self):
        return np.diag(self.q)


def circulant_spectrum(q, shape=None, tol=CIRCULANT_IMAG_TOL) -> np.ndarray:
    """Eigenvalues of a (block) circulant matrix from its first column.

    Parameters
    ----------
    q : array_like, shape (d,)
        First column. For a block-circulant matrix with circulant blocks of
        grid ``shape = (M, N)``, ``q`` is indexed in row-major order.
    shape : tuple of int, optional
        Grid shape for the two-dimensional case.

    Returns
    -------
    ndarray, shape (d,)
        Real eigenvalues, ordered like ``numpy.fft.fftn`` output (flattened).
    """
    q = np.asarray(q, dtype=float).ravel()
    grid = (q.shape[0],) if shape is None else tuple(shape)
    if int(np.prod(grid)) != q.shape[0]:
        raise DimensionError(f"grid {grid} does not match length {q.shape[0]}")
    lam = np.fft.fftn(q.reshape(grid)).ravel()
    scale = max(1.0, float(np.max(np.abs(lam))))
    if np.max(np.abs(lam.imag)) > tol * scale:
        raise MalformedCirculantError("circulant spectrum is not real; first column is not symmetric")
    return lam.real.copy()


def fft_apply(spectrum, v, shape=None) -> np.ndarray:
    """Apply ``F^H diag(spectrum) F`` to ``v`` (columns of a 2-D ``v`` independently)."""
    v = np.asarray(v, dtype=float)
    d = v.shape[0]
    grid = (d,) if shape is None else tuple(shape)
    axes = tuple(range(len(grid)))
    lam = np.asarray(spectrum).reshape(grid)
    if v.ndim == 2:
        lam = lam[..., None]
    x = v.reshape(grid + v.shape[1:])
    y = sfft.ifftn(lam * sfft.fftn(x, axes=axes), axes=axes)
    return y.real.reshape(v.shape), y.imag.reshape(v.shape)


class CirculantModel(PrecisionModel):
    """Symmetric circulant (or block circulant with circulant blocks) matrix.

    Parameters
    ----------
    q : array_like, shape (d,)
        First column (row-major flattened ``(M, N)`` kernel in the 2-D case).
    shape : tuple of int, optional
        ``(M, N)`` block structure; ``None`` means a plain circulant.
    """

    kind = "circulant"

    def __init__(self, q, shape=None, side=Side.PRECISION):
        q = np.array(q, dtype=float).ravel()
        self.shape = None if shape is None else tuple(int(s) for s in shape)
        self.spectrum = circulant_spectrum(q, self.shape)
        if not np.all(self.spectrum > 0):
            raise NotPositiveDefiniteError("circulant spectrum has nonpositive eigenvalues")
        q.setflags(write=False)
        self.spectrum.setflags(write=False)
        self.q = q
        self.dim = q.shape[0]
        self.side = _as_side(side)
        self.spd_verified = True

    @classmethod
    def from_spectrum(cls, spectrum, shape=None, side=Side.PRECISION):
        grid = (len(spectrum),) if shape is None else tuple(shape)
        q = np.fft.ifftn(np.asarray(spectrum, dtype=float).reshape(grid)).real.ravel()
        return cls(q, shape, side)

    def matvec(self, v):
        v = self._check_vector(v)
        return fft_apply(self.spectrum, v, self.shape)[0]

    def diagonal(self):
        return np.full(self.dim, self.q[0])

    def abs_row_sums(self):
        return np.full(self.dim, np.abs(self.q).sum())


def circulant_operator(kernel, shape=None) -> spla.LinearOperator:
    """Real (block) circulant convolution operator with first column ``kernel``.

    Unlike :class:`CirculantModel` the kernel need not be symmetric, so this
    also represents blur operators.
    """
    kernel = np.asarray(kernel, dtype=float).ravel()
    d = kernel.shape[0]
    grid = (d,) if shape is None else tuple(shape)
    spec = np.fft.fftn(kernel.reshape(grid)).ravel()

    def mv(v):
        return fft_apply(spec, v, shape)[0]

    def rmv(v):
        return fft_apply(np.conj(spec), v, shape)[0]

    op = spla.LinearOperator((d, d), matvec=mv, rmatvec=rmv, matmat=mv, rmatmat=rmv, dtype=float)
    op.kernel = kernel
    op.abs_sum = float(np.abs(kernel).sum())
    return op


@dataclass(frozen=True)
class FactorTerm:
    """A term ``G^T W G`` of a composite precision.

    Parameters
    ----------
    G : ndarray, sparse matrix or LinearOperator, shape (k, d)
    weight : ndarray (positive diagonal of ``W``) or PrecisionModel (k x k)
        The middle SPD matrix ``W``. It enters the precision as written;
        samplers that perturb with this term draw ``N(0, W)`` in the
        ``k``-dimensional observation space.
    """

    G: object
    weight: object

    @property
    def operator(self) -> spla.LinearOperator:
        return spla.aslinearoperator(self.G)

    @property
    def shape(self):
        return self.operator.shape

    def apply_weight(self, v):
        if isinstance(self.weight, PrecisionModel):
            return self.weight.matvec(v)
        w = np.asarray(self.weight, dtype=float)
        return (w * np.asarray(v).T).T

    def weight_dense(self):
        if isinstance(self.weight, PrecisionModel):
            return self.weight.to_dense()
        return np.diag(np.asarray(self.weight, dtype=float))

    def matvec(self, v):
        G = self.G
        if isinstance(G, spla.LinearOperator):
            return G.rmatvec(self.apply_weight(G.matvec(v))) if np.ndim(v) == 1 else \
                G.rmatmat(self.apply_weight(G.matmat(v)))
        return G.T @ self.apply_weight(G @ v)

    def dense(self):
        G = self.G
        if isinstance(G, spla.LinearOperator):
            Gd = G @ np.eye(G.shape[1])
        elif sp.issparse(G):
            Gd = G.toarray()
        else:
            Gd = np.asarray(G, dtype=float)
        return Gd.T @ self.weight_dense() @ Gd


def _factor_diagonal(term: FactorTerm, d: int) -> np.ndarray:
    """Diagonal of ``G^T W G`` without forming the product when ``W`` is diagonal."""
    G = term.G
    diag_w = not isinstance(term.weight, PrecisionModel) or isinstance(term.weight, DiagonalModel)
    if diag_w and not isinstance(G, spla.LinearOperator):
        w = term.weight.q if isinstance(term.weight, DiagonalModel) else np.asarray(term.weight, dtype=float)
        if sp.issparse(G):
            G2 = sp.csr_matrix(G).multiply(G)
            return np.asarray(G2.T @ w).ravel()
        G = np.asarray(G, dtype=float)
        return (w[:, None] * G * G).sum(axis=0)
    if d <= SPD_PROBE_THRESHOLD:
        return np.diag(term.dense()).copy()
    raise NotImplementedError("diagonal of a large operator term is not available")


class CompositeModel(PrecisionModel):
    """Precision written as a sum of factor terms and structured models.

    Positive definiteness is not checked at construction; call
    :meth:`verify_spd` (dense probe, small ``d`` only).
    """

    kind = "composite"

    def __init__(self, terms):
        terms = list(terms)
        if not terms:
            raise ValueError("composite model needs at least one term")
        dims = set()
        for t in terms:
            if isinstance(t, FactorTerm):
                dims.add(t.shape[1])
            elif isinstance(t, PrecisionModel):
                if t.side is not Side.PRECISION:
                    raise ValueError("composite terms must be precision-side")
                dims.add(t.dim)
            else:
                raise TypeError(f"unsupported composite term {type(t).__name__}")
        if len(dims) != 1:
            raise DimensionError(f"terms have inconsistent dimensions {sorted(dims)}")
        self.terms = tuple(terms)
        self.dim = dims.pop()
        self.side = Side.PRECISION
        self.spd_verified = False

    def matvec(self, v):
        v = self._check_vector(v)
        out = np.zeros_like(v)
        for t in self.terms:
            out += t.matvec(v)
        return out

    def to_dense(self):
        out = np.zeros((self.dim, self.dim))
        for t in self.terms:
            out += t.dense() if isinstance(t, FactorTerm) else t.to_dense()
        return 0.5 * (out + out.T)

    def diagonal(self):
        out = np.zeros(self.dim)
        for t in self.terms:
            out += t.diagonal() if isinstance(t, PrecisionModel) else _factor_diagonal(t, self.dim)
        return out

    def abs_row_sums(self):
        if self.dim <= SPD_PROBE_THRESHOLD:
            return np.abs(self.to_dense()).sum(axis=1)
        raise NotImplementedError("row sums of a large composite model are not available")

    def verify_spd(self, threshold=SPD_PROBE_THRESHOLD) -> bool:
        """Probe Cholesky on the densified matrix when ``d <= threshold``.

        Returns ``True`` when verified, ``False`` when skipped because of the
        dimension; raises :class:`NotPositiveDefiniteError` on failure.
        """
        if self.dim > threshold:
            return False
        try:
            np.linalg.cholesky(self.to_dense())
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("composite precision is not SPD") from exc
        self.spd_verified = True
        return True


class OperatorModel(PrecisionModel):
    """Matrix given only through products, with optional diagonal and bound.

    Used for affine combinations ``alpha I + beta A`` of models that have no
    closed structured form.
    """

    kind = "operator"

    def __init__(self, matvec, dim, side=Side.PRECISION, diagonal=None, row_sum_bound=None):
        self._mv = matvec
        self.dim = int(dim)
        self.side = _as_side(side)
        self._diag = diagonal
        self._bound = row_sum_bound

    def matvec(self, v):
        return self._mv(self._check_vector(v))

    def diagonal(self):
        if self._diag is None:
            raise NotImplementedError("diagonal unavailable for this operator")
        return np.array(self._diag() if callable(self._diag) else self._diag, dtype=float)

    def abs_row_sums(self):
        if self._bound is not None:
            bound = self._bound() if callable(self._bound) else self._bound
            return np.full(self.dim, float(bound))
        if self.dim > SPD_PROBE_THRESHOLD:
            raise NotImplementedError("row sums of a large operator are not available")
        return np.abs(self.to_dense()).sum(axis=1)


def affine_combination(model: PrecisionModel, alpha: float, beta: float, side=None) -> PrecisionModel:
    """Return a model of ``alpha I + beta A`` keeping the structure of ``A``.

    Construction of the structured result re-runs the SPD check of its class,
    so an indefinite combination raises :class:`NotPositiveDefiniteError`.
    """
    side = model.side if side is None else _as_side(side)
    if isinstance(model, DiagonalModel):
        return DiagonalModel(alpha + beta * model.q, side)
    if isinstance(model, CirculantModel):
        q = beta * np.asarray(model.q)
        q[0] += alpha
        return CirculantModel(q, model.shape, side)
    if isinstance(model, BandModel):
        ab = beta * np.asarray(model.ab)
        ab[0] += alpha
        return BandModel(ab, side)
    if isinstance(model, DenseModel):
        A = beta * model.matrix
        A[np.diag_indices_from(A)] += alpha
        return DenseModel(A, side)

    def mv(v):
        return alpha * v + beta * model.matvec(v)

    def bound():
        return abs(alpha) + abs(beta) * float(np.max(model.abs_row_sums()))

    return OperatorModel(mv, model.dim, side, diagonal=lambda: alpha + beta * model.diagonal(),
                         row_sum_bound=bound)


def matvec(model: PrecisionModel, v) -> np.ndarray:
    """Product of the stored matrix with ``v`` (shape ``(d,)`` or ``(d, k)``)."""
    return model.matvec(v)


def gershgorin_bounds(model: PrecisionModel) -> tuple[float, float]:
    """Eigenvalue interval ``(0, max_i sum_j |A_ij|)`` used by Chebyshev sampling.

    The lower end is fixed at zero, which is valid for any SPD matrix.
    """
    return 0.0, float(np.max(model.abs_row_sums()))


def gershgorin_disc_bounds(model: PrecisionModel) -> tuple[float, float]:
    """Tighter enclosure ``(max(0, min_i Q_ii - R_i), max_i Q_ii + R_i)``.

    ``R_i`` is the off-diagonal absolute row sum; the lower end is positive
    for strictly diagonally dominant matrices.
    """
    rows = np.asarray(model.abs_row_sums(), dtype=float)
    diag = np.asarray(model.diagonal(), dtype=float)
    off = rows - np.abs(diag)
    return max(0.0, float(np.min(diag - off))), float(np.max(rows))


def matrix_bandwidth(A) -> int:
    """Smallest ``b`` with ``A_ij = 0`` whenever ``|i - j| > b``."""
    A = np.asarray(A)
    i, j = np.nonzero(A)
    return int(np.max(np.abs(i - j))) if i.size else 0


def triangular_solve(L, rhs, side="lower") -> np.ndarray:
    """Solve ``L w = rhs`` (``side='lower'``) or ``L^T w = rhs`` (``side='upper'``).

    Parameters
    ----------
    L : ndarray, shape (d, d)
        Lower-triangular matrix; only its lower triangle is read.
    rhs : ndarray, shape (d,) or (d, k)
    side : {'lower', 'upper'}
    """
    L = np.asarray(L, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != L.shape[0]:
        raise DimensionError(f"rhs has {rhs.shape[0]} rows, factor has {L.shape[0]}")
    if np.any(np.diag(L) == 0):
        raise SingularFactorError("triangular factor has a zero diagonal entry")
    trans = {"lower": 0, "upper": 1}[str(side).lower()]
    return sla.solve_triangular(L, rhs, lower=True, trans=trans, check_finite=False)


def band_triangular_solve(cb, rhs, side="lower") -> np.ndarray:
    """Triangular solve with a band factor in lower band storage.

    ``cb[k, j] = C[j + k, j]``; ``side='lower'`` solves ``C w = rhs`` and
    ``side='upper'`` solves ``C^T w = rhs``. Cost is ``O(b d)`` per column.
    """
    cb = np.asarray(cb, dtype=float)
    b, d = cb.shape[0] - 1, cb.shape[1]
    if np.any(cb[0] == 0):
        raise SingularFactorError("band factor has a zero diagonal entry")
    if str(side).lower() == "lower":
        return sla.solve_banded((b, 0), cb, rhs, check_finite=False)
    # upper band storage of C^T: ub[b - k, j + k] = C[j + k, j]
    ub = np.zeros_like(cb)
    for k in range(b + 1):
        ub[b - k, k:] = cb[k, : d - k]
    return sla.solve_banded((0, b), ub, rhs, check_finite=False)


def band_lower_matvec(cb, v) -> np.ndarray:
    """Product ``C v`` with a lower band factor in band storage."""
    v = np.asarray(v, dtype=float)
    c = cb if v.ndim == 1 else cb[:, :, None]
    y = c[0] * v
    d = cb.shape[1]
    for k in range(1, cb.shape[0]):
        y[k:] += c[k, : d - k] * v[: d - k]
    return y


class MeanSpec:
    """Mean of a Gaussian, stored either directly or as a potential ``b = Q mu``.

    Use :meth:`from_mean` or :meth:`from_potential`. When a potential is
    stored the mean is only computed by :meth:`mean_for` on request.
    """

    __slots__ = ("vector", "is_potential")

    def __init__(self, vector, is_potential=False):
        self.vector = np.asarray(vector, dtype=float)
        self.is_potential = bool(is_potential)

    @classmethod
    def from_mean(cls, mu):
        return cls(mu, False)

    @classmethod
    def from_potential(cls, b):
        return cls(b, True)

    @classmethod
    def zero(cls, d):
        return cls(np.zeros(d), False)

    def potential_for(self, precision: PrecisionModel) -> np.ndarray:
        """``b = Q mu``, where ``precision`` is the precision-side model of ``Q``."""
        if self.is_potential:
            return self.vector
        return precision.matvec(self.vector)

    def mean_for(self, model: PrecisionModel, solve=None) -> np.ndarray:
        """Return ``mu``; solves ``Q mu = b`` when only the potential is stored.

        ``solve`` overrides the linear solver (callable ``rhs -> x``).
        """
        if not self.is_potential:
            return self.vector
        b = self.vector
        if model.side is Side.COVARIANCE:
            return model.matvec(b)
        if solve is not None:
            return solve(b)
        return solve_precision(model, b)


def as_mean(mean, d) -> MeanSpec:
    """Coerce ``None``, a vector, or a :class:`MeanSpec` into a MeanSpec."""
    if mean is None:
        return MeanSpec.zero(d)
    if isinstance(mean, MeanSpec):
        m = mean
    else:
        m = MeanSpec.from_mean(mean)
    if m.vector.shape[0] != d:
        raise DimensionError(f"mean has length {m.vector.shape[0]}, model dimension is {d}")
    return m


def solve_precision(model: PrecisionModel, b, tol=1e-12, max_iter=None) -> np.ndarray:
    """Solve ``A x = b`` using the structure of ``A`` (CG for operators)."""
    b = np.asarray(b, dtype=float)
    if isinstance(model, DiagonalModel):
        return (b.T / model.q).T
    if isinstance(model, CirculantModel):
        return fft_apply(1.0 / model.spectrum, b, model.shape)[0]
    if isinstance(model, DenseModel):
        return sla.cho_solve((model.cholesky, True), b, check_finite=False)
    if isinstance(model, BandModel):
        return sla.cho_solve_banded((model.cholesky_band, True), b, check_finite=False)
    from .krylov import conjugate_gradient

    cols = b[:, None] if b.ndim == 1 else b
    out = np.empty_like(cols)
    for j in range(cols.shape[1]):
        res = conjugate_gradient(model.matvec, cols[:, j], tol=tol, max_iter=max_iter)
        if not res.converged:
            raise SolverError("CG did not converge", res.residual_norm, res.n_iter)
        out[:, j] = res.x
    return out[:, 0] if b.ndim == 1 else out


def dense_inverse(model: PrecisionModel) -> np.ndarray:
    """Dense inverse of the stored matrix (small ``d`` oracles and errors)."""
    if model.dim > DENSE_THRESHOLD:
        raise ValueError(f"dense inverse refused for d={model.dim} > {DENSE_THRESHOLD}")
    A = model.to_dense()
    inv = np.linalg.inv(A)
    return 0.5 * (inv + inv.T)


def covariance_matrix(model: PrecisionModel) -> np.ndarray:
    """Dense covariance represented by ``model`` (inverting precision-side models)."""
    if model.side is Side.COVARIANCE:
        return model.to_dense()
    return dense_inverse(model)


def precision_matrix(model: PrecisionModel) -> np.ndarray:
    """Dense precision represented by ``model``."""
    if model.side is Side.PRECISION:
        return model.to_dense()
    return dense_inverse(model)


# -- text matrix formats -----------------------------------------------------

def load_dense_csv(path, side=Side.PRECISION) -> DenseModel:
    """Read a dense matrix stored one row per line, comma separated."""
    A = np.loadtxt(Path(path), delimiter=",", ndmin=2, encoding="utf-8")
    return DenseModel(A, side)


def save_dense_csv(path, A):
    np.savetxt(Path(path), np.asarray(A), delimiter=",", fmt="%.17g", encoding="utf-8")


def load_band(path, side=Side.PRECISION) -> BandModel:
    """Read a band matrix file.

    The first non-comment line holds ``d b``; the next ``b + 1`` lines hold
    the main diagonal then sub-diagonals ``1..b`` (sub-diagonal ``k`` has
    ``d - k`` values), whitespace or comma separated.
    """
    lines = [ln.split("#", 1)[0].replace(",", " ").split()
             for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    lines = [ln for ln in lines if ln]
    d, b = int(lines[0][0]), int(lines[0][1])
    if len(lines) != b + 2:
        raise ValueError(f"band file declares b={b} but holds {len(lines) - 1} diagonals")
    diags = [np.array(ln, dtype=float) for ln in lines[1:]]
    for k, dg in enumerate(diags):
        if dg.shape[0] != d - k:
            raise DimensionError(f"diagonal {k} has {dg.shape[0]} entries, expected {d - k}")
    return BandModel.from_diagonals(diags, side)


def save_band(path, model: BandModel):
    d, b = model.dim, model.bandwidth
    rows = [f"{d} {b}"]
    for k in range(b + 1):
        rows.append(" ".join(f"{x:.17g}" for x in model.ab[k, : d - k]))
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def load_circulant(path, shape=None, side=Side.PRECISION) -> CirculantModel:
    """Read a first-column vector file (one value per line, or separated)."""
    q = np.loadtxt(Path(path), delimiter=None, ndmin=1, encoding="utf-8").ravel()
    return CirculantModel(q, shape, side)


def save_vector(path, v):
    np.savetxt(Path(path), np.asarray(v).ravel(), fmt="%.17g", encoding="utf-8")
