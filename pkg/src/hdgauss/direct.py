"""Exact non-iterative samplers: Cholesky (dense, band), square root, FFT."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import core
from .core import (
    BandModel,
    CirculantModel,
    DenseModel,
    DiagonalModel,
    PrecisionModel,
    Side,
    as_mean,
)
from .rng import standard_normal_columns


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor ``L`` with ``L L^T`` equal to the source matrix.

    ``L`` is a dense ``(d, d)`` array, or a ``(b + 1, d)`` lower band array
    when ``band`` is true.
    """

    L: np.ndarray
    source_side: Side
    band: bool = False

    def reconstruct(self) -> np.ndarray:
        if not self.band:
            return self.L @ self.L.T
        b, d = self.L.shape[0] - 1, self.L.shape[1]
        C = np.zeros((d, d))
        for k in range(b + 1):
            C += np.diag(self.L[k, : d - k], -k)
        return C @ C.T


@dataclass(frozen=True)
class SqrtFactor:
    """Symmetric square root ``B = U diag(sqrt(lam)) U^T`` of the source matrix."""

    U: np.ndarray
    lam: np.ndarray
    source_side: Side

    def sqrt_matrix(self) -> np.ndarray:
        return (self.U * np.sqrt(self.lam)) @ self.U.T


def cholesky_factor(model: PrecisionModel) -> CholeskyFactor:
    """Cholesky factor of a dense or band model (computed at model construction)."""
    if isinstance(model, DenseModel):
        return CholeskyFactor(model.cholesky, model.side, band=False)
    if isinstance(model, BandModel):
        return CholeskyFactor(model.cholesky_band, model.side, band=True)
    raise TypeError(f"no Cholesky factor for {type(model).__name__}")


def _check_dense_size(model, allow_large):
    if model.dim > core.DENSE_THRESHOLD and not allow_large:
        raise ValueError(
            f"dense sampler refused for d={model.dim} > {core.DENSE_THRESHOLD}; pass allow_large=True to override"
        )


def _finish(mu, w, size):
    # batches come back one draw per row
    return (mu + w.T) if w.ndim == 2 else mu + w


def _mean_vector(mean, model):
    return as_mean(mean, model.dim).mean_for(model)


def sample_cholesky(model: DenseModel, mean=None, stream=None, size=None, z=None, allow_large=False):
    """Exact draw(s) from ``N(mu, Q^{-1})`` through the Cholesky factor.

    For a precision model ``Q = C C^T`` the draw is ``mu + w`` with
    ``C^T w = z``; for a covariance model ``Sigma = L L^T`` it is ``mu + L z``.

    Parameters
    ----------
    model : DenseModel
    mean : MeanSpec or array_like, optional
    stream : RngStream
    size : int, optional
        Number of draws; result has shape ``(size, d)``.
    z : ndarray, optional
        Standard normal input(s) of shape ``(d,)`` or ``(d, size)``, replacing
        the stream.
    """
    if not isinstance(model, DenseModel):
        raise TypeError("sample_cholesky needs a DenseModel")
    _check_dense_size(model, allow_large)
    if z is None:
        z = standard_normal_columns(stream, model.dim, size)
    C = model.cholesky
    if model.side is Side.PRECISION:
        w = core.triangular_solve(C, z, "upper")
    else:
        w = C @ z
    return _finish(_mean_vector(mean, model), w, size)


def sample_band(model: BandModel, mean=None, stream=None, size=None, z=None):
    """Exact draw(s) using the band Cholesky factor, ``O(b d)`` per draw."""
    if not isinstance(model, BandModel):
        raise TypeError("sample_band needs a BandModel")
    if z is None:
        z = standard_normal_columns(stream, model.dim, size)
    cb = model.cholesky_band
    if model.side is Side.PRECISION:
        w = core.band_triangular_solve(cb, z, "upper")
    else:
        w = core.band_lower_matvec(cb, z)
    return _finish(_mean_vector(mean, model), w, size)


def sample_circulant(model: CirculantModel, mean=None, stream=None, size=None, z=None,
                     imag_tol=core.CIRCULANT_IMAG_TOL):
    """Exact draw(s) ``mu + F^H Lambda^{-1/2} F z`` in ``O(d log d)``."""
    if not isinstance(model, CirculantModel):
        raise TypeError("sample_circulant needs a CirculantModel")
    if z is None:
        z = standard_normal_columns(stream, model.dim, size)
    power = -0.5 if model.side is Side.PRECISION else 0.5
    w, imag = core.fft_apply(model.spectrum ** power, z, model.shape)
    if np.max(np.abs(imag), initial=0.0) > imag_tol * max(1.0, float(np.max(np.abs(w), initial=0.0))):
        raise core.MalformedCirculantError("imaginary residue of the FFT sample exceeds tolerance")
    return _finish(_mean_vector(mean, model), w, size)


def sample_diagonal_model(model: DiagonalModel, mean=None, stream=None, size=None, z=None):
    """Exact draw(s) for a :class:`DiagonalModel` of either side."""
    if z is None:
        z = standard_normal_columns(stream, model.dim, size)
    root = np.sqrt(model.q)
    w = (z.T / root).T if model.side is Side.PRECISION else (z.T * root).T
    return _finish(_mean_vector(mean, model), w, size)


def sqrt_factor(model: DenseModel) -> SqrtFactor:
    """Eigen square root obtained from the SVD of the Cholesky factor.

    With ``C = U S V^T`` one has ``Q = C C^T = U S^2 U^T`` so ``lam = S^2``.
    The factor is cached per model instance.
    """
    fac = getattr(model, "_sqrt_factor", None)
    if fac is not None:
        return fac
    try:
        U, s, _ = np.linalg.svd(model.cholesky)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("SVD of the Cholesky factor failed") from exc
    fac = SqrtFactor(U, s ** 2, model.side)
    model._sqrt_factor = fac
    return fac


def sample_sqrt_svd(model: DenseModel, mean=None, stream=None, size=None, z=None, allow_large=False):
    """Exact draw(s) ``mu + B^{-1} z`` with the symmetric square root ``B``.

    For a covariance model the draw is ``mu + B z``.
    """
    if not isinstance(model, DenseModel):
        raise TypeError("sample_sqrt_svd needs a DenseModel")
    _check_dense_size(model, allow_large)
    fac = sqrt_factor(model)
    if z is None:
        z = standard_normal_columns(stream, model.dim, size)
    power = -0.5 if model.side is Side.PRECISION else 0.5
    w = fac.U @ ((fac.lam ** power) * (fac.U.T @ z).T).T
    return _finish(_mean_vector(mean, model), w, size)


def sample_exact(model: PrecisionModel, mean=None, stream=None, size=None, z=None):
    """Dispatch to the exact sampler matching the structure of ``model``."""
    if isinstance(model, DiagonalModel):
        return sample_diagonal_model(model, mean, stream, size, z)
    if isinstance(model, CirculantModel):
        return sample_circulant(model, mean, stream, size, z)
    if isinstance(model, BandModel):
        return sample_band(model, mean, stream, size, z)
    if isinstance(model, DenseModel):
        return sample_cholesky(model, mean, stream, size, z)
    raise TypeError(f"no exact direct sampler for {type(model).__name__}")


def sample_canonical(precision: PrecisionModel, h, stream, z=None, k_cheby=None):
    """Draw from ``N(P^{-1} h, P^{-1})`` for a precision-side model ``P``.

    ``h`` has shape ``(d,)`` or ``(d, k)``; one draw is made per column.
    Structured models are sampled exactly; other operators fall back to a
    Chebyshev draw plus a CG solve for the mean (approximate).
    """
    h = np.asarray(h, dtype=float)
    k = None if h.ndim == 1 else h.shape[1]
    if z is None:
        z = standard_normal_columns(stream, precision.dim, k)
    if isinstance(precision, DiagonalModel):
        p = precision.q
        return (h.T / p + z.T / np.sqrt(p)).T
    if isinstance(precision, CirculantModel):
        lam = precision.spectrum
        w = core.fft_apply(lam ** -0.5, z, precision.shape)[0]
        return core.fft_apply(1.0 / lam, h, precision.shape)[0] + w
    if isinstance(precision, DenseModel):
        C = precision.cholesky
        y = sla.solve_triangular(C, h, lower=True, check_finite=False) + z
        return sla.solve_triangular(C, y, lower=True, trans=1, check_finite=False)
    if isinstance(precision, BandModel):
        cb = precision.cholesky_band
        y = core.band_triangular_solve(cb, h, "lower") + z
        return core.band_triangular_solve(cb, y, "upper")
    from .krylov import DEFAULT_K_CHEBY, chebyshev_apply_model

    w = chebyshev_apply_model(precision, z, k_cheby or DEFAULT_K_CHEBY)
    return core.solve_precision(precision, h) + w
