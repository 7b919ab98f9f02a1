"""Sampling high-dimensional Gaussian distributions.

Direct factorization samplers, Krylov and polynomial approximations,
matrix-splitting and data-augmentation MCMC, and chain diagnostics, all
built on structured precision representations.
"""

from .core import (
    BandModel,
    CirculantModel,
    CompositeModel,
    DenseModel,
    DiagonalModel,
    FactorTerm,
    MeanSpec,
    OperatorModel,
    PrecisionModel,
    Side,
    gershgorin_bounds,
    matvec,
)
from .rng import RngStream, StreamBundle, box_muller, sample_diagonal
from .direct import sample_band, sample_cholesky, sample_circulant, sample_exact, sample_sqrt_svd
from .krylov import sample_cg, sample_chebyshev, sample_lanczos, sample_po
from .splitting import ChebyshevSSOR, make_splitting, ms_step, run_chain
from .augmentation import make_da, eda_step, geda_step, sgs_step, ada_step
from .diagnostics import essr, optimal_omega, relative_cov_error, spectral_radius

__version__ = "0.1.0"
