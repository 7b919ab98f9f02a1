"""Generators for the three benchmark problems.

* ``sqexp``: dense squared-exponential covariance on evenly spaced points.
* ``lattice``: band precision of a locally linear field on a square grid
  with 8-neighbourhood.
* ``deblur``: image deblurring posterior with circulant blur and smoothness
  prior and heterogeneous diagonal noise, ready for GEDA.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .augmentation import DAModel, make_da
from .core import (
    BandModel,
    CirculantModel,
    CompositeModel,
    DenseModel,
    DiagonalModel,
    FactorTerm,
    MeanSpec,
    Side,
    circulant_operator,
    circulant_spectrum,
)
from .rng import RngStream

SCENARIOS = ("scenario1", "scenario2", "scenario3")


@dataclasses.dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of one benchmark problem.

    ``kind`` is ``"sqexp"``, ``"lattice"`` or ``"deblur"``; the remaining
    fields are used by the generators that need them.
    """

    kind: str
    d: int
    a: float = 1.5
    eps: float = 1e-6
    side: Side = Side.COVARIANCE
    phi: float = 1.0
    kappa1: float = 13.0
    kappa2: float = 40.0
    p: float = 0.7
    xi0: float = 1.0
    xi1: float = 1.0
    seed: int = 0

    def build(self):
        if self.kind == "sqexp":
            return build_sqexp(self.d, self.a, self.eps, self.side)
        if self.kind == "lattice":
            return build_lattice(self.d, self.phi, self.eps)
        if self.kind == "deblur":
            return build_deblur(self.d, self)
        raise ValueError(f"unknown scenario kind {self.kind!r}")


def _grid_side(d: int) -> int:
    n = math.isqrt(int(d))
    if n * n != d:
        raise ValueError(f"d = {d} is not a perfect square")
    return n


def sqexp_matrix(d: int, a: float = 1.5, eps: float = 1e-6) -> np.ndarray:
    """``2 exp(-(s_i - s_j)^2 / (2 a^2)) + eps * delta_ij`` on ``s = linspace(-3, 3, d)``."""
    if d < 2:
        raise ValueError("d must be at least 2")
    s = np.linspace(-3.0, 3.0, d)
    diff = s[:, None] - s[None, :]
    A = 2.0 * np.exp(-(diff**2) / (2.0 * a**2))
    A[np.diag_indices(d)] += eps
    return A


def build_sqexp(d: int, a: float = 1.5, eps: float = 1e-6, side=Side.COVARIANCE) -> DenseModel:
    """Squared-exponential model.

    With ``side=COVARIANCE`` the matrix is the covariance. With
    ``side=PRECISION`` the same matrix is used as a precision, so the target
    covariance is its inverse (the ill-conditioned inverse-role variant).
    """
    return DenseModel(sqexp_matrix(d, a, eps), side=side)


def build_sqexp_inverse(d: int, a: float = 1.5, eps: float = 1e-6) -> DenseModel:
    """Inverse-role variant: target covariance is the inverse of the sq-exp matrix."""
    return build_sqexp(d, a, eps, side=Side.PRECISION)


def lattice_neighbours(n: int):
    """Yield ``(i, j)`` index pairs, ``i < j``, of the 8-neighbourhood on an ``n x n`` grid."""
    for r in range(n):
        for c in range(n):
            i = r * n + c
            for dr, dc in ((0, 1), (1, -1), (1, 0), (1, 1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < n and 0 <= cc < n:
                    yield i, rr * n + cc


def build_lattice(d: int, phi: float = 1.0, eps: float = 1.0) -> BandModel:
    """Locally linear lattice precision ``eps I + phi (diag(n_i) - adjacency)``.

    Bandwidth is ``sqrt(d) + 1``.
    """
    n = _grid_side(d)
    b = n + 1 if n > 1 else 0
    ab = np.zeros((b + 1, d))
    ab[0] = eps
    for i, j in lattice_neighbours(n):
        ab[0, i] += phi
        ab[0, j] += phi
        ab[j - i, i] = -phi
    return BandModel(ab)


def box_blur_kernel(n: int, width: int = 3) -> np.ndarray:
    """Centred ``width x width`` box kernel (normalized) on an ``n x n`` periodic grid."""
    k = np.zeros((n, n))
    h = width // 2
    for dr in range(-h, h + 1):
        for dc in range(-h, h + 1):
            k[dr % n, dc % n] += 1.0 / width**2
    return k


def laplacian_kernel(n: int) -> np.ndarray:
    """Centred 5-point Laplacian filter on an ``n x n`` periodic grid."""
    k = np.zeros((n, n))
    k[0, 0] = -4.0
    for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        k[dr % n, dc % n] += 1.0
    return k


def smooth_field(n: int, stream: RngStream, cutoff: float = 0.125, scale: float = 100.0) -> np.ndarray:
    """Band-limited random image: white noise low-passed in the Fourier domain, rescaled to ``[0, scale]``."""
    white = stream.normal((n, n))
    f = np.fft.fftfreq(n)
    mask = (np.abs(f)[:, None] <= cutoff) & (np.abs(f)[None, :] <= cutoff)
    x = np.fft.ifft2(np.fft.fft2(white) * mask).real
    span = x.max() - x.min()
    x = (x - x.min()) / (span if span > 0 else 1.0)
    return scale * x.ravel()


@dataclasses.dataclass
class DeblurProblem:
    """Deblurring posterior pieces. ``model`` is GEDA-ready."""

    model: DAModel
    y: np.ndarray
    gamma: np.ndarray
    image: np.ndarray
    mean: MeanSpec
    blur: object
    prior: CirculantModel
    shape: tuple

    def __iter__(self):
        yield self.model
        yield self.y


def deblur_prior(n: int, xi0: float = 1.0, xi1: float = 1.0) -> CirculantModel:
    """``(xi0/d) 1 1^T + xi1 Lap^T Lap`` as a circulant on the ``n x n`` torus."""
    lap = circulant_spectrum(laplacian_kernel(n), shape=(n, n))
    spec = xi1 * lap**2
    spec[0] += xi0
    return CirculantModel.from_spectrum(spec, shape=(n, n))


def build_deblur(d: int, spec: ScenarioSpec | None = None, omega=None) -> DeblurProblem:
    """Deblurring posterior ``Q = S^T G^-1 S + Q2`` with potential ``S^T G^-1 y``.

    ``G`` is diagonal with entries ``kappa1`` (probability ``p``) or
    ``kappa2``; ``y`` blurs a seeded smooth image and adds ``N(0, G)`` noise.
    """
    spec = spec or ScenarioSpec("deblur", d)
    n = _grid_side(d)
    stream = RngStream(spec.seed, 0)
    gamma = np.where(stream.uniform(d) <= spec.p, spec.kappa1, spec.kappa2)
    S = circulant_operator(box_blur_kernel(n), shape=(n, n))
    image = smooth_field(n, stream.spawn(1))
    y = S.matvec(image) + np.sqrt(gamma) * stream.spawn(2).normal(d)
    prior = deblur_prior(n, spec.xi0, spec.xi1)
    factor = FactorTerm(S, 1.0 / gamma)
    q1 = CompositeModel([factor])
    model = make_da(q1, prior, scheme="geda", omega=omega, factor1=factor, probe_spd=False)
    potential = S.rmatvec(y / gamma)
    return DeblurProblem(model, y, gamma, image, MeanSpec.from_potential(potential), S, prior, (n, n))


def deblur_precision(problem: DeblurProblem) -> CompositeModel:
    """Full posterior precision as a matrix-free composite."""
    return CompositeModel([FactorTerm(problem.blur, 1.0 / problem.gamma), problem.prior])


def diagonal_toy(d: int = 15, levels=(1, 2, 3, 4, 5)) -> DiagonalModel:
    """Diagonal covariance with ``len(levels)`` distinct eigenvalues, each repeated ``d / len(levels)`` times."""
    reps = int(np.ceil(d / len(levels)))
    vals = np.repeat(np.asarray(levels, dtype=float), reps)[:d]
    return DiagonalModel(vals, side=Side.COVARIANCE)
