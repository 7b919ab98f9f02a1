"""Chain diagnostics: covariance error, autocorrelation, ESS, spectral radii."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from . import core
from .core import DimensionError, PrecisionModel
from .rng import FixedStream


class StagnationError(RuntimeError):
    """An iterative eigenvalue estimate failed to converge.

    ``last`` holds the most recent estimate.
    """

    def __init__(self, message, last):
        super().__init__(f"{message} (last estimate {last})")
        self.last = last


@dataclass
class ChainStats:
    """Summary statistics of a chain for one tracked component."""

    mean_hat: np.ndarray
    sigma_hat: np.ndarray
    rho: np.ndarray
    ess: float
    essr: float
    rel_cov_error: float | None
    component: int
    T: int


def empirical_covariance(samples) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased covariance of ``samples`` (shape ``(T, d)``)."""
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2:
        raise DimensionError("samples must have shape (T, d)")
    T = X.shape[0]
    if T < 2:
        raise ValueError("need at least two samples")
    m = X.mean(axis=0)
    Xc = X - m
    S = Xc.T @ Xc / (T - 1)
    return m, 0.5 * (S + S.T)


class RunningMoments:
    """Single-pass mean and covariance for ``k`` parallel streams of ``d``-vectors.

    Blocks are folded in with the pairwise (Chan) update, so the result does
    not depend on block boundaries beyond rounding, and two accumulators can
    be merged.
    """

    def __init__(self, d: int, k: int = 1):
        self.d, self.k = int(d), int(k)
        self.n = 0
        self.mean = np.zeros((self.k, self.d))
        self.m2 = np.zeros((self.k, self.d, self.d))

    def update(self, block):
        """Fold a block of shape ``(n, k, d)`` (or ``(n, d)`` when ``k == 1``)."""
        X = np.asarray(block, dtype=float)
        if X.ndim == 2:
            X = X[:, None, :]
        nb = X.shape[0]
        if nb == 0:
            return self
        mb = X.mean(axis=0)
        Xc = X - mb
        Xk = np.ascontiguousarray(Xc.transpose(1, 0, 2))
        m2b = np.matmul(Xk.transpose(0, 2, 1), Xk)
        self._merge(nb, mb, m2b)
        return self

    def _merge(self, nb, mb, m2b):
        na = self.n
        n = na + nb
        delta = mb - self.mean
        self.m2 += m2b + np.einsum("ki,kj->kij", delta, delta) * (na * nb / n)
        self.mean += delta * (nb / n)
        self.n = n

    def merge(self, other: "RunningMoments"):
        if other.n:
            self._merge(other.n, other.mean.copy(), other.m2.copy())
        return self

    def covariance(self) -> np.ndarray:
        """Unbiased covariance, shape ``(k, d, d)``."""
        if self.n < 2:
            raise ValueError("need at least two samples")
        S = self.m2 / (self.n - 1)
        return 0.5 * (S + np.swapaxes(S, 1, 2))


def _truth_covariance(truth) -> np.ndarray:
    if isinstance(truth, PrecisionModel):
        return core.covariance_matrix(truth)
    return np.asarray(truth, dtype=float)


def relative_cov_error(sigma_hat, truth, truth_norm=None) -> float | np.ndarray:
    """``||Sigma_hat - Sigma||_2 / ||Sigma||_2``.

    ``truth`` is a :class:`PrecisionModel` (inverted when precision-side) or
    a dense covariance. A stack ``(k, d, d)`` of estimates gives ``k`` errors.
    ``truth_norm`` caches ``||Sigma||_2`` across repeated calls.
    """
    S = _truth_covariance(truth)
    H = np.asarray(sigma_hat, dtype=float)
    if H.shape[-2:] != S.shape:
        raise DimensionError(f"estimate shape {H.shape} does not match truth {S.shape}")
    denom = truth_norm if truth_norm is not None else np.linalg.norm(S, 2)
    diff = H - S
    diff = 0.5 * (diff + np.swapaxes(diff, -1, -2))
    num = np.max(np.abs(np.linalg.eigvalsh(diff)), axis=-1)
    return num / denom if H.ndim == 3 else float(num / denom)


def autocorrelation(series, max_lag=None) -> np.ndarray:
    """Biased autocorrelation ``rho_0..rho_max_lag`` (``rho_0 = 1``)."""
    x = np.asarray(series, dtype=float).ravel()
    n = x.shape[0]
    if n < 2:
        raise ValueError("series too short")
    max_lag = n // 2 if max_lag is None else int(max_lag)
    if n < 2 * max_lag:
        raise ValueError(f"series of length {n} too short for max_lag={max_lag}")
    xc = x - x.mean()
    var = float(xc @ xc)
    if var == 0.0:
        raise ValueError("autocorrelation of a constant series is undefined")
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1]
    return acov / acov[0]


def essr(series, t1_seconds, max_lag=None) -> tuple[float, float]:
    """Effective sample size and ESS per second.

    The autocorrelation sum is truncated at the first negative lag:
    ``ESS = T / (1 + 2 sum rho_t)``, ``ESSR = 1 / (T1 (1 + 2 sum rho_t))``.
    """
    if t1_seconds <= 0:
        raise ValueError("t1_seconds must be positive")
    x = np.asarray(series, dtype=float).ravel()
    T = x.shape[0]
    rho = autocorrelation(x, max_lag)
    neg = np.nonzero(rho[1:] < 0)[0]
    stop = neg[0] + 1 if neg.size else rho.shape[0]
    tau = 1.0 + 2.0 * float(np.sum(rho[1:stop]))
    return T / tau, 1.0 / (t1_seconds * tau)


def slowest_component(samples) -> int:
    """Index of the component with the largest sample variance."""
    X = np.asarray(samples, dtype=float)
    return int(np.argmax(X.var(axis=0)))


def chain_stats(samples, t1_seconds, truth=None, component=None) -> ChainStats:
    """Statistics of a recorded chain (``(T, d)`` retained samples)."""
    X = np.asarray(samples, dtype=float)
    comp = slowest_component(X) if component is None else int(component)
    m, S = empirical_covariance(X)
    ess, rate = essr(X[:, comp], t1_seconds)
    err = None if truth is None else relative_cov_error(S, truth)
    return ChainStats(m, S, autocorrelation(X[:, comp], min(100, X.shape[0] // 2)), ess, rate, err, comp,
                      X.shape[0])


# -- iteration operators -----------------------------------------------------

def _iteration_operator(scheme):
    model = scheme.model
    d = scheme.dim

    def mv(x):
        return x - scheme.solve_M(model.matvec(x))

    return spla.LinearOperator((d, d), matvec=mv, dtype=float)


def spectral_radius(scheme, method="auto", tol=1e-10, maxiter=None) -> float:
    """Spectral radius of ``M^{-1} N`` for a splitting scheme.

    ``method='dense'`` uses all eigenvalues of the dense iteration matrix;
    ``'iterative'`` uses implicitly restarted Arnoldi (ARPACK) on
    ``x -> x - M^{-1} Q x``; ``'auto'`` picks dense for
    ``d <= DENSE_THRESHOLD``.
    """
    d = scheme.dim
    if method == "auto":
        method = "dense" if d <= core.DENSE_THRESHOLD else "iterative"
    if method == "dense" or d < 4:
        A = np.eye(d) - scheme.solve_M(scheme.model.to_dense())
        return float(np.max(np.abs(np.linalg.eigvals(A))))
    op = _iteration_operator(scheme)
    try:
        vals = spla.eigs(op, k=1, which="LM", tol=tol, maxiter=maxiter or 20 * d,
                         v0=np.ones(d), return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        last = float(np.max(np.abs(exc.eigenvalues))) if len(exc.eigenvalues) else float("nan")
        raise StagnationError("spectral radius iteration did not converge", last) from exc
    return float(np.max(np.abs(vals)))


def chebyshev_ssor_factor(model, omega, lambda_min=None, lambda_max=None) -> float:
    """Convergence factor ``(sqrt(k) - 1) / (sqrt(k) + 1)`` of accelerated SSOR.

    ``k = lambda_max / lambda_min`` for the spectrum of ``M_SSOR^{-1} Q``.
    """
    from .splitting import ssor_eigen_bounds

    if lambda_min is None or lambda_max is None:
        lambda_min, lambda_max = ssor_eigen_bounds(model, omega)
    kappa = lambda_max / lambda_min
    return float((np.sqrt(kappa) - 1.0) / (np.sqrt(kappa) + 1.0))


def extreme_eigenvalues(model) -> tuple[float, float]:
    """``(lambda_min, lambda_max)`` of a symmetric model (dense or Lanczos/ARPACK)."""
    if model.dim <= core.DENSE_THRESHOLD:
        ev = np.linalg.eigvalsh(model.to_dense())
        return float(ev[0]), float(ev[-1])
    op = spla.LinearOperator((model.dim,) * 2, matvec=model.matvec, dtype=float)
    hi = spla.eigsh(op, k=1, which="LA", return_eigenvectors=False)[0]
    lo = spla.eigsh(op, k=1, which="SA", return_eigenvectors=False)[0]
    return float(lo), float(hi)


def _jacobi_radius(model):
    """``rho(I - D^{-1} Q)`` via the symmetric similar matrix."""
    D = model.diagonal()
    s = 1.0 / np.sqrt(D)
    if model.dim <= core.DENSE_THRESHOLD:
        Q = model.to_dense()
        J = np.eye(model.dim) - s[:, None] * Q * s[None, :]
        return float(np.max(np.abs(np.linalg.eigvalsh(J))))

    def mv(x):
        return x - s * model.matvec(s * x)

    op = spla.LinearOperator((model.dim,) * 2, matvec=mv, dtype=float)
    return float(abs(spla.eigsh(op, k=1, which="LM", return_eigenvectors=False)[0]))


def optimal_omega(model, scheme_name) -> float:
    """Optimal relaxation parameter for Richardson, SOR or SSOR.

    Richardson: ``2 / (lambda_min(Q) + lambda_max(Q))``;
    SOR: ``2 / (1 + sqrt(1 - rho_J^2))``;
    SSOR (and its Chebyshev acceleration): ``2 / (1 + sqrt(2 (1 - rho_J)))``,
    where ``rho_J = rho(I - D^{-1} Q) = rho(D^{-1}(L + L^T))``.
    """
    name = str(scheme_name).lower()
    if name in ("richardson", "approx-richardson"):
        lo, hi = extreme_eigenvalues(model)
        return 2.0 / (lo + hi)
    if name in ("sor", "ssor", "cheby-ssor", "chebyshev-ssor"):
        rho = _jacobi_radius(model)
        if rho >= 1:
            raise ValueError(f"Jacobi radius {rho} >= 1: no optimal relaxation available")
        if name == "sor":
            return 2.0 / (1.0 + np.sqrt(1.0 - rho ** 2))
        return 2.0 / (1.0 + np.sqrt(2.0 * (1.0 - rho)))
    raise ValueError(f"no optimal omega formula for scheme {scheme_name!r}")


# -- stationary laws ---------------------------------------------------------

def stationary_covariance(A, W, tol=1e-14, max_doublings=80) -> np.ndarray:
    """Fixed point of ``S -> A S A^T + W`` by the doubling recursion.

    Requires ``rho(A) < 1``.
    """
    A = np.asarray(A, dtype=float)
    S = np.array(W, dtype=float)
    Ak = A.copy()
    for _ in range(max_doublings):
        inc = Ak @ S @ Ak.T
        S = S + inc
        Ak = Ak @ Ak
        if np.linalg.norm(inc) <= tol * np.linalg.norm(S):
            break
    else:
        raise StagnationError("doubling recursion did not converge", float(np.linalg.norm(inc)))
    return 0.5 * (S + S.T)


def covariance_map(scheme, sigma) -> np.ndarray:
    """One application of ``S -> M^{-1}(N S N^T + cov z) M^{-T}``."""
    Minv = np.linalg.inv(_dense(scheme.M))
    N = _dense(scheme.N)
    C = _dense(scheme.noise_cov)
    return Minv @ (N @ sigma @ N.T + C) @ Minv.T


def _dense(A):
    import scipy.sparse as sp

    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def scheme_stationary_covariance(scheme) -> np.ndarray:
    """Invariant covariance of a splitting chain from its dense operators."""
    Minv = np.linalg.inv(_dense(scheme.M))
    A = Minv @ _dense(scheme.N)
    W = Minv @ _dense(scheme.noise_cov) @ Minv.T
    return stationary_covariance(A, 0.5 * (W + W.T))


def scheme_stationary_mean(scheme, potential) -> np.ndarray:
    """Fixed point of ``m -> M^{-1}(b + N m)``, i.e. ``(M - N)^{-1} b``."""
    M, N = _dense(scheme.M), _dense(scheme.N)
    return np.linalg.solve(M - N, potential)


def approximate_precision(scheme_name, Q, omega=None) -> np.ndarray:
    """Closed-form invariant precision of the approximate splittings.

    Hogwild ``Q (I - D^{-1}(L + L^T))``; clone ``Q - Q M^{-1} Q / 2`` with
    ``M = D + 2 I / omega``; approximate Richardson/Jacobi
    ``Q (2 I - M^{-1} Q)``.
    """
    Q = np.asarray(Q, dtype=float)
    d = Q.shape[0]
    D = np.diag(Q)
    I = np.eye(d)
    if scheme_name == "hogwild":
        LL = Q - np.diag(D)
        return Q @ (I - LL / D[:, None])
    if scheme_name == "clone":
        m = D + 2.0 / omega
        return Q - 0.5 * Q @ (Q / m[:, None])
    if scheme_name == "approx-richardson":
        return Q @ (2.0 * I - omega * Q)
    if scheme_name == "approx-jacobi":
        return Q @ (2.0 * I - omega * Q / D[:, None])
    raise ValueError(f"no closed form for {scheme_name!r}")


@dataclass
class AffineKernel:
    """Transition ``theta' = A theta + c + B xi`` with ``xi`` standard normal."""

    A: np.ndarray
    c: np.ndarray
    B: np.ndarray

    @property
    def W(self) -> np.ndarray:
        return self.B @ self.B.T

    def stationary_covariance(self) -> np.ndarray:
        return stationary_covariance(self.A, self.W)

    def stationary_mean(self) -> np.ndarray:
        return np.linalg.solve(np.eye(self.A.shape[0]) - self.A, self.c)


def affine_kernel(step, d: int) -> AffineKernel:
    """Recover the Gaussian-linear transition of ``step(theta, stream)``.

    The step is probed with prescribed normals: zeros give ``A`` and ``c``,
    unit vectors in the noise give the columns of ``B``.
    """
    s0 = FixedStream()
    c = np.asarray(step(np.zeros(d), s0), dtype=float)
    n = s0.count
    A = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        A[:, i] = step(e, FixedStream()) - c
    B = np.empty((d, n))
    for j in range(n):
        xi = np.zeros(n)
        xi[j] = 1.0
        B[:, j] = step(np.zeros(d), FixedStream(xi)) - c
    return AffineKernel(A, c, B)
