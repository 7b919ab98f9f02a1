"""Matrix-free samplers: Chebyshev series, Lanczos, perturbation-optimization, CG."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import core
from .core import CompositeModel, FactorTerm, PrecisionModel, Side, SolverError, as_mean
from .rng import standard_normal_columns

DEFAULT_K_CHEBY = 21
LANCZOS_REORTH_MAX_DIM = 2048


class KrylovBreakdownWarning(RuntimeWarning):
    """A Krylov recursion stopped early (exhausted space or lost definiteness)."""


@dataclass(frozen=True)
class ChebyshevSeries:
    """Truncated Chebyshev expansion of ``x**power`` on ``[lambda_l, lambda_u]``.

    ``f(x) ~ c_0 / 2 + sum_{k>=1} c_k T_k(y)`` with ``y = alpha x - beta``
    mapping the interval onto ``[-1, 1]``.
    """

    coeffs: np.ndarray
    lambda_l: float
    lambda_u: float
    power: float = -0.5

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @property
    def alpha(self) -> float:
        return 2.0 / (self.lambda_u - self.lambda_l)

    @property
    def beta(self) -> float:
        return (self.lambda_u + self.lambda_l) / (self.lambda_u - self.lambda_l)

    def __call__(self, x):
        """Evaluate the truncated series with the three-term recursion."""
        y = self.alpha * np.asarray(x, dtype=float) - self.beta
        t0, t1 = np.ones_like(y), y
        s = 0.5 * self.coeffs[0] * t0
        if self.order >= 1:
            s = s + self.coeffs[1] * t1
        for c in self.coeffs[2:]:
            t0, t1 = t1, 2.0 * y * t1 - t0
            s = s + c * t1
        return s


def chebyshev_coefficients(lambda_l, lambda_u, K, power=-0.5) -> ChebyshevSeries:
    """Coefficients of the ``K``-truncated Chebyshev series of ``x**power``.

    The function is sampled at the ``K + 1`` Chebyshev nodes
    ``cos(pi (j + 1/2) / (K + 1))`` mapped to the interval, which lie strictly
    inside it, and projected with the discrete cosine quadrature
    ``c_k = 2/(K+1) sum_j g_j cos(pi k (j + 1/2) / (K + 1))``.
    """
    lambda_l, lambda_u = float(lambda_l), float(lambda_u)
    if not (lambda_u > lambda_l >= 0.0):
        raise ValueError(f"degenerate interval [{lambda_l}, {lambda_u}]")
    K = int(K)
    if K < 1:
        raise ValueError("series order must be at least 1")
    j = np.arange(K + 1)
    arg = np.pi * (j + 0.5) / (K + 1)
    x = np.cos(arg) * (lambda_u - lambda_l) / 2.0 + (lambda_u + lambda_l) / 2.0
    g = x ** power
    k = np.arange(K + 1)[:, None]
    c = 2.0 / (K + 1) * (g * np.cos(k * arg)).sum(axis=1)
    return ChebyshevSeries(c, lambda_l, lambda_u, power)


def chebyshev_apply(series: ChebyshevSeries, matvec, z) -> np.ndarray:
    """Apply ``f(A)`` to ``z`` given the series of ``f`` and ``v -> A v``."""
    if series.order < 2:
        raise ValueError("Chebyshev sampling needs order K >= 2")
    a, b, c = series.alpha, series.beta, series.coeffs
    u0 = np.array(z, dtype=float)
    u1 = a * matvec(u0) - b * u0
    u = 0.5 * c[0] * u0 + c[1] * u1
    for ck in c[2:]:
        u2 = 2.0 * (a * matvec(u1) - b * u1) - u0
        u += ck * u2
        u0, u1 = u1, u2
    return u


def chebyshev_apply_model(model: PrecisionModel, z, K=DEFAULT_K_CHEBY, interval=None):
    """``A^{-1/2} z`` (precision side) or ``A^{1/2} z`` (covariance side) for the stored ``A``."""
    lo, hi = core.gershgorin_bounds(model) if interval is None else interval
    power = -0.5 if model.side is Side.PRECISION else 0.5
    return chebyshev_apply(chebyshev_coefficients(lo, hi, K, power), model.matvec, z)


def sample_chebyshev(model: PrecisionModel, mean=None, K=DEFAULT_K_CHEBY, stream=None,
                     size=None, z=None, interval=None):
    """Approximate draw(s) ``mu + p_K(Q) z`` with ``p_K(x) ~ x^{-1/2}``.

    The interval defaults to the Gershgorin bounds ``(0, max row sum)``.
    For a covariance-side model the series of ``x^{1/2}`` is applied to
    ``Sigma`` instead. Returns ``(d,)`` or, with ``size``, ``(size, d)``.
    """
    if int(K) < 2:
        raise ValueError("Chebyshev sampling needs order K >= 2")
    if z is None:
        z = standard_normal_columns(stream, model.dim, size)
    w = chebyshev_apply_model(model, z, K, interval)
    mu = as_mean(mean, model.dim).mean_for(model)
    return (mu + w.T) if w.ndim == 2 else mu + w


# -- Lanczos -----------------------------------------------------------------

@dataclass(frozen=True)
class LanczosBasis:
    """Orthonormal Krylov basis ``H`` and tridiagonal coefficients of ``T``."""

    H: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    beta0: float

    @property
    def k(self) -> int:
        return len(self.alpha)

    def tridiagonal(self) -> np.ndarray:
        return np.diag(self.alpha) + np.diag(self.beta, 1) + np.diag(self.beta, -1)


def lanczos(matvec, z, K, reorthogonalize=True, breakdown_tol=None) -> LanczosBasis:
    """``K`` steps of Lanczos started from ``z`` (full Gram-Schmidt when asked).

    Stops early when the next residual norm vanishes, returning the completed
    basis.
    """
    z = np.asarray(z, dtype=float)
    d = z.shape[0]
    K = int(min(K, d))
    if K < 1:
        raise ValueError("Lanczos needs K >= 1")
    beta0 = float(np.linalg.norm(z))
    if beta0 == 0.0:
        raise ValueError("Lanczos start vector is zero")
    tol = (np.finfo(float).eps * 64) if breakdown_tol is None else breakdown_tol
    H = np.zeros((d, K))
    alpha, beta = [], []
    h = z / beta0
    h_prev = np.zeros(d)
    b_prev = 0.0
    scale = 0.0
    for k in range(K):
        H[:, k] = h
        w = matvec(h) - b_prev * h_prev
        a = float(h @ w)
        w -= a * h
        if reorthogonalize:
            Hk = H[:, : k + 1]
            w -= Hk @ (Hk.T @ w)
            w -= Hk @ (Hk.T @ w)
        alpha.append(a)
        scale = max(scale, abs(a))
        b = float(np.linalg.norm(w))
        if k == K - 1:
            break
        if b <= tol * max(scale, 1.0):
            H = H[:, : k + 1]
            break
        beta.append(b)
        h_prev, h, b_prev = h, w / b, b
    return LanczosBasis(H, np.array(alpha), np.array(beta), beta0)


def lanczos_function_times_e1(basis: LanczosBasis, power=-0.5) -> np.ndarray:
    """``T**power e_1`` through the symmetric tridiagonal eigendecomposition."""
    if basis.k == 1:
        return np.array([basis.alpha[0] ** power])
    lam, V = sla.eigh_tridiagonal(basis.alpha, basis.beta)
    if np.any(lam <= 0):
        raise core.NotPositiveDefiniteError("Lanczos tridiagonal matrix is not positive definite")
    return V @ ((lam ** power) * V[0])


def sample_lanczos(model: PrecisionModel, mean=None, K=None, stream=None, reorthogonalize=None, z=None):
    """Approximate draw ``mu + ||z|| H T^{-1/2} e_1`` from a ``K``-step Krylov basis.

    Exact at ``K = d`` with reorthogonalization. Covariance-side models use
    ``T^{1/2}``. Returns ``(theta, k_used)``; ``k_used < K`` signals that the
    Krylov space was exhausted.
    """
    d = model.dim
    K = d if K is None else int(K)
    if K < 1:
        raise ValueError("Lanczos needs K >= 1")
    if reorthogonalize is None:
        reorthogonalize = d <= LANCZOS_REORTH_MAX_DIM
    if z is None:
        z = stream.normal(d)
    basis = lanczos(model.matvec, z, K, reorthogonalize)
    power = -0.5 if model.side is Side.PRECISION else 0.5
    w = basis.beta0 * (basis.H @ lanczos_function_times_e1(basis, power))
    mu = as_mean(mean, d).mean_for(model)
    return mu + w, basis.k


# -- conjugate gradients -----------------------------------------------------

@dataclass
class CGResult:
    x: np.ndarray
    n_iter: int
    residual_norm: float
    converged: bool


def conjugate_gradient(matvec, b, x0=None, tol=1e-10, max_iter=None, relative=True) -> CGResult:
    """Plain CG for an SPD operator; ``tol`` is relative to ``||b||`` unless ``relative=False``.

    A 2-D ``b`` runs one independent recursion per column (vectorized);
    ``residual_norm`` is then the largest column residual.
    """
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    max_iter = 10 * b.shape[0] if max_iter is None else int(max_iter)
    r = b - matvec(x) if x0 is not None else b.copy()
    target = tol * (np.linalg.norm(b, axis=0) if relative else 1.0)
    rr = np.einsum("i...,i...->...", r, r)
    p = r.copy()
    k = 0
    active = np.sqrt(rr) > target
    while np.any(active) and k < max_iter:
        Ap = matvec(p)
        pAp = np.einsum("i...,i...->...", p, Ap)
        a = np.where(active, rr / np.where(active, pAp, 1.0), 0.0)
        x += a * p
        r -= a * Ap
        rr_new = np.einsum("i...,i...->...", r, r)
        p = r + np.where(active, rr_new / np.where(active, rr, 1.0), 0.0) * p
        rr = rr_new
        active = np.sqrt(rr) > target
        k += 1
    res = np.sqrt(rr)
    return CGResult(x, k, float(np.max(res)), bool(np.all(res <= target)))


@dataclass
class CgState:
    """Running state of the CG sampler."""

    r: np.ndarray
    h: np.ndarray
    d_scalar: float
    y: np.ndarray
    k: int
    x: np.ndarray


@dataclass
class CGSample:
    """Outcome of one CG sampler call."""

    theta: np.ndarray
    k_used: int
    solution: np.ndarray
    warning: str | None = None

    def __iter__(self):
        # allows ``theta, k_used = sample_cg(...)``
        return iter((self.theta, self.k_used))


def sample_cg(model: PrecisionModel, mean=None, epsilon=1e-8, max_iter=None, stream=None,
              omega0=None, c=None, conjugacy_tol=1e-8, perturb=True) -> CGSample:
    """CG sampler: the CG recursion on ``Q w = c`` plus one scalar draw per step.

    ``y <- y + (z / sqrt(d_{k-1})) h_{k-1}`` accumulates a Gaussian whose
    covariance is the Krylov-subspace approximation of ``Q^{-1}``. Iterations
    stop when ``||r_k|| < epsilon``, when consecutive residuals lose
    orthogonality (cosine above ``conjugacy_tol``), or at ``max_iter``.

    Parameters
    ----------
    omega0 : ndarray, optional
        Initial solver iterate, default zero.
    c : ndarray, optional
        Right-hand side, default ``N(0, I)`` drawn from ``stream``.
    perturb : bool
        With ``False`` the scalar draws are skipped (pure CG solve).

    Returns
    -------
    CGSample
        Unpacks as ``(theta, k_used)``; ``solution`` holds the solver iterate.
        For a covariance-side model ``theta = mu + Sigma y``.
    """
    d = model.dim
    max_iter = d if max_iter is None else int(max_iter)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    w0 = np.zeros(d) if omega0 is None else np.array(omega0, dtype=float)
    if c is None:
        c = stream.normal(d)
    A = model.matvec
    r = np.asarray(c, dtype=float) - A(w0)
    h = r.copy()
    Ah = A(h)
    dk = float(h @ Ah)
    st = CgState(r=r, h=h, d_scalar=dk, y=w0.copy() if perturb else np.zeros(d), k=1, x=w0.copy())
    flag = None
    rr = float(r @ r)
    k = 0
    while np.sqrt(rr) >= epsilon and k < max_iter:
        if st.d_scalar <= 0:
            flag = "loss of positive definiteness"
            warnings.warn(f"CG sampler stopped: {flag}", KrylovBreakdownWarning, stacklevel=2)
            break
        gamma = rr / st.d_scalar
        st.x = st.x + gamma * st.h
        r_new = st.r - gamma * Ah
        rr_new = float(r_new @ r_new)
        eta = -rr_new / rr
        h_new = r_new - eta * st.h
        Ah_new = A(h_new)
        d_new = float(h_new @ Ah_new)
        if perturb:
            st.y = st.y + (stream.normal() / np.sqrt(st.d_scalar)) * st.h
        k += 1
        cos = abs(float(r_new @ st.r)) / np.sqrt(rr_new * rr) if rr_new > 0 else 0.0
        st.r, st.h, st.d_scalar, Ah, rr = r_new, h_new, d_new, Ah_new, rr_new
        st.k = k + 1
        if cos > conjugacy_tol:
            flag = "loss of conjugacy"
            break
    mu = as_mean(mean, d).mean_for(model)
    y = model.matvec(st.y) if model.side is Side.COVARIANCE else st.y
    return CGSample(mu + y, k, st.x, flag)


# -- perturbation-optimization -----------------------------------------------

def _weight_sqrt_sample(weight, stream, k, cols=None):
    """Draw ``W^{1/2} zeta`` for a cheap-square-root middle matrix ``W``."""
    from .core import CirculantModel, DiagonalModel

    if isinstance(weight, PrecisionModel) and not isinstance(weight, (DiagonalModel, CirculantModel)):
        raise TypeError(f"unsupported term: no cheap square root for {type(weight).__name__}")
    if not isinstance(weight, PrecisionModel) and np.ndim(weight) != 1:
        raise TypeError("unsupported term: weight must be a diagonal vector or a structured model")
    zeta = standard_normal_columns(stream, k, cols)
    if isinstance(weight, CirculantModel):
        return core.fft_apply(np.sqrt(weight.spectrum), zeta, weight.shape)[0]
    w = weight.q if isinstance(weight, DiagonalModel) else np.asarray(weight, dtype=float)
    return (np.sqrt(w) * zeta.T).T


def perturb_local(terms, mean=None, stream=None, precision=None, size=None) -> np.ndarray:
    """Perturbed potential ``eta = b + z'`` with ``z' ~ N(0, Q)``.

    Each :class:`FactorTerm` ``G^T W G`` contributes ``G^T W^{1/2} zeta``;
    structured :class:`PrecisionModel` terms contribute an exact
    ``N(0, Q_i)`` draw. ``mean`` is a MeanSpec (potential used directly) or a
    mean vector (mapped through ``Q``). With ``size`` the result has shape
    ``(d, size)``, one perturbation per column.
    """
    terms = list(terms)
    Q = precision if precision is not None else CompositeModel(terms)
    b = as_mean(mean, Q.dim).potential_for(Q)
    z = np.zeros(Q.dim if size is None else (Q.dim, int(size)))
    for t in terms:
        if isinstance(t, FactorTerm):
            G = t.operator
            z += G.T @ _weight_sqrt_sample(t.weight, stream, G.shape[0], size)
        else:
            z += _square_root_times(t, stream, size)
    return (b + z.T).T


def _square_root_times(model, stream, cols=None):
    """Draw ``N(0, A)`` for a structured precision-side model ``A``."""
    from .core import BandModel, CirculantModel, DenseModel, DiagonalModel

    if not isinstance(model, (DiagonalModel, CirculantModel, DenseModel, BandModel)):
        raise TypeError(f"unsupported term: no cheap square root for {type(model).__name__}")
    zeta = standard_normal_columns(stream, model.dim, cols)
    if isinstance(model, DiagonalModel):
        return (np.sqrt(model.q) * zeta.T).T
    if isinstance(model, CirculantModel):
        return core.fft_apply(np.sqrt(model.spectrum), zeta, model.shape)[0]
    if isinstance(model, DenseModel):
        return model.cholesky @ zeta
    return core.band_lower_matvec(model.cholesky_band, zeta)


def sample_po(terms, mean=None, solver=None, stream=None, tol=1e-10, max_iter=None, size=None):
    """Perturbation-optimization draw: solve ``Q theta = b + z'``.

    Parameters
    ----------
    solver : callable ``(matvec, rhs) -> CGResult``, optional
        Defaults to :func:`conjugate_gradient` with ``tol`` and ``max_iter``.
    size : int, optional
        Number of draws; the result then has shape ``(size, d)``.

    Raises
    ------
    SolverError
        When the solver does not converge; carries the residual norm.
    """
    terms = list(terms)
    Q = CompositeModel(terms)
    eta = perturb_local(terms, mean, stream, Q, size)
    if solver is None:
        res = conjugate_gradient(Q.matvec, eta, tol=tol, max_iter=max_iter)
    else:
        res = solver(Q.matvec, eta)
    if not res.converged:
        raise SolverError("PO linear solve did not converge", res.residual_norm, res.n_iter)
    return res.x if size is None else res.x.T
