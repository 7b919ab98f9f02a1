"""Gibbs samplers built on matrix splittings ``Q = M - N``.

A step draws ``theta' = M^{-1}(Q mu + z + N theta)`` with ``z`` Gaussian.
Exact schemes use ``cov(z) = M^T + N`` and leave ``N(mu, Q^{-1})``
invariant; approximate schemes use a cheaper (diagonal) covariance and
target a perturbed precision.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import core
from .core import (
    BandModel,
    DenseModel,
    DiagonalModel,
    PrecisionModel,
    Side,
    affine_combination,
    as_mean,
)
from .direct import sample_exact
from .krylov import DEFAULT_K_CHEBY, chebyshev_apply_model
from .rng import standard_normal_columns

#: Dimension up to which splitting operators are stored as dense arrays.
SPLIT_DENSE_MAX = 2048

EXACT_SCHEMES = ("richardson", "jacobi", "gauss-seidel", "sor", "ssor")
APPROX_SCHEMES = ("hogwild", "clone", "approx-richardson", "approx-jacobi")
SCHEMES = EXACT_SCHEMES + APPROX_SCHEMES + ("unified",)

_ALIASES = {
    "gs": "gauss-seidel", "gaussseidel": "gauss-seidel", "gauss_seidel": "gauss-seidel",
    "clone-mcmc": "clone", "clonemcmc": "clone", "clone_mcmc": "clone",
    "approxrichardson": "approx-richardson", "approx_richardson": "approx-richardson",
    "approxjacobi": "approx-jacobi", "approx_jacobi": "approx-jacobi",
    "unifiedr": "unified",
}


def canonical_scheme_name(name: str) -> str:
    key = str(name).strip().lower().replace(" ", "-")
    key = _ALIASES.get(key, _ALIASES.get(key.replace("-", ""), key))
    if key not in SCHEMES:
        raise ValueError(f"unknown splitting scheme {name!r}; choose from {', '.join(SCHEMES)}")
    return key


def _lower_solver(M):
    """Forward substitution with a lower-triangular dense or sparse ``M``."""
    if sp.issparse(M):
        Mc = sp.csr_matrix(M)
        return lambda r: spla.spsolve_triangular(Mc, r, lower=True)
    return lambda r: sla.solve_triangular(M, r, lower=True, check_finite=False)


def _upper_solver(M):
    """Solve ``M^T x = r`` for the same lower-triangular ``M``."""
    if sp.issparse(M):
        Mt = sp.csr_matrix(M.T)
        return lambda r: spla.spsolve_triangular(Mt, r, lower=False)
    return lambda r: sla.solve_triangular(M, r, lower=True, trans=1, check_finite=False)


@dataclass
class SplittingScheme:
    """A splitting ``Q = M - N`` with its noise rule and solver for ``M``.

    Attributes
    ----------
    name : str
    omega : float or None
    exact : bool
        Whether the invariant law is exactly ``N(mu, Q^{-1})``.
    Q, M, N : ndarray, sparse matrix or None
        Explicit operators when available (``None`` for matrix-free parts).
    noise_cov : ndarray, sparse matrix or None
        Covariance of the noise ``z`` (exact: ``M^T + N``).
    convergent : bool or None
        ``False`` when the parameters are outside the convergence range,
        ``None`` when unchecked.
    metadata : dict
        Includes ``inner_sampler``, the method drawing the noise.
    """

    name: str
    omega: float | None
    exact: bool
    dim: int
    model: PrecisionModel
    Q: object
    M: object
    N: object
    noise_cov: object
    solve_M: Callable
    apply_N: Callable
    draw_noise: Callable
    convergent: bool | None = None
    metadata: dict = field(default_factory=dict)
    sweeps: tuple | None = None

    def iteration_matrix(self) -> np.ndarray:
        """Dense ``M^{-1} N`` (small problems)."""
        if self.dim > core.DENSE_THRESHOLD:
            raise ValueError("iteration matrix is only formed for small problems")
        return self.solve_M(_dense(self.N) if self.N is not None else self.apply_N(np.eye(self.dim)))

    def potential(self, mean) -> np.ndarray:
        return as_mean(mean, self.dim).potential_for(self.model)


def _dense(A):
    if A is None:
        return None
    if sp.issparse(A):
        return A.toarray()
    return np.asarray(A)


def _model_matrices(model):
    """Explicit ``Q``, its diagonal and strictly lower part."""
    if isinstance(model, BandModel):
        Q = model.to_sparse()
        if model.dim <= SPLIT_DENSE_MAX:
            Q = Q.toarray()
    elif isinstance(model, (DenseModel, DiagonalModel)):
        Q = model.to_dense()
    else:
        raise TypeError(f"splitting needs a dense, band or diagonal model, got {type(model).__name__}")
    D = model.diagonal()
    L = sp.tril(Q, -1, format="csr") if sp.issparse(Q) else np.tril(Q, -1)
    return Q, D, L


def _diag(v, like):
    return sp.diags(v, format="csr") if sp.issparse(like) else np.diag(v)


def _noise_model(model, kind, omega):
    """Covariance-side model of the exact Richardson / Jacobi noise."""
    if kind == "richardson":
        return affine_combination(model, 2.0 / omega, -1.0, side=Side.COVARIANCE)
    # Jacobi: 2D - Q has the same off-diagonal pattern as Q
    if isinstance(model, BandModel):
        ab = -np.asarray(model.ab)
        ab[0] = model.ab[0]
        return BandModel(ab, Side.COVARIANCE)
    if isinstance(model, DiagonalModel):
        return DiagonalModel(model.q, Side.COVARIANCE)
    if isinstance(model, DenseModel):
        A = -model.matrix
        A[np.diag_indices_from(A)] = np.diag(model.matrix)
        return DenseModel(A, Side.COVARIANCE)
    D = model.diagonal()
    return core.OperatorModel(lambda v: 2.0 * (D * v.T).T - model.matvec(v), model.dim, Side.COVARIANCE,
                              diagonal=D)


def _structured_noise(cov_model, k_cheby):
    """Exact sampler for structured covariances, Chebyshev square root otherwise."""
    d = cov_model.dim
    if isinstance(cov_model, (BandModel, DiagonalModel)) or (
        isinstance(cov_model, DenseModel) and d <= core.DENSE_THRESHOLD
    ):
        label = {BandModel: "band-cholesky", DiagonalModel: "diagonal", DenseModel: "cholesky"}[type(cov_model)]

        def draw(stream, k):
            z = standard_normal_columns(stream, d, k)
            w = sample_exact(cov_model, None, None, z=z)
            return w.T if w.ndim == 2 else w

        return draw, label

    def draw_cheb(stream, k):
        z = standard_normal_columns(stream, d, k)
        return chebyshev_apply_model(cov_model, z, k_cheby)

    return draw_cheb, f"chebyshev(K={k_cheby})"


def _exact_noise(model, kind, omega, k_cheby):
    """Noise sampler for exact Richardson / Jacobi, flagging an indefinite covariance.

    The covariance ``M^T + N`` is SPD exactly when the scheme converges, so a
    failed factorization marks the scheme non-convergent instead of raising.
    """
    try:
        cov_model = _noise_model(model, kind, omega)
    except core.NotPositiveDefiniteError:
        def refuse(stream, k):
            raise core.NotPositiveDefiniteError(f"{kind} noise covariance M^T + N is not SPD")

        return refuse, None, False
    draw, label = _structured_noise(cov_model, k_cheby)
    return draw, label, None


def _diag_noise(var):
    sd = np.sqrt(var)

    def draw(stream, k):
        z = standard_normal_columns(stream, sd.shape[0], k)
        return (sd * z.T).T

    return draw


def make_splitting(model: PrecisionModel, name: str, omega=None, R=None, exact=True,
                   k_cheby=DEFAULT_K_CHEBY, check_convergence=True) -> SplittingScheme:
    """Build one of the named splittings of the precision ``model``.

    Parameters
    ----------
    model : PrecisionModel
        Precision-side dense, band or diagonal model (Richardson variants
        accept any model exposing ``matvec``).
    name : str
        One of ``richardson``, ``jacobi``, ``gauss-seidel``, ``sor``,
        ``ssor`` (exact); ``hogwild``, ``clone``, ``approx-richardson``,
        ``approx-jacobi`` (approximate); ``unified`` (needs ``R``).
    omega : float or 'auto', optional
        Relaxation parameter; ``'auto'`` uses :func:`diagnostics.optimal_omega`.
    R : array_like, optional
        Symmetric matrix for the ``unified`` scheme, ``M = Q + R``, ``N = R``.
    exact : bool
        Noise rule for ``unified``: ``M^T + N`` if true, ``M`` otherwise.
    k_cheby : int
        Order of the Chebyshev fallback used for unstructured noise.
    """
    name = canonical_scheme_name(name)
    if model.side is not Side.PRECISION:
        raise ValueError("splittings are defined for precision-side models")
    d = model.dim
    if isinstance(omega, str):
        if omega.lower() != "auto":
            raise ValueError(f"omega must be a number or 'auto', got {omega!r}")
        from .diagnostics import optimal_omega

        omega = optimal_omega(model, name)
    omega = None if omega is None else float(omega)
    needs_omega = name in ("richardson", "sor", "ssor", "clone", "approx-richardson", "approx-jacobi")
    if needs_omega and omega is None:
        if name in ("richardson", "sor", "ssor"):
            from .diagnostics import optimal_omega

            omega = optimal_omega(model, name)
        else:
            raise ValueError(f"scheme {name!r} needs omega")
    if omega is not None and omega <= 0:
        raise ValueError("omega must be positive")
    meta = {"inner_sampler": None}

    if name == "richardson" and not isinstance(model, (DenseModel, BandModel, DiagonalModel)):
        return _matrix_free_richardson(model, omega, k_cheby, meta)

    if name == "unified":
        if R is None:
            raise ValueError("unified scheme needs R")
        return _unified(model, R, exact, meta)

    Q, D, L = _model_matrices(model)
    if np.any(D <= 0) and name in ("jacobi", "gauss-seidel", "sor", "ssor", "hogwild", "clone", "approx-jacobi"):
        raise ValueError("zero or negative diagonal entry")
    Dm = _diag(D, Q)
    I = sp.identity(d, format="csr") if sp.issparse(Q) else np.eye(d)
    convergent = None
    sweeps = None
    if name == "richardson":
        M = I / omega
        N = M - Q
        noise, meta["inner_sampler"], convergent = _exact_noise(model, "richardson", omega, k_cheby)
        solve = lambda r: r * omega
        noise_cov = 2.0 * M - Q
    elif name == "jacobi":
        M = Dm
        N = M - Q
        noise, meta["inner_sampler"], convergent = _exact_noise(model, "jacobi", omega, k_cheby)
        solve = lambda r: (r.T / D).T
        noise_cov = 2.0 * M - Q
    elif name in ("gauss-seidel", "sor"):
        w = 1.0 if name == "gauss-seidel" else omega
        if name == "sor" and not (0 < w < 2):
            convergent = False
        M = _diag(D / w, Q) + L
        N = M - Q
        var = (2.0 / w - 1.0) * D
        if np.any(var <= 0):
            raise core.NotPositiveDefiniteError("SOR noise covariance is not positive definite")
        noise = _diag_noise(var)
        meta["inner_sampler"] = "diagonal"
        solve = _lower_solver(M)
        noise_cov = _diag(var, Q)
    elif name == "ssor":
        w = omega
        if not (0 < w < 2):
            raise ValueError("SSOR needs 0 < omega < 2")
        Msor = _diag(D / w, Q) + L
        Nsor = Msor - Q
        fwd, bwd = _lower_solver(Msor), _upper_solver(Msor)
        var = (2.0 / w - 1.0) * D
        half = _diag_noise(var)
        meta["inner_sampler"] = "diagonal (two SOR sweeps)"
        c = w / (2.0 - w)
        if d <= SPLIT_DENSE_MAX:
            Ms, Ns = _dense(Msor), _dense(Nsor)
            M = c * Ms @ (Ms.T / D[:, None])
            M = 0.5 * (M + M.T)
            N = M - _dense(Q)
            noise_cov = 2.0 * M - _dense(Q)
        else:
            M = N = noise_cov = None
        solve = lambda r: bwd((fwd(r).T * D).T) / c
        sweeps = (Msor, Nsor, fwd, bwd, half)
        noise = None
    elif name == "hogwild":
        M = Dm
        N = -(L + L.T)
        noise = _diag_noise(D)
        meta["inner_sampler"] = "diagonal"
        solve = lambda r: (r.T / D).T
        noise_cov = Dm
    elif name == "clone":
        m = D + 2.0 / omega
        M = _diag(m, Q)
        N = M - Q
        noise = _diag_noise(2.0 * m)
        meta["inner_sampler"] = "diagonal"
        solve = lambda r: (r.T / m).T
        noise_cov = 2.0 * M
    elif name == "approx-richardson":
        M = I / omega
        N = M - Q
        noise = _diag_noise(np.full(d, 1.0 / omega))
        meta["inner_sampler"] = "diagonal"
        solve = lambda r: r * omega
        noise_cov = M
    elif name == "approx-jacobi":
        m = D / omega
        M = _diag(m, Q)
        N = M - Q
        noise = _diag_noise(m)
        meta["inner_sampler"] = "diagonal"
        solve = lambda r: (r.T / m).T
        noise_cov = M
    else:  # pragma: no cover - guarded by canonical_scheme_name
        raise ValueError(name)

    Nop = N
    scheme = SplittingScheme(
        name=name, omega=omega, exact=name in EXACT_SCHEMES, dim=d, model=model, Q=Q, M=M, N=N,
        noise_cov=noise_cov, solve_M=solve, apply_N=(lambda x: Nop @ x) if N is not None else None,
        draw_noise=noise, convergent=convergent, metadata=meta, sweeps=sweeps,
    )
    if check_convergence and scheme.convergent is None and d <= 512:
        from .diagnostics import spectral_radius

        rho = spectral_radius(scheme)
        scheme.metadata["rho"] = rho
        scheme.convergent = bool(rho < 1.0)
    return scheme


def _matrix_free_richardson(model, omega, k_cheby, meta):
    d = model.dim
    cov_model = _noise_model(model, "richardson", omega)
    noise, meta["inner_sampler"] = _structured_noise(cov_model, k_cheby)
    return SplittingScheme(
        name="richardson", omega=omega, exact=True, dim=d, model=model, Q=None, M=None, N=None,
        noise_cov=None, solve_M=lambda r: r * omega, apply_N=lambda x: x / omega - model.matvec(x),
        draw_noise=noise, convergent=None, metadata=meta,
    )


def _unified(model, R, exact, meta):
    if isinstance(model, BandModel) and model.dim > SPLIT_DENSE_MAX:
        raise ValueError("unified scheme is only implemented for dense operators")
    Q = model.to_dense()
    R = _dense(R) if not isinstance(R, PrecisionModel) else R.to_dense()
    R = np.asarray(R, dtype=float)
    if not np.allclose(R, R.T, rtol=0, atol=1e-12 * max(1.0, np.abs(R).max())):
        raise ValueError("R must be symmetric")
    M = Q + R
    N = R
    lu = sla.lu_factor(M, check_finite=False)
    cov = (M.T + N) if exact else M
    cov = 0.5 * (cov + cov.T)
    try:
        C = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise core.NotPositiveDefiniteError("unified noise covariance is not SPD") from exc
    meta["inner_sampler"] = "cholesky"

    def noise(stream, k):
        return C @ standard_normal_columns(stream, Q.shape[0], k)

    return SplittingScheme(
        name="unified", omega=None, exact=bool(exact), dim=Q.shape[0], model=model, Q=Q, M=M, N=N,
        noise_cov=cov, solve_M=lambda r: sla.lu_solve(lu, r, check_finite=False), apply_N=lambda x: N @ x,
        draw_noise=noise, convergent=None, metadata=dict(meta, R=R),
    )


def ms_step(scheme: SplittingScheme, mean, theta_prev, stream, potential=None) -> np.ndarray:
    """One splitting step ``theta = M^{-1}(Q mu + z + N theta_prev)``.

    ``theta_prev`` may be ``(d,)`` or ``(d, k)`` (one chain per column).
    ``potential`` short-circuits the computation of ``Q mu``.
    """
    theta_prev = np.asarray(theta_prev, dtype=float)
    b = scheme.potential(mean) if potential is None else potential
    k = None if theta_prev.ndim == 1 else theta_prev.shape[1]
    bb = b if k is None else b[:, None]
    if scheme.sweeps is not None:
        Msor, Nsor, fwd, bwd, half = scheme.sweeps
        x = fwd(bb + half(stream, k) + Nsor @ theta_prev)
        return bwd(bb + half(stream, k) + Nsor.T @ x)
    return scheme.solve_M(bb + scheme.draw_noise(stream, k) + scheme.apply_N(theta_prev))


def make_step(scheme: SplittingScheme, mean=None):
    """Step closure ``(theta, stream) -> theta`` with the potential precomputed."""
    b = scheme.potential(mean)

    def step(theta, stream):
        return ms_step(scheme, None, theta, stream, potential=b)

    return step


def gibbs_componentwise_sweep(model, mean, theta, stream) -> np.ndarray:
    """One ascending sweep of single-site Gibbs updates.

    ``theta_i ~ N(([Q mu]_i - sum_{j != i} Q_ij theta_j) / Q_ii, 1 / Q_ii)``
    using the already updated components. All ``d`` standard normals are
    drawn before the sweep, in component order.
    """
    Q = model.to_dense() if not isinstance(model, np.ndarray) else model
    Q = np.asarray(Q, dtype=float)
    d = Q.shape[0]
    diag = np.diag(Q)
    if np.any(diag <= 0):
        raise ValueError("zero or negative diagonal entry")
    b = as_mean(mean, d).potential_for(model if isinstance(model, PrecisionModel) else DenseModel(Q))
    theta = np.array(theta, dtype=float)
    z = stream.normal(d)
    for i in range(d):
        s = Q[i] @ theta - diag[i] * theta[i]
        theta[i] = (b[i] - s) / diag[i] + z[i] / np.sqrt(diag[i])
    return theta


# -- Chebyshev accelerated SSOR ----------------------------------------------

def ssor_eigen_bounds(model: PrecisionModel, omega: float, n_iter=20):
    """Extreme eigenvalues of ``M_SSOR^{-1} Q``.

    Dense generalized eigensolve for ``d <= DENSE_THRESHOLD``, power
    iterations otherwise.
    """
    scheme = make_splitting(model, "ssor", omega, check_convergence=False)
    d = model.dim
    if scheme.M is not None and d <= core.DENSE_THRESHOLD:
        ev = sla.eigh(_dense(scheme.Q), scheme.M, eigvals_only=True)
        return float(ev[0]), float(ev[-1])
    op = lambda x: scheme.solve_M(model.matvec(x))
    x = np.ones(d) / np.sqrt(d)
    lmax = 0.0
    for _ in range(n_iter):
        y = op(x)
        lmax = float(np.linalg.norm(y))
        x = y / lmax
    # shifted power iteration on lmax I - M^{-1} Q
    x = np.cos(np.arange(d))
    x /= np.linalg.norm(x)
    mu = 0.0
    for _ in range(n_iter):
        y = lmax * x - op(x)
        mu = float(np.linalg.norm(y))
        x = y / mu
    return float(lmax - mu), lmax


class ChebyshevSSOR:
    """Second-order Chebyshev-accelerated SSOR recursion with calibrated noise.

    The state is the centred iterate ``w`` (``theta = mu + w``) and its
    predecessor. Parameters follow the optimal Chebyshev schedule for the
    spectrum ``[lambda_min, lambda_max]`` of ``M_SSOR^{-1} Q``.
    """

    def __init__(self, model, omega, lambda_min=None, lambda_max=None):
        if not (0 < omega < 2):
            raise ValueError("omega must satisfy 0 < omega < 2")
        if lambda_min is None or lambda_max is None:
            lo, hi = ssor_eigen_bounds(model, omega)
            lambda_min = lo if lambda_min is None else lambda_min
            lambda_max = hi if lambda_max is None else lambda_max
        if not lambda_min < lambda_max * (1 - 1e-12):
            raise ValueError(f"degenerate spectrum: lambda_min={lambda_min} >= lambda_max={lambda_max}")
        self.model = model
        self.omega = float(omega)
        self.lambda_min, self.lambda_max = float(lambda_min), float(lambda_max)
        Q, D, L = _model_matrices(model)
        self.Q = Q
        self.Msor = _diag(D / omega, Q) + L
        self.fwd, self.bwd = _lower_solver(self.Msor), _upper_solver(self.Msor)
        self.sd = np.sqrt((2.0 / omega - 1.0) * D)
        self.reset()

    def reset(self):
        self.delta = ((self.lambda_max - self.lambda_min) / 4.0) ** 2
        self.tau = 2.0 / (self.lambda_max + self.lambda_min)
        self.beta = 2.0 * self.tau
        self.alpha = 1.0
        self.e = 2.0 / self.alpha - 1.0
        self.c = (2.0 / self.tau - 1.0) * self.e
        self.kappa = self.tau
        self.t = 1
        self.w_prev = None

    def step(self, w, stream, z1=None, z2=None):
        """Advance the centred iterate; returns the new ``w``."""
        k = None if w.ndim == 1 else w.shape[1]
        d = w.shape[0]
        if z1 is None:
            z1 = standard_normal_columns(stream, d, k)
        Qw = self.Q @ w
        x1 = w + self.fwd(np.sqrt(self.e) * (self.sd * z1.T).T - Qw)
        if z2 is None:
            z2 = standard_normal_columns(stream, d, k)
        Qx1 = self.Q @ x1
        x2 = x1 - w + self.bwd(np.sqrt(self.c) * (self.sd * z2.T).T - Qx1)
        if self.t == 1:
            w_new = self.alpha * (w + self.tau * x2)
        else:
            w_new = self.alpha * (w - self.w_prev + self.tau * x2) + self.w_prev
        self.w_prev = w
        tau, kap = self.tau, self.kappa
        self.beta = 1.0 / (1.0 / tau - self.beta * self.delta)
        self.alpha = self.beta / tau
        self.e = 2.0 * kap * (1.0 - self.alpha) / self.beta + 1.0
        self.c = 2.0 / tau - 1.0 + (self.e - 1.0) * (1.0 / tau + 1.0 / kap - 1.0)
        self.kappa = self.beta + (1.0 - self.alpha) * kap
        self.t += 1
        return w_new

    @property
    def convergence_factor(self) -> float:
        kappa = self.lambda_max / self.lambda_min
        return (np.sqrt(kappa) - 1.0) / (np.sqrt(kappa) + 1.0)


def ssor_chebyshev_run(model, mean=None, omega=None, lambda_min=None, lambda_max=None, T=1000,
                       stream=None, theta0=None, burn_in=0, record=True, callback=None) -> "Chain":
    """Run ``T`` iterations of the Chebyshev-accelerated SSOR sampler."""
    if omega is None or (isinstance(omega, str) and omega.lower() == "auto"):
        from .diagnostics import optimal_omega

        omega = optimal_omega(model, "ssor")
    acc = ChebyshevSSOR(model, float(omega), lambda_min, lambda_max)
    mu = as_mean(mean, model.dim).mean_for(model)
    w0 = np.zeros(model.dim) if theta0 is None else np.asarray(theta0, dtype=float) - (
        mu if np.ndim(theta0) == 1 else mu[:, None])
    state = {"w": w0}

    def step(theta, s):
        state["w"] = acc.step(state["w"], s)
        w = state["w"]
        return mu + w if w.ndim == 1 else mu[:, None] + w

    theta_start = mu + w0 if w0.ndim == 1 else mu[:, None] + w0
    chain = run_chain(step, theta_start, T, burn_in, stream, record=record, callback=callback)
    chain.scheme = "cheby-ssor"
    chain.metadata.update(omega=float(omega), lambda_min=acc.lambda_min, lambda_max=acc.lambda_max,
                          convergence_factor=acc.convergence_factor)
    return chain


def unified_step(model, mean, R, exact, theta_prev, stream) -> np.ndarray:
    """One step of the preconditioned sampler with ``M = Q + R``, ``N = R``.

    ``exact=True`` draws the noise with covariance ``Q + 2R``; otherwise with
    ``Q + R``, and the invariant precision becomes ``Q (I + (R + Q)^{-1} R)``.
    Builds the scheme on every call; use ``make_splitting(model, 'unified',
    R=R, exact=...)`` with :func:`make_step` for long chains.
    """
    scheme = make_splitting(model, "unified", R=R, exact=exact, check_convergence=False)
    return ms_step(scheme, mean, theta_prev, stream)


# -- chains ------------------------------------------------------------------

@dataclass
class Chain:
    """Samples ``theta^(1..T)`` with burn-in and provenance.

    ``samples`` has shape ``(T, d)`` (or ``(T, d, k)`` for batched chains)
    when recorded; ``retained`` drops the first ``burn_in`` rows.
    """

    samples: np.ndarray | None
    burn_in: int
    seed: int | None
    stream_id: int | None
    scheme: str | None
    t1: float
    final: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def retained(self):
        return None if self.samples is None else self.samples[self.burn_in:]

    @property
    def T(self):
        return self.metadata.get("T")


class NonConvergentSchemeError(RuntimeError):
    """The splitting has spectral radius >= 1 and ``force`` was not set."""


def run_chain(step, theta0, T, burn_in=0, stream=None, scheme=None, force=False, record=True,
              callback=None) -> Chain:
    """Iterate ``theta <- step(theta, stream)`` ``T`` times.

    Parameters
    ----------
    step : callable ``(theta, stream) -> theta``
    theta0 : ndarray, shape (d,) or (d, k)
    T, burn_in : int
        ``T > burn_in >= 0``; statistics use samples ``burn_in+1..T``.
    scheme : SplittingScheme, optional
        When given, a non-convergent scheme is refused unless ``force``.
    record : bool
        Keep all samples in memory.
    callback : callable ``(t, theta)``, optional
        Called after every step with the 1-based iteration index.

    Returns
    -------
    Chain
        ``t1`` is the median wall-clock time of a post-burn-in step.
    """
    T, burn_in = int(T), int(burn_in)
    if not (T > burn_in >= 0):
        raise ValueError("need T > burn_in >= 0")
    if scheme is not None and scheme.convergent is False and not force:
        raise NonConvergentSchemeError(
            f"scheme {scheme.name} (omega={scheme.omega}) has rho(M^-1 N) >= 1; pass force=True to run anyway")
    theta = np.array(theta0, dtype=float)
    samples = np.empty((T,) + theta.shape) if record else None
    times = np.empty(T - burn_in)
    for t in range(T):
        t0 = time.perf_counter()
        theta = step(theta, stream)
        dt = time.perf_counter() - t0
        if t >= burn_in:
            times[t - burn_in] = dt
        if record:
            samples[t] = theta
        if callback is not None:
            callback(t + 1, theta)
    t1 = float(np.median(times))
    if t1 <= 0:
        t1 = float(np.finfo(float).tiny)
    meta = {"T": T}
    if scheme is not None:
        meta.update(scheme.metadata)
    return Chain(
        samples=samples, burn_in=burn_in, seed=getattr(stream, "seed", None),
        stream_id=getattr(stream, "stream_id", None), scheme=None if scheme is None else scheme.name,
        t1=t1, final=theta, metadata=meta,
    )
