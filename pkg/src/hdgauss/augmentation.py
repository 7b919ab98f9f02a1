"""Data-augmentation Gibbs samplers for a precision split as ``Q = Q1 + Q2``.

Auxiliary variables are chosen so that every conditional has a diagonal,
circulant or otherwise cheaply sampled precision.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import core
from .core import (
    BandModel,
    CirculantModel,
    CompositeModel,
    DenseModel,
    DiagonalModel,
    FactorTerm,
    OperatorModel,
    PrecisionModel,
    Side,
    affine_combination,
    as_mean,
)
from .direct import sample_canonical, sample_exact
from .krylov import DEFAULT_K_CHEBY, chebyshev_apply_model
from .rng import standard_normal_columns

DA_SCHEMES = ("eda", "geda", "edaj", "sgs", "adah", "adar", "adaj")
_EQUIVALENT_MS = {
    "eda": "richardson", "geda": "richardson", "edaj": "jacobi",
    "adah": "hogwild", "adar": "approx-richardson", "adaj": "approx-jacobi", "sgs": None,
}


def operator_norm(model: PrecisionModel, n_iter=200, tol=1e-10, seed=0) -> float:
    """Largest eigenvalue of an SPD operator by power iteration."""
    x = np.random.default_rng(seed).standard_normal(model.dim)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(n_iter):
        y = model.matvec(x)
        new = float(np.linalg.norm(y))
        if new == 0.0:
            return 0.0
        x = y / new
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return lam


def _add_diagonal(model: PrecisionModel, diag, scale=1.0) -> PrecisionModel:
    """Model of ``diag(diag) + scale * A`` keeping structure where possible."""
    diag = np.asarray(diag, dtype=float)
    if np.all(diag == diag[0]):
        return affine_combination(model, float(diag[0]), scale)
    if isinstance(model, DiagonalModel):
        return DiagonalModel(diag + scale * model.q)
    if isinstance(model, BandModel):
        ab = scale * np.asarray(model.ab)
        ab[0] += diag
        return BandModel(ab)
    if isinstance(model, DenseModel):
        A = scale * model.matrix
        A[np.diag_indices_from(A)] += diag
        return DenseModel(A)
    if model.dim <= core.DENSE_THRESHOLD:
        A = scale * model.to_dense()
        A[np.diag_indices_from(A)] += diag
        return DenseModel(0.5 * (A + A.T))

    def mv(v):
        return (diag * v.T).T + scale * model.matvec(v)

    return OperatorModel(mv, model.dim, Side.PRECISION)


def _draw_centered(precision: PrecisionModel, stream, k, k_cheby=DEFAULT_K_CHEBY):
    """``N(0, P^{-1})`` columns for a precision-side model ``P``."""
    z = standard_normal_columns(stream, precision.dim, k)
    try:
        w = sample_exact(precision, None, None, z=z)
        return w.T if w.ndim == 2 else w
    except TypeError:
        return chebyshev_apply_model(precision, z, k_cheby)


def _verify_spd(model: PrecisionModel, what: str):
    if model.spd_verified:
        return
    if model.dim <= core.SPD_PROBE_THRESHOLD:
        try:
            np.linalg.cholesky(model.to_dense())
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"{what} is not SPD; omega is out of range") from exc


@dataclass
class DAModel:
    """Augmented model: the two precision terms, coupling ``omega`` and ``R``.

    Attributes
    ----------
    q1, q2 : PrecisionModel
        Precision terms with ``Q = q1 + q2`` (``q2`` may be ``None`` for the
        ADA schemes, which only use ``Q``).
    Q : PrecisionModel
        The full precision.
    R : PrecisionModel or None
        ``1/omega I - Q1`` (EDA, GEDA) or ``D1/omega - Q1`` (EDAJ); for ADA
        schemes ``M - Q`` as a dense array (small problems) or ``None``.
    theta_precision : PrecisionModel
        Precision of the theta-conditional.
    M_diag : ndarray or None
        Diagonal of ``M`` for the ADA schemes.
    equivalent_ms : str or None
        Name of the splitting whose theta-recursion this scheme reproduces.
    """

    scheme: str
    omega: float | None
    q1: PrecisionModel
    q2: PrecisionModel | None
    Q: PrecisionModel
    R: object
    theta_precision: PrecisionModel | None
    factor1: FactorTerm | None = None
    aux_precision: PrecisionModel | None = None
    M_diag: np.ndarray | None = None
    equivalent_ms: str | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.Q.dim

    def joint_precision(self) -> np.ndarray:
        """Dense precision of the augmented vector (small problems only).

        Ordering is ``(theta, u1)`` for EDA/EDAJ, ``(theta, u1, u2)`` for
        GEDA and ``(theta, u)`` for SGS.
        """
        d = self.dim
        if self.scheme in ("eda", "edaj"):
            Q, R = self.Q.to_dense(), self.R.to_dense()
            return np.block([[Q + R, -R], [-R, R]])
        if self.scheme == "geda":
            Q, R = self.Q.to_dense(), self.R.to_dense()
            G = _dense_operator(self.factor1.G, d)
            W = self.factor1.weight_dense()
            k = G.shape[0]
            return np.block([
                [Q + R, -R, np.zeros((d, k))],
                [-R, R + G.T @ W @ G, -G.T @ W],
                [np.zeros((k, d)), -W @ G, W],
            ])
        if self.scheme == "sgs":
            I = np.eye(d) / self.omega
            return np.block([[self.q2.to_dense() + I, -I], [-I, self.q1.to_dense() + I]])
        raise ValueError(f"scheme {self.scheme} has no joint Gaussian augmentation")

    def marginal_precision(self) -> np.ndarray:
        """Closed-form invariant precision of the theta-marginal."""
        Q = self.Q.to_dense()
        if self.scheme in ("eda", "geda", "edaj"):
            return Q
        if self.scheme == "sgs":
            Q1 = self.q1.to_dense()
            inner = np.linalg.inv(np.linalg.inv(Q1) + self.omega * np.eye(self.dim))
            return self.q2.to_dense() + 0.5 * (inner + inner.T)
        M = np.diag(self.M_diag)
        return Q @ (2.0 * np.eye(self.dim) - np.linalg.solve(M, Q))


def _dense_operator(G, d):
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    if isinstance(G, spla.LinearOperator):
        return G @ np.eye(d)
    if sp.issparse(G):
        return G.toarray()
    return np.asarray(G, dtype=float)


def make_da(q1, q2=None, scheme="eda", omega=None, factor1=None, probe_spd=True) -> DAModel:
    """Validate and assemble a data-augmentation model.

    Parameters
    ----------
    q1, q2 : PrecisionModel
        Precision terms. For GEDA ``q1`` may be omitted when ``factor1`` is
        given (``Q1 = G^T W G``). For ADA schemes ``q1`` is the whole
        precision (``q2`` is added when given).
    scheme : {'eda', 'geda', 'edaj', 'sgs', 'adah', 'adar', 'adaj'}
    omega : float or 'auto', optional
        Defaults: ``0.9 / ||Q1||`` for EDA/GEDA, ``1`` for EDAJ and ADAJ,
        ``0.9 / ||Q||`` for ADAR, ``0.1 d / trace(Q)`` for SGS.
    factor1 : FactorTerm, optional
        ``(G1, Lambda1)`` with diagonal ``Lambda1``; required for GEDA.
    probe_spd : bool
        Probe ``R`` with a dense Cholesky when ``d`` is below the probe
        threshold. Disable for matrix-free problems whose ``omega`` range
        check already guarantees positive definiteness.
    """
    scheme = str(scheme).lower()
    if scheme not in DA_SCHEMES:
        raise ValueError(f"unknown DA scheme {scheme!r}; choose from {', '.join(DA_SCHEMES)}")
    if isinstance(omega, str):
        if omega.lower() != "auto":
            raise ValueError(f"omega must be a number or 'auto', got {omega!r}")
        omega = None
    if scheme == "geda":
        if factor1 is None:
            raise ValueError("GEDA needs factor1 = FactorTerm(G1, Lambda1)")
        w = factor1.weight
        if isinstance(w, PrecisionModel) and not isinstance(w, DiagonalModel):
            raise ValueError("GEDA requires a diagonal Lambda1")
        if q1 is None:
            q1 = CompositeModel([factor1])
    if q1 is None:
        raise ValueError("q1 is required")
    meta = {}

    if scheme in ("adah", "adar", "adaj"):
        Q = q1 if q2 is None else CompositeModel([q1, q2])
        D = Q.diagonal()
        if scheme == "adah":
            m = D.copy()
        elif scheme == "adar":
            if omega is None:
                omega = 0.9 / operator_norm(Q)
            m = np.full(Q.dim, 1.0 / omega)
        else:
            omega = 1.0 if omega is None else omega
            m = D / omega
        if omega is not None and omega <= 0:
            raise ValueError("omega must be positive")
        if np.any(m <= 0):
            raise ValueError("M has a nonpositive diagonal entry")
        R = None
        if Q.dim <= core.DENSE_THRESHOLD:
            R = np.diag(m) - Q.to_dense()
        return DAModel(scheme, None if omega is None else float(omega), q1, q2, Q, R,
                       DiagonalModel(m), M_diag=m, equivalent_ms=_EQUIVALENT_MS[scheme], metadata=meta)

    if q2 is None:
        raise ValueError(f"scheme {scheme} needs both q1 and q2")
    Q = CompositeModel([q1, q2])
    d = Q.dim

    if scheme in ("eda", "geda"):
        norm = operator_norm(q1)
        meta["q1_norm"] = norm
        if omega is None:
            omega = 0.9 / norm
        omega = float(omega)
        if not (0 < omega * norm < 1):
            raise ValueError(f"omega={omega} outside (0, 1/||Q1||) with ||Q1|| ~ {norm:.6g}")
        R = affine_combination(q1, 1.0 / omega, -1.0)
        if probe_spd:
            _verify_spd(R, "R = I/omega - Q1")
        theta_prec = affine_combination(q2, 1.0 / omega, 1.0)
        return DAModel(scheme, omega, q1, q2, Q, R, theta_prec, factor1=factor1,
                       equivalent_ms=_EQUIVALENT_MS[scheme], metadata=meta)

    if scheme == "edaj":
        omega = 1.0 if omega is None else float(omega)
        if omega <= 0:
            raise ValueError("omega must be positive")
        D1 = q1.diagonal()
        if np.any(D1 <= 0):
            raise ValueError("Q1 has a nonpositive diagonal entry")
        try:
            R = _add_diagonal(q1, D1 / omega, -1.0)
        except core.NotPositiveDefiniteError as exc:
            raise ValueError("R = D1/omega - Q1 is not SPD; omega is out of range") from exc
        if probe_spd:
            _verify_spd(R, "R = D1/omega - Q1")
        theta_prec = _add_diagonal(q2, D1 / omega, 1.0)
        return DAModel(scheme, omega, q1, q2, Q, R, theta_prec, equivalent_ms="jacobi", metadata=meta)

    # sgs
    if omega is None:
        omega = 0.1 * d / float(np.sum(Q.diagonal()))
    omega = float(omega)
    if omega <= 0:
        raise ValueError("omega must be positive")
    aux = affine_combination(q1, 1.0 / omega, 1.0)
    theta_prec = affine_combination(q2, 1.0 / omega, 1.0)
    return DAModel(scheme, omega, q1, q2, Q, None, theta_prec, aux_precision=aux, metadata=meta)


def _col(b, k):
    return b if k is None else b[:, None]


def _potential(dam, mean):
    return as_mean(mean, dam.dim).potential_for(dam.Q)


def _ncols(theta):
    return None if theta.ndim == 1 else theta.shape[1]


def eda_step(model: DAModel, mean, theta_prev, stream, potential=None) -> np.ndarray:
    """EDA (or EDAJ) cycle: ``u1 ~ N(theta, R^{-1})`` then the theta-conditional.

    ``theta ~ N(P^{-1}(R u1 + Q mu), P^{-1})`` with ``P = I/omega + Q2``
    (``D1/omega + Q2`` for EDAJ).
    """
    if model.scheme not in ("eda", "edaj", "geda"):
        raise ValueError(f"eda_step does not apply to scheme {model.scheme}")
    theta_prev = np.asarray(theta_prev, dtype=float)
    k = _ncols(theta_prev)
    b = _potential(model, mean) if potential is None else potential
    u1 = theta_prev + _draw_centered(model.R, stream, k)
    return sample_canonical(model.theta_precision, model.R.matvec(u1) + _col(b, k), stream)


def geda_step(model: DAModel, mean, theta_prev, stream, u1_prev=None, potential=None):
    """GEDA cycle over ``(u2, u1, theta)``; returns ``(theta, u1)``.

    ``u2 ~ N(G u1, Lambda^{-1})``,
    ``u1 ~ N(theta - omega (Q1 theta - G^T Lambda u2), omega I)``,
    ``theta ~ N(P^{-1}(R u1 + Q mu), P^{-1})`` with ``P = I/omega + Q2``.
    ``u1_prev`` defaults to ``theta_prev``.
    """
    if model.scheme != "geda" or model.factor1 is None:
        raise ValueError("geda_step needs a GEDA model with factor1")
    theta_prev = np.asarray(theta_prev, dtype=float)
    k = _ncols(theta_prev)
    b = _potential(model, mean) if potential is None else potential
    u1 = theta_prev.copy() if u1_prev is None else np.asarray(u1_prev, dtype=float)
    fac = model.factor1
    G = fac.operator
    lam = fac.weight.q if isinstance(fac.weight, DiagonalModel) else np.asarray(fac.weight, dtype=float)
    n_obs = G.shape[0]
    Gu = G @ u1
    u2 = Gu + (standard_normal_columns(stream, n_obs, k).T / np.sqrt(lam)).T
    om = model.omega
    drift = model.q1.matvec(theta_prev) - G.T @ (lam * u2.T).T
    u1 = theta_prev - om * drift + np.sqrt(om) * standard_normal_columns(stream, model.dim, k)
    theta = sample_canonical(model.theta_precision, model.R.matvec(u1) + _col(b, k), stream)
    return theta, u1


def sgs_step(model: DAModel, mean, theta_prev, stream, mu=None) -> np.ndarray:
    """Split Gibbs cycle: ``u | theta`` then ``theta | u``.

    ``u ~ N((I/omega + Q1)^{-1}(theta/omega + Q1 mu), (I/omega + Q1)^{-1})``,
    ``theta ~ N((I/omega + Q2)^{-1}(u/omega + Q2 mu), (I/omega + Q2)^{-1})``.
    """
    if model.scheme != "sgs":
        raise ValueError("sgs_step needs an SGS model")
    theta_prev = np.asarray(theta_prev, dtype=float)
    k = _ncols(theta_prev)
    if mu is None:
        mu = as_mean(mean, model.dim).mean_for(model.Q)
    om = model.omega
    u = sample_canonical(model.aux_precision, theta_prev / om + _col(model.q1.matvec(mu), k), stream)
    return sample_canonical(model.theta_precision, u / om + _col(model.q2.matvec(mu), k), stream)


def ada_step(model: DAModel, mean, theta_prev, stream, potential=None) -> np.ndarray:
    """Approximate DA cycle with diagonal ``M`` and ``R = M - Q``.

    ``v ~ N(R theta, M/2)`` then ``theta ~ N(M^{-1}(v + Q mu), M^{-1}/2)``.
    """
    if model.M_diag is None:
        raise ValueError("ada_step needs an ADAH/ADAR/ADAJ model")
    theta_prev = np.asarray(theta_prev, dtype=float)
    k = _ncols(theta_prev)
    b = _potential(model, mean) if potential is None else potential
    m = model.M_diag
    Rtheta = (m * theta_prev.T).T - model.Q.matvec(theta_prev)
    v = Rtheta + (np.sqrt(0.5 * m) * standard_normal_columns(stream, model.dim, k).T).T
    z2 = standard_normal_columns(stream, model.dim, k)
    return ((v + _col(b, k)).T / m + np.sqrt(0.5 / m) * z2.T).T


def da_step_closure(model: DAModel, mean=None):
    """Step ``(theta, stream) -> theta`` for :func:`splitting.run_chain`.

    GEDA keeps its auxiliary ``u1`` in the closure.
    """
    if model.scheme == "sgs":
        mu = as_mean(mean, model.dim).mean_for(model.Q)
        return lambda theta, s: sgs_step(model, None, theta, s, mu=mu)
    b = _potential(model, mean)
    if model.scheme == "geda":
        state = {"u1": None}

        def step(theta, s):
            theta, state["u1"] = geda_step(model, None, theta, s, state["u1"], potential=b)
            return theta

        return step
    if model.scheme in ("eda", "edaj"):
        return lambda theta, s: eda_step(model, None, theta, s, potential=b)
    return lambda theta, s: ada_step(model, None, theta, s, potential=b)


def equivalent_splitting(model: DAModel):
    """Dense ``(M, N, noise_cov)`` of the matrix-splitting recursion on theta.

    EDA: ``M = I/omega + Q2``, ``N = I/omega - Q1``, ``cov = 2I/omega + Q2 - Q1``;
    EDAJ replaces ``I`` by ``D1``; ADA schemes: diagonal ``M``, ``N = M - Q``,
    ``cov = M``.
    """
    Q = model.Q.to_dense()
    if model.scheme in ("eda", "edaj"):
        M = model.theta_precision.to_dense()
        N = model.R.to_dense()
        return M, N, M + N
    if model.M_diag is not None:
        M = np.diag(model.M_diag)
        return M, M - Q, M
    raise ValueError(f"scheme {model.scheme} has no single-variable splitting form")
