"""Sampler dispatch and benchmark orchestration.

Every sampler is wrapped as a :class:`Kernel` whose ``step(theta, stream)``
maps a state of shape ``(d,)`` or ``(d, k)`` (one chain per column) to the
next one. Direct and Krylov samplers ignore the incoming state.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import time
from pathlib import Path

import numpy as np

from . import core
from .augmentation import DA_SCHEMES, DAModel, da_step_closure, make_da
from .core import CompositeModel, DenseModel, PrecisionModel, as_mean
from .diagnostics import (
    RunningMoments,
    autocorrelation,
    chebyshev_ssor_factor,
    essr,
    extreme_eigenvalues,
    optimal_omega,
    relative_cov_error,
    slowest_component,
    spectral_radius,
)
from .direct import sample_exact, sample_sqrt_svd
from .krylov import DEFAULT_K_CHEBY, sample_cg, sample_chebyshev, sample_lanczos, sample_po
from .rng import RngStream, StreamBundle, standard_normal_columns
from .scenarios import (
    build_deblur,
    build_lattice,
    build_sqexp,
    build_sqexp_inverse,
    deblur_precision,
    diagonal_toy,
    ScenarioSpec,
)
from .splitting import (
    APPROX_SCHEMES,
    EXACT_SCHEMES,
    ChebyshevSSOR,
    canonical_scheme_name,
    gibbs_componentwise_sweep,
    make_splitting,
    make_step,
)

DIRECT_SAMPLERS = ("cholesky", "sqrt-svd")
KRYLOV_SAMPLERS = ("chebyshev", "lanczos", "cg", "po")
MCMC_SAMPLERS = EXACT_SCHEMES + APPROX_SCHEMES + ("cheby-ssor", "gibbs")
SAMPLERS = DIRECT_SAMPLERS + KRYLOV_SAMPLERS + MCMC_SAMPLERS + DA_SCHEMES

SCENARIO_SAMPLERS = {
    "scenario1": ("cholesky", "sqrt-svd", "chebyshev", "lanczos", "cg"),
    "scenario2": ("cholesky", "chebyshev") + EXACT_SCHEMES + ("cheby-ssor", "gibbs") + APPROX_SCHEMES,
    # only samplers that never form a dense d x d matrix
    "scenario3": ("geda", "eda", "sgs", "cg", "po", "chebyshev"),
}

# crossing times of the 5e-2 relative covariance error on the d=100 lattice
REFERENCE_T = {
    "cholesky": (6.3e4, 1.3e4, 2.9e3),
    "chebyshev": (6.4e4, 1.3e4, 2.5e3),
    "richardson": (6.7e4, 3.8e4, 4e4),
    "jacobi": (6.8e4, 3.9e4, 4.6e4),
    "gauss-seidel": (6.5e4, 2.5e4, 2.5e4),
    "sor": (6.4e4, 1.6e4, 5.4e3),
    "ssor": (6.4e4, 1.6e4, 9.3e3),
    "cheby-ssor": (6.3e4, 1.3e4, 4.5e3),
}
REFERENCE_PHI = (0.1, 1.0, 10.0)

COLUMNS = ("row", "scenario", "scheme", "d", "phi", "omega", "chain", "t", "T", "T_bi", "rel_cov_error",
           "ess", "essr", "t1_seconds", "rho_MinvN", "k_used")
TIMING_COLUMNS = ("essr", "t1_seconds")
PILOT_SAMPLES = 1000


class PairingError(ValueError):
    """Sampler not available for the requested scenario or model."""


def reference_T(sampler: str, phi: float) -> float | None:
    """Reference crossing time for ``sampler`` at ``phi``, if any."""
    vals = REFERENCE_T.get(sampler)
    if vals is None:
        return None
    for p, v in zip(REFERENCE_PHI, vals):
        if math.isclose(p, phi):
            return v
    return None


# -- kernels -----------------------------------------------------------------

@dataclasses.dataclass
class Kernel:
    """A sampler as a state-transition ``step(theta, stream) -> theta``."""

    name: str
    step: object
    iid: bool
    dim: int
    omega: float | None = None
    scheme: object = None
    metadata: dict = dataclasses.field(default_factory=dict)

    def rho(self) -> float | None:
        """Convergence factor of the underlying recursion, when defined."""
        if "rho" in self.metadata:
            return self.metadata["rho"]
        if self.scheme is not None:
            self.metadata["rho"] = spectral_radius(self.scheme)
            return self.metadata["rho"]
        return None


def _ncols(theta):
    return None if np.ndim(theta) == 1 else theta.shape[1]


def _column_streams(stream, k):
    if k is None:
        return [stream]
    if isinstance(stream, StreamBundle):
        return stream.streams
    return [stream] * k


def _per_column(fn, theta, stream):
    k = _ncols(theta)
    if k is None:
        return fn(stream)
    streams = _column_streams(stream, k)
    return np.stack([fn(streams[j]) for j in range(k)], axis=1)


def _direct(fn, model, mean):
    d = model.dim
    mu = as_mean(mean, d)

    def step(theta, stream):
        z = standard_normal_columns(stream, d, _ncols(theta))
        w = fn(model, mu, z=z)
        return w.T if w.ndim == 2 else w

    return step


def make_kernel(model, name: str, mean=None, omega=None, k_cheby=DEFAULT_K_CHEBY, k_kryl=None,
                cg_eps=1e-8, reorth=None, check_convergence=True, po_tol=1e-10, cheby_interval="zero") -> Kernel:
    """Wrap sampler ``name`` for ``model`` as a :class:`Kernel`.

    ``model`` is a :class:`PrecisionModel`, or a :class:`DAModel` for the
    data-augmentation schemes. ``omega`` is a number, ``'auto'`` or ``None``.
    ``cheby_interval`` selects the Chebyshev approximation interval:
    ``'zero'`` is ``(0, max row sum)``, ``'disc'`` raises the lower end to the
    Gershgorin disc bound, ``'spectrum'`` uses the extreme eigenvalues, or
    pass an explicit ``(lo, hi)`` pair.
    """
    name = str(name).lower()
    if name in DA_SCHEMES:
        if not isinstance(model, DAModel):
            raise PairingError(f"sampler {name} needs a split model Q = Q1 + Q2")
        if model.scheme != name:
            model = make_da(model.q1, model.q2, name, omega=omega, factor1=model.factor1)
        return Kernel(name, da_step_closure(model, mean), False, model.dim, model.omega,
                      metadata={"da_model": model})
    if isinstance(model, DAModel):
        model = model.Q
    d = model.dim
    if name in ("cholesky", "sqrt-svd", "chebyshev", "lanczos", "cg") and isinstance(mean, core.MeanSpec) \
            and mean.is_potential:
        # solve for the mean once rather than on every draw
        mean = core.MeanSpec.from_mean(mean.mean_for(model))

    if name == "cholesky":
        return Kernel(name, _direct(sample_exact, model, mean), True, d)
    if name == "sqrt-svd":
        dense = model if isinstance(model, DenseModel) else DenseModel(model.to_dense(), model.side)
        return Kernel(name, _direct(sample_sqrt_svd, dense, mean), True, d)
    if name == "chebyshev":
        K = int(k_cheby)
        if cheby_interval == "zero":
            interval = core.gershgorin_bounds(model)
        elif cheby_interval == "disc":
            interval = core.gershgorin_disc_bounds(model)
        elif cheby_interval == "spectrum":
            interval = extreme_eigenvalues(model)
        else:
            interval = tuple(float(x) for x in cheby_interval)

        def cheb(m, mu, z):
            return sample_chebyshev(m, mu, K=K, z=z, interval=interval)

        return Kernel(name, _direct(cheb, model, mean), True, d, metadata={"K": K, "interval": interval})
    if name == "lanczos":
        mu = as_mean(mean, d)
        kk = None if k_kryl is None else int(k_kryl)
        used = []

        def lanczos_step(theta, stream):
            def one(s):
                th, k_used = sample_lanczos(model, mu, K=kk, stream=s, reorthogonalize=reorth)
                used.append(k_used)
                return th

            return _per_column(one, theta, stream)

        return Kernel(name, lanczos_step, True, d, metadata={"k_used": used})
    if name == "cg":
        mu = as_mean(mean, d)
        kk = None if k_kryl is None else int(k_kryl)
        used = []

        def cg_step(theta, stream):
            def one(s):
                res = sample_cg(model, mu, epsilon=cg_eps, max_iter=kk, stream=s)
                used.append(res.k_used)
                return res.theta

            return _per_column(one, theta, stream)

        return Kernel(name, cg_step, True, d, metadata={"k_used": used})
    if name == "po":
        if not isinstance(model, CompositeModel):
            raise PairingError("PO needs a composite model of factor terms")
        terms = model.terms

        def po_step(theta, stream):
            return _per_column(lambda s: sample_po(terms, mean, stream=s, tol=po_tol), theta, stream)

        return Kernel(name, po_step, True, d)
    if name == "gibbs":
        Q = model.to_dense()
        dense = DenseModel(Q)
        b = as_mean(mean, d).potential_for(model)
        mu = core.MeanSpec.from_potential(b)

        def gibbs(theta, stream):
            k = _ncols(theta)
            if k is None:
                return gibbs_componentwise_sweep(dense, mu, theta, stream)
            streams = _column_streams(stream, k)
            return np.stack([gibbs_componentwise_sweep(dense, mu, theta[:, j], streams[j]) for j in range(k)],
                            axis=1)

        return Kernel(name, gibbs, False, d, 1.0)
    if name == "cheby-ssor":
        w = optimal_omega(model, "ssor") if omega is None or omega == "auto" else float(omega)
        acc = ChebyshevSSOR(model, w)
        mu_vec = as_mean(mean, d).mean_for(model)

        def cheb_ssor(theta, stream):
            m = mu_vec if np.ndim(theta) == 1 else mu_vec[:, None]
            return m + acc.step(theta - m, stream)

        return Kernel(name, cheb_ssor, False, d, w, metadata={"rho": acc.convergence_factor, "accelerator": acc})
    try:
        scheme_name = canonical_scheme_name(name)
    except ValueError as exc:
        raise PairingError(f"unknown sampler {name!r}; choose from {', '.join(SAMPLERS)}") from exc
    scheme = make_splitting(model, scheme_name, omega=omega, k_cheby=k_cheby, check_convergence=check_convergence)
    return Kernel(scheme_name, make_step(scheme, mean), False, d, scheme.omega, scheme=scheme)


# -- reports -----------------------------------------------------------------

@dataclasses.dataclass
class Report:
    """Rows of a benchmark run plus its summary."""

    rows: list
    summary: dict
    curves: dict = dataclasses.field(default_factory=dict)

    def to_csv(self, path=None, include_timing=True) -> str:
        cols = [c for c in COLUMNS if include_timing or c not in TIMING_COLUMNS]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({c: _fmt(r.get(c)) for c in cols})
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def write_curves(self, prefix):
        """One two-column whitespace file per curve (``t value``), gnuplot-ready."""
        paths = []
        for key, pts in self.curves.items():
            p = Path(f"{prefix}_{key}.dat")
            p.write_text("".join(f"{t} {_fmt(v)}\n" for t, v in pts), encoding="utf-8")
            paths.append(p)
        return paths


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        if not np.isfinite(v):
            return "nan" if np.isnan(v) else str(float(v))
        return repr(float(v))
    return str(v)


def _checkpoint_cadence(T):
    return max(1, int(T) // 200)


# -- scenario 1: squared-exponential and toy diagonal models -----------------

def scenario1_model(variant="sigma", d=100):
    if variant == "sigma":
        return build_sqexp(d)
    if variant == "inverse":
        return build_sqexp_inverse(d)
    if variant == "toy":
        return diagonal_toy(d)
    raise ValueError(f"unknown scenario-1 variant {variant!r}")


def run_scenario1(sampler, d=100, T=100_000, seed=0, variant="sigma", k_cheby=DEFAULT_K_CHEBY, k_kryl=None,
                  cg_eps=1e-8, reorth=None) -> Report:
    """i.i.d. samplers on a dense model; covariance error checkpoints every ``T/200`` draws."""
    if sampler not in SCENARIO_SAMPLERS["scenario1"]:
        raise PairingError(f"sampler {sampler!r} is not part of scenario1")
    model = scenario1_model(variant, d)
    d = model.dim
    truth = core.covariance_matrix(model)
    kernel = make_kernel(model, sampler, k_cheby=k_cheby, k_kryl=k_kryl, cg_eps=cg_eps, reorth=reorth)
    stream = RngStream(seed, 0)
    T = int(T)
    cadence = _checkpoint_cadence(T)
    moments = RunningMoments(d, 1)
    rows, curve, times = [], [], []
    t = 0
    while t < T:
        n = min(cadence, T - t)
        t0 = time.perf_counter()
        block = kernel.step(np.zeros((d, n)), stream)
        times.append((time.perf_counter() - t0) / n)
        moments.update(block.T)
        t += n
        err = float(relative_cov_error(moments.covariance()[0], truth))
        curve.append((t, err))
        rows.append(dict(row="checkpoint", scenario="scenario1", scheme=sampler, d=d, t=t, rel_cov_error=err))
    t1 = float(np.median(times))
    used = kernel.metadata.get("k_used")
    summary = dict(row="summary", scenario="scenario1", scheme=sampler, d=d, T=T, T_bi=0,
                   rel_cov_error=curve[-1][1], t1_seconds=t1, essr=1.0 / t1 if t1 > 0 else None,
                   k_used=None if not used else float(np.mean(used)), variant=variant,
                   variances=np.diag(moments.covariance()[0]), truth_variances=np.diag(truth))
    rows.append(summary)
    return Report(rows, summary, {f"{sampler}_relerr": curve})


# -- scenario 2: lattice, first crossing of the error threshold --------------

def first_crossing(errors, times, threshold):
    """First checkpoint time with ``error <= threshold`` (``nan`` if none)."""
    for t, e in zip(times, errors):
        if e <= threshold:
            return float(t)
    return float("nan")


def run_scenario2(sampler, phi=1.0, d=100, T=None, chains=10, seed=0, omega=None, k_cheby=DEFAULT_K_CHEBY,
                  threshold=5e-2, burn_in=0, stop_early=True, force=False, cheby_interval="spectrum") -> Report:
    """Batched chains on the lattice; records the first crossing of ``threshold`` per chain.

    ``T`` caps the run; it defaults to ten times the reference crossing time
    (``1e5`` when none).
    Chains start at ``theta = 0``; with ``stop_early`` the run ends once every
    chain has crossed. The Chebyshev interval defaults to the extreme
    eigenvalues of ``Q``, cheap at this size.
    """
    if sampler not in SCENARIO_SAMPLERS["scenario2"]:
        raise PairingError(f"sampler {sampler!r} is not part of scenario2")
    model = build_lattice(d, phi, 1.0)
    truth = core.covariance_matrix(model)
    truth_norm = np.linalg.norm(truth, 2)
    kernel = make_kernel(model, sampler, omega=omega, k_cheby=k_cheby, cheby_interval=cheby_interval)
    if kernel.scheme is not None and kernel.scheme.convergent is False and not force:
        raise PairingError(f"{sampler} with omega={kernel.omega} does not converge; use --force")
    ref = reference_T(sampler, phi)
    if T is None:
        T = int(10 * ref) if ref is not None else 100_000
    T, burn_in = int(T), int(burn_in)
    k = int(chains)
    stream = StreamBundle.for_chains(seed, k)
    cadence = _checkpoint_cadence(T)
    moments = RunningMoments(d, k)
    theta = np.zeros((d, k))
    crossing = np.full(k, np.nan)
    rows, times = [], []
    curves = {f"{sampler}_chain{j}": [] for j in range(k)}
    t = 0
    while t < T:
        n = min(cadence, T - t)
        block = np.empty((n, k, d))
        for i in range(n):
            t0 = time.perf_counter()
            theta = kernel.step(theta, stream)
            times.append(time.perf_counter() - t0)
            block[i] = theta.T
        t += n
        keep = max(0, min(n, t - burn_in))
        if keep == 0:
            continue
        moments.update(block[n - keep:])
        if moments.n < 2:
            continue
        errs = relative_cov_error(moments.covariance(), truth, truth_norm)
        for j in range(k):
            curves[f"{sampler}_chain{j}"].append((t, float(errs[j])))
            rows.append(dict(row="checkpoint", scenario="scenario2", scheme=sampler, d=d, phi=phi,
                             omega=kernel.omega, chain=j, t=t, rel_cov_error=float(errs[j])))
            if np.isnan(crossing[j]) and errs[j] <= threshold:
                crossing[j] = t
        if stop_early and not np.isnan(crossing).any():
            break
    t1 = float(np.median(times))
    rho = kernel.rho()
    for j in range(k):
        rows.append(dict(row="crossing", scenario="scenario2", scheme=sampler, d=d, phi=phi, omega=kernel.omega,
                         chain=j, T=crossing[j], T_bi=burn_in, rho_MinvN=rho))
    finite = crossing[np.isfinite(crossing)]
    summary = dict(row="summary", scenario="scenario2", scheme=sampler, d=d, phi=phi, omega=kernel.omega,
                   T=float(np.mean(finite)) if finite.size == k else float("nan"), T_bi=burn_in,
                   t1_seconds=t1, rho_MinvN=rho, crossings=crossing, reference_T=ref, steps_run=t)
    rows.append(summary)
    return Report(rows, summary, curves)


# -- scenario 3: deblurring ------------------------------------------------

def run_scenario3(sampler, d=256, T=2000, burn_in=200, seed=0, omega=None, cg_eps=1e-8, k_kryl=None,
                  k_cheby=DEFAULT_K_CHEBY, component=None, record=True) -> Report:
    """Deblurring posterior: ESS and ESSR on the largest-variance component.

    GEDA uses only FFT and diagonal operations; the Krylov samplers use the
    matrix-free composite precision.
    """
    if sampler not in SCENARIO_SAMPLERS["scenario3"]:
        raise PairingError(f"sampler {sampler!r} is not available for scenario3 (dense Q required)")
    problem = build_deblur(d, ScenarioSpec("deblur", d, seed=seed), omega=omega)
    if sampler in DA_SCHEMES:
        target = problem.model
        if sampler != "geda":
            target = make_da(problem.model.q1, problem.model.q2, sampler, omega=omega, probe_spd=False)
    else:
        target = deblur_precision(problem)
    kernel = make_kernel(target, sampler, problem.mean, omega=omega, k_cheby=k_cheby, k_kryl=k_kryl,
                         cg_eps=cg_eps)
    stream = RngStream(seed, 1)
    T, burn_in = int(T), int(burn_in)
    theta = np.zeros(d)
    kept = np.empty((T - burn_in, d)) if record else None
    times = []
    for t in range(T):
        t0 = time.perf_counter()
        theta = kernel.step(theta, stream)
        if t >= burn_in:
            times.append(time.perf_counter() - t0)
            if record:
                kept[t - burn_in] = theta
    t1 = float(np.median(times))
    rows = []
    summary = dict(row="summary", scenario="scenario3", scheme=sampler, d=d, omega=kernel.omega, T=T,
                   T_bi=burn_in, t1_seconds=t1)
    curves = {}
    if record:
        # tracked component: largest variance over a pilot of the first retained samples
        comp = slowest_component(kept[:PILOT_SAMPLES]) if component is None else int(component)
        ess, rate = essr(kept[:, comp], t1)
        rho = autocorrelation(kept[:, comp], min(100, kept.shape[0] // 2))
        curves[f"{sampler}_acf"] = list(enumerate(rho.tolist()))
        summary.update(ess=ess, essr=rate, component=comp, samples=kept)
    used = kernel.metadata.get("k_used")
    if used:
        summary["k_used"] = float(np.mean(used))
    rows.append(summary)
    return Report(rows, summary, curves)


def run_scenario(name, sampler, **kw) -> Report:
    """Dispatch to ``run_scenario1/2/3``."""
    runners = {"scenario1": run_scenario1, "scenario2": run_scenario2, "scenario3": run_scenario3}
    if name not in runners:
        raise PairingError(f"unknown scenario {name!r}")
    return runners[name](sampler, **kw)


# -- decision tree -----------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class Advice:
    algorithm: str
    reference: str
    path: tuple

    def __str__(self):
        return f"{self.algorithm} ({self.reference})"


_LEAVES = {
    "geda": ("(G)EDA", "hdgauss.augmentation.geda_step / eda_step"),
    "approx-da": ("Approx. DA", "hdgauss.augmentation.sgs_step / ada_step"),
    "po": ("PO", "hdgauss.krylov.sample_po"),
    "cheby-ssor": ("Chebyshev SSOR", "hdgauss.splitting.ChebyshevSSOR"),
    "approx-ms": ("Approx. MS", "hdgauss.splitting.make_splitting (hogwild, clone)"),
    "chebyshev": ("Chebyshev", "hdgauss.krylov.sample_chebyshev"),
    "cg": ("CG", "hdgauss.krylov.sample_cg"),
}


def _yes(v, what):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("yes", "y", "true", "1"):
        return True
    if s in ("no", "n", "false", "0"):
        return False
    raise ValueError(f"{what} must be yes or no, got {v!r}")


def _accuracy(v):
    s = str(v).strip().lower()
    if s not in ("arbitrary", "limited"):
        raise ValueError(f"accuracy must be 'arbitrary' or 'limited', got {v!r}")
    return s


def advise(split, accuracy=None, tbi_small=None, clustered=None) -> Advice:
    """Recommend a sampler when a direct factorization is too expensive.

    Parameters
    ----------
    split : yes/no
        Whether ``Q = Q1 + Q2`` with individually simple terms.
    accuracy : 'arbitrary' or 'limited'
        Whether samples of arbitrary accuracy are required.
    tbi_small : yes/no
        Whether the burn-in is much shorter than ``K T``.
    clustered : yes/no
        Whether the spectrum of ``Q`` is clustered.
    """
    path = []
    if _yes(split, "split"):
        path.append("split=yes")
        acc = _accuracy(accuracy)
        path.append(f"accuracy={acc}")
        if acc == "arbitrary":
            leaf = "geda"
        else:
            small = _yes(tbi_small, "tbi_small")
            path.append(f"tbi_small={'yes' if small else 'no'}")
            leaf = "approx-da" if small else "po"
    else:
        path.append("split=no")
        small = _yes(tbi_small, "tbi_small")
        path.append(f"tbi_small={'yes' if small else 'no'}")
        if small:
            acc = _accuracy(accuracy)
            path.append(f"accuracy={acc}")
            leaf = "cheby-ssor" if acc == "arbitrary" else "approx-ms"
        else:
            cl = _yes(clustered, "clustered")
            path.append(f"clustered={'yes' if cl else 'no'}")
            leaf = "chebyshev" if cl else "cg"
    name, ref = _LEAVES[leaf]
    return Advice(name, ref, tuple(path))


# -- deterministic splitting diagnostics -------------------------------------

def lattice_table(d=100, phis=REFERENCE_PHI):
    """Optimal ``omega`` and ``rho(M^-1 N)`` of every exact scheme on the lattice."""
    out = []
    for phi in phis:
        model = build_lattice(d, phi, 1.0)
        for name in EXACT_SCHEMES:
            sc = make_splitting(model, name, check_convergence=False)
            out.append(dict(scheme=name, phi=phi, omega=sc.omega, rho=spectral_radius(sc)))
        w = optimal_omega(model, "ssor")
        out.append(dict(scheme="cheby-ssor", phi=phi, omega=w, rho=chebyshev_ssor_factor(model, w)))
    return out
