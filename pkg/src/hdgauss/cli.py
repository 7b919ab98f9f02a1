"""Command-line interface: ``hdgauss sample | bench | advise | diag``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import bench, core
from .core import Side
from .rng import RngStream, StreamBundle

DEFAULTS = {
    "d": None, "phi": 1.0, "omega": None, "sampler": None, "T": None, "burn_in": 0, "seed": 0, "chains": None,
    "out": None, "k_cheby": 21, "k_kryl": None, "cg_eps": 1e-8, "threshold": 5e-2, "reorth": None,
    "variant": "sigma", "gnuplot": None, "force": False, "full": False, "model_file": None,
    "format": "dense", "side": "precision", "source": None, "split": None, "accuracy": None,
    "tbi_small": None, "clustered": None, "da": None,
}


def _count(v) -> int:
    """Integer flag that also accepts ``1e5`` style values."""
    f = float(v)
    if f != int(f) or f < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {v!r}")
    return int(f)


def _omega(v):
    if str(v).lower() == "auto":
        return "auto"
    return float(v)


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {v!r}")


TYPES = {
    "d": _count, "phi": float, "omega": _omega, "T": _count, "burn_in": _count, "seed": _count,
    "chains": _count, "k_cheby": _count, "k_kryl": _count, "cg_eps": float, "threshold": float,
    "reorth": _bool, "force": _bool, "full": _bool,
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="file of 'key = value' lines; flags override it")
    p.add_argument("--d", type=_count, help="dimension")
    p.add_argument("--phi", type=float, help="lattice coupling")
    p.add_argument("--omega", type=_omega, help="relaxation parameter, a number or 'auto'")
    p.add_argument("--sampler", help="sampler name")
    p.add_argument("--da", choices=bench.DA_SCHEMES, help="data-augmentation sampler (same as --sampler)")
    p.add_argument("--T", type=_count, help="number of iterations or samples")
    p.add_argument("--burn-in", dest="burn_in", type=_count, help="discarded initial iterations")
    p.add_argument("--seed", type=_count, help="random seed")
    p.add_argument("--chains", type=_count, help="number of independent chains")
    p.add_argument("--out", help="output CSV path (stdout when omitted)")
    p.add_argument("--k-cheby", dest="k_cheby", type=_count, help="Chebyshev polynomial order")
    p.add_argument("--k-kryl", dest="k_kryl", type=_count, help="Krylov iteration cap (Lanczos, CG)")
    p.add_argument("--cg-eps", dest="cg_eps", type=float, help="CG sampler residual tolerance")
    p.add_argument("--reorth", type=_bool, help="Lanczos full reorthogonalization (yes/no)")
    p.add_argument("--threshold", type=float, help="relative covariance error threshold")
    p.add_argument("--force", action="store_const", const=True, help="run non-convergent schemes anyway")
    p.add_argument("--gnuplot", help="prefix for two-column curve files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdgauss", description="Sampling high-dimensional Gaussians.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw samples from a model file or a generated model")
    _common(p)
    p.add_argument("--model-file", dest="model_file", help="matrix file (see --format)")
    p.add_argument("--format", choices=("dense", "band", "circulant", "diagonal"))
    p.add_argument("--side", choices=("precision", "covariance"))
    p.add_argument("--source", choices=("lattice", "sqexp", "sqexp-inverse", "toy"),
                   help="generated model instead of --model-file")

    p = sub.add_parser("bench", help="run a benchmark scenario")
    p.add_argument("scenario", choices=bench.SCENARIO_SAMPLERS)
    _common(p)
    p.add_argument("--variant", choices=("sigma", "inverse", "toy"), help="scenario1 model")
    p.add_argument("--full", action="store_const", const=True, help="scenario2: run all T steps")

    p = sub.add_parser("advise", help="recommend a sampler from four questions")
    p.add_argument("--config")
    p.add_argument("--split", help="does Q split as Q1 + Q2 with simple terms? (yes/no)")
    p.add_argument("--accuracy", help="arbitrary or limited")
    p.add_argument("--tbi-small", dest="tbi_small", help="is the burn-in much shorter than K T? (yes/no)")
    p.add_argument("--clustered", help="is the spectrum clustered? (yes/no)")

    p = sub.add_parser("diag", help="optimal omega and convergence factors on the lattice")
    _common(p)
    return parser


def read_config(path) -> dict:
    """Parse ``key = value`` lines (``#`` comments); keys use flag names."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in DEFAULTS:
            raise ValueError(f"{path}:{n}: unknown key {key!r}")
        out[key] = TYPES.get(key, str)(val)
    return out


def resolve(ns: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win)."""
    opts = dict(DEFAULTS)
    if getattr(ns, "config", None):
        opts.update(read_config(ns.config))
    for k, v in vars(ns).items():
        if v is not None and k != "config":
            opts[k] = v
    if opts["da"]:
        opts["sampler"] = opts["da"]
    return opts


def _emit(text: str, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_model(o):
    side = Side(o["side"])
    if o["model_file"]:
        path, fmt = o["model_file"], o["format"]
        if fmt == "dense":
            return core.load_dense_csv(path, side)
        if fmt == "band":
            return core.load_band(path, side)
        if fmt == "circulant":
            return core.load_circulant(path, side=side)
        return core.DiagonalModel(np.loadtxt(path, delimiter=",", ndmin=1), side)
    src = o["source"] or "lattice"
    d = o["d"] or (100 if src != "toy" else 15)
    if src == "lattice":
        return bench.build_lattice(d, o["phi"], 1.0)
    return bench.scenario1_model({"sqexp": "sigma", "sqexp-inverse": "inverse", "toy": "toy"}[src], d)


def cmd_sample(o) -> int:
    model = _load_model(o)
    name = o["sampler"] or "cholesky"
    kernel = bench.make_kernel(model, name, omega=o["omega"], k_cheby=o["k_cheby"], k_kryl=o["k_kryl"],
                               cg_eps=o["cg_eps"], reorth=o["reorth"])
    if kernel.scheme is not None and kernel.scheme.convergent is False and not o["force"]:
        print(f"error: {name} with omega={kernel.omega} does not converge; use --force", file=sys.stderr)
        return 2
    T = o["T"] or 10
    k = o["chains"]
    stream = RngStream(o["seed"], 0) if k is None else StreamBundle.for_chains(o["seed"], k)
    theta = np.zeros(model.dim) if k is None else np.zeros((model.dim, k))
    lines = []
    for t in range(T):
        theta = kernel.step(theta, stream)
        if t >= o["burn_in"]:
            cols = [theta] if k is None else [theta[:, j] for j in range(k)]
            for j, c in enumerate(cols):
                lines.append(",".join([str(t + 1), str(j)] + [repr(float(x)) for x in c]))
    header = "t,chain," + ",".join(f"theta{i}" for i in range(model.dim))
    _emit(header + "\n" + "\n".join(lines) + "\n", o["out"])
    return 0


def cmd_bench(o) -> int:
    scen = o["scenario"]
    name = o["sampler"] or {"scenario1": "cholesky", "scenario2": "gauss-seidel", "scenario3": "geda"}[scen]
    if scen == "scenario1":
        rep = bench.run_scenario1(name, d=o["d"] or (15 if o["variant"] == "toy" else 100), T=o["T"] or 100_000,
                                  seed=o["seed"], variant=o["variant"], k_cheby=o["k_cheby"], k_kryl=o["k_kryl"],
                                  cg_eps=o["cg_eps"], reorth=o["reorth"])
    elif scen == "scenario2":
        rep = bench.run_scenario2(name, phi=o["phi"], d=o["d"] or 100, T=o["T"], chains=o["chains"] or 10,
                                  seed=o["seed"], omega=o["omega"], k_cheby=o["k_cheby"], threshold=o["threshold"],
                                  burn_in=o["burn_in"], stop_early=not o["full"], force=o["force"])
    else:
        rep = bench.run_scenario3(name, d=o["d"] or 256, T=o["T"] or 2000, burn_in=o["burn_in"] or 0,
                                  seed=o["seed"], omega=o["omega"], cg_eps=o["cg_eps"], k_kryl=o["k_kryl"],
                                  k_cheby=o["k_cheby"])
    _emit(rep.to_csv(), o["out"])
    if o["gnuplot"]:
        rep.write_curves(o["gnuplot"])
    return 0


def cmd_advise(o) -> int:
    if o["split"] is None:
        print("error: --split is required", file=sys.stderr)
        return 2
    try:
        adv = bench.advise(o["split"], o["accuracy"], o["tbi_small"], o["clustered"])
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{adv.algorithm}\t{adv.reference}\t{' -> '.join(adv.path)}")
    return 0


def cmd_diag(o) -> int:
    d = o["d"] or 100
    phis = (o["phi"],) if o.get("phi_given") else bench.REFERENCE_PHI
    rows = bench.lattice_table(d, phis)
    if o["sampler"]:
        rows = [r for r in rows if r["scheme"] == o["sampler"]]
    text = "scheme,phi,omega,rho_MinvN\n" + "".join(
        f"{r['scheme']},{r['phi']},{'' if r['omega'] is None else repr(float(r['omega']))},{r['rho']!r}\n"
        for r in rows)
    _emit(text, o["out"])
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    phi_given = getattr(ns, "phi", None) is not None
    try:
        o = resolve(ns)
    except (OSError, ValueError) as exc:
        parser.error(str(exc))
    o["phi_given"] = phi_given or (getattr(ns, "config", None) and "phi" in read_config(ns.config))
    handlers = {"sample": cmd_sample, "bench": cmd_bench, "advise": cmd_advise, "diag": cmd_diag}
    try:
        return handlers[ns.command](o)
    except (OSError, ValueError, RuntimeError) as exc:
        # pairing, model-file and convergence refusals
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
