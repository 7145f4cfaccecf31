"""Command-line interface: ``gradkrig <command> [options]``.

Every command writes plain CSV/JSON and echoes its full configuration to
``<output>.config.json``; ``--config FILE`` replays such an echo.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 data error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from . import bopt, studies, subspace, terrain, testfns
from .datafiles import DataError, read_observations, read_points, read_raster, write_raster
from .gp import FitError, GPModel, SolverError, default_hyperparameters, fit
from .interpolation import OutOfGridError
from .kernels import DenseSizeError, KernelSpec
from .linalg import IndefiniteError
from .testfns import OutOfDomainError

log = logging.getLogger("gradkrig")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_DATA = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# -- shared options -------------------------------------------------------------------

def _common(p, variance=False):
    p.add_argument("--config", help="JSON config echo to replay (flags given explicitly win)")
    p.add_argument("--kernel", choices=["se", "spline"], default="se")
    p.add_argument("--backend", choices=["exact", "dski", "dskip"], default="exact")
    p.add_argument("--grid-size", type=int, default=None,
                   help="D-SKI inducing points per dimension (default: from the lengthscale)")
    p.add_argument("--rank", type=int, default=100,
                   help="D-SKIP Lanczos rank and preconditioner rank")
    p.add_argument("--tol", type=float, default=1e-4, help="CG relative residual tolerance")
    p.add_argument("--maxit", type=int, default=1000, help="CG iteration cap")
    p.add_argument("--probes", type=int, default=10, help="stochastic probe vectors")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precond", choices=["on", "off"], default="on")
    if variance:
        p.add_argument("--variance", choices=["exact", "pivchol", "randomized", "none"],
                       default="pivchol")


def _hyper(p):
    p.add_argument("--lengthscale", type=float)
    p.add_argument("--outputscale", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--grad-noise", type=float)


def build_parser():
    ap = argparse.ArgumentParser(prog="gradkrig", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit hyperparameters and write a model file")
    _common(p)
    _hyper(p)
    p.add_argument("--data", help="observation CSV (x1..xD, y, optional g1..gD)")
    p.add_argument("--model", help="start from an existing model file")
    p.add_argument("--out", required=True, help="model JSON to write")
    p.add_argument("--report", help="fit report JSON (default: <out>.report.json)")
    p.add_argument("--maxiter", type=int, default=50)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--no-gradients", action="store_true", help="ignore gradient columns")

    p = sub.add_parser("predict", help="posterior mean and variance at test points")
    _common(p, variance=True)
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="training CSV (default: the path stored in the model)")
    p.add_argument("--test", required=True, help="CSV with x1..xD columns")
    p.add_argument("--out", required=True)
    p.add_argument("--gradients", action="store_true", help="also write mean gradients")

    p = sub.add_parser("terrain", help="SKI vs D-SKI reconstruction of an elevation raster")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--raster", help="ESRI ASCII (.asc) or CSV matrix")
    src.add_argument("--synthetic", action="store_true", help="use the synthetic terrain")
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--fit", choices=["patch", "full", "none"], default="patch")
    p.add_argument("--maxiter", type=int, default=30)
    p.add_argument("--grid-spacing", type=float, default=None, help="in raster cells")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("precond-study", help="CG vs PCG iterations over (log l, log sigma)")
    _common(p)
    p.add_argument("--problem", choices=["franke", "friedman", "both"], default="both")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--log-ell", type=float, nargs="+", default=None)
    p.add_argument("--log-sigma", type=float, nargs="+", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("benchmark-mvm", help="MVM wall time against n")
    _common(p)
    p.add_argument("--ns", type=int, nargs="+", default=[2000, 4000, 8000, 16000])
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", required=True)

    p = sub.add_parser("active-subspace", help="gradient covariance spectrum")
    _common(p)
    srcs = p.add_mutually_exclusive_group(required=True)
    srcs.add_argument("--gradients", help="CSV with g1..gD columns (or observation CSV)")
    srcs.add_argument("--function", help="test function name, e.g. welch or ackley")
    p.add_argument("--dim", type=int, default=None, help="dimension for d-dimensional functions")
    p.add_argument("--embed", type=int, default=None, help="embed into this many dimensions")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--d", type=int, default=None, help="subspace dimension (default: 99%% mass)")
    p.add_argument("--out", required=True, help="eigenvalue CSV")
    p.add_argument("--projection", help="projection CSV (default: <out>.projection.csv)")

    p = sub.add_parser("bo", help="Bayesian optimization with active subspaces")
    _common(p, variance=True)
    p.add_argument("--function", required=True)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--embed", type=int, default=None)
    p.add_argument("--lower", type=float, default=None)
    p.add_argument("--upper", type=float, default=None)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--method", choices=["bo", "random", "local"], default="bo")
    p.add_argument("--out", required=True)
    p.add_argument("--state", help="state dump path on objective failure")
    p.add_argument("--resume", help="resume from a state dump")
    ap.commands = sub.choices
    return ap


# -- config echo ------------------------------------------------------------------------

def _given(argv):
    """Destinations of the long flags present on the command line."""
    return {a.split("=")[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}


def _config_path(argv):
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config(parser, argv):
    """Install a config echo as the defaults of its subcommand.

    Flags on the command line still win, and required options are
    satisfied by the echoed values.
    """
    path = _config_path(argv)
    if path is None:
        return
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    command = next((a for a in argv if a in parser.commands), None)
    if cfg.get("command") != command:
        raise ConfigError(f"config is for {cfg.get('command')!r}, not {command!r}")
    for action in parser.commands[command]._actions:
        if action.dest in cfg and action.dest != "config":
            action.default = cfg[action.dest]
            action.required = False


def _echo(args, out):
    cfg = {k: v for k, v in vars(args).items() if k not in ("config", "verbose", "given")}
    with open(f"{out}.config.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)


# -- commands -------------------------------------------------------------------------

def _kernel(args, data, hp):
    if args.kernel == "spline":
        lo, hi = data.X.min(axis=0), data.X.max(axis=0)
        return KernelSpec.spline(lo, hi, hp["outputscale"])
    return KernelSpec.se(hp["lengthscale"], hp["outputscale"])


def _model_kwargs(args):
    return dict(backend=args.backend, grid_size=args.grid_size, rank=args.rank,
                precond_rank=args.rank, precondition=args.precond == "on", tol=args.tol,
                maxit=args.maxit, num_probes=args.probes, seed=args.seed)


def _resolve(path, base):
    if path is None or os.path.isabs(path):
        return path
    cand = os.path.join(os.path.dirname(os.path.abspath(base)), path)
    return cand if os.path.exists(cand) else path


def _load_model(args):
    model = GPModel.load(args.model)
    with open(args.model) as fh:
        stored = json.load(fh).get("data")
    data_path = args.data or _resolve(stored, args.model)
    if data_path is None:
        raise ConfigError("the model has no data reference; pass --data")
    data = read_observations(data_path)
    return model, data, data_path


def _check_converged(model):
    info = model.cg_info
    if info is not None and not info.converged:
        raise SolverError(f"CG did not reach tol {model.tol} in {info.iterations} iterations "
                          f"(residual {info.residuals[-1]:.3e})")


def cmd_fit(args):
    if args.model:
        model, data, data_path = _load_model(args)
        flags = {"grid_size": "grid_size", "rank": "rank", "tol": "tol", "maxit": "maxit",
                 "num_probes": "probes", "seed": "seed", "precondition": "precond"}
        for k, v in _model_kwargs(args).items():
            if flags.get(k) in args.given:
                setattr(model, k, v)
    else:
        if not args.data:
            raise ConfigError("fit needs --data or --model")
        data_path = args.data
        data = read_observations(data_path)
        hp = default_hyperparameters(data)
        for k in hp:
            v = getattr(args, k)
            if v is not None:
                hp[k] = v
        model = GPModel(_kernel(args, data, hp), hp["noise"], hp["grad_noise"],
                        use_gradients=not args.no_gradients, **_model_kwargs(args))
    model.set_data(data)
    t0 = time.perf_counter()
    res = fit(model, maxiter=args.maxiter, restarts=args.restarts, seed=args.seed)
    _check_converged(model)
    rel = os.path.relpath(os.path.abspath(data_path),
                          os.path.dirname(os.path.abspath(args.out)))
    model.save(args.out, data_path=rel)
    report = {"theta": res.as_dict(), "log_likelihood": res.log_likelihood,
              "iterations": res.iterations, "wall_time": time.perf_counter() - t0,
              "restarts": res.restarts, "n": data.n, "N": model.N, "backend": model.backend,
              "cg_iterations": model.cg_info.iterations if model.cg_info else None}
    with open(args.report or f"{args.out}.report.json", "w") as fh:
        json.dump(report, fh, indent=2, default=float)
    print(json.dumps({"log_likelihood": res.log_likelihood, **res.as_dict()}))
    _echo(args, args.out)


def cmd_predict(args):
    model, data, _ = _load_model(args)
    model.set_data(data)
    Xt = read_points(args.test)
    if Xt.shape[1] != data.dim:
        raise DataError(f"test points are {Xt.shape[1]}-D, training data is {data.dim}-D")
    if args.gradients:
        mu, dmu = model.predict_mean(Xt, return_grad=True)
    else:
        mu, dmu = model.predict_mean(Xt), None
    cols = [f"x{j + 1}" for j in range(Xt.shape[1])] + ["mean"]
    M = [Xt, mu[:, None]]
    if args.variance != "none":
        if args.variance == "exact":
            var = model.predict_variance_exact(Xt)
        elif args.variance == "pivchol":
            var = model.predict_variance_pivchol(Xt)
        else:
            var, se = model.predict_variance_randomized(Xt, num_probes=args.probes,
                                                        seed=args.seed, return_stderr=True)
        cols.append("variance")
        M.append(var[:, None])
        if args.variance == "randomized":
            cols.append("variance_stderr")
            M.append(se[:, None])
    if dmu is not None:
        cols += [f"dmean{j + 1}" for j in range(dmu.shape[1])]
        M.append(dmu)
    _write_csv(args.out, cols, np.hstack(M))
    _echo(args, args.out)


def cmd_terrain(args):
    raster = terrain.synthetic_terrain(seed=args.seed) if args.synthetic \
        else read_raster(args.raster)
    os.makedirs(args.out_dir, exist_ok=True)
    res = terrain.reconstruct(raster, test_fraction=args.test_fraction, seed=args.seed,
                              fit_method=args.fit, fit_maxiter=args.maxiter,
                              grid_spacing=args.grid_spacing, tol=args.tol,
                              precondition=args.precond == "on", precond_rank=args.rank,
                              num_probes=args.probes)
    rows = []
    for f in res.fits:
        stem = f.name.lower().replace("-", "")
        out = type(raster)(f.prediction, raster.x0, raster.y0, raster.cellsize, raster.nodata)
        write_raster(os.path.join(args.out_dir, f"{stem}.asc"), out)
        rows.append(f.row())
    write_raster(os.path.join(args.out_dir, "truth.asc"), raster)
    keys = list(rows[0])
    with open(os.path.join(args.out_dir, "smae.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
    np.savetxt(os.path.join(args.out_dir, "test_mask.csv"), res.test_mask.astype(int),
               fmt="%d", delimiter=",")
    for r in rows:
        print(f"{r['model']}: test SMAE {r['test_smae']:.4g}, overall SMAE "
              f"{r['overall_smae']:.4g}, {r['seconds']:.1f}s")
    _echo(args, os.path.join(args.out_dir, "terrain"))


def cmd_precond_study(args):
    problems = ["franke", "friedman"] if args.problem == "both" else [args.problem]
    cells = []
    for prob in problems:
        cells += studies.precond_study(prob, n=args.n, log_ell=args.log_ell,
                                       log_sigma=args.log_sigma, rank=args.rank, tol=args.tol,
                                       maxit=args.maxit, seed=args.seed)
    rows = studies.cells_to_rows(cells)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    _echo(args, args.out)


def cmd_benchmark_mvm(args):
    rows = studies.benchmark_mvm(args.backend, args.ns, dim=args.dim, repeats=args.repeats,
                                 seed=args.seed, grid_shape=args.grid_size,
                                 rank=args.rank if args.backend == "dskip" else 30)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "backend", "seconds"])
        w.writerows(rows)
    slope = studies.loglog_slope([r[0] for r in rows], [r[2] for r in rows])
    print(f"log-log slope: {slope:.3f}")
    _echo(args, args.out)


def _function(args):
    fn = testfns.get(args.function, args.dim)
    if args.embed:
        lo = args.lower if getattr(args, "lower", None) is not None else None
        hi = args.upper if getattr(args, "upper", None) is not None else None
        fn = testfns.embed(fn, args.embed, seed=args.seed, lower=lo, upper=hi)
    elif getattr(args, "lower", None) is not None or getattr(args, "upper", None) is not None:
        raise ConfigError("--lower/--upper apply to embedded functions only")
    return fn


def cmd_active_subspace(args):
    if args.function:
        fn = _function(args)
        G = testfns.sample_dataset(fn, args.samples, seed=args.seed).dY
    else:
        G = _read_gradients(args.gradients)
    act = subspace.estimate(G)
    d = args.d or subspace.select_dimension(act.eigenvalues)
    lam = act.eigenvalues
    cum = np.cumsum(lam) / lam.sum() if lam.sum() > 0 else np.zeros_like(lam)
    _write_csv(args.out, ["index", "eigenvalue", "cumulative_mass"],
               np.column_stack([np.arange(1, lam.size + 1), lam, cum]))
    P = act.projection(d)
    _write_csv(args.projection or f"{args.out}.projection.csv",
               [f"p{j + 1}" for j in range(d)], P)
    print(f"selected d = {d}; top eigenvalues: "
          + ", ".join(f"{v:.4g}" for v in lam[:min(10, lam.size)]))
    _echo(args, args.out)


def _read_gradients(path):
    from .datafiles import _indexed, _read_table
    header, body = _read_table(path)
    gc = _indexed(header, "g")
    if not gc:
        raise DataError(f"{path}: no g1..gD columns")
    return body[:, gc]


def cmd_bo(args):
    fn = _function(args)
    cfg = bopt.BoConfig(d=args.d, backend=args.backend, variance=args.variance
                        if args.variance in ("exact", "pivchol") else "pivchol",
                        tol=min(args.tol, 1e-6))
    if args.method == "bo":
        trace = bopt.bo_run(fn.evaluate, fn.lower, fn.upper, args.budget, d=args.d,
                            seed=args.seed, config=cfg, state_path=args.state, resume=args.resume)
    elif args.method == "random":
        trace = bopt.baseline_random(fn.evaluate, fn.lower, fn.upper, args.budget, args.seed)
    else:
        trace = bopt.baseline_local(fn.evaluate, fn.lower, fn.upper, args.budget, args.seed)
    trace.to_csv(args.out)
    print(f"{args.method}: best {trace.final_best:.6g} after {len(trace.f)} evaluations")
    _echo(args, args.out)


def _write_csv(path, cols, M):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in np.atleast_2d(M):
            w.writerow([repr(float(v)) for v in r])


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "terrain": cmd_terrain,
            "precond-study": cmd_precond_study, "benchmark-mvm": cmd_benchmark_mvm,
            "active-subspace": cmd_active_subspace, "bo": cmd_bo}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    args = parser.parse_args(argv)      # exits with 2 on bad flags
    args.given = _given(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ConfigError, DenseSizeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, FitError, IndefiniteError, np.linalg.LinAlgError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        if isinstance(exc, FitError):
            print(json.dumps(exc.diagnostics, indent=2), file=sys.stderr)
        return EXIT_SOLVER
    except (DataError, OutOfGridError, OutOfDomainError, bopt.BoAbort, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
