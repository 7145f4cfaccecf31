"""Solver studies: CG vs preconditioned CG over hyperparameters, MVM timing."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels, testfns
from .dski import DskiOperator
from .dskip import DskipOperator
from .interpolation import Grid, auto_grid
from .kernels import KernelSpec
from .linalg import DenseOperator, Preconditioner, cg, pivoted_cholesky

__all__ = ["PrecondCell", "precond_study", "precond_operator", "benchmark_mvm",
           "loglog_slope", "DEFAULT_LOG_ELL", "DEFAULT_LOG_SIGMA"]

# log10 ranges of the sweep (inputs in the unit cube, output scale 1)
DEFAULT_LOG_ELL = np.linspace(-1.0, 1.0, 5)
DEFAULT_LOG_SIGMA = np.linspace(-3.0, 0.0, 5)


@dataclass
class PrecondCell:
    problem: str
    lengthscale: float
    noise: float
    cg_iters: int
    pcg_iters: int
    cg_converged: bool
    pcg_converged: bool


def _problem_data(problem, n, seed):
    if problem == "franke":
        fn, backend = testfns.franke, "dski"
    elif problem == "friedman":
        fn, backend = testfns.friedman, "dskip"
    else:
        raise ValueError(f"unknown problem {problem!r}; use 'franke' or 'friedman'")
    data = testfns.sample_dataset(fn, n, seed=seed)
    rhs = np.concatenate([data.y - data.y.mean(), data.dY.T.ravel()])
    return data, rhs, backend


def precond_operator(backend, X, ell, sigma, rank=100, seed=0, spacing_factor=4.0,
                     max_grid_nodes=2**17):
    """Kernel operator (``s = 1``) for a study cell."""
    kern = KernelSpec.se(ell, 1.0)
    if backend == "dski":
        grid = auto_grid(X.min(axis=0), X.max(axis=0), ell, spacing_factor=spacing_factor,
                         max_nodes=max_grid_nodes)
        return DskiOperator(kern, grid, X, sigma, sigma)
    if backend == "dskip":
        return DskipOperator(kern, X, rank, sigma, sigma, seed=seed,
                             spacing_factor=spacing_factor)
    K = kernels.assemble_dense(kern, X)
    return DenseOperator(K, np.full(K.shape[0], sigma**2))


def precond_study(problem="franke", n=None, log_ell=None, log_sigma=None, rank=100,
                  tol=1e-4, maxit=1000, seed=0, skip_rank=100):
    """Iteration counts of CG and pivoted-Cholesky PCG over a (log l, log sigma) grid.

    Defaults follow the standard setup: Franke (2-D, D-SKI, ``n = 2000``) or
    Friedman (5-D, D-SKIP, ``n = 1000``), rank-100 preconditioner, tolerance
    ``1e-4``. ``skip_rank`` is the D-SKIP Lanczos rank.
    """
    n = n or (2000 if problem == "franke" else 1000)
    log_ell = DEFAULT_LOG_ELL if log_ell is None else np.asarray(log_ell)
    log_sigma = DEFAULT_LOG_SIGMA if log_sigma is None else np.asarray(log_sigma)
    data, rhs, backend = _problem_data(problem, n, seed)
    cells = []
    for le in log_ell:
        ell = 10.0 ** le
        for ls in log_sigma:
            sigma = 10.0 ** ls
            op = precond_operator(backend, data.X, ell, sigma, skip_rank, seed)
            plain = cg(op, rhs, tol=tol, maxit=maxit)
            piv = pivoted_cholesky(op.kernel_diag(), op.kernel_row, rank)
            pre = Preconditioner(piv.F, op.noise_diag)
            pc = cg(op, rhs, tol=tol, maxit=maxit, precond=pre)
            cells.append(PrecondCell(problem, ell, sigma, plain.iterations, pc.iterations,
                                     plain.converged, pc.converged))
    return cells


def cells_to_rows(cells):
    return [asdict(c) for c in cells]


def loglog_slope(ns, seconds):
    """Least-squares slope of ``log(seconds)`` against ``log(n)``."""
    return float(np.polyfit(np.log(ns), np.log(seconds), 1)[0])


def benchmark_mvm(backend="dski", ns=(2000, 4000, 8000, 16000), dim=None, repeats=5,
                  seed=0, grid_shape=None, rank=30, lengthscale=0.2):
    """Median wall time of one kernel MVM for growing ``n``.

    D-SKI uses one fixed grid for all ``n`` (``grid_shape``, default 100 per
    axis over the unit cube); D-SKIP builds its factors per ``n`` but only the
    MVM is timed. Returns ``[(n, backend, seconds), ...]``.
    """
    dim = dim or {"dski": 2, "dskip": 11, "exact": 2}[backend]
    rng = np.random.default_rng(seed)
    kern = KernelSpec.se(lengthscale, 1.0)
    out = []
    grid = None
    if backend == "dski":
        m = grid_shape or 100
        h = 1.0 / (m - 7)
        grid = Grid(tuple([-3 * h] * dim), tuple([h] * dim), tuple([m] * dim))
    for n in ns:
        X = rng.random((n, dim))
        if backend == "dski":
            op = DskiOperator(kern, grid, X, 0.1)
        elif backend == "dskip":
            op = DskipOperator(kern, X, rank, 0.1, seed=seed)
        elif backend == "exact":
            K = kernels.assemble_dense(kern, X)
            op = DenseOperator(K, np.full(K.shape[0], 0.01))
        else:
            raise ValueError(f"unknown backend {backend!r}")
        v = rng.standard_normal(op.shape[0])
        op.matvec(v)                                    # warm-up
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            op.matvec(v)
            times.append(time.perf_counter() - t0)
        out.append((n, backend, float(np.median(times))))
    return out
