"""Bayesian optimization with gradients on learned active subspaces.

Each iteration re-estimates the active subspace from every gradient seen
so far, draws ``d`` leading directions at random, fits a GP with
gradients under the reduced kernel ``k(P^T x, P^T x')`` and evaluates the
objective where expected improvement is largest. Minimization throughout.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.optimize
from scipy.stats import norm

from . import subspace
from .gp import GPModel, ObservationSet, default_hyperparameters, fit
from .interpolation import auto_grid
from .kernels import KernelSpec

__all__ = [
    "expected_improvement",
    "expected_improvement_grad",
    "BoConfig",
    "BoTrace",
    "BoAbort",
    "bo_run",
    "baseline_random",
    "baseline_local",
    "reduced_radius",
]

log = logging.getLogger(__name__)


def expected_improvement(mean, variance, best):
    """EI for minimization; ``max(best - mean, 0)`` where the variance is zero."""
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ValueError("variance must be nonnegative")
    imp = best - mean
    sd = np.sqrt(variance)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, imp / np.where(sd > 0, sd, 1.0), 0.0)
        ei = np.where(sd > 0, imp * norm.cdf(z) + sd * norm.pdf(z), np.maximum(imp, 0.0))
    return np.maximum(ei, 0.0)


def expected_improvement_grad(mean, dmean, variance, dvariance, best, floor=1e-14):
    """EI and its gradient from mean/variance gradients (rows are points)."""
    var = np.maximum(np.asarray(variance, dtype=float), floor)
    sd = np.sqrt(var)
    z = (best - mean) / sd
    cdf, pdf = norm.cdf(z), norm.pdf(z)
    ei = np.maximum((best - mean) * cdf + sd * pdf, 0.0)
    grad = -cdf[:, None] * dmean + (pdf / (2 * sd))[:, None] * dvariance
    return ei, grad


def reduced_radius(P, lower, upper):
    """``max over corners x of ||P^T x||_inf`` for the box ``[lower, upper]``."""
    P = np.asarray(P, dtype=float)
    a = P * np.asarray(lower, dtype=float)[:, None]
    b = P * np.asarray(upper, dtype=float)[:, None]
    hi = np.maximum(a, b).sum(axis=0)
    lo = np.minimum(a, b).sum(axis=0)
    return float(np.max(np.maximum(hi, -lo)))


@dataclass
class BoConfig:
    d: int = 2
    n_init: int | None = None          # default 2(d+1)
    backend: str = "exact"
    variance: str = "pivchol"
    ei_starts: int = 32
    ei_candidates: int = 2000
    ei_maxiter: int = 50
    fit_maxiter: int = 20
    fit_restarts: int = 1
    max_grid_nodes: int = 4096
    precond_rank: int = 50
    tol: float = 1e-6
    pool: int | None = None             # default 2d

    @property
    def initial_size(self):
        return self.n_init if self.n_init is not None else 2 * (self.d + 1)


@dataclass
class BoTrace:
    X: np.ndarray
    f: np.ndarray
    wall_time: np.ndarray
    method: str = "bo"
    extra: dict = field(default_factory=dict)

    @property
    def best(self):
        return np.minimum.accumulate(self.f)

    @property
    def final_best(self):
        return float(self.best[-1])

    def to_csv(self, path):
        D = self.X.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", *[f"x{j + 1}" for j in range(D)], "f", "best", "wall_time"])
            for i, (x, f, b, t) in enumerate(zip(self.X, self.f, self.best, self.wall_time)):
                w.writerow([i + 1, *map(repr, map(float, x)), repr(float(f)), repr(float(b)),
                            f"{t:.6f}"])


class BoAbort(RuntimeError):
    """The objective failed; ``state_path`` holds a resumable dump (if requested)."""

    def __init__(self, msg, state_path=None):
        super().__init__(msg)
        self.state_path = state_path


def _evaluate(objective, x):
    f, g = objective(x)
    f = float(f)
    g = np.asarray(g, dtype=float).ravel()
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise FloatingPointError("objective returned non-finite values")
    return f, g


def _dump_state(path, X, f, G, rng, config, seed, lower, upper, budget):
    state = {"format": "gradkrig-bo-state", "version": 1, "seed": seed, "budget": budget,
             "config": asdict(config), "lower": list(map(float, lower)),
             "upper": list(map(float, upper)), "X": np.asarray(X).tolist(),
             "f": list(map(float, f)), "G": np.asarray(G).tolist(),
             "rng": rng.bit_generator.state}
    with open(path, "w") as fh:
        json.dump(state, fh)


def load_state(path):
    with open(path) as fh:
        s = json.load(fh)
    if s.get("format") != "gradkrig-bo-state":
        raise ValueError("not a BO state file")
    return s


def _fit_reduced(data, P, lower, upper, config, theta=None):
    R = reduced_radius(P, lower, upper)
    Ud = data.project(P)
    hp = default_hyperparameters(Ud)
    kern = KernelSpec.se(hp["lengthscale"], hp["outputscale"])
    kw = dict(backend=config.backend, projection=P, precond_rank=config.precond_rank,
              tol=config.tol, num_probes=10)
    if config.backend == "dski":
        grid = auto_grid(np.full(P.shape[1], -R), np.full(P.shape[1], R), hp["lengthscale"],
                         max_nodes=config.max_grid_nodes)
        kw["grid"] = grid
    model = GPModel(kern, hp["noise"], hp["grad_noise"], **kw)
    model.set_data(data)
    if theta is not None:
        # warm start from the previous iteration's hyperparameters
        start = model.theta
        try:
            model.set_theta(theta)
        except (np.linalg.LinAlgError, ArithmeticError):
            model.set_theta(start)
    try:
        fit(model, maxiter=config.fit_maxiter, restarts=config.fit_restarts)
    except Exception as exc:                              # noqa: BLE001
        log.warning("hyperparameter fit failed (%s); keeping starting values", exc)
    return model, R


def _maximize_ei(model, R, best, config, rng, lower, upper):
    """Maximize EI over ``u`` in ``[-R, R]^d``.

    A candidate ``u`` is scored at ``P^T clip(P u)``, the reduced coordinates
    of the point that would actually be evaluated, so infeasible ``u`` cannot
    win on the strength of posterior variance outside the box.
    """
    P = model.projection
    d = P.shape[1]

    def feasible(U):
        Xc = np.clip(U @ P.T, lower, upper)
        inside = (U @ P.T > lower) & (U @ P.T < upper)
        return Xc @ P, inside

    U = rng.uniform(-R, R, size=(config.ei_candidates, d))
    mu, _, var, _ = model.predict_with_gradients(feasible(U)[0], variance=config.variance)
    ei = expected_improvement(mu, np.maximum(var, 0.0), best)
    starts = U[np.argsort(-ei)[:config.ei_starts]]
    best_u, best_ei = starts[0], -np.inf

    def neg(u):
        ue, inside = feasible(u[None])
        m, dm, v, dv = model.predict_with_gradients(ue, variance=config.variance)
        e, g = expected_improvement_grad(m, dm, v, dv, best)
        J = P.T @ (inside[0][:, None] * P)         # d u_eff / d u
        return -float(e[0]), -(J.T @ g[0])

    for u0 in starts:
        res = scipy.optimize.minimize(neg, u0, jac=True, method="L-BFGS-B",
                                      bounds=[(-R, R)] * d,
                                      options={"maxiter": config.ei_maxiter})
        if -res.fun > best_ei:
            best_u, best_ei = res.x, -res.fun
    return best_u, best_ei


def bo_run(objective, lower, upper, budget, d=2, seed=0, config=None, state_path=None,
           resume=None):
    """Algorithm: BO with derivatives on random active directions.

    Parameters
    ----------
    objective : callable
        ``x -> (f, grad f)`` for a single point ``x`` of length ``D``.
    lower, upper : array_like
        Box ``Omega``.
    budget : int
        Total number of objective evaluations, initial design included.
    d : int
        Subspace dimension (overrides ``config.d``).
    state_path : str, optional
        Where to dump a resumable state if the objective fails.
    resume : str, optional
        A state file written by an earlier aborted run.
    """
    config = BoConfig(**{**asdict(config or BoConfig()), "d": d})
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    D = lower.size
    if budget < config.initial_size:
        raise ValueError(f"budget {budget} is smaller than the initial design "
                         f"({config.initial_size} points)")
    rng = np.random.default_rng(seed)
    X, F, G, wall = [], [], [], []
    t0 = time.perf_counter()
    if resume is not None:
        s = load_state(resume)
        X, F, G = list(map(np.asarray, s["X"])), list(s["f"]), list(map(np.asarray, s["G"]))
        rng.bit_generator.state = s["rng"]
        wall = [0.0] * len(X)

    def record(x):
        try:
            f, g = _evaluate(objective, x)
        except Exception as exc:
            if state_path is not None:
                _dump_state(state_path, X, F, G, rng, config, seed, lower, upper, budget)
            raise BoAbort(f"objective failed at evaluation {len(X) + 1}: {exc}",
                          state_path) from exc
        X.append(np.asarray(x, dtype=float))
        F.append(f)
        G.append(g)
        wall.append(time.perf_counter() - t0)

    while len(X) < config.initial_size:
        record(lower + rng.random(D) * (upper - lower))

    theta = None
    while len(X) < budget:
        data = ObservationSet(np.array(X), np.array(F), np.array(G))
        act = subspace.estimate(data.dY)
        P, _ = act.sample_directions(config.d, rng, config.pool)
        model, R = _fit_reduced(data, P, lower, upper, config, theta)
        theta = model.theta
        u, _ = _maximize_ei(model, R, float(np.min(F)), config, rng, lower, upper)
        x = np.clip(P @ u, lower, upper)
        record(x)
    return BoTrace(np.array(X), np.array(F), np.array(wall), "bo")


def baseline_random(objective, lower, upper, budget, seed=0):
    """Uniform random search over the box; exactly ``budget`` evaluations."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    rng = np.random.default_rng(seed)
    X = lower + rng.random((budget, lower.size)) * (upper - lower)
    t0 = time.perf_counter()
    F, wall = [], []
    for x in X:
        F.append(float(objective(x)[0]))
        wall.append(time.perf_counter() - t0)
    return BoTrace(X, np.array(F), np.array(wall), "random")


class _BudgetExhausted(Exception):
    pass


def baseline_local(objective, lower, upper, budget, seed=0, restarts=None, gtol=1e-8):
    """Multi-start box-constrained quasi-Newton (L-BFGS-B) with exact gradients.

    Starts are uniform in the box; a new start begins when a local run
    converges. Stops after ``budget`` evaluations or ``restarts`` starts.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    rng = np.random.default_rng(seed)
    X, F, wall = [], [], []
    t0 = time.perf_counter()

    def fun(x):
        if len(X) >= budget:
            raise _BudgetExhausted
        f, g = _evaluate(objective, x)
        X.append(np.array(x))
        F.append(f)
        wall.append(time.perf_counter() - t0)
        return f, g

    k = 0
    while len(X) < budget and (restarts is None or k < restarts):
        x0 = lower + rng.random(lower.size) * (upper - lower)
        try:
            scipy.optimize.minimize(fun, x0, jac=True, method="L-BFGS-B",
                                    bounds=list(zip(lower, upper)),
                                    options={"gtol": gtol, "ftol": 0.0,
                                             "maxfun": budget - len(X)})
        except _BudgetExhausted:
            break
        k += 1
    return BoTrace(np.array(X), np.array(F), np.array(wall), "local")
