"""Gaussian process regression with gradient observations.

A :class:`GPModel` combines a kernel, noise levels and a backend for the
(derivative) kernel matrix:

* ``"exact"`` -- dense assembly and Cholesky factorization (the oracle),
* ``"dski"``  -- structured interpolation on a grid, solved iteratively,
* ``"dskip"`` -- Hadamard products of Lanczos-compressed 1-D factors.

Hyperparameters are kept in log space as ``theta = [log l, log s,
log sigma_1, log sigma_2]`` (lengthscale, output scale, value noise,
gradient noise). The prior mean is a constant (the mean of ``y``) for
values and zero for gradients.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from . import kernels
from .dski import DskiOperator
from .dskip import DskipOperator
from .interpolation import Grid, auto_grid, build_interpolation
from .kernels import KernelSpec
from .linalg import (DenseOperator, Preconditioner, cg, pivoted_cholesky, rademacher,
                     slq_logdet)

__all__ = [
    "ObservationSet",
    "GPModel",
    "FitError",
    "SolverError",
    "FitResult",
    "fit",
    "default_hyperparameters",
    "PARAM_NAMES",
    "MODEL_FORMAT",
    "MODEL_VERSION",
]

log = logging.getLogger(__name__)

PARAM_NAMES = ("log_lengthscale", "log_outputscale", "log_noise", "log_grad_noise")
MODEL_FORMAT = "gradkrig-model"
MODEL_VERSION = 1
BACKENDS = ("exact", "dski", "dskip")


class SolverError(RuntimeError):
    """An iterative solve failed to reach its tolerance."""


class FitError(RuntimeError):
    """Every optimizer restart failed; ``diagnostics`` has one entry per restart."""

    def __init__(self, msg, diagnostics):
        super().__init__(msg)
        self.diagnostics = diagnostics


@dataclass
class ObservationSet:
    """Training inputs, values and (optionally) gradients.

    Gradients are all-or-none: ``dY`` is either ``None`` or has the same
    shape as ``X``.
    """

    X: np.ndarray
    y: np.ndarray
    dY: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.size:
            raise ValueError(f"{self.X.shape[0]} inputs but {self.y.size} values")
        if self.y.size < 1:
            raise ValueError("need at least one observation")
        if self.dY is not None:
            self.dY = np.asarray(self.dY, dtype=float).reshape(self.X.shape)
            if not np.all(np.isfinite(self.dY)):
                raise ValueError("gradients must be finite")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("inputs and values must be finite")

    @property
    def n(self):
        return self.y.size

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def has_gradients(self):
        return self.dY is not None

    def project(self, P):
        """Inputs ``X P`` and gradients ``dY P`` (chain rule for ``f(x) = g(P^T x)``)."""
        P = np.asarray(P, dtype=float)
        dY = None if self.dY is None else self.dY @ P
        return ObservationSet(self.X @ P, self.y, dY)

    def subset(self, idx):
        dY = None if self.dY is None else self.dY[idx]
        return ObservationSet(self.X[idx], self.y[idx], dY)

    def without_gradients(self):
        return ObservationSet(self.X, self.y, None)


def default_hyperparameters(data, grad=True):
    """Rough starting values scaled to the data."""
    span = data.X.max(axis=0) - data.X.min(axis=0)
    diam = float(np.linalg.norm(span)) or 1.0
    ys = float(np.std(data.y)) or 1.0
    ell = 0.25 * diam / np.sqrt(data.dim)
    gs = ys / ell
    if grad and data.dY is not None:
        gs = float(np.std(data.dY)) or gs
    return {"lengthscale": ell, "outputscale": ys, "noise": 1e-2 * ys, "grad_noise": 1e-2 * gs}


@dataclass
class FitResult:
    theta: np.ndarray
    log_likelihood: float
    iterations: int
    restarts: list = field(default_factory=list)
    history: list = field(default_factory=list)
    wall_time: float = 0.0

    def as_dict(self):
        names = ("lengthscale", "outputscale", "noise", "grad_noise")
        return {k: float(np.exp(t)) for k, t in zip(names, self.theta)}


class GPModel:
    """GP regression model with optional gradient observations.

    Parameters
    ----------
    kernel : KernelSpec
    noise : float
        Value noise standard deviation ``sigma_1``.
    grad_noise : float, optional
        Gradient noise standard deviation ``sigma_2`` (defaults to ``noise``).
    backend : {"exact", "dski", "dskip"}
    use_gradients : bool
        Condition on gradients when the data carries them.
    projection : ndarray, shape (D, d), optional
        Active-subspace projection; the model then works with the reduced
        kernel ``k(P^T x, P^T x')``.
    grid : Grid, optional
        D-SKI grid; chosen from the data and lengthscale when omitted.
    spacing_factor : float
        Target grid spacing is ``lengthscale / spacing_factor``.
    rank : int
        D-SKIP Lanczos rank.
    precondition : bool
        Use a pivoted Cholesky preconditioner of rank ``precond_rank``.
    tol, maxit : float, int
        CG settings.
    num_probes, lanczos_steps : int
        Stochastic log-determinant and trace settings.
    seed : int
        Base seed for all probe vectors (common random numbers).
    """

    def __init__(self, kernel, noise=1e-2, grad_noise=None, backend="exact",
                 use_gradients=True, projection=None, grid=None, spacing_factor=4.0,
                 max_grid_nodes=2**17, grid_size=None, interp_method="quintic", rank=100,
                 precondition=True, precond_rank=100, tol=1e-4, maxit=1000, num_probes=10,
                 lanczos_steps=50, seed=0, mean="constant", dskip_spacing_factor=12.0):
        if backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if backend == "dskip" and not kernel.separable:
            raise ValueError("the dskip backend needs a separable (SE) kernel")
        self.kernel = kernel
        self.noise = float(noise)
        self.grad_noise = float(noise if grad_noise is None else grad_noise)
        self.backend = backend
        self.use_gradients = use_gradients
        self.projection = None if projection is None else np.asarray(projection, dtype=float)
        self.grid = grid
        self.spacing_factor = spacing_factor
        self.max_grid_nodes = max_grid_nodes
        self.grid_size = grid_size
        self.interp_method = interp_method
        self.rank = rank
        self.precondition = precondition
        self.precond_rank = precond_rank
        self.tol = tol
        self.maxit = maxit
        self.num_probes = num_probes
        self.lanczos_steps = lanczos_steps
        self.seed = seed
        self.mean = mean
        self.dskip_spacing_factor = dskip_spacing_factor
        self.data = None
        self.train = None
        self.operator = None
        self._reset_cache()

    # -- setup -------------------------------------------------------------------
    def _reset_cache(self):
        self.alpha = None
        self.cg_info = None
        self._chol = None
        self._precond = None
        self._pivchol = None
        self._grid_vec = None

    @property
    def grad(self):
        return self.use_gradients and self.train is not None and self.train.has_gradients

    @property
    def theta(self):
        return np.log([self.kernel.lengthscale, self.kernel.outputscale,
                       self.noise, self.grad_noise])

    def active_params(self):
        """Mask of hyperparameters the likelihood depends on."""
        return np.array([self.kernel.family == "se", True, True, bool(self.grad)])

    def set_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        ell, s, sn, sg = np.exp(theta)
        kern = self.kernel.with_params(outputscale=float(s))
        if self.kernel.family == "se":
            kern = kern.with_params(lengthscale=float(ell))
        self.kernel = kern
        self.noise = float(sn)
        self.grad_noise = float(sg)
        if self.train is not None:
            self._build_operator(rebuild=False)
            self._solve()
        return self

    def set_data(self, data):
        """Condition on ``data`` (an :class:`ObservationSet`) in the model's input space."""
        self.data = data
        self.train = data.project(self.projection) if self.projection is not None else data
        if self.mean == "constant":
            self.mean_value = float(np.mean(self.train.y))
        else:
            self.mean_value = 0.0
        self.operator = None
        self._build_operator(rebuild=True)
        self._solve()
        return self

    def _choose_grid(self):
        U = self.train.X
        lo, hi = U.min(axis=0), U.max(axis=0)
        if self.kernel.family == "spline" or self.grid_size is not None:
            size = self.grid_size or 30
            span = np.where(hi > lo, hi - lo, 1.0)
            ell = float(np.max(span)) / max(size - 8, 1)
            return auto_grid(lo, hi, ell, spacing_factor=1.0, max_nodes=self.max_grid_nodes)
        return auto_grid(lo, hi, self.kernel.lengthscale, spacing_factor=self.spacing_factor,
                         max_nodes=self.max_grid_nodes)

    def _build_operator(self, rebuild):
        self._reset_cache()
        grad = self.grad
        U = self.train.X
        if self.backend == "exact":
            n, d = U.shape
            K = kernels.assemble_dense(self.kernel, U, with_derivatives=grad)
            nd = np.full(K.shape[0], self.grad_noise**2)
            nd[:n] = self.noise**2
            self.operator = DenseOperator(K, nd)
        elif self.backend == "dski":
            if rebuild or self.operator is None:
                if self.grid is None:
                    self.grid = self._choose_grid()
                self.operator = DskiOperator(self.kernel, self.grid, U, self.noise,
                                             self.grad_noise, with_derivatives=grad,
                                             method=self.interp_method)
            else:
                self.operator = self.operator.with_params(self.kernel, self.noise, self.grad_noise)
        else:
            if rebuild or self.operator is None:
                self.operator = DskipOperator(self.kernel, U, self.rank, self.noise,
                                              self.grad_noise, with_derivatives=grad,
                                              seed=self.seed, method=self.interp_method,
                                              spacing_factor=self.dskip_spacing_factor)
            else:
                self.operator = self.operator.with_params(self.kernel, self.noise, self.grad_noise)

    def targets(self):
        """Centered observation vector in derivative-type-major order."""
        r = self.train.y - self.mean_value
        if self.grad:
            r = np.concatenate([r, self.train.dY.T.ravel()])
        return r

    @property
    def N(self):
        return self.operator.shape[0]

    # -- solves ---------------------------------------------------------------------
    def _cholesky(self):
        if self._chol is None:
            self._chol = scipy.linalg.cho_factor(self.operator.dense(), lower=True)
        return self._chol

    @property
    def preconditioner(self):
        """Pivoted Cholesky preconditioner ``M = D + F F^T`` (built lazily)."""
        if self._precond is None:
            op = self.operator
            piv = pivoted_cholesky(op.kernel_diag(), op.kernel_row,
                                   min(self.precond_rank, self.N))
            self._pivchol = piv
            if piv.rank == 0:
                raise ValueError("pivoted Cholesky returned rank 0; kernel part is zero")
            self._precond = Preconditioner(piv.F, op.noise_diag)
        return self._precond

    def solve(self, B, tol=None):
        """Apply ``K~^{-1}`` to a vector or block."""
        if self.backend == "exact":
            return scipy.linalg.cho_solve(self._cholesky(), B)
        pre = self.preconditioner if self.precondition else None
        res = cg(self.operator, B, tol=self.tol if tol is None else tol, maxit=self.maxit,
                 precond=pre)
        if not res.converged:
            log.warning("CG did not converge in %d iterations", res.iterations)
        self.cg_info = res
        return res.x

    def _solve(self):
        r = self.targets()
        if self.backend == "exact":
            self.alpha = scipy.linalg.cho_solve(self._cholesky(), r)
            return
        self.alpha = self.solve(r)

    # -- likelihood -------------------------------------------------------------------
    def logdet(self):
        if self.backend == "exact":
            L, _ = self._cholesky()
            return 2.0 * float(np.sum(np.log(np.diag(L))))
        return slq_logdet(self.operator, self.num_probes, self.lanczos_steps,
                          seed=self.seed, floor=float(self.operator.noise_diag.min()))

    def log_marginal_likelihood(self):
        """``-1/2 [r^T alpha + log|K~| + N log 2 pi]`` for the current data."""
        if self.alpha is None:
            raise RuntimeError("call set_data first")
        r = self.targets()
        return float(-0.5 * (r @ self.alpha + self.logdet() + r.size * np.log(2 * np.pi)))

    def _dK_matvec(self, i, V):
        """Product with ``dK~/dtheta_i`` for a block ``V``."""
        op = self.operator
        if i == 0:
            if self.backend == "exact":
                if not hasattr(self, "_dK_ell") or self._dK_ell[0] is not self.kernel:
                    dK = kernels.assemble_dense_dlog_lengthscale(
                        self.kernel, self.train.X, with_derivatives=self.grad)
                    self._dK_ell = (self.kernel, dK)
                return self._dK_ell[1] @ V
            if self.backend == "dski":
                return op.dlog_lengthscale_matvec(V)
            raise NotImplementedError
        if i == 1:
            return 2.0 * op.kernel_matvec(V)
        n = self.train.n
        d = np.zeros(self.N)
        if i == 2:
            d[:n] = 2.0 * self.noise**2
        else:
            d[n:] = 2.0 * self.grad_noise**2
        return d[:, None] * V if V.ndim == 2 else d * V

    def lml_gradient(self, stochastic=None, num_probes=None, return_stderr=False,
                     fd_step=1e-4):
        """Gradient of the log marginal likelihood over ``theta``.

        Uses ``1/2 [alpha^T dK alpha - tr(K~^{-1} dK)]``. The trace is exact
        for the exact backend unless ``stochastic=True``; otherwise it is a
        Hutchinson estimate sharing one set of probes across all
        coordinates. The D-SKIP lengthscale coordinate is a central
        difference of the likelihood with common random numbers.
        """
        if stochastic is None:
            stochastic = self.backend != "exact"
        active = self.active_params()
        g = np.zeros(4)
        se = np.zeros(4)
        alpha = self.alpha
        if not stochastic:
            L = self._cholesky()
            Kinv = scipy.linalg.cho_solve(L, np.eye(self.N))
        else:
            p = num_probes or self.num_probes
            Z = np.stack([rademacher(self.N, self.seed + 1, j) for j in range(p)], axis=1)
            Y = self.solve(Z)
        for i in range(4):
            if not active[i]:
                continue
            if i == 0 and self.backend == "dskip":
                g[i] = self._fd_lengthscale(fd_step)
                continue
            if not stochastic:
                if i == 0:
                    dK = self._dK_matvec(0, np.eye(self.N))
                    tr = float(np.sum(Kinv * dK))
                    fit_term = alpha @ (dK @ alpha)
                elif i == 1:
                    K = self.operator.dense(with_noise=False) if self.backend != "exact" \
                        else self.operator.K
                    tr = 2.0 * float(np.sum(Kinv * K))
                    fit_term = 2.0 * alpha @ (K @ alpha)
                else:
                    dd = self._dK_matvec(i, np.ones(self.N))
                    tr = float(np.sum(np.diag(Kinv) * dd))
                    fit_term = float(np.sum(alpha**2 * dd))
                g[i] = 0.5 * (fit_term - tr)
            else:
                samples = np.sum(Y * self._dK_matvec(i, Z), axis=0)
                fit_term = alpha @ self._dK_matvec(i, alpha)
                g[i] = 0.5 * (fit_term - samples.mean())
                se[i] = 0.5 * samples.std(ddof=1) / np.sqrt(samples.size) if samples.size > 1 else 0.0
        return (g, se) if return_stderr else g

    def _fd_lengthscale(self, h):
        theta = self.theta
        vals = []
        for sgn in (1, -1):
            t = theta.copy()
            t[0] += sgn * h
            m = self.copy_unfitted()
            m.set_theta(t)
            m.set_data(self.data)
            vals.append(m.log_marginal_likelihood())
        return (vals[0] - vals[1]) / (2 * h)

    def copy_unfitted(self):
        """Same configuration and hyperparameters, no data."""
        m = GPModel(self.kernel, self.noise, self.grad_noise, self.backend,
                    self.use_gradients, self.projection, self.grid, self.spacing_factor,
                    self.max_grid_nodes, self.grid_size, self.interp_method, self.rank,
                    self.precondition, self.precond_rank, self.tol, self.maxit,
                    self.num_probes, self.lanczos_steps, self.seed, self.mean,
                    self.dskip_spacing_factor)
        return m

    # -- prediction ----------------------------------------------------------------------
    def _to_model_space(self, Xtest):
        Xtest = np.atleast_2d(np.asarray(Xtest, dtype=float))
        if self.projection is not None:
            if Xtest.shape[1] == self.projection.shape[0]:
                return Xtest @ self.projection
        return Xtest

    def _train_cols(self, C):
        """Keep the training columns the model conditions on."""
        return C if self.grad else C[:, :self.train.n]

    def _cross(self, U, derivatives=False):
        """Test-by-training cross-covariances.

        Returns an array of shape ``(1 + d, t, N)`` if ``derivatives`` (value
        rows, then the partial of each test coordinate), else ``(1, t, N)``.
        """
        t, d = U.shape
        if self.backend == "dski":
            op = self.operator
            tw = op.test_weights(U, derivatives=derivatives)
            rows = [tw.W] + (list(tw.dW) if derivatives else [])
            out = []
            for R in rows:
                G = op.kuu.matvec(R.T.toarray())      # m x t
                out.append((op.B @ G).T)
            return np.stack(out)
        if self.backend == "dskip":
            return self._dskip_cross(U, derivatives)
        C = kernels.assemble_dense(self.kernel, U, self.train.X, with_derivatives=True)
        n = self.train.n
        N = C.shape[1]
        cols = slice(0, N) if self.grad else slice(0, n)
        nrow = 1 + d if derivatives else 1
        return np.stack([C[r * t:(r + 1) * t, cols] for r in range(nrow)])

    def _dskip_parts(self, U, derivatives):
        """Per-direction test weights and ``K_j`` products for the D-SKIP factors."""
        parts = []
        for j, f in enumerate(self.operator.factors):
            tw = build_interpolation(f.kuu.grid, U[:, j:j + 1], method=self.interp_method,
                                     derivatives=derivatives)
            rows = [tw.W] + ([tw.dW[0]] if derivatives else [])
            parts.append([(R, f.kuu.matvec(R.T.toarray())) for R in rows])
        return parts

    def _dskip_cross(self, U, derivatives):
        # Uncompressed 1-D factors, consistent with the interpolated training
        # matrix (an exact cross kernel would not be).
        t, d = U.shape
        parts = self._dskip_parts(U, derivatives)
        out = []
        for k in range(1 + d if derivatives else 1):
            C = np.ones((t, self.N))
            for j, f in enumerate(self.operator.factors):
                G = parts[j][1 if k == j + 1 else 0][1]
                C *= (f.B @ G).T
            out.append(C)
        return np.stack(out)

    def _prior(self, U, derivatives=False):
        t, d = U.shape
        if self.backend == "dskip":
            parts = self._dskip_parts(U, derivatives)
            vals = [np.sum(p[0][0].T.toarray() * p[0][1], axis=0) for p in parts]
            prior = np.prod(vals, axis=0)
            if not derivatives:
                return prior, None
            dp = np.empty((t, d))
            for j, p in enumerate(parts):
                dj = 2.0 * np.sum(p[1][0].T.toarray() * p[0][1], axis=0)
                dp[:, j] = dj * np.prod([v for i, v in enumerate(vals) if i != j], axis=0)
            return prior, dp
        if self.backend == "dski":
            op = self.operator
            tw = op.test_weights(U, derivatives=derivatives)
            Wd = tw.W.T.toarray()
            KW = op.kuu.matvec(Wd)
            p = np.sum(Wd * KW, axis=0)
            if not derivatives:
                return p, None
            dp = np.stack([2.0 * np.sum(dW.T.toarray() * KW, axis=0) for dW in tw.dW], axis=1)
            return p, dp
        k0 = float(kernels.radial_profile(self.kernel, 0.0, d)[0])
        return np.full(t, k0), (np.zeros((t, d)) if derivatives else None)

    def predict_mean(self, Xtest, return_grad=False):
        """Posterior mean (and its gradient in the caller's input space)."""
        U = self._to_model_space(Xtest)
        if self.backend == "dski":
            if self._grid_vec is None:
                self._grid_vec = self.operator.grid_vector(self.alpha)
            tw = self.operator.test_weights(U, derivatives=return_grad)
            mu = self.mean_value + tw.W @ self._grid_vec
            if not return_grad:
                return mu
            grad = np.stack([dW @ self._grid_vec for dW in tw.dW], axis=1)
        else:
            C = self._cross(U, derivatives=return_grad)
            mu = self.mean_value + C[0] @ self.alpha
            if not return_grad:
                return mu
            grad = np.stack([C[j + 1] @ self.alpha for j in range(U.shape[1])], axis=1)
        if self.projection is not None and np.asarray(Xtest).shape[-1] == self.projection.shape[0]:
            grad = grad @ self.projection.T
        return mu, grad

    def predict_variance_exact(self, Xtest, tol=None, chunk=512):
        """``k(x,x) - K_xX K~^{-1} K_Xx`` with one solve per test point."""
        U = self._to_model_space(Xtest)
        out = np.empty(U.shape[0])
        tol = min(self.tol, 1e-6) if tol is None else tol
        for s in range(0, U.shape[0], chunk):
            Us = U[s:s + chunk]
            C = self._cross(Us)[0].T
            prior, _ = self._prior(Us)
            out[s:s + chunk] = prior - np.sum(C * self.solve(C, tol=tol), axis=0)
        return out

    def predict_variance_pivchol(self, Xtest, chunk=2048):
        """Variance with ``K~^{-1}`` replaced by the preconditioner solve ``M^{-1}``."""
        U = self._to_model_space(Xtest)
        pre = self.preconditioner
        out = np.empty(U.shape[0])
        for s in range(0, U.shape[0], chunk):
            Us = U[s:s + chunk]
            C = self._cross(Us)[0].T
            prior, _ = self._prior(Us)
            out[s:s + chunk] = prior - pre.quad_form(C)
        return out

    def predict_variance_randomized(self, Xtest, num_probes=100, seed=0,
                                    control_variate=True, return_stderr=False, tol=None):
        """Joint Hutchinson estimate of the predictive variances at ``Xtest``.

        With the control variate each probe ``z`` contributes
        ``z * (A K~^{-1} A^T z - A M^{-1} A^T z)`` with ``A = K_{X'X}``, and the
        estimate is ``v_hat - mean(samples)``; without it the samples are
        ``z * (A K~^{-1} A^T z)`` and the estimate ``diag(K_X'X') - mean``.
        Unbiased in both forms.
        """
        U = self._to_model_space(Xtest)
        A = self._cross(U)[0]                  # t x N
        prior, _ = self._prior(U)
        if control_variate:
            base = self.predict_variance_pivchol(U)
        else:
            base = prior
        t = U.shape[0]
        if num_probes == 0:
            return (base, np.zeros(t)) if return_stderr else base
        Z = np.stack([rademacher(t, seed, i) for i in range(num_probes)], axis=1)
        AZ = A.T @ Z                               # N x p
        S = self.solve(AZ, tol=min(self.tol, 1e-6) if tol is None else tol)
        corr = A @ S
        if control_variate:
            corr -= A @ self.preconditioner.apply(AZ)
        samples = Z * corr                         # t x p
        est = base - samples.mean(axis=1)
        if return_stderr:
            se = samples.std(axis=1, ddof=1) / np.sqrt(num_probes) if num_probes > 1 \
                else np.full(t, np.inf)
            return est, se
        return est

    def predict_with_gradients(self, U, variance="pivchol"):
        """Mean, variance and their gradients at points in model space.

        Used for acquisition optimization. ``variance`` is ``"pivchol"`` or
        ``"exact"``.
        """
        U = np.atleast_2d(np.asarray(U, dtype=float))
        C = self._cross(U, derivatives=True)      # (1+d, t, N)
        prior, dprior = self._prior(U, derivatives=True)
        mu = self.mean_value + C[0] @ self.alpha
        dmu = np.stack([C[j + 1] @ self.alpha for j in range(U.shape[1])], axis=1)
        kap = C[0].T
        d = U.shape[1]
        if variance == "pivchol":
            pc = self.preconditioner
            var = prior - pc.quad_form(kap)
            cross = [pc.bilinear(C[j + 1].T, kap) for j in range(d)]
        else:
            Minv_k = self.solve(kap, tol=min(self.tol, 1e-6))
            var = prior - np.sum(kap * Minv_k, axis=0)
            cross = [np.sum(C[j + 1].T * Minv_k, axis=0) for j in range(d)]
        dvar = np.stack([dprior[:, j] - 2.0 * cross[j] for j in range(d)], axis=1)
        return mu, dmu, var, dvar

    # -- fitting -----------------------------------------------------------------------
    def fit(self, data=None, **kw):
        """Maximize the log marginal likelihood; see :func:`fit`."""
        if data is not None:
            self.set_data(data)
        return fit(self, **kw)

    # -- serialization ------------------------------------------------------------------
    def to_dict(self, data_path=None):
        k = self.kernel
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kernel": {"family": k.family, "lengthscale": k.lengthscale,
                       "outputscale": k.outputscale, "spline_a": k.spline_a,
                       "spline_b": k.spline_b, "spline_radius": k.spline_radius},
            "theta": dict(zip(PARAM_NAMES, map(float, self.theta))),
            "noise": self.noise,
            "grad_noise": self.grad_noise,
            "backend": self.backend,
            "use_gradients": self.use_gradients,
            "mean": self.mean,
            "mean_value": getattr(self, "mean_value", None),
            "grid": None if self.grid is None else self.grid.to_dict(),
            "projection": None if self.projection is None else self.projection.tolist(),
            "solver": {"tol": self.tol, "maxit": self.maxit, "precondition": self.precondition,
                       "precond_rank": self.precond_rank, "rank": self.rank,
                       "num_probes": self.num_probes, "lanczos_steps": self.lanczos_steps,
                       "seed": self.seed, "spacing_factor": self.spacing_factor,
                       "grid_size": self.grid_size, "interp_method": self.interp_method,
                       "max_grid_nodes": self.max_grid_nodes,
                       "dskip_spacing_factor": self.dskip_spacing_factor},
            "data": data_path,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not a gradkrig model file")
        if int(d.get("version", 0)) > MODEL_VERSION:
            raise ValueError(f"model format version {d['version']} is newer than supported")
        kd = d["kernel"]
        kernel = KernelSpec(kd["family"], kd["lengthscale"], kd["outputscale"],
                            kd.get("spline_a"), kd.get("spline_b"), kd.get("spline_radius"))
        s = d.get("solver", {})
        grid = Grid.from_dict(d["grid"]) if d.get("grid") else None
        return cls(kernel, d["noise"], d["grad_noise"], d["backend"], d.get("use_gradients", True),
                   d.get("projection"), grid, s.get("spacing_factor", 4.0),
                   max_grid_nodes=s.get("max_grid_nodes", 2**17),
                   dskip_spacing_factor=s.get("dskip_spacing_factor", 12.0), grid_size=s.get("grid_size"), interp_method=s.get("interp_method", "quintic"),
                   rank=s.get("rank", 100), precondition=s.get("precondition", True),
                   precond_rank=s.get("precond_rank", 100), tol=s.get("tol", 1e-4),
                   maxit=s.get("maxit", 1000), num_probes=s.get("num_probes", 10),
                   lanczos_steps=s.get("lanczos_steps", 50), seed=s.get("seed", 0),
                   mean=d.get("mean", "constant"))

    def save(self, path, data_path=None):
        with open(path, "w") as fh:
            json.dump(self.to_dict(data_path), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _bounds(model):
    data = model.train
    span = data.X.max(axis=0) - data.X.min(axis=0)
    diam = float(np.linalg.norm(span)) or 1.0
    ys = float(np.std(data.y)) or 1.0
    gs = float(np.std(data.dY)) if data.dY is not None else ys
    gs = gs or ys
    # Iterative backends approximate the kernel to roughly 1e-4 relative, so
    # noise far below that only wrecks the conditioning.
    floor = 1e-6 if model.backend == "exact" else 1e-3
    return [
        (np.log(1e-3 * diam), np.log(1e2 * diam)),
        (np.log(1e-3 * ys), np.log(1e3 * ys)),
        (np.log(floor * ys), np.log(10 * ys)),
        (np.log(floor * gs), np.log(10 * gs)),
    ]


def fit(model, maxiter=50, restarts=3, seed=0, spread=1.0, gtol=1e-6):
    """Maximize the log marginal likelihood over the active hyperparameters.

    Quasi-Newton ascent (L-BFGS-B on the negative likelihood) in log space,
    started from the current hyperparameters and ``restarts - 1`` random
    perturbations of them (uniform in ``+-spread`` per coordinate). The best
    restart is installed in ``model``.

    ``maxiter=0`` leaves the hyperparameters unchanged.
    """
    if model.train is None:
        raise RuntimeError("model has no data")
    t0 = time.perf_counter()
    theta0 = model.theta
    active = model.active_params()
    if maxiter == 0 or not active.any():
        L = model.log_marginal_likelihood()
        return FitResult(theta0, L, 0, [], [L], time.perf_counter() - t0)
    bounds = _bounds(model)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    rng = np.random.default_rng(seed)
    starts = [np.clip(theta0, lo, hi)]
    for _ in range(max(restarts, 1) - 1):
        starts.append(np.clip(theta0 + np.where(active, rng.uniform(-spread, spread, 4), 0.0),
                              lo, hi))
    idx = np.flatnonzero(active)

    diagnostics = []
    best = None
    for k, start in enumerate(starts):
        cache = {}

        def evaluate(z):
            key = tuple(np.round(z, 14))
            if key not in cache:
                th = start.copy()
                th[idx] = z
                try:
                    model.set_theta(th)
                    L = model.log_marginal_likelihood()
                    g = model.lml_gradient()[idx]
                except (np.linalg.LinAlgError, ArithmeticError):
                    # numerically non-PD at this trial point; the line search backs off
                    L, g = -np.inf, np.zeros(idx.size)
                cache[key] = (L, g)
            return cache[key]

        history = []

        def objective(z):
            L, g = evaluate(z)
            if not np.isfinite(L):
                return 1e300, np.zeros_like(z)
            return -L, -g

        def callback(z):
            history.append(evaluate(z)[0])

        try:
            history.append(evaluate(start[idx])[0])
            if not np.isfinite(history[0]):
                raise np.linalg.LinAlgError("likelihood is not finite at the starting point")
            res = scipy.optimize.minimize(objective, start[idx], jac=True, method="L-BFGS-B",
                                          bounds=[bounds[i] for i in idx], callback=callback,
                                          options={"maxiter": maxiter, "gtol": gtol})
            th = start.copy()
            th[idx] = res.x
            L = -res.fun
            diagnostics.append({"restart": k, "lml": float(L), "message": str(res.message),
                                "iterations": int(res.nit)})
            if np.isfinite(L) and (best is None or L > best[1]):
                best = (th, L, int(res.nit), history)
        except (np.linalg.LinAlgError, ArithmeticError, ValueError) as exc:
            diagnostics.append({"restart": k, "error": repr(exc)})
    if best is None:
        model.set_theta(theta0)
        raise FitError("all optimizer restarts failed", diagnostics)
    model.set_theta(best[0])
    L = model.log_marginal_likelihood()
    return FitResult(best[0], L, best[2], diagnostics, best[3], time.perf_counter() - t0)
