"""Iterative and randomized linear algebra for kernel operators.

Everything here talks to matrices through products, plus (for pivoted
Cholesky) the diagonal and individual rows. Kernel operators carry a
noise-free part and a diagonal noise term so that preconditioners can
be built from the former.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "KernelOperator",
    "DenseOperator",
    "as_operator",
    "CGResult",
    "cg",
    "IndefiniteError",
    "PivotedCholeskyFactor",
    "pivoted_cholesky",
    "Preconditioner",
    "LanczosResult",
    "lanczos",
    "probe_rng",
    "rademacher",
    "slq_logdet",
    "trace_estimate",
]

log = logging.getLogger(__name__)


class KernelOperator:
    """Symmetric operator ``K + diag(noise_diag)`` of size ``N``.

    Subclasses implement :meth:`kernel_matvec`, :meth:`kernel_diag` and
    :meth:`kernel_row` for the noise-free part.
    """

    noise_diag: np.ndarray

    def __init__(self, N):
        self.shape = (int(N), int(N))

    @property
    def N(self):
        return self.shape[0]

    def _check_index(self, i):
        if not 0 <= i < self.N:
            raise IndexError(f"row {i} out of range for size {self.N}")

    def kernel_matvec(self, v):
        raise NotImplementedError

    def kernel_diag(self):
        raise NotImplementedError

    def kernel_row(self, i):
        raise NotImplementedError

    def matvec(self, v):
        v = np.asarray(v, dtype=float)
        nd = self.noise_diag if v.ndim == 1 else self.noise_diag[:, None]
        return self.kernel_matvec(v) + nd * v

    def __matmul__(self, v):
        return self.matvec(v)

    def diag(self):
        return self.kernel_diag() + self.noise_diag

    def row(self, i):
        r = np.array(self.kernel_row(i), dtype=float)
        r[i] += self.noise_diag[i]
        return r


class DenseOperator(KernelOperator):
    """Explicit matrix ``K`` plus diagonal noise."""

    def __init__(self, K, noise_diag=0.0):
        K = np.asarray(K, dtype=float)
        super().__init__(K.shape[0])
        self.K = K
        self.noise_diag = np.broadcast_to(np.asarray(noise_diag, dtype=float), (K.shape[0],)).copy()

    def kernel_matvec(self, v):
        return self.K @ v

    def kernel_diag(self):
        return np.diag(self.K).copy()

    def kernel_row(self, i):
        self._check_index(i)
        return self.K[i].copy()

    def dense(self, with_noise=True):
        K = self.K.copy()
        if with_noise:
            K[np.diag_indices_from(K)] += self.noise_diag
        return K


class _FunctionOperator(KernelOperator):
    def __init__(self, fn, N):
        super().__init__(N)
        self.fn = fn
        self.noise_diag = np.zeros(N)

    def kernel_matvec(self, v):
        return self.fn(v)


def as_operator(A, N=None):
    """Wrap arrays and callables so they expose ``matvec``."""
    if isinstance(A, KernelOperator):
        return A
    if callable(A) and not hasattr(A, "shape"):
        if N is None:
            raise ValueError("size N is required for function operators")
        return _FunctionOperator(A, N)
    if hasattr(A, "matvec") and hasattr(A, "shape"):
        return _FunctionOperator(A.matvec, A.shape[0])
    return DenseOperator(np.asarray(A, dtype=float))


def _apply(A, v):
    return A.matvec(v) if hasattr(A, "matvec") else A @ v


# -- conjugate gradients -----------------------------------------------------

@dataclass
class CGResult:
    """Outcome of :func:`cg`. Non-convergence is reported, never raised."""

    x: np.ndarray
    iterations: int
    converged: bool
    residuals: list = field(default_factory=list)
    column_iterations: np.ndarray | None = None


def cg(op, b, tol=1e-4, maxit=1000, precond=None, x0=None):
    """(Preconditioned) conjugate gradients for symmetric positive definite ``op``.

    ``b`` may be a vector or an ``(N, k)`` block of independent right-hand
    sides; each column stops once ``|op x - b| <= tol |b|``.

    Parameters
    ----------
    op : KernelOperator, ndarray or object with ``matvec``
    b : ndarray
    tol : float
        Relative residual tolerance.
    maxit : int
    precond : callable or object with ``apply``, optional
        Applies an approximation of ``op^{-1}``.
    x0 : ndarray, optional

    Returns
    -------
    CGResult
        ``residuals`` holds the largest relative residual after each step.
    """
    b = np.asarray(b, dtype=float)
    vec = b.ndim == 1
    B = b[:, None] if vec else b
    k = B.shape[1]
    if precond is None:
        M = lambda r: r
    elif hasattr(precond, "apply"):
        M = precond.apply
    else:
        M = precond

    bnorm = np.linalg.norm(B, axis=0)
    X = np.zeros_like(B) if x0 is None else np.array(x0, dtype=float).reshape(B.shape)
    R = B - (_apply(op, X) if x0 is not None else 0.0)
    safe = np.where(bnorm > 0, bnorm, 1.0)
    rel = np.linalg.norm(R, axis=0) / safe
    active = (rel > tol) & (bnorm > 0)
    X[:, bnorm == 0] = 0.0
    col_iter = np.zeros(k, dtype=int)
    history = [float(rel.max()) if k else 0.0]
    if not active.any():
        x = X[:, 0] if vec else X
        return CGResult(x, 0, True, history, col_iter)

    Z = M(R)
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    it = 0
    while it < maxit and active.any():
        it += 1
        a = np.flatnonzero(active)
        AP = _apply(op, P[:, a])
        pAp = np.einsum("ij,ij->j", P[:, a], AP)
        bad = ~(pAp > 0)
        if bad.any():
            # loss of positive curvature: stop those columns where they are
            active[a[bad]] = False
            keep = ~bad
            a, AP, pAp = a[keep], AP[:, keep], pAp[keep]
            if a.size == 0:
                break
        alpha = rz[a] / pAp
        X[:, a] += alpha * P[:, a]
        R[:, a] -= alpha * AP
        col_iter[a] = it
        rel_a = np.linalg.norm(R[:, a], axis=0) / safe[a]
        rel[a] = rel_a
        done = rel_a <= tol
        active[a[done]] = False
        history.append(float(rel.max()))
        still = a[~done]
        if still.size == 0:
            break
        Zs = M(R[:, still])
        rz_new = np.einsum("ij,ij->j", R[:, still], Zs)
        beta = rz_new / rz[still]
        rz[still] = rz_new
        P[:, still] = Zs + beta * P[:, still]

    converged = bool(np.all((rel <= tol) | (bnorm == 0)))
    if not converged:
        log.info("CG stopped after %d iterations with relative residual %.3e", it, rel.max())
    x = X[:, 0] if vec else X
    return CGResult(x, it, converged, history, col_iter)


# -- pivoted Cholesky and the preconditioner ------------------------------------

class IndefiniteError(ArithmeticError):
    """A residual diagonal became clearly negative during pivoted Cholesky."""


@dataclass
class PivotedCholeskyFactor:
    """Low-rank factor ``F`` (already in original row order) with ``F F^T ~ K``.

    ``F[pivots] `` is lower triangular, i.e. ``F = Pi L`` for the pivot
    permutation ``Pi``.
    """

    F: np.ndarray
    pivots: np.ndarray
    residual_trace: float
    initial_trace: float

    @property
    def rank(self):
        return self.F.shape[1]

    @property
    def L(self):
        return self.F[self.pivots]


def pivoted_cholesky(diag, row_fn, max_rank, trace_tol=0.0, neg_tol=1e-10):
    """Greedy truncated pivoted Cholesky factorization.

    Parameters
    ----------
    diag : ndarray, shape (N,)
        Diagonal of the PSD matrix.
    row_fn : callable
        ``row_fn(i)`` returns row ``i`` of the matrix.
    max_rank : int
    trace_tol : float
        Stop once the residual trace falls to ``trace_tol`` times the
        initial trace.
    neg_tol : float
        Residual diagonal entries below ``-neg_tol * max(diag)`` abort.
    """
    d = np.array(diag, dtype=float)
    N = d.size
    scale = float(d.max()) if N else 0.0
    if N and d.min() < -neg_tol * max(scale, 1e-300):
        raise IndefiniteError("negative diagonal entry in pivoted Cholesky input")
    d = np.maximum(d, 0.0)
    initial = float(d.sum())
    max_rank = int(min(max_rank, N))
    F = np.zeros((N, max_rank))
    pivots = []
    tiny = 64 * np.finfo(float).eps * scale
    for k in range(max_rank):
        i = int(np.argmax(d))
        if d[i] <= tiny or d.sum() <= trace_tol * initial:
            break
        row = np.asarray(row_fn(i), dtype=float)
        col = (row - F[:, :k] @ F[i, :k]) / np.sqrt(d[i])
        F[:, k] = col
        pivots.append(i)
        d -= col**2
        d[pivots] = 0.0
        if d.min() < -neg_tol * scale:
            raise IndefiniteError(
                f"residual diagonal {d.min():.3e} at rank {k + 1}; matrix is not PSD")
        d = np.maximum(d, 0.0)
    k = len(pivots)
    return PivotedCholeskyFactor(F[:, :k].copy(), np.array(pivots, dtype=int),
                                 float(d.sum()), initial)


class Preconditioner:
    """Applies ``M^{-1}`` for ``M = D + F F^T`` without Sherman-Morrison-Woodbury.

    With scalar noise ``D = sigma^2 I`` the economy QR factorization
    ``[F; sigma I] = [Q1; Q2] R`` gives ``M^{-1} b = sigma^{-2}(b - Q1 Q1^T b)``.
    With separate value and gradient noise the same identity is used on
    ``D^{-1/2} M D^{-1/2}``, i.e. the QR of ``[D^{-1/2} F; I]``.

    Parameters
    ----------
    F : ndarray, shape (N, k)
        Low-rank factor, ``k >= 1``.
    noise_var : float or ndarray
        Diagonal of ``D``; must be strictly positive.
    """

    def __init__(self, F, noise_var):
        F = np.asarray(F, dtype=float)
        if F.ndim != 2 or F.shape[1] == 0:
            raise ValueError("preconditioner needs a factor with at least one column")
        N, k = F.shape
        nv = np.asarray(noise_var, dtype=float)
        if np.any(~(nv > 0)):
            raise ValueError("preconditioner noise must be strictly positive")
        self.F = F
        self.scalar = nv.ndim == 0 or np.all(nv == nv.flat[0])
        if self.scalar:
            sigma2 = float(nv.flat[0])
            self.inv_sqrt = None
            self.sigma2 = sigma2
            stacked = np.vstack([F, np.sqrt(sigma2) * np.eye(k)])
        else:
            self.inv_sqrt = 1.0 / np.sqrt(np.broadcast_to(nv, (N,)))
            stacked = np.vstack([self.inv_sqrt[:, None] * F, np.eye(k)])
        Q, _ = np.linalg.qr(stacked, mode="reduced")
        self.Q1 = Q[:N]
        self._svd = None

    @property
    def rank(self):
        return self.F.shape[1]

    def project(self, b):
        """Residual projection ``b - Q1 Q1^T b``."""
        return b - self.Q1 @ (self.Q1.T @ b)

    def _scale(self, b):
        if self.inv_sqrt is None:
            return b
        return self.inv_sqrt[:, None] * b if b.ndim == 2 else self.inv_sqrt * b

    def apply(self, b):
        b = np.asarray(b, dtype=float)
        if self.scalar:
            return self.project(b) / self.sigma2
        return self._scale(self.project(self._scale(b)))

    __call__ = apply

    def _basis(self):
        # orthonormal basis U, singular values S of the whitened factor
        if self._svd is None:
            Fw = self.F / np.sqrt(self.sigma2) if self.scalar else self.inv_sqrt[:, None] * self.F
            U, S, _ = np.linalg.svd(Fw, full_matrices=False)
            self._svd = U, S
        return self._svd

    def _split(self, C):
        C = np.asarray(C, dtype=float)
        S_ = C / np.sqrt(self.sigma2) if self.scalar else self._scale(C)
        U, S = self._basis()
        a = U.T @ S_
        return a, S_ - U @ a, S

    def quad_form(self, C):
        """``diag(C^T M^{-1} C)`` for a block of columns ``C``.

        Splits each whitened column into its part in ``range(F)`` and an
        explicitly formed residual; subtracting two squared norms instead
        loses every digit once the noise is tiny.
        """
        return self.bilinear(C, C)

    def bilinear(self, B, C):
        """Column-wise ``diag(B^T M^{-1} C)``, computed like :meth:`quad_form`."""
        a, r, S = self._split(C)
        if B is C:
            ab, rb = a, r
        else:
            ab, rb, _ = self._split(B)
        return np.sum(ab * a / (1.0 + S[:, None] ** 2), axis=0) + np.sum(rb * r, axis=0)

    def dense_inverse(self):
        return self.apply(np.eye(self.F.shape[0]))


# -- Lanczos, SLQ, Hutchinson ------------------------------------------------------

@dataclass
class LanczosResult:
    Q: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    breakdown: bool

    @property
    def rank(self):
        return self.Q.shape[1]

    @property
    def T(self):
        k = self.alpha.size
        T = np.diag(self.alpha)
        if k > 1:
            T += np.diag(self.beta[:k - 1], 1) + np.diag(self.beta[:k - 1], -1)
        return T


def lanczos(matvec, v0, steps, reorthogonalize=True, breakdown_tol=1e-12):
    """Symmetric Lanczos tridiagonalization started from ``v0``.

    Stops early (``breakdown=True``) when the next off-diagonal falls below
    ``breakdown_tol`` times the largest tridiagonal entry seen so far,
    i.e. when the Krylov space has become invariant.
    """
    v0 = np.asarray(v0, dtype=float)
    N = v0.size
    steps = int(min(steps, N))
    Q = np.zeros((N, steps))
    alpha = np.zeros(steps)
    beta = np.zeros(steps)
    q = v0 / np.linalg.norm(v0)
    scale = 0.0
    breakdown = False
    done = 0
    for k in range(steps):
        Q[:, k] = q
        w = matvec(q)
        alpha[k] = q @ w
        w = w - alpha[k] * q
        if k > 0:
            w -= beta[k - 1] * Q[:, k - 1]
        if reorthogonalize:
            for _ in range(2):
                w -= Q[:, :k + 1] @ (Q[:, :k + 1].T @ w)
        beta[k] = np.linalg.norm(w)
        scale = max(scale, abs(alpha[k]), beta[k])
        done = k + 1
        if done == steps:
            break
        if beta[k] <= breakdown_tol * scale:
            breakdown = True
            break
        q = w / beta[k]
    k = done
    return LanczosResult(Q[:, :k], alpha[:k], beta[:k], breakdown)


def probe_rng(seed, index):
    """Independent generator for probe ``index`` under base ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def rademacher(N, seed, index):
    return probe_rng(seed, index).integers(0, 2, size=N) * 2.0 - 1.0


def slq_logdet(op, num_probes=10, lanczos_steps=50, seed=0, floor=None,
               return_samples=False):
    """Stochastic Lanczos quadrature estimate of ``log det(op)``.

    Each Rademacher probe ``z`` contributes ``|z|^2 sum_k tau_k^2 log theta_k``
    where ``theta_k`` are the Ritz values of the Lanczos tridiagonal matrix
    and ``tau_k`` the first components of its eigenvectors.
    """
    op = as_operator(op)
    N = op.shape[0]
    if floor is None:
        nd = getattr(op, "noise_diag", None)
        floor = float(nd.min()) if nd is not None and nd.size and nd.min() > 0 else 1e-300
    samples = np.empty(num_probes)
    clamped = 0
    for i in range(num_probes):
        z = rademacher(N, seed, i)
        res = lanczos(op.matvec, z, lanczos_steps)
        theta, S = np.linalg.eigh(res.T)
        if theta.min() < floor:
            clamped += int(np.sum(theta < floor))
            theta = np.maximum(theta, floor)
        samples[i] = (z @ z) * np.sum(S[0] ** 2 * np.log(theta))
    if clamped:
        warnings.warn(f"slq_logdet clamped {clamped} Ritz values at {floor:.3e}", RuntimeWarning)
    est = float(samples.mean()) if num_probes else 0.0
    return (est, samples) if return_samples else est


def trace_estimate(A, B, num_probes=10, seed=0, tol=1e-4, maxit=1000, precond=None,
                   return_samples=False):
    """Hutchinson estimate of ``tr(A^{-1} B)`` with Rademacher probes.

    ``A`` is solved with CG (one block solve across probes); ``B`` only
    needs products. Non-convergence of the solves is logged and the
    result returned as is.
    """
    A = as_operator(A) if not callable(A) or hasattr(A, "matvec") else A
    N = A.shape[0]
    if num_probes == 0:
        return (0.0, np.zeros(0)) if return_samples else 0.0
    Z = np.stack([rademacher(N, seed, i) for i in range(num_probes)], axis=1)
    BZ = _apply(B, Z) if not callable(B) or hasattr(B, "matvec") else B(Z)
    res = cg(A, Z, tol=tol, maxit=maxit, precond=precond)
    if not res.converged:
        warnings.warn("trace_estimate: CG did not converge", RuntimeWarning)
    samples = np.sum(res.x * BZ, axis=0)
    est = float(samples.mean())
    return (est, samples) if return_samples else est
