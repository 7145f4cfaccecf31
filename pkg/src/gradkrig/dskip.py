"""D-SKIP: Hadamard-product structure for separable kernels with derivatives.

For a product kernel ``k(x, y) = prod_j k_j(x_j, y_j)`` every entry of the
derivative kernel matrix is a product of one-dimensional entries, in
which direction ``j`` contributes a derivative factor only on rows/columns
belonging to the partial in direction ``j``. So

    K_grad = A_1 o A_2 o ... o A_d,    A_j = B_j K_j B_j^T,

where ``B_j`` stacks ``d + 1`` copies of the 1-D interpolation matrix
``W_j``, with ``dW_j`` in the slot of group ``j + 1``. Each ``A_j`` is
compressed with Lanczos to ``Q_j T_j Q_j^T``; pairs are merged in a
balanced tree and re-compressed to the target rank. Products with a
Hadamard pair of low-rank factors cost ``O(N r^2)``.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .dski import GridKernelOperator
from .interpolation import auto_grid, build_interpolation
from .kernels import KernelSpec
from .linalg import KernelOperator, lanczos

__all__ = [
    "UnsupportedKernelError",
    "OneDimFactor",
    "LanczosFactor",
    "HadamardPair",
    "build_factor",
    "lanczos_lowrank",
    "merge_factors",
    "hadamard_mvm",
    "hadamard_diag",
    "hadamard_row",
    "DskipOperator",
]


class UnsupportedKernelError(ValueError):
    """D-SKIP needs a separable kernel."""


class OneDimFactor:
    """``A_j = B_j K_j B_j^T`` of size ``n(d+1)``; noise free."""

    def __init__(self, kernel1d, grid1d, X, j, with_derivatives=True, method="quintic"):
        X = np.asarray(X, dtype=float)
        n, d = X.shape
        self.j = j
        self.n, self.d = n, d
        interp = build_interpolation(grid1d, X[:, j:j + 1], method=method,
                                     derivatives=with_derivatives)
        self.W = interp.W
        self.dW = interp.dW[0] if with_derivatives else None
        if with_derivatives:
            blocks = [self.dW if g == j + 1 else self.W for g in range(d + 1)]
            self.B = sp.vstack(blocks, format="csr")
        else:
            self.B = self.W.tocsr()
        self.Bt = self.B.T.tocsr()
        self.kuu = GridKernelOperator(kernel1d, grid1d)
        self.shape = (self.B.shape[0],) * 2

    def matvec(self, v):
        return self.B @ self.kuu.matvec(self.Bt @ v)

    __matmul__ = matvec

    def dense(self):
        Bd = self.B.toarray()
        return Bd @ self.kuu.dense() @ Bd.T


def _factor_kernel(kernel, d):
    return KernelSpec.se(kernel.lengthscale, kernel.outputscale ** (1.0 / d))


def _check_separable(kernel):
    if not kernel.separable:
        raise UnsupportedKernelError(
            f"D-SKIP needs a separable kernel; {kernel.family!r} is not a product kernel")


def build_factor(kernel, X, j, grid1d=None, with_derivatives=True, method="quintic",
                 spacing_factor=4.0, max_nodes=4096):
    """One-dimensional factor for direction ``j``.

    The output scale is split evenly, ``s^(2/d)`` per factor, so that the
    Hadamard product carries ``s^2``.
    """
    _check_separable(kernel)
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    if grid1d is None:
        xj = X[:, j]
        grid1d = auto_grid([xj.min()], [xj.max()], kernel.lengthscale,
                           spacing_factor=spacing_factor, max_nodes=max_nodes)
    return OneDimFactor(_factor_kernel(kernel, d), grid1d, X, j, with_derivatives, method)


class LanczosFactor:
    """Low-rank symmetric approximation ``Q T Q^T``."""

    def __init__(self, Q, T, breakdown=False):
        self.Q = Q
        self.T = T
        self.breakdown = breakdown
        self.M = T @ Q.T          # r x N, cached for Hadamard products

    @property
    def rank(self):
        return self.Q.shape[1]

    @property
    def shape(self):
        return (self.Q.shape[0],) * 2

    def matvec(self, v):
        return self.Q @ (self.M @ v)

    __matmul__ = matvec

    def diag(self):
        return np.einsum("ir,ri->i", self.Q, self.M)

    def row(self, i):
        return self.Q @ self.M[:, i]

    def dense(self):
        return self.Q @ self.M


def lanczos_lowrank(op, r, seed=0):
    """``r`` steps of Lanczos with full reorthogonalization.

    The start vector is ``op @ z`` for a seeded Gaussian ``z``.

    On breakdown the factor is returned early with its achieved rank and
    ``breakdown=True``.
    """
    N = op.shape[0]
    z = np.random.default_rng(seed).standard_normal(N)
    # starting inside range(op) makes r steps exact for a rank-r operator
    v0 = op.matvec(z)
    if not np.linalg.norm(v0) > 0:
        v0 = z
    res = lanczos(op.matvec, v0, min(int(r), N))
    return LanczosFactor(res.Q, res.T, res.breakdown)


class HadamardPair:
    """Product operator ``(Q_a T_a Q_a^T) o (Q_b T_b Q_b^T)``."""

    def __init__(self, a, b):
        if a.shape != b.shape:
            raise ValueError("Hadamard factors must have the same size")
        self.a, self.b = a, b
        self.shape = a.shape

    def matvec(self, v):
        v = np.asarray(v, dtype=float)
        if v.ndim == 2:
            return np.stack([self.matvec(v[:, i]) for i in range(v.shape[1])], axis=1)
        C = self.a.M @ (v[:, None] * self.b.M.T)
        return np.einsum("ir,ir->i", self.a.Q @ C, self.b.Q)

    __matmul__ = matvec

    def diag(self):
        return self.a.diag() * self.b.diag()

    def row(self, i):
        return self.a.row(i) * self.b.row(i)


def merge_factors(factors, rank, seed=0):
    """Balanced pairwise merging (1-2, 3-4, ...) until at most two factors remain.

    Each merged pair is re-compressed to ``rank`` with Lanczos.
    """
    level = list(factors)
    k = 0
    while len(level) > 2:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            pair = HadamardPair(level[i], level[i + 1])
            nxt.append(lanczos_lowrank(pair, rank, seed=seed + 7919 * (k + 1)))
            k += 1
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level


def _final(factors, rank, seed):
    if len(factors) == 0:
        raise ValueError("need at least one factor")
    if len(factors) > 2:
        factors = merge_factors(factors, rank, seed)
    return factors[0] if len(factors) == 1 else HadamardPair(*factors)


def hadamard_mvm(factors, v, rank=None, seed=0):
    """Product with the Hadamard product of low-rank factors.

    More than two factors are first merged (see :func:`merge_factors`),
    re-compressing to ``rank`` (default: the largest factor rank).
    """
    rank = rank or max(f.rank for f in factors)
    return _final(factors, rank, seed).matvec(v)


def hadamard_diag(factors, rank=None, seed=0):
    rank = rank or max(f.rank for f in factors)
    return _final(factors, rank, seed).diag()


def hadamard_row(factors, i, rank=None, seed=0):
    N = factors[0].shape[0]
    if not 0 <= i < N:
        raise IndexError(f"row {i} out of range for size {N}")
    rank = rank or max(f.rank for f in factors)
    return _final(factors, rank, seed).row(i)


class DskipOperator(KernelOperator):
    """D-SKIP approximation of the derivative kernel matrix plus diagonal noise.

    Parameters
    ----------
    kernel : KernelSpec
        Must be separable (SE).
    X : array_like, shape (n, d)
    rank : int
        Lanczos rank for every factor and merge.
    noise, grad_noise : float
        Value and gradient noise standard deviations. Noise is added outside
        the Hadamard structure.
    grids : list of Grid, optional
        One 1-D grid per direction; built automatically when omitted.
    """

    def __init__(self, kernel, X, rank=100, noise=0.0, grad_noise=None, grids=None,
                 with_derivatives=True, seed=0, method="quintic", spacing_factor=4.0):
        _check_separable(kernel)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        self.kernel = kernel
        self.X = X
        self.n, self.d = X.shape
        self.rank = int(rank)
        self.seed = seed
        self.with_derivatives = with_derivatives
        self.method = method
        self.spacing_factor = spacing_factor
        if grids is None:
            grids = []
            for j in range(self.d):
                xj = X[:, j]
                grids.append(auto_grid([xj.min()], [xj.max()], kernel.lengthscale,
                                       spacing_factor=spacing_factor, max_nodes=4096))
        self.grids = grids
        self.factors = [build_factor(kernel, X, j, grids[j], with_derivatives, method)
                        for j in range(self.d)]
        self.compressed = [lanczos_lowrank(f, self.rank, seed=seed + j)
                           for j, f in enumerate(self.factors)]
        merged = merge_factors(self.compressed, self.rank, seed=seed + 104729)
        self.op = merged[0] if len(merged) == 1 else HadamardPair(*merged)
        N = self.factors[0].shape[0]
        super().__init__(N)
        self.noise = float(noise)
        self.grad_noise = float(noise if grad_noise is None else grad_noise)
        nd = np.full(N, self.grad_noise**2)
        nd[:self.n] = self.noise**2
        self.noise_diag = nd

    def with_params(self, kernel=None, noise=None, grad_noise=None):
        if kernel is None or kernel == self.kernel:
            new = object.__new__(DskipOperator)
            new.__dict__.update(self.__dict__)
            new.noise = self.noise if noise is None else float(noise)
            new.grad_noise = self.grad_noise if grad_noise is None else float(grad_noise)
            nd = np.full(self.N, new.grad_noise**2)
            nd[:self.n] = new.noise**2
            new.noise_diag = nd
            return new
        return DskipOperator(kernel, self.X, self.rank,
                             self.noise if noise is None else noise,
                             self.grad_noise if grad_noise is None else grad_noise,
                             self.grids, self.with_derivatives, self.seed, self.method,
                             self.spacing_factor)

    def kernel_matvec(self, v):
        return self.op.matvec(v)

    def kernel_diag(self):
        return self.op.diag()

    def kernel_row(self, i):
        self._check_index(i)
        return self.op.row(i)

    def dense(self, with_noise=True):
        K = self.op.matvec(np.eye(self.N))
        K = 0.5 * (K + K.T)
        if with_noise:
            K[np.diag_indices_from(K)] += self.noise_diag
        return K

    def uncompressed_dense(self):
        """Hadamard product of the uncompressed 1-D factors (small N only)."""
        K = np.ones(self.shape)
        for f in self.factors:
            K *= f.dense()
        return K
