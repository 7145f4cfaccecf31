"""D-SKI: structured kernel interpolation with derivatives.

The kernel matrix with derivatives is approximated by the Gram form

    K_grad ~ B K_UU B^T,    B = [W; dW_1; ...; dW_d]

where ``K_UU`` is the kernel on a regular grid. For a stationary kernel
``K_UU`` is multilevel Toeplitz, and its products are computed through a
multilevel circulant embedding and real FFTs.
"""
from __future__ import annotations

import os

import numpy as np
import scipy.fft
import scipy.sparse as sp

from . import kernels
from .interpolation import build_interpolation
from .linalg import KernelOperator

__all__ = ["GridKernelOperator", "DskiOperator", "fft_workers"]


def fft_workers():
    """Worker count for FFTs, capped by the ``GRADKRIG_THREADS`` variable."""
    env = os.environ.get("GRADKRIG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _grid_offsets(grid):
    axes = [grid.spacing[j] * np.arange(grid.shape[j]) for j in range(grid.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return sum(m**2 for m in mesh)


def _even_extend(col):
    """Mirror a multilevel first column to size ``2(m_j - 1)`` per axis."""
    out = col
    for ax in range(col.ndim):
        m = col.shape[ax]
        tail = np.flip(np.take(out, np.arange(1, m - 1), axis=ax), axis=ax)
        out = np.concatenate([out, tail], axis=ax)
    return out


class GridKernelOperator:
    """Products with the grid kernel matrix ``K_UU`` through circulant embedding.

    Parameters
    ----------
    kernel : KernelSpec
    grid : Grid
    wrt : str, optional
        If ``"log_lengthscale"``, represent the derivative of ``K_UU`` with
        respect to ``log l`` instead.
    """

    def __init__(self, kernel, grid, wrt=None):
        self.kernel = kernel
        self.grid = grid
        self.wrt = wrt
        rho = _grid_offsets(grid)
        self.column = kernels.radial_profile(kernel, rho, grid.dim, wrt=wrt)[0]
        ext = _even_extend(self.column)
        self.ext_shape = ext.shape
        self.spectrum = scipy.fft.rfftn(ext, workers=fft_workers()).real
        # Embedding eigenvalues are informational only; truncated products
        # stay exact whatever their sign.
        self.min_eigenvalue = float(self.spectrum.min())

    @property
    def size(self):
        return self.grid.size

    def matvec(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.size:
            raise ValueError(f"expected leading dimension {self.size}, got {v.shape[0]}")
        d = self.grid.dim
        batch = v.shape[1:]
        V = v.reshape(self.grid.shape + batch)
        axes = tuple(range(d))
        w = fft_workers()
        F = scipy.fft.rfftn(V, s=self.ext_shape, axes=axes, workers=w)
        spec = self.spectrum.reshape(self.spectrum.shape + (1,) * len(batch))
        out = scipy.fft.irfftn(F * spec, s=self.ext_shape, axes=axes, workers=w)
        out = out[tuple(slice(0, m) for m in self.grid.shape)]
        return out.reshape(v.shape)

    __matmul__ = matvec

    def entries(self, idx_a, idx_b):
        """``K_UU[a, b]`` for flat grid indices by lookup in the first column."""
        ua = np.array(np.unravel_index(idx_a, self.grid.shape))
        ub = np.array(np.unravel_index(idx_b, self.grid.shape))
        return self.column[tuple(np.abs(ua - ub))]

    def column_at(self, a):
        """Full column ``K_UU[:, a]`` for a single flat index."""
        ua = np.unravel_index(a, self.grid.shape)
        sl = []
        for j, m in enumerate(self.grid.shape):
            sl.append(np.abs(np.arange(m) - ua[j]))
        return self.column[np.ix_(*sl)].ravel()

    def dense(self):
        idx = np.arange(self.size)
        A, B = np.meshgrid(idx, idx, indexing="ij")
        return self.entries(A.ravel(), B.ravel()).reshape(self.size, self.size)


class DskiOperator(KernelOperator):
    """``B K_UU B^T + diag(noise)`` without ever forming the full matrix.

    Parameters
    ----------
    kernel : KernelSpec
    grid : Grid
    X : array_like, shape (n, d)
    noise : float
        Value noise standard deviation ``sigma_1``.
    grad_noise : float, optional
        Gradient noise standard deviation ``sigma_2``; defaults to ``noise``.
    with_derivatives : bool
        If False this is plain SKI on values (``B = W``).
    method : {"quintic", "cubic"}
    interp : SparseInterpolation, optional
        Reuse precomputed weights (they do not depend on hyperparameters).
    """

    def __init__(self, kernel, grid, X, noise=0.0, grad_noise=None, with_derivatives=True,
                 method="quintic", interp=None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        self.kernel = kernel
        self.grid = grid
        self.X = X
        self.n, self.d = X.shape
        self.with_derivatives = with_derivatives
        self.method = method
        self.interp = interp if interp is not None else build_interpolation(
            grid, X, method=method, derivatives=with_derivatives)
        self.B = self.interp.stacked() if with_derivatives else self.interp.W.tocsr()
        self.Bt = self.B.T.tocsr()
        self.kuu = GridKernelOperator(kernel, grid)
        self.noise = float(noise)
        self.grad_noise = float(noise if grad_noise is None else grad_noise)
        N = self.B.shape[0]
        super().__init__(N)
        nd = np.full(N, self.grad_noise**2)
        nd[:self.n] = self.noise**2
        self.noise_diag = nd

    def with_params(self, kernel=None, noise=None, grad_noise=None):
        """Same data and grid, new hyperparameters; interpolation weights are reused."""
        return DskiOperator(kernel or self.kernel, self.grid, self.X,
                            self.noise if noise is None else noise,
                            self.grad_noise if grad_noise is None else grad_noise,
                            self.with_derivatives, self.method, self.interp)

    def kernel_matvec(self, v):
        """Product with the noise-free part ``B K_UU B^T``."""
        return self.B @ self.kuu.matvec(self.Bt @ v)

    def matvec(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.shape[0]:
            raise ValueError(f"expected length {self.shape[0]}, got {v.shape[0]}")
        nd = self.noise_diag if v.ndim == 1 else self.noise_diag[:, None]
        return self.kernel_matvec(v) + nd * v

    def dlog_lengthscale_matvec(self, v):
        """Product with ``d(B K_UU B^T)/d log l``; interpolation is hyperparameter free."""
        if not hasattr(self, "_dkuu"):
            self._dkuu = GridKernelOperator(self.kernel, self.grid, wrt="log_lengthscale")
        return self.B @ self._dkuu.matvec(self.Bt @ v)

    def kernel_diag(self, chunk=2048):
        B = self.B
        out = np.empty(B.shape[0])
        indptr, indices, data = B.indptr, B.indices, B.data
        nnz = np.diff(indptr)
        S = int(nnz.max()) if nnz.size else 0
        for start in range(0, B.shape[0], chunk):
            stop = min(start + chunk, B.shape[0])
            rows = range(start, stop)
            if np.all(nnz[start:stop] == S):
                sl = slice(indptr[start], indptr[stop])
                idx = indices[sl].reshape(-1, S)
                val = data[sl].reshape(-1, S)
                ia = np.repeat(idx, S, axis=1).ravel()
                ib = np.tile(idx, (1, S)).ravel()
                kv = self.kuu.entries(ia, ib).reshape(-1, S, S)
                out[start:stop] = np.einsum("ra,rab,rb->r", val, kv, val)
            else:
                for r in rows:
                    sl = slice(indptr[r], indptr[r + 1])
                    idx, val = indices[sl], data[sl]
                    ia, ib = np.meshgrid(idx, idx, indexing="ij")
                    kv = self.kuu.entries(ia.ravel(), ib.ravel()).reshape(len(idx), len(idx))
                    out[r] = val @ kv @ val
        return out

    def diag(self):
        return self.kernel_diag() + self.noise_diag

    def kernel_row(self, i):
        self._check_index(i)
        sl = slice(self.B.indptr[i], self.B.indptr[i + 1])
        g = np.zeros(self.kuu.size)
        for a, w in zip(self.B.indices[sl], self.B.data[sl]):
            g += w * self.kuu.column_at(a)
        return self.B @ g

    def row(self, i):
        r = self.kernel_row(i)
        r[i] += self.noise_diag[i]
        return r

    def dense(self, with_noise=True):
        Bd = self.B.toarray()
        K = Bd @ self.kuu.dense() @ Bd.T
        if with_noise:
            K[np.diag_indices_from(K)] += self.noise_diag
        return K

    # cross-covariances for prediction -----------------------------------
    def test_weights(self, Xtest, derivatives=False):
        """Interpolation weights for test points (raises OutOfGridError)."""
        return build_interpolation(self.grid, Xtest, method=self.method,
                                   derivatives=derivatives)

    def grid_vector(self, alpha):
        """``K_UU B^T alpha``: the grid vector for O(1) per-point means."""
        return self.kuu.matvec(self.Bt @ alpha)
