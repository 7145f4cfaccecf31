"""Active subspaces from sampled gradients.

The gradient covariance ``C = (1/N) sum_i g_i g_i^T`` is estimated from
samples and eigendecomposed; its leading eigenvectors span the directions
along which the function varies most. A GP can then use the reduced
kernel ``k(P^T x, P^T x')``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .kernels import KernelSpec, kernel_matrix

__all__ = ["ActiveSubspace", "estimate", "reduce_kernel", "ReducedKernel",
           "subspace_distance", "select_dimension"]


@dataclass(frozen=True)
class ActiveSubspace:
    """Eigenvalues (descending) and eigenvectors (columns) of the gradient covariance."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def ambient_dim(self):
        return self.eigenvectors.shape[0]

    def projection(self, d=None, mass=0.99):
        """First ``d`` eigenvectors; ``d`` defaults to :func:`select_dimension`."""
        if d is None:
            d = select_dimension(self.eigenvalues, mass)
        if not 1 <= d <= self.ambient_dim:
            raise ValueError(f"subspace dimension must be in [1, {self.ambient_dim}]")
        return self.eigenvectors[:, :d]

    def sample_directions(self, d, rng, pool=None):
        """Pick ``d`` distinct leading directions at random.

        Indices are drawn without replacement from the top ``pool`` (default
        ``2 d``) eigenvectors with probabilities proportional to their
        eigenvalues; columns are returned in index order.
        """
        pool = min(pool or 2 * d, self.ambient_dim)
        if d > pool:
            raise ValueError("cannot draw more directions than the pool holds")
        lam = np.clip(self.eigenvalues[:pool], 0.0, None)
        if lam.sum() <= 0 or np.count_nonzero(lam) < d:
            p = None
        else:
            p = lam / lam.sum()
        idx = np.sort(rng.choice(pool, size=d, replace=False, p=p))
        return self.eigenvectors[:, idx], idx


def estimate(gradients):
    """Active subspace of ``N x D`` gradient samples (full spectrum)."""
    G = np.atleast_2d(np.asarray(gradients, dtype=float))
    if G.shape[0] < 1:
        raise ValueError("need at least one gradient sample")
    if not np.all(np.isfinite(G)):
        raise ValueError("gradient samples must be finite")
    C = G.T @ G / G.shape[0]
    lam, V = scipy.linalg.eigh(C)
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)   # round-off only; C is PSD
    V = V[:, order]
    # Fix signs so the largest-magnitude entry of each vector is positive.
    flip = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])])
    return ActiveSubspace(lam, V * np.where(flip == 0, 1.0, flip))


def select_dimension(eigenvalues, mass=0.99):
    """Smallest ``d`` whose leading eigenvalues hold at least ``mass`` of the total."""
    lam = np.asarray(eigenvalues, dtype=float)
    total = lam.sum()
    if total <= 0:
        return 1
    return int(np.searchsorted(np.cumsum(lam) / total, mass - 1e-12) + 1)


def subspace_distance(A, B):
    """Spectral norm of ``P_A - P_B`` for the column spans of ``A`` and ``B``."""
    Qa, _ = np.linalg.qr(np.asarray(A, dtype=float))
    Qb, _ = np.linalg.qr(np.asarray(B, dtype=float))
    return float(np.linalg.norm(Qa @ Qa.T - Qb @ Qb.T, 2))


@dataclass(frozen=True)
class ReducedKernel:
    """``k(P^T x, P^T x')``: a base kernel acting on projected inputs."""

    kernel: KernelSpec
    P: np.ndarray

    def project_inputs(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.P.shape[0]:
            raise ValueError(f"inputs are {X.shape[1]}-D, projection expects {self.P.shape[0]}")
        return X @ self.P

    def project_gradients(self, G):
        """Chain rule: gradients in ``u = P^T x`` are ``P^T grad_x``."""
        return self.project_inputs(G)

    def lift_gradients(self, Gu):
        return np.asarray(Gu) @ self.P.T

    def __call__(self, X, Y):
        return kernel_matrix(self.kernel, self.project_inputs(X), self.project_inputs(Y))


def reduce_kernel(kernel, P, tol=1e-10):
    """Wrap ``kernel`` so that it acts on ``P^T x``; ``P`` needs orthonormal columns."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape[1] > P.shape[0]:
        raise ValueError("projection must be D x d with d <= D")
    if np.max(np.abs(P.T @ P - np.eye(P.shape[1]))) > tol:
        raise ValueError("projection columns must be orthonormal")
    return ReducedKernel(kernel, P)
