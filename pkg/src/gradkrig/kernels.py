"""Closed-form stationary kernels with first and second derivatives.

Two families are supported: the squared exponential (SE) kernel

    k(x, y) = s^2 exp(-|x - y|^2 / (2 l^2))

and the polyharmonic spline kernel

    k(x, y) = s^2 (r^3 + a r^2 + b)              (odd input dimension)
    k(x, y) = s^2 (r^2 log r + a r^2 + b)        (even input dimension)

with r = |x - y|. Both are radial, so everything is written in terms of
the squared distance rho = r^2 and the profile derivatives d/drho and
d^2/drho^2. For a profile kappa(rho):

    dk/dy_q       = -2 kappa'(rho) (x_q - y_q)
    dk/dx_p       =  2 kappa'(rho) (x_p - y_p)
    d2k/dx_p dy_q = -4 kappa''(rho) (x_p - y_p)(x_q - y_q) - 2 kappa'(rho) delta_pq

Derivative kernel matrices use the derivative-type-major layout
``[f; d_1 f; ...; d_d f]``: all value rows first, then all rows for the
partial in direction 1, and so on. :func:`point_major_permutation` maps
this to the per-point grouped ordering.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "KernelSpec",
    "DenseSizeError",
    "spline_constants",
    "radial_profile",
    "kernel_matrix",
    "eval",
    "eval_grad",
    "eval_hess_block",
    "assemble_dense",
    "assemble_dense_dlog_lengthscale",
    "point_major_permutation",
    "DEFAULT_DENSE_CAP",
]

#: Largest number of entries :func:`assemble_dense` will allocate by default.
DEFAULT_DENSE_CAP = 60_000_000

FAMILIES = ("se", "spline")

# Relative radius (to the domain diameter) used to regularise the
# log-singular second derivative of the even-dimension spline at r = 0.
_EVEN_SPLINE_FLOOR = 1e-3


class DenseSizeError(ValueError):
    """Raised when a dense assembly would exceed the configured size cap."""


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and hyperparameters.

    Parameters
    ----------
    family : {"se", "spline"}
    lengthscale : float
        SE lengthscale, in input units. Ignored by the spline family.
    outputscale : float
        Output scale ``s``; the SE kernel at coincident points equals ``s**2``.
    spline_a, spline_b : float, optional
        Spline constants; see :func:`spline_constants`.
    spline_radius : float, optional
        Domain diameter the spline constants were derived from.
    """

    family: str = "se"
    lengthscale: float = 1.0
    outputscale: float = 1.0
    spline_a: float | None = None
    spline_b: float | None = None
    spline_radius: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")
        if not self.outputscale > 0:
            raise ValueError("outputscale must be positive")
        if self.family == "spline" and (self.spline_a is None or self.spline_b is None):
            raise ValueError("spline kernel needs spline_a and spline_b; see KernelSpec.spline")

    @classmethod
    def se(cls, lengthscale=1.0, outputscale=1.0):
        return cls("se", float(lengthscale), float(outputscale))

    @classmethod
    def spline(cls, lower, upper, outputscale=1.0):
        """Spline kernel whose constants are fitted to the box ``[lower, upper]``."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        radius = float(np.linalg.norm(upper - lower))
        a, b = spline_constants(radius, lower.size)
        return cls("spline", 1.0, float(outputscale), a, b, radius)

    @property
    def separable(self):
        return self.family == "se"

    def with_params(self, **kw):
        return replace(self, **kw)


def spline_constants(radius, dim):
    """Constants ``(a, b)`` making the spline kernel positive definite on a
    domain of diameter ``radius``.

    These are the thin-plate covariances of Williams & Fitzgibbon (2006),
    divided by two::

        odd d:   r^3 - (3R/2) r^2 + R^3/2
        even d:  r^2 log r - ((1 + 2 log R)/2) r^2 + R^2/2

    Both are nonincreasing on ``[0, R]`` and vanish (with zero slope) at
    ``r = R``.
    """
    R = float(radius)
    if not R > 0:
        raise ValueError("spline domain radius must be positive")
    if dim % 2:
        return -1.5 * R, 0.5 * R**3
    return -(1.0 + 2.0 * np.log(R)) / 2.0, 0.5 * R**2


def radial_profile(kernel, rho, dim, wrt=None):
    """Return ``(kappa, kappa', kappa'')`` at squared distances ``rho``.

    ``wrt="log_lengthscale"`` returns the derivative of the profile (and
    its rho-derivatives) with respect to ``log l`` instead; only the SE
    family depends on the lengthscale.
    """
    rho = np.asarray(rho, dtype=float)
    s2 = kernel.outputscale**2
    if kernel.family == "se":
        l2 = kernel.lengthscale**2
        e = s2 * np.exp(-0.5 * rho / l2)
        if wrt is None:
            return e, -e / (2 * l2), e / (4 * l2 * l2)
        if wrt == "log_lengthscale":
            return (e * rho / l2,
                    e * (1.0 / l2 - rho / (2 * l2 * l2)),
                    e * (-1.0 / (l2 * l2) + rho / (4 * l2**3)))
        raise ValueError(f"unknown parameter {wrt!r}")

    if wrt == "log_lengthscale":
        z = np.zeros_like(rho)
        return z, z, z
    if wrt is not None:
        raise ValueError(f"unknown parameter {wrt!r}")
    a, b = kernel.spline_a, kernel.spline_b
    if dim % 2:
        r = np.sqrt(rho)
        k0 = s2 * (rho * r + a * rho + b)
        k1 = s2 * (1.5 * r + a)
        with np.errstate(divide="ignore"):
            k2 = np.where(rho > 0, s2 * 0.75 / np.where(rho > 0, r, 1.0), 0.0)
        return k0, k1, k2
    pos = rho > 0
    safe = np.where(pos, rho, 1.0)
    logr = np.log(safe)
    k0 = s2 * (np.where(pos, 0.5 * rho * logr, 0.0) + a * rho + b)
    k1 = s2 * (0.5 * logr + 0.5 + a)
    k2 = np.where(pos, s2 / (2 * safe), 0.0)
    if not pos.all():
        # log-singular at r = 0; evaluate kappa' at a floor radius instead.
        floor = (_EVEN_SPLINE_FLOOR * (kernel.spline_radius or 1.0)) ** 2
        k1 = np.where(pos, k1, s2 * (0.5 * np.log(floor) + 0.5 + a))
    return k0, k1, k2


def _as_points(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError("points must be a 2-D array of shape (n, d)")
    return X


def _check_dims(X, Y):
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")


def kernel_matrix(kernel, X, Y=None):
    """Plain ``n x n'`` kernel matrix on values only."""
    X = _as_points(X)
    Y = X if Y is None else _as_points(Y)
    _check_dims(X, Y)
    rho = _sqdist(X, Y)
    return radial_profile(kernel, rho, X.shape[1])[0]


def _sqdist(X, Y):
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def eval(kernel, x, y):
    """Kernel value ``k(x, y)`` for two single points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(radial_profile(kernel, np.dot(x - y, x - y), x.size)[0])


def eval_grad(kernel, x, y):
    """Gradient of ``k(x, y)`` with respect to the second argument ``y``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    delta = x - y
    _, k1, _ = radial_profile(kernel, np.dot(delta, delta), x.size)
    return -2.0 * k1 * delta


def eval_hess_block(kernel, x, y):
    """Mixed second derivatives ``d^2 k / dx_p dy_q`` as a ``d x d`` matrix."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    delta = x - y
    rho = np.dot(delta, delta)
    _, k1, k2 = radial_profile(kernel, rho, x.size)
    H = -4.0 * k2 * np.outer(delta, delta) - 2.0 * k1 * np.eye(x.size)
    if rho == 0 and kernel.family == "spline" and x.size % 2 == 0:
        H -= 2.0 * kernel.outputscale**2 / x.size * np.eye(x.size)
    return H


def _assemble(profile, X, Y, with_derivatives, scale, coincident_fix=None):
    k0, k1, k2 = profile
    n, d = X.shape
    m = Y.shape[0]
    if not with_derivatives:
        return k0
    diff = X[:, None, :] - Y[None, :, :]
    K = np.empty((n * (d + 1), m * (d + 1)))
    K[:n, :m] = k0
    for q in range(d):
        K[:n, (q + 1) * m:(q + 2) * m] = -2.0 * k1 * diff[:, :, q]
    for p in range(d):
        rows = slice((p + 1) * n, (p + 2) * n)
        K[rows, :m] = 2.0 * k1 * diff[:, :, p]
        for q in range(d):
            blk = -4.0 * k2 * diff[:, :, p] * diff[:, :, q]
            if p == q:
                blk -= 2.0 * k1
                if coincident_fix is not None:
                    blk += coincident_fix
            K[rows, (q + 1) * m:(q + 2) * m] = blk
    if scale != 1.0:
        K[n:, :] *= scale
        K[:, m:] *= scale
    return K


def _check_cap(n_rows, n_cols, cap):
    if n_rows * n_cols > cap:
        raise DenseSizeError(
            f"dense assembly of {n_rows} x {n_cols} exceeds the cap of {cap} entries")


def assemble_dense(kernel, X, Y=None, with_derivatives=True, scale_derivatives=False,
                   max_entries=DEFAULT_DENSE_CAP):
    """Dense kernel matrix with derivative blocks.

    Parameters
    ----------
    kernel : KernelSpec
    X, Y : array_like, shape (n, d) and (n', d)
        ``Y`` defaults to ``X``.
    with_derivatives : bool
        If False, return the ``n x n'`` value block only.
    scale_derivatives : bool
        Multiply derivative rows and columns by the lengthscale so that all
        blocks share output units. Off by default.
    max_entries : int
        Refuse assemblies larger than this.

    Returns
    -------
    ndarray, shape (n(d+1), n'(d+1))
        Derivative-type-major block layout.
    """
    X = _as_points(X)
    Y = X if Y is None else _as_points(Y)
    _check_dims(X, Y)
    d = X.shape[1]
    f = d + 1 if with_derivatives else 1
    _check_cap(X.shape[0] * f, Y.shape[0] * f, max_entries)
    rho = _sqdist(X, Y)
    profile = radial_profile(kernel, rho, d)
    fix = None
    if with_derivatives and kernel.family == "spline" and d % 2 == 0:
        # isotropic limit of -4 kappa'' dx dx^T at coincident points
        fix = np.where(rho == 0, -2.0 * kernel.outputscale**2 / d, 0.0)
    scale = kernel.lengthscale if scale_derivatives else 1.0
    return _assemble(profile, X, Y, with_derivatives, scale, fix)


def assemble_dense_dlog_lengthscale(kernel, X, Y=None, with_derivatives=True,
                                    max_entries=DEFAULT_DENSE_CAP):
    """Derivative of :func:`assemble_dense` with respect to ``log l``."""
    X = _as_points(X)
    Y = X if Y is None else _as_points(Y)
    _check_dims(X, Y)
    d = X.shape[1]
    f = d + 1 if with_derivatives else 1
    _check_cap(X.shape[0] * f, Y.shape[0] * f, max_entries)
    profile = radial_profile(kernel, _sqdist(X, Y), d, wrt="log_lengthscale")
    return _assemble(profile, X, Y, with_derivatives, 1.0)


def point_major_permutation(n, d):
    """Index array ``perm`` with ``K[perm][:, perm]`` in point-major order.

    Point-major order groups ``[f_i, d_1 f_i, ..., d_d f_i]`` per point, so
    the value-only matrix of the first ``k`` points is no longer a
    contiguous block but the derivative layout of a subset of points is.
    """
    return (np.arange(d + 1)[None, :] * n + np.arange(n)[:, None]).ravel()
