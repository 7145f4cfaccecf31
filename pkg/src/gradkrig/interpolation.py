"""Local convolutional interpolation onto regular grids.

The default scheme is the 6-point, C^2 piecewise-quintic convolution
kernel that reproduces polynomials up to degree four; the 4-point cubic
kernel of Keys (a = -1/2) is available for comparison. Weights are
tensor products of the 1-D stencils, so ``W`` and each ``dW_j`` carry at
most ``6**d`` nonzeros per row.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Grid",
    "OutOfGridError",
    "SparseInterpolation",
    "quintic_weights",
    "cubic_weights",
    "build_interpolation",
    "auto_grid",
    "STENCILS",
]

# Piece coefficients (highest power first) of the quintic kernel on
# |u| in [0,1), [1,2), [2,3).
_QUINTIC = (
    np.array([-25 / 12, 21 / 4, -35 / 12, -5 / 4, 0.0, 1.0]),
    np.array([25 / 24, -63 / 8, 545 / 24, -245 / 8, 75 / 4, -4.0]),
    np.array([-5 / 24, 21 / 8, -313 / 24, 255 / 8, -153 / 4, 18.0]),
)
_CUBIC = (
    np.array([1.5, -2.5, 0.0, 1.0]),
    np.array([-0.5, 2.5, -4.0, 2.0]),
)


def _piecewise(pieces, u):
    """Evaluate an even piecewise-polynomial kernel and its derivative at ``u``."""
    a = np.abs(u)
    val = np.zeros_like(a)
    der = np.zeros_like(a)
    for i, c in enumerate(pieces):
        mask = (a >= i) & (a < i + 1)
        if mask.any():
            val[mask] = np.polyval(c, a[mask])
            der[mask] = np.polyval(np.polyder(c), a[mask])
    return val, der * np.sign(u)


def _stencil_weights(pieces, t):
    t = np.asarray(t, dtype=float)
    radius = len(pieces)
    offsets = np.arange(-(radius - 1), radius + 1)
    u = t[..., None] - offsets
    w, dw = _piecewise(pieces, u)
    return w, dw


def quintic_weights(t):
    """Six stencil weights and their derivatives for offset ``t`` in [0, 1).

    Stencil nodes sit at relative positions ``-2, -1, 0, 1, 2, 3``; the
    derivative coefficients are per unit cell width (divide by ``h``).
    """
    return _stencil_weights(_QUINTIC, t)


def cubic_weights(t):
    """Keys cubic convolution weights on nodes ``-1, 0, 1, 2``."""
    return _stencil_weights(_CUBIC, t)


STENCILS = {"quintic": _QUINTIC, "cubic": _CUBIC}


class OutOfGridError(ValueError):
    """A point is too close to (or outside) the grid boundary for its stencil."""


@dataclass(frozen=True)
class Grid:
    """Regular tensor grid of inducing points, flattened in C order."""

    origin: tuple
    spacing: tuple
    shape: tuple

    def __post_init__(self):
        if not (len(self.origin) == len(self.spacing) == len(self.shape)):
            raise ValueError("origin, spacing and shape must have equal length")
        if min(self.shape) < 6:
            raise ValueError("every grid dimension needs at least 6 nodes")
        if min(self.spacing) <= 0:
            raise ValueError("grid spacing must be positive")

    @property
    def dim(self):
        return len(self.shape)

    @property
    def size(self):
        return int(np.prod(self.shape))

    def axis(self, j):
        return self.origin[j] + self.spacing[j] * np.arange(self.shape[j])

    def points(self):
        mesh = np.meshgrid(*[self.axis(j) for j in range(self.dim)], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def sub(self, j):
        """The 1-D grid along direction ``j``."""
        return Grid((self.origin[j],), (self.spacing[j],), (self.shape[j],))

    def to_dict(self):
        return {"origin": list(map(float, self.origin)),
                "spacing": list(map(float, self.spacing)),
                "shape": list(map(int, self.shape))}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["origin"]), tuple(d["spacing"]), tuple(d["shape"]))


def auto_grid(lower, upper, lengthscale, spacing_factor=4.0, margin=3,
              max_nodes=2**17, min_interior=8):
    """Grid covering ``[lower, upper]`` plus ``margin`` cells on each side.

    The spacing is ``lengthscale / spacing_factor`` unless that would exceed
    ``max_nodes`` in total, in which case every dimension is coarsened
    uniformly. At least ``min_interior`` nodes span each dimension.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    d = lower.size
    width = np.maximum(upper - lower, 0.0)
    h = np.full(d, float(lengthscale) / spacing_factor)
    h = np.where(width > 0, np.minimum(h, width / (min_interior - 1)), h)
    extra = 2 * margin + 1
    while True:
        interior = np.array([ceil(w / hj - 1e-9) + 1 if w > 0 else 1
                             for w, hj in zip(width, h)])
        shape = interior + extra
        if np.prod(shape.astype(float)) <= max_nodes:
            break
        h = h * 1.05
    h = np.where(width > 0, width / np.maximum(interior - 1, 1), h)
    origin = lower - margin * h
    return Grid(tuple(origin), tuple(h), tuple(int(s) for s in shape))


@dataclass
class SparseInterpolation:
    """Interpolation weights ``W`` (n x m) and derivative weights ``dW[j]``."""

    W: sp.csr_matrix
    dW: list

    @property
    def n(self):
        return self.W.shape[0]

    def stacked(self):
        """``[W; dW_1; ...; dW_d]`` as one sparse matrix."""
        return sp.vstack([self.W, *self.dW], format="csr")


def _locate(grid, X, radius):
    """Per-dimension stencil start indices and fractional offsets."""
    origin = np.asarray(grid.origin)
    spacing = np.asarray(grid.spacing)
    s = (X - origin) / spacing
    base = np.floor(s)
    t = s - base
    base = base.astype(np.int64)
    lo = base - (radius - 1)
    hi = base + radius
    shape = np.asarray(grid.shape)
    bad = (lo < 0) | (hi > shape - 1)
    if bad.any():
        i = int(np.flatnonzero(bad.any(axis=1))[0])
        raise OutOfGridError(
            f"point {i} at {X[i].tolist()} lies outside the grid interior "
            f"(needs {radius - 1} cells below and {radius} above)")
    return lo, t


def build_interpolation(grid, X, method="quintic", derivatives=True):
    """Sparse interpolation matrices from points ``X`` onto ``grid``.

    Raises
    ------
    OutOfGridError
        If any stencil would leave the grid.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if d != grid.dim:
        raise ValueError(f"points are {d}-D but the grid is {grid.dim}-D")
    pieces = STENCILS[method]
    radius = len(pieces)
    S = 2 * radius
    lo, t = _locate(grid, X, radius)
    w, dw = _stencil_weights(pieces, t)          # (n, d, S)
    dw = dw / np.asarray(grid.spacing)[None, :, None]
    strides = np.array([int(np.prod(grid.shape[j + 1:])) for j in range(d)])
    node = lo[:, :, None] + np.arange(S)[None, None, :]   # (n, d, S)

    cols = np.zeros((n, 1), dtype=np.int64)
    for j in range(d):
        cols = (cols[:, :, None] + node[:, j, None, :] * strides[j]).reshape(n, -1)
    rows = np.repeat(np.arange(n), S**d)

    def tensor(factors):
        vals = np.ones((n, 1))
        for f in factors:
            vals = (vals[:, :, None] * f[:, None, :]).reshape(n, -1)
        return sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(n, grid.size))

    W = tensor([w[:, j, :] for j in range(d)])
    dW = []
    if derivatives:
        for k in range(d):
            dW.append(tensor([dw[:, j, :] if j == k else w[:, j, :] for j in range(d)]))
    return SparseInterpolation(W, dW)
