"""Analytic test objectives with gradients.

Formulas follow the Simon Fraser University virtual library of simulation
experiments (Surjanovic & Bingham) unless a docstring says otherwise.
Every function is vectorized over rows of an ``(n, d)`` array.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gp import ObservationSet

__all__ = [
    "TestFunction",
    "OutOfDomainError",
    "branin",
    "franke",
    "sine_norm",
    "sixhump",
    "styblinski_tang",
    "hartmann3",
    "welch",
    "ackley",
    "rastrigin",
    "friedman",
    "embed",
    "sample_dataset",
    "get",
    "REGISTRY",
]


class OutOfDomainError(ValueError):
    pass


@dataclass(frozen=True)
class TestFunction:
    """A test objective with its gradient, domain box and known minimum."""

    __test__ = False  # keep pytest from collecting this class

    name: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    value: object = field(repr=False)
    gradient: object = field(repr=False)
    fmin: float | None = None
    argmin: np.ndarray | None = None

    def _check(self, X):
        tol = 1e-12 * np.maximum(1.0, self.upper - self.lower)
        if np.any(X < self.lower - tol) or np.any(X > self.upper + tol):
            bad = np.flatnonzero(np.any((X < self.lower - tol) | (X > self.upper + tol), axis=1))
            raise OutOfDomainError(f"{self.name}: point {int(bad[0])} lies outside the domain")

    def __call__(self, x, check=True):
        return self.evaluate(x, check)[0]

    def evaluate(self, x, check=True):
        """Value and gradient; a single point gives a scalar and a vector."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.dim:
            raise ValueError(f"{self.name} takes {self.dim}-D inputs, got {X.shape[1]}")
        if check:
            self._check(X)
        f, g = self.value(X), self.gradient(X)
        return (float(f[0]), g[0]) if single else (f, g)

    @property
    def width(self):
        return self.upper - self.lower


def _box(lo, hi, d):
    return np.full(d, float(lo)), np.full(d, float(hi))


# -- 2-D functions -------------------------------------------------------------

_BR = dict(a=1.0, b=5.1 / (4 * np.pi**2), c=5 / np.pi, r=6.0, s=10.0, t=1 / (8 * np.pi))


def _branin_f(X):
    p = _BR
    x1, x2 = X[:, 0], X[:, 1]
    q = x2 - p["b"] * x1**2 + p["c"] * x1 - p["r"]
    return p["a"] * q**2 + p["s"] * (1 - p["t"]) * np.cos(x1) + p["s"]


def _branin_g(X):
    p = _BR
    x1, x2 = X[:, 0], X[:, 1]
    q = x2 - p["b"] * x1**2 + p["c"] * x1 - p["r"]
    g1 = 2 * p["a"] * q * (-2 * p["b"] * x1 + p["c"]) - p["s"] * (1 - p["t"]) * np.sin(x1)
    return np.stack([g1, 2 * p["a"] * q], axis=1)


branin = TestFunction(
    "branin", 2, np.array([-5.0, 0.0]), np.array([10.0, 15.0]), _branin_f, _branin_g,
    fmin=0.397887357729738, argmin=np.array([np.pi, 2.275]))
"""Branin: ``a(x2 - b x1^2 + c x1 - r)^2 + s(1-t)cos(x1) + s`` on [-5,10]x[0,15]."""

# Franke: four Gaussian bumps; (amplitude, cx, sx, cy, sy) with the exponent
# -(9x - cx)^2 / sx - (9y - cy)^2 / sy, except the second term which is
# linear in y: -(9y + 1) / 10.
_FR = ((0.75, 2.0, 4.0, 2.0, 4.0), (0.5, 7.0, 4.0, 3.0, 4.0), (-0.2, 4.0, 1.0, 7.0, 1.0))


def _franke_parts(X):
    x, y = 9 * X[:, 0], 9 * X[:, 1]
    terms = []
    for a, cx, sx, cy, sy in _FR:
        e = a * np.exp(-(x - cx) ** 2 / sx - (y - cy) ** 2 / sy)
        terms.append((e, -2 * (x - cx) / sx * 9, -2 * (y - cy) / sy * 9))
    e = 0.75 * np.exp(-(x + 1) ** 2 / 49 - (y + 1) / 10)
    terms.append((e, -2 * (x + 1) / 49 * 9, np.full_like(y, -0.9)))
    return terms


def _franke_f(X):
    return sum(t[0] for t in _franke_parts(X))


def _franke_g(X):
    parts = _franke_parts(X)
    return np.stack([sum(e * gx for e, gx, _ in parts), sum(e * gy for e, _, gy in parts)], axis=1)


franke = TestFunction("franke", 2, *_box(0, 1, 2), _franke_f, _franke_g)
"""Franke's bivariate test function on the unit square."""


def _sine_norm_f(X):
    return np.sin(2 * np.pi * np.linalg.norm(X, axis=1))


def _sine_norm_g(X):
    r = np.linalg.norm(X, axis=1)
    safe = np.where(r > 0, r, 1.0)
    c = np.where(r > 0, 2 * np.pi * np.cos(2 * np.pi * r) / safe, 0.0)
    return c[:, None] * X


sine_norm = TestFunction("sine_norm", 2, *_box(0, 1, 2), _sine_norm_f, _sine_norm_g,
                         fmin=-1.0)
"""``sin(2 pi ||x||)`` on the unit square. The gradient at the origin corner is set to 0."""


def _sixhump_f(X):
    x, y = X[:, 0], X[:, 1]
    return (4 - 2.1 * x**2 + x**4 / 3) * x**2 + x * y + (-4 + 4 * y**2) * y**2


def _sixhump_g(X):
    x, y = X[:, 0], X[:, 1]
    return np.stack([8 * x - 8.4 * x**3 + 2 * x**5 + y, x - 8 * y + 16 * y**3], axis=1)


sixhump = TestFunction("sixhump", 2, np.array([-3.0, -2.0]), np.array([3.0, 2.0]),
                       _sixhump_f, _sixhump_g, fmin=-1.031628453489877,
                       argmin=np.array([0.0898, -0.7126]))
"""Six-hump camel on [-3,3]x[-2,2]."""


def styblinski_tang(d=2):
    """``1/2 sum(x^4 - 16 x^2 + 5 x)`` on ``[-5, 5]^d``."""
    xs = -2.903534018185960
    return TestFunction(
        "styblinski_tang", d, *_box(-5, 5, d),
        lambda X: 0.5 * np.sum(X**4 - 16 * X**2 + 5 * X, axis=1),
        lambda X: 0.5 * (4 * X**3 - 32 * X + 5),
        fmin=d * 0.5 * (xs**4 - 16 * xs**2 + 5 * xs), argmin=np.full(d, xs))


# -- Hartmann 3-D ----------------------------------------------------------------

_H3_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_H3_A = np.array([[3.0, 10, 30], [0.1, 10, 35], [3.0, 10, 30], [0.1, 10, 35]])
_H3_P = 1e-4 * np.array([[3689, 1170, 2673], [4699, 4387, 7470],
                         [1091, 8732, 5547], [381, 5743, 8828]])


def _h3_terms(X):
    diff = X[:, None, :] - _H3_P[None]                 # n x 4 x 3
    e = _H3_ALPHA * np.exp(-np.sum(_H3_A * diff**2, axis=2))
    return e, diff


hartmann3 = TestFunction(
    "hartmann3", 3, *_box(0, 1, 3),
    lambda X: -np.sum(_h3_terms(X)[0], axis=1),
    lambda X: (lambda e, diff: np.einsum("ni,nij->nj", e, 2 * _H3_A * diff))(*_h3_terms(X)),
    fmin=-3.86278214782076, argmin=np.array([0.114614, 0.555649, 0.852547]))
"""Hartmann 3-D on the unit cube."""


# -- Welch et al. (1992), 20-D -------------------------------------------------------
# Linear coefficients for x2, x3, x6, x7, x9, x10, x11, x14, x15, x17, x18 (1-based).
_WELCH_LIN = {2: 0.05, 3: 0.08, 6: -0.03, 7: 0.03, 9: -0.09, 10: -0.01, 11: -0.07,
              14: -0.04, 15: 0.06, 17: -0.01, 18: -0.03}


def _welch_f(X):
    x = lambda i: X[:, i - 1]
    f = (5 * x(12) / (1 + x(1)) + 5 * (x(4) - x(20)) ** 2 + x(5) + 40 * x(19) ** 3
         - 5 * x(19) + 0.25 * x(13) ** 2)
    for i, c in _WELCH_LIN.items():
        f = f + c * x(i)
    return f


def _welch_g(X):
    x = lambda i: X[:, i - 1]
    G = np.zeros_like(X)
    G[:, 0] = -5 * x(12) / (1 + x(1)) ** 2
    G[:, 11] = 5 / (1 + x(1))
    G[:, 3] = 10 * (x(4) - x(20))
    G[:, 19] = -10 * (x(4) - x(20))
    G[:, 4] = 1.0
    G[:, 18] = 120 * x(19) ** 2 - 5
    G[:, 12] = 0.5 * x(13)
    for i, c in _WELCH_LIN.items():
        G[:, i - 1] = c
    return G


welch = TestFunction("welch", 20, *_box(-0.5, 0.5, 20), _welch_f, _welch_g)
"""Welch et al. (1992) screening function on ``[-0.5, 0.5]^20``.

``5 x12/(1+x1) + 5(x4-x20)^2 + x5 + 40 x19^3 - 5 x19 + 0.05 x2 + 0.08 x3
- 0.03 x6 + 0.03 x7 - 0.09 x9 - 0.01 x10 - 0.07 x11 + 0.25 x13^2 - 0.04 x14
+ 0.06 x15 - 0.01 x17 - 0.03 x18`` (SFU library version).
"""


# -- d-dimensional multimodal functions -----------------------------------------------

def ackley(d=5, a=20.0, b=0.2, c=2 * np.pi):
    """``-a exp(-b sqrt(mean x^2)) - exp(mean cos(c x)) + a + e`` on ``[-32.768, 32.768]^d``.

    The gradient at the origin (a kink of the first term) is defined as 0.
    """
    def f(X):
        r = np.sqrt(np.mean(X**2, axis=1))
        return -a * np.exp(-b * r) - np.exp(np.mean(np.cos(c * X), axis=1)) + a + np.e

    def g(X):
        r = np.sqrt(np.mean(X**2, axis=1))
        safe = np.where(r > 0, r, 1.0)
        t1 = np.where(r > 0, a * b * np.exp(-b * r) / (d * safe), 0.0)[:, None] * X
        t2 = (np.exp(np.mean(np.cos(c * X), axis=1)) * c / d)[:, None] * np.sin(c * X)
        return t1 + t2

    return TestFunction("ackley", d, *_box(-32.768, 32.768, d), f, g, fmin=0.0,
                        argmin=np.zeros(d))


def rastrigin(d=5):
    """``10 d + sum(x^2 - 10 cos(2 pi x))`` on ``[-5.12, 5.12]^d``."""
    return TestFunction(
        "rastrigin", d, *_box(-5.12, 5.12, d),
        lambda X: 10 * d + np.sum(X**2 - 10 * np.cos(2 * np.pi * X), axis=1),
        lambda X: 2 * X + 20 * np.pi * np.sin(2 * np.pi * X),
        fmin=0.0, argmin=np.zeros(d))


def _friedman_f(X):
    return (10 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20 * (X[:, 2] - 0.5) ** 2
            + 10 * X[:, 3] + 5 * X[:, 4])


def _friedman_g(X):
    c = 10 * np.pi * np.cos(np.pi * X[:, 0] * X[:, 1])
    return np.stack([c * X[:, 1], c * X[:, 0], 40 * (X[:, 2] - 0.5),
                     np.full(len(X), 10.0), np.full(len(X), 5.0)], axis=1)


friedman = TestFunction("friedman", 5, *_box(0, 1, 5), _friedman_f, _friedman_g)
"""Friedman (1991): ``10 sin(pi x1 x2) + 20(x3 - 1/2)^2 + 10 x4 + 5 x5`` on the unit cube."""


REGISTRY = {
    "branin": lambda: branin,
    "franke": lambda: franke,
    "sine_norm": lambda: sine_norm,
    "sixhump": lambda: sixhump,
    "styblinski_tang": styblinski_tang,
    "hartmann3": lambda: hartmann3,
    "welch": lambda: welch,
    "ackley": ackley,
    "rastrigin": rastrigin,
    "friedman": lambda: friedman,
}


def get(name, dim=None):
    """Look up a test function by name; ``dim`` applies to the d-dimensional families."""
    try:
        make = REGISTRY[name.lower().replace("-", "_")]
    except KeyError:
        raise KeyError(f"unknown test function {name!r}; known: {sorted(REGISTRY)}") from None
    if dim is not None and make in (styblinski_tang, ackley, rastrigin):
        return make(dim)
    fn = make()
    if dim is not None and dim != fn.dim:
        raise ValueError(f"{fn.name} is {fn.dim}-D")
    return fn


def random_orthonormal(D, d, seed=0):
    """``D x d`` matrix with orthonormal columns, seeded."""
    if d > D:
        raise ValueError("need D >= d")
    A = np.random.default_rng(seed).standard_normal((D, d))
    Q, R = np.linalg.qr(A)
    return Q * np.sign(np.diag(R))


def embed(fn, D, seed=0, lower=None, upper=None, Q=None):
    """``f_D(x) = f(Q^T x)`` for a seeded ``D x d`` orthonormal ``Q``.

    The embedded domain defaults to ``fn``'s box repeated to ``D`` coordinates
    (meaningful for cubes); ``Q^T x`` is not checked against ``fn``'s box.
    When ``D == fn.dim`` and ``Q`` is not given, ``Q`` is the identity.
    """
    if D < fn.dim:
        raise ValueError("ambient dimension must be at least the function's")
    if Q is None:
        Q = np.eye(D) if D == fn.dim else random_orthonormal(D, fn.dim, seed)
    Q = np.asarray(Q, dtype=float)
    lo = np.full(D, fn.lower.min()) if lower is None else np.broadcast_to(lower, (D,)).astype(float)
    hi = np.full(D, fn.upper.max()) if upper is None else np.broadcast_to(upper, (D,)).astype(float)
    emb = TestFunction(f"{fn.name}_in_{D}d", D, lo, hi,
                       lambda X: fn.value(X @ Q),
                       lambda X: fn.gradient(X @ Q) @ Q.T,
                       fmin=fn.fmin)
    object.__setattr__(emb, "Q", Q)
    return emb


def sample_dataset(fn, n, scheme="uniform", seed=0, noise=0.0, grad_noise=0.0,
                   gradients=True):
    """Sample ``n`` points of ``fn`` into an :class:`~gradkrig.gp.ObservationSet`.

    ``scheme="grid"`` places ``ceil(n^(1/d))`` points per axis and keeps the
    first ``n`` in C order. Gaussian noise with standard deviations ``noise``
    and ``grad_noise`` is added to values and gradients.
    """
    rng = np.random.default_rng(seed)
    if scheme == "uniform":
        X = fn.lower + rng.random((n, fn.dim)) * fn.width
    elif scheme == "grid":
        m = int(np.ceil(n ** (1.0 / fn.dim) - 1e-9))
        axes = [np.linspace(fn.lower[j], fn.upper[j], m) for j in range(fn.dim)]
        X = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=1)[:n]
    else:
        raise ValueError(f"unknown sampling scheme {scheme!r}")
    y, G = fn.evaluate(X)
    if noise:
        y = y + noise * rng.standard_normal(y.shape)
    if grad_noise:
        G = G + grad_noise * rng.standard_normal(G.shape)
    return ObservationSet(X, y, G if gradients else None)
