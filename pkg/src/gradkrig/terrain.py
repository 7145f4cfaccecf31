"""Terrain reconstruction from gridded elevations.

Gradients come from central differences of the raster. A random subset
of cells is held out. Values-only SKI and D-SKI (values plus
finite-difference gradients) are fitted on the rest and scored with SMAE.

SMAE (standardized mean absolute error) here is the mean absolute error
divided by the mean absolute deviation of the truth about its mean.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .datafiles import Raster
from .gp import GPModel, ObservationSet, fit
from .interpolation import auto_grid
from .kernels import KernelSpec

__all__ = ["finite_difference_gradients", "smae", "synthetic_terrain", "planar_terrain",
           "TerrainFit", "reconstruct"]

log = logging.getLogger(__name__)


def finite_difference_gradients(raster):
    """``(dz/dx, dz/dy)`` on the raster; second-order one-sided at the edges.

    ``y`` points north, i.e. towards row 0.
    """
    z = np.asarray(raster.z, dtype=float)
    gx = np.gradient(z, raster.cellsize, axis=1, edge_order=2)
    gy = -np.gradient(z, raster.cellsize, axis=0, edge_order=2)
    return gx, gy


def smae(pred, truth):
    truth = np.asarray(truth, dtype=float)
    mad = np.mean(np.abs(truth - truth.mean()))
    if mad == 0:
        raise ValueError("SMAE is undefined for a constant truth")
    return float(np.mean(np.abs(np.asarray(pred) - truth)) / mad)


def synthetic_terrain(shape=(120, 117), seed=0, bumps=30, ridges=400, cellsize=1.0,
                      noise=1.0):
    """Stand-in for a binned elevation raster.

    Large Gaussian hills (widths 3 to 15 cells) carry the relief; ``ridges``
    narrow bumps (widths 1.5 to 4 cells) add roughness near the cell scale,
    and ``noise`` is the standard deviation of independent per-cell scatter.
    """
    rng = np.random.default_rng(seed)
    nr, nc = shape
    rr, cc = np.meshgrid(np.arange(nr), np.arange(nc), indexing="ij")
    z = np.zeros(shape)

    def bump(amp, w):
        r0, c0 = rng.uniform(0, nr), rng.uniform(0, nc)
        return amp * np.exp(-((rr - r0) ** 2 + (cc - c0) ** 2) / (2 * w**2))

    for _ in range(bumps):
        z += bump(rng.uniform(-60.0, 150.0), rng.uniform(3.0, 15.0))
    z += 1000.0 + 0.5 * rr - 0.3 * cc
    for _ in range(ridges):
        w = rng.uniform(1.5, 4.0)
        z += bump(rng.normal(0.0, 8.0), w)
    if noise:
        z += noise * rng.standard_normal(shape)
    return Raster(z, 0.0, 0.0, cellsize)


def planar_terrain(shape=(40, 40), a=2.0, b=-1.0, c=500.0, cellsize=1.0):
    r = Raster(np.zeros(shape), 0.0, 0.0, cellsize)
    X = r.coordinates()
    r.z = (a * X[:, 0] + b * X[:, 1] + c).reshape(shape)
    return r


@dataclass
class TerrainFit:
    name: str
    prediction: np.ndarray
    test_smae: float
    overall_smae: float
    hyperparameters: dict
    seconds: float
    cg_iterations: int = 0

    def row(self):
        hp = self.hyperparameters
        return {"model": self.name, "lengthscale": hp["lengthscale"],
                "outputscale": hp["outputscale"], "noise": hp["noise"],
                "grad_noise": hp.get("grad_noise", float("nan")) if self.name == "D-SKI"
                else float("nan"),
                "test_smae": self.test_smae, "overall_smae": self.overall_smae,
                "seconds": self.seconds}


@dataclass
class TerrainResult:
    test_mask: np.ndarray
    fits: list = field(default_factory=list)


def _patch(shape, size):
    """Flat indices of a central ``size x size`` window (clipped to the raster)."""
    nr, nc = shape
    h, w = min(size, nr), min(size, nc)
    r0, c0 = (nr - h) // 2, (nc - w) // 2
    rr, cc = np.meshgrid(np.arange(r0, r0 + h), np.arange(c0, c0 + w), indexing="ij")
    return (rr * nc + cc).ravel()


def reconstruct(raster, test_fraction=0.1, seed=0, fit_method="patch", fit_maxiter=30,
                patch_size=30, hyperparameters=None, grid_spacing=None, tol=1e-4,
                precondition=True, precond_rank=100, num_probes=10, max_grid_nodes=2**17,
                restarts=3, noise_floor=1e-3, models=("SKI", "D-SKI")):
    """Fit SKI and D-SKI on a random ``1 - test_fraction`` of the raster cells.

    Hyperparameters come from ``fit_method``:

    * ``"patch"`` -- exact GP fitted on the training cells of a central
      ``patch_size`` square, then reused for the whole raster (cheap); noise
      levels are floored at ``noise_floor`` times the output scale (per
      lengthscale for gradients) to keep the iterative solve well posed,
    * ``"full"``  -- stochastic fit of the D-SKI model on all cells,
    * ``"none"``  -- ``hyperparameters`` (a dict per model name, or one dict
      for both) or data-scaled defaults.

    The inducing grid spacing defaults to ``min(cell, lengthscale / 3)``.
    Predictions cover every cell; SMAE is reported on held-out cells and on
    the whole raster.
    """
    valid = raster.valid().ravel()
    X = raster.coordinates()
    z = raster.z.ravel().astype(float)
    gx, gy = finite_difference_gradients(raster)
    G = np.stack([gx.ravel(), gy.ravel()], axis=1)
    ok = valid & np.all(np.isfinite(G), axis=1)
    rng = np.random.default_rng(seed)
    idx = np.flatnonzero(ok)
    n_test = int(round(test_fraction * idx.size))
    test = np.zeros(z.size, dtype=bool)
    test[rng.choice(idx, size=n_test, replace=False)] = True
    train = ok & ~test
    patch = np.zeros(z.size, dtype=bool)
    patch[_patch(raster.shape, patch_size)] = True

    cs = raster.cellsize
    ys = float(np.std(z[train])) or 1.0
    gs = float(np.std(G[train])) or ys / cs
    defaults = {"lengthscale": 5.0 * cs, "outputscale": ys, "noise": 2e-2 * ys,
                "grad_noise": 0.1 * gs}
    result = TerrainResult(test.reshape(raster.shape))
    for name in models:
        grad = name == "D-SKI"
        t0 = time.perf_counter()
        hp = dict(defaults)
        if hyperparameters:
            hp.update(hyperparameters.get(name, hyperparameters)
                      if name in hyperparameters else hyperparameters)
        if fit_method == "patch" and fit_maxiter:
            sel = train & patch
            pd = ObservationSet(X[sel], z[sel], G[sel] if grad else None)
            pm = GPModel(KernelSpec.se(hp["lengthscale"], hp["outputscale"]), hp["noise"],
                         hp["grad_noise"], backend="exact")
            pm.set_data(pd)
            fit(pm, maxiter=fit_maxiter, restarts=restarts, seed=seed)
            # the exact patch model tolerates noise the iterative solve cannot
            s = pm.kernel.outputscale
            hp = {"lengthscale": pm.kernel.lengthscale, "outputscale": s,
                  "noise": max(pm.noise, noise_floor * s),
                  "grad_noise": max(pm.grad_noise, noise_floor * s / pm.kernel.lengthscale)}
        h = grid_spacing * cs if grid_spacing else min(cs, hp["lengthscale"] / 3.0)
        grid = auto_grid(X[ok].min(axis=0), X[ok].max(axis=0), h, spacing_factor=1.0,
                         max_nodes=max_grid_nodes)
        data = ObservationSet(X[train], z[train], G[train] if grad else None)
        model = GPModel(KernelSpec.se(hp["lengthscale"], hp["outputscale"]), hp["noise"],
                        hp["grad_noise"], backend="dski", grid=grid, tol=tol,
                        precondition=precondition, precond_rank=precond_rank,
                        num_probes=num_probes, seed=seed)
        model.set_data(data)
        if fit_method == "full" and fit_maxiter:
            fit(model, maxiter=fit_maxiter, restarts=1)
        pred = model.predict_mean(X[ok])
        seconds = time.perf_counter() - t0
        full = np.full(z.size, np.nan)
        full[ok] = pred
        hp = {"lengthscale": model.kernel.lengthscale, "outputscale": model.kernel.outputscale,
              "noise": model.noise, "grad_noise": model.grad_noise}
        result.fits.append(TerrainFit(
            name, full.reshape(raster.shape), smae(full[test], z[test]) if n_test else np.nan,
            smae(full[ok], z[ok]), hp, seconds,
            model.cg_info.iterations if model.cg_info is not None else 0))
        log.info("%s: test SMAE %.4g, overall %.4g (%.1fs)", name, result.fits[-1].test_smae,
                 result.fits[-1].overall_smae, seconds)
    return result
