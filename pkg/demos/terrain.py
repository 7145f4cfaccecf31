"""Terrain reconstruction: SKI on elevations vs D-SKI on elevations plus slopes.

Uses the synthetic raster (120 x 117 cells). Slopes come from finite
differences of the raster itself, so D-SKI sees no extra measurements,
only a different use of the same heights. Takes a few minutes.
"""
import logging

from gradkrig import terrain

logging.basicConfig(level=logging.INFO, format="%(message)s")

raster = terrain.synthetic_terrain(seed=0)
result = terrain.reconstruct(raster, test_fraction=0.1, seed=0)
print(f"{'model':6s} {'ell':>6s} {'s':>7s} {'sigma':>7s} {'test SMAE':>10s} {'time':>7s}")
for f in result.fits:
    r = f.row()
    print(f"{r['model']:6s} {r['lengthscale']:6.2f} {r['outputscale']:7.2f} {r['noise']:7.3f} "
          f"{r['test_smae']:10.4f} {r['seconds']:6.1f}s")
