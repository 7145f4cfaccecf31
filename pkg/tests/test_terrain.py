import numpy as np
import pytest

from gradkrig import terrain
from gradkrig.datafiles import Raster


def test_finite_differences_exact_on_planes():
    r = terrain.planar_terrain((15, 12), a=2.0, b=-1.5, cellsize=3.0)
    gx, gy = terrain.finite_difference_gradients(r)
    assert np.allclose(gx, 2.0) and np.allclose(gy, -1.5)


def test_finite_differences_second_order_on_quadratic():
    r = Raster(np.zeros((20, 20)), 0.0, 0.0, 0.5)
    X = r.coordinates()
    r.z = (X[:, 0] ** 2 + X[:, 0] * X[:, 1]).reshape(20, 20)
    gx, gy = terrain.finite_difference_gradients(r)
    assert np.allclose(gx.ravel(), 2 * X[:, 0] + X[:, 1])
    assert np.allclose(gy.ravel(), X[:, 0])


def test_smae():
    truth = np.array([0.0, 2.0, 4.0])
    assert terrain.smae(truth, truth) == 0.0
    assert terrain.smae(truth + 1, truth) == pytest.approx(1 / (4 / 3))
    with pytest.raises(ValueError):
        terrain.smae([1, 1], [2, 2])


def test_plane_reconstructed_exactly():
    r = terrain.planar_terrain((30, 30), a=2.0, b=-1.0, c=500.0)
    res = terrain.reconstruct(r, seed=0, fit_method="none",
                              hyperparameters={"lengthscale": 10.0, "outputscale": 30.0,
                                               "noise": 1e-3, "grad_noise": 1e-3},
                              tol=1e-8)
    for f in res.fits:
        assert f.test_smae <= 1e-3, f.name
    assert res.test_mask.mean() == pytest.approx(0.1, abs=0.01)


def test_synthetic_terrain_is_seeded():
    a, b = terrain.synthetic_terrain(seed=3), terrain.synthetic_terrain(seed=3)
    assert a.shape == (120, 117) and np.array_equal(a.z, b.z)
    assert not np.array_equal(a.z, terrain.synthetic_terrain(seed=4).z)


def test_nodata_cells_excluded():
    r = terrain.planar_terrain((20, 20))
    r.z[5, 5] = -9999.0
    r.nodata = -9999.0
    res = terrain.reconstruct(r, fit_method="none", tol=1e-6,
                              hyperparameters={"lengthscale": 8.0, "outputscale": 20.0,
                                               "noise": 1e-2, "grad_noise": 1e-2})
    assert np.isnan(res.fits[0].prediction[5, 5])
    assert not res.test_mask[5, 5]
