import numpy as np
import pytest

from gradkrig import datafiles
from gradkrig.datafiles import DataError, Raster
from gradkrig.gp import ObservationSet


def test_observation_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    d = ObservationSet(rng.random((7, 3)), rng.random(7), rng.random((7, 3)))
    datafiles.write_observations(tmp_path / "o.csv", d)
    back = datafiles.read_observations(tmp_path / "o.csv")
    assert np.array_equal(back.X, d.X) and np.array_equal(back.dY, d.dY)
    assert np.array_equal(datafiles.read_points(tmp_path / "o.csv"), d.X)


def test_values_only_and_column_order(tmp_path):
    (tmp_path / "o.csv").write_text("y,x2,x1\n1.0,0.2,0.1\n2.0,0.4,0.3\n")
    d = datafiles.read_observations(tmp_path / "o.csv")
    assert d.dY is None and np.array_equal(d.X, [[0.1, 0.2], [0.3, 0.4]])


@pytest.mark.parametrize("text, msg", [
    ("x1,y\n0.1,abc\n", "row 2, column 'y'"),
    ("x1,y\n0.1\n", "row 2 has 1 fields"),
    ("x1,y\n0.1,nan\n", "non-finite"),
    ("x1,x3,y\n0,0,0\n", "contiguous"),
    ("x1,y,g1,g2\n0,0,0,0\n", "gradient columns"),
    ("a,y\n0,0\n", "no x1..xD"),
    ("x1,z\n0,0\n", "missing column 'y'"),
    ("x1,y\n", "no data rows"),
    ("", "empty"),
])
def test_malformed_observations(tmp_path, text, msg):
    (tmp_path / "o.csv").write_text(text)
    with pytest.raises(DataError, match=msg):
        datafiles.read_observations(tmp_path / "o.csv")


@pytest.mark.parametrize("suffix", [".asc", ".csv"])
def test_raster_round_trip(tmp_path, suffix):
    z = np.arange(12.0).reshape(3, 4)
    datafiles.write_raster(tmp_path / f"r{suffix}", Raster(z, 10.0, 20.0, 2.0))
    r = datafiles.read_raster(tmp_path / f"r{suffix}")
    assert np.array_equal(r.z, z)
    if suffix == ".asc":
        assert (r.x0, r.y0, r.cellsize) == (10.0, 20.0, 2.0)


def test_esri_corner_header_and_nodata(tmp_path):
    (tmp_path / "r.asc").write_text("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\n"
                                    "cellsize 10\nNODATA_value -9999\n1 2\n-9999 4\n")
    r = datafiles.read_raster(tmp_path / "r.asc")
    assert (r.x0, r.y0) == (5.0, 5.0)
    assert r.valid().tolist() == [[True, True], [False, True]]


def test_raster_coordinates_north_up():
    X = Raster(np.zeros((2, 3)), 0.0, 0.0, 1.0).coordinates()
    assert X[0].tolist() == [0.0, 1.0] and X[-1].tolist() == [2.0, 0.0]


def test_non_rectangular_rasters(tmp_path):
    (tmp_path / "r.csv").write_text("1,2,3\n4,5\n")
    with pytest.raises(DataError, match="not rectangular"):
        datafiles.read_raster(tmp_path / "r.csv")
    (tmp_path / "r.asc").write_text("ncols 2\nnrows 2\ncellsize 1\n1 2 3\n")
    with pytest.raises(DataError, match="not rectangular"):
        datafiles.read_raster(tmp_path / "r.asc")
