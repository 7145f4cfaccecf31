"""Plain-text data formats: observation CSVs and elevation rasters.

Observation CSV: one header row naming ``x1..xD``, ``y`` and optionally
``g1..gD``; one point per row. Rasters are either ESRI ASCII grids or
headerless CSV matrices (first row is the northern edge).
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass

import numpy as np

from .gp import ObservationSet

__all__ = ["DataError", "read_observations", "write_observations", "read_points",
           "Raster", "read_raster", "write_raster"]


class DataError(ValueError):
    """Malformed input file; the message names the row and column."""


def _read_table(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = np.empty((len(rows) - 1, len(header)))
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise DataError(f"{path}: row {i} has {len(r)} fields, header has {len(header)}")
        for j, c in enumerate(r):
            try:
                body[i - 2, j] = float(c)
            except ValueError:
                raise DataError(f"{path}: row {i}, column {header[j]!r}: "
                                f"cannot parse {c.strip()!r} as a number") from None
            if not np.isfinite(body[i - 2, j]):
                raise DataError(f"{path}: row {i}, column {header[j]!r}: non-finite value")
    return header, body


def _indexed(header, prefix):
    cols = {}
    for j, h in enumerate(header):
        m = re.fullmatch(prefix + r"(\d+)", h)
        if m:
            cols[int(m.group(1))] = j
    if not cols:
        return []
    if sorted(cols) != list(range(1, len(cols) + 1)):
        raise DataError(f"columns {prefix}1..{prefix}{len(cols)} must be contiguous")
    return [cols[k] for k in range(1, len(cols) + 1)]


def read_observations(path):
    header, body = _read_table(path)
    xc = _indexed(header, "x")
    if not xc:
        raise DataError(f"{path}: no x1..xD columns in header {header}")
    if "y" not in header:
        raise DataError(f"{path}: missing column 'y'")
    if body.shape[0] == 0:
        raise DataError(f"{path}: no data rows")
    gc = _indexed(header, "g")
    if gc and len(gc) != len(xc):
        raise DataError(f"{path}: {len(gc)} gradient columns for {len(xc)} inputs")
    y = body[:, header.index("y")]
    return ObservationSet(body[:, xc], y, body[:, gc] if gc else None)


def write_observations(path, data):
    D = data.dim
    cols = [f"x{j + 1}" for j in range(D)] + ["y"]
    M = [data.X, data.y[:, None]]
    if data.dY is not None:
        cols += [f"g{j + 1}" for j in range(D)]
        M.append(data.dY)
    _write(path, cols, np.hstack(M))


def _write(path, cols, M):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in M:
            w.writerow([repr(float(v)) for v in r])


def read_points(path):
    """Inputs ``x1..xD`` from a CSV; other columns are ignored."""
    header, body = _read_table(path)
    xc = _indexed(header, "x")
    if not xc:
        raise DataError(f"{path}: no x1..xD columns in header {header}")
    return body[:, xc]


@dataclass
class Raster:
    """Elevations ``z[row, col]``; row 0 is the northern edge."""

    z: np.ndarray
    x0: float = 0.0          # x of the lower-left cell center
    y0: float = 0.0
    cellsize: float = 1.0
    nodata: float | None = None

    @property
    def shape(self):
        return self.z.shape

    def coordinates(self):
        """``(n, 2)`` cell-center coordinates in row-major order."""
        nr, nc = self.z.shape
        xs = self.x0 + self.cellsize * np.arange(nc)
        ys = self.y0 + self.cellsize * np.arange(nr)[::-1]
        Xg, Yg = np.meshgrid(xs, ys)
        return np.stack([Xg.ravel(), Yg.ravel()], axis=1)

    def valid(self):
        if self.nodata is None:
            return np.isfinite(self.z)
        return np.isfinite(self.z) & (self.z != self.nodata)


_ESRI_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "xllcenter", "yllcenter",
              "cellsize", "nodata_value")


def read_raster(path):
    """ESRI ASCII grid (``.asc``) or headerless CSV matrix."""
    with open(path) as fh:
        text = fh.read()
    first = text.lstrip().split(None, 1)[0].lower() if text.strip() else ""
    if first in _ESRI_KEYS:
        return _read_esri(path, text)
    rows = [r for r in csv.reader(text.splitlines()) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty raster")
    width = len(rows[0])
    for i, r in enumerate(rows, start=1):
        if len(r) != width:
            raise DataError(f"{path}: raster is not rectangular (row {i} has {len(r)} "
                            f"values, row 1 has {width})")
    try:
        z = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    return Raster(z)


def _read_esri(path, text):
    lines = text.splitlines()
    meta = {}
    k = 0
    while k < len(lines):
        parts = lines[k].split()
        if parts and parts[0].lower() in _ESRI_KEYS:
            meta[parts[0].lower()] = float(parts[1])
            k += 1
        else:
            break
    try:
        nc, nr, cs = int(meta["ncols"]), int(meta["nrows"]), meta["cellsize"]
    except KeyError as exc:
        raise DataError(f"{path}: ESRI header is missing {exc.args[0]}") from None
    vals = " ".join(lines[k:]).split()
    if len(vals) != nr * nc:
        raise DataError(f"{path}: raster is not rectangular ({len(vals)} values "
                        f"for {nr} x {nc})")
    z = np.array(vals, dtype=float).reshape(nr, nc)
    if "xllcenter" in meta:
        x0, y0 = meta["xllcenter"], meta["yllcenter"]
    else:
        x0, y0 = meta.get("xllcorner", 0.0) + cs / 2, meta.get("yllcorner", 0.0) + cs / 2
    return Raster(z, x0, y0, cs, meta.get("nodata_value"))


def write_raster(path, raster):
    """ESRI ASCII if ``path`` ends in ``.asc``, else a CSV matrix."""
    z = raster.z
    if str(path).endswith(".asc"):
        nr, nc = z.shape
        with open(path, "w") as fh:
            fh.write(f"ncols {nc}\nnrows {nr}\n")
            fh.write(f"xllcenter {raster.x0!r}\nyllcenter {raster.y0!r}\n")
            fh.write(f"cellsize {raster.cellsize!r}\n")
            fh.write(f"NODATA_value {raster.nodata if raster.nodata is not None else -9999}\n")
            for r in z:
                fh.write(" ".join(repr(float(v)) for v in r) + "\n")
    else:
        np.savetxt(path, z, delimiter=",", fmt="%.17g")
