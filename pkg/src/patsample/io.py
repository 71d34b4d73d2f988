"""Self-describing binary files for rasters and sinograms, plus PGM export.

Layout: one magic line, one line of compact JSON (sorted keys), then the
payload as little-endian float32 in row-major order. Float32 data round-trip
bit-exactly; float64 data are rounded to float32 on write.
"""

from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from .geometry import CoefficientImage, ImageGrid, SensorGeometry, Sinogram, TimeGrid

RASTER_MAGIC = b"PATSAMPLE-RASTER\n"
SINOGRAM_MAGIC = b"PATSAMPLE-SINOGRAM\n"
VERSION = 1
DTYPE = np.dtype("<f4")


class FileFormatError(OSError):
    pass


def _write(path, magic: bytes, header: dict, data: np.ndarray) -> None:
    header = dict(header, version=VERSION, dtype="<f4", shape=list(data.shape))
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    payload = np.ascontiguousarray(data, dtype=DTYPE).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(line)
        fh.write(payload)


def _read(path, magic: bytes):
    with open(path, "rb") as fh:
        got = fh.readline()
        if got != magic:
            raise FileFormatError(f"{path}: not a {magic.strip().decode()} file")
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}: corrupt header ({exc})") from None
        payload = fh.read()
    if header.get("version") != VERSION or header.get("dtype") != "<f4":
        raise FileFormatError(f"{path}: unsupported version or dtype")
    shape = tuple(header["shape"])
    expected = int(np.prod(shape)) * DTYPE.itemsize
    if len(payload) != expected:
        raise FileFormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    return header, np.frombuffer(payload, dtype=DTYPE).reshape(shape)


def write_raster(path, image: CoefficientImage, meta: dict | None = None) -> None:
    header = {"kind": "raster", "grid": asdict(image.grid), "meta": meta or {}}
    _write(path, RASTER_MAGIC, header, image.coefficients)


def read_raster(path) -> tuple[CoefficientImage, dict]:
    header, data = _read(path, RASTER_MAGIC)
    g = header["grid"]
    grid = ImageGrid(g["spacing"], g["samples_per_axis"], tuple(g["center"]), g["support_radius"])
    return CoefficientImage(grid, data.astype(np.float64)), header


def write_sinogram(path, sino: Sinogram, meta: dict | None = None) -> None:
    header = {
        "kind": "sinogram",
        "geometry": asdict(sino.geometry),
        "time_grid": asdict(sino.time_grid),
        "effective_h_theta": sino.geometry.angular_step_h_theta,
        "meta": meta or {},
    }
    _write(path, SINOGRAM_MAGIC, header, sino.data)


def read_sinogram(path) -> tuple[Sinogram, dict]:
    header, data = _read(path, SINOGRAM_MAGIC)
    geom = SensorGeometry(**header["geometry"])
    tgrid = TimeGrid(**header["time_grid"])
    return Sinogram(geom, tgrid, data.copy()), header


def write_pgm(path, values: np.ndarray, window: tuple[float, float] | None = None) -> tuple[float, float]:
    """16-bit binary PGM; row 0 of the file is the top (largest y)."""
    v = np.asarray(values, dtype=float)
    lo, hi = window if window is not None else (float(v.min()), float(v.max()))
    span = hi - lo if hi > lo else 1.0
    q = np.clip(np.rint((v - lo) / span * 65535.0), 0, 65535).astype(">u2")
    q = q[::-1]
    head = f"P5\n# window {lo!r} {hi!r}\n{q.shape[1]} {q.shape[0]}\n65535\n".encode()
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(q.tobytes())
    return lo, hi
