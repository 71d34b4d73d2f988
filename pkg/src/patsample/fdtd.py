"""Finite-difference reference solver for the 2D wave equation (validation only).

Second-order leapfrog on a uniform square mesh with the 5-point Laplacian,
started from ``p(0) = f``, ``p_t(0) = 0`` via ``p(dt) = f + dt^2/2 Lap f``.
Optional quadratic sponge layer at the outer boundary; Dirichlet zero beyond.
Sensors are read by bilinear interpolation and traces are resampled to the
requested times with a cubic spline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.interpolate import CubicSpline

from .geometry import CoefficientImage, SensorGeometry, Sinogram, TimeGrid, sensor_positions
from .phantom import BumpBasis

MAX_CFL = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class FdtdConfig:
    """Mesh and boundary parameters.

    ``cfl`` is ``c dt / dx`` and must not exceed ``1/sqrt(2)``. ``padding`` is
    the distance between the outermost sensor coordinate and the mesh edge;
    the sponge occupies the outer ``sponge_width`` of that margin.
    """

    spacing: float
    cfl: float = 0.7
    padding: float = 4.0
    sponge_width: float = 0.0
    sponge_strength: float = 0.0

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("FDTD spacing must be positive")
        if not 0 < self.cfl <= MAX_CFL + 1e-12:
            raise ValueError(f"CFL number {self.cfl} violates the 2D stability bound 1/sqrt(2)")
        if self.padding < 0 or self.sponge_width < 0 or self.sponge_strength < 0:
            raise ValueError("padding and sponge parameters must be non-negative")
        if self.sponge_width > self.padding:
            raise ValueError("sponge_width must not exceed padding")

    @property
    def time_step(self) -> float:
        return self.cfl * self.spacing


@dataclass(frozen=True)
class FdtdField:
    """Square mesh field centred on the origin; ``values[iy, ix]``."""

    spacing: float
    values: np.ndarray

    @property
    def half_width(self) -> float:
        return 0.5 * (self.values.shape[0] - 1) * self.spacing

    def axis(self) -> np.ndarray:
        n = self.values.shape[0]
        return (np.arange(n) - 0.5 * (n - 1)) * self.spacing


def mesh_size(half_width: float, spacing: float) -> int:
    """Odd node count so that the origin is a mesh node."""
    return 2 * int(math.ceil(half_width / spacing)) + 1


def sample_bumps(x: CoefficientImage, basis: BumpBasis, spacing: float, half_width: float) -> FdtdField:
    """Exact point samples of ``U* x`` on an FDTD mesh."""
    n = mesh_size(half_width, spacing)
    f = np.zeros((n, n))
    axis = (np.arange(n) - 0.5 * (n - 1)) * spacing
    h = basis.spacing
    X, Y = x.grid.node_coordinates()
    c = x.coefficients
    reach = int(math.ceil(h / spacing))
    for iy, ix in zip(*np.nonzero(c)):
        cx, cy = X[iy, ix], Y[iy, ix]
        jx = int(round((cx - axis[0]) / spacing))
        jy = int(round((cy - axis[0]) / spacing))
        sx = slice(max(jx - reach, 0), min(jx + reach + 1, n))
        sy = slice(max(jy - reach, 0), min(jy + reach + 1, n))
        dx = axis[sx] - cx
        dy = axis[sy] - cy
        f[sy, sx] += c[iy, ix] * basis.profile(np.hypot(dx[None, :], dy[:, None]))
    return FdtdField(spacing, f)


def sponge_profile(n: int, spacing: float, width: float, strength: float) -> np.ndarray:
    if width <= 0 or strength <= 0:
        return np.zeros((n, n))
    idx = np.arange(n)
    depth = np.maximum(width - np.minimum(idx, n - 1 - idx) * spacing, 0.0) / width
    s1 = strength * depth**2
    return s1[None, :] + s1[:, None]


@numba.njit(cache=True)
def _leapfrog(pn, pp, out, c2, damp):
    ny, nx = pn.shape
    for i in range(1, ny - 1):
        for j in range(1, nx - 1):
            lap = pn[i + 1, j] + pn[i - 1, j] + pn[i, j + 1] + pn[i, j - 1] - 4.0 * pn[i, j]
            s = damp[i, j]
            out[i, j] = (2.0 * pn[i, j] - (1.0 - s) * pp[i, j] + c2 * lap) / (1.0 + s)


@numba.njit(cache=True)
def _laplacian(p, out):
    ny, nx = p.shape
    for i in range(1, ny - 1):
        for j in range(1, nx - 1):
            out[i, j] = p[i + 1, j] + p[i - 1, j] + p[i, j + 1] + p[i, j - 1] - 4.0 * p[i, j]


@numba.njit(cache=True)
def _gather(p, iy, ix, wts, out):
    for m in range(iy.shape[0]):
        a = iy[m]
        b = ix[m]
        out[m] = (
            wts[m, 0] * p[a, b]
            + wts[m, 1] * p[a, b + 1]
            + wts[m, 2] * p[a + 1, b]
            + wts[m, 3] * p[a + 1, b + 1]
        )


def _bilinear_stencils(field: FdtdField, points: np.ndarray):
    n = field.values.shape[0]
    x0 = field.axis()[0]
    fx = (points[:, 0] - x0) / field.spacing
    fy = (points[:, 1] - x0) / field.spacing
    ix = np.clip(np.floor(fx).astype(np.int64), 0, n - 2)
    iy = np.clip(np.floor(fy).astype(np.int64), 0, n - 2)
    a = fx - ix
    b = fy - iy
    wts = np.stack([(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b], axis=1)
    return iy, ix, np.ascontiguousarray(wts)


def _run(field, cfg, points, t_end):
    f = np.ascontiguousarray(field.values, dtype=float)
    n = f.shape[0]
    dt = cfg.time_step
    c2 = cfg.cfl**2
    damp = 0.5 * dt * sponge_profile(n, cfg.spacing, cfg.sponge_width, cfg.sponge_strength)
    nsteps = int(math.ceil(t_end / dt)) + 3
    iy, ix, wts = _bilinear_stencils(field, points)
    rec = np.empty((nsteps, len(points)))
    lap = np.zeros_like(f)
    _laplacian(f, lap)
    pp = f.copy()
    pn = f + 0.5 * c2 * lap
    pn[0, :] = pn[-1, :] = pn[:, 0] = pn[:, -1] = 0.0
    _gather(pp, iy, ix, wts, rec[0])
    _gather(pn, iy, ix, wts, rec[1])
    buf = np.zeros_like(f)
    for k in range(2, nsteps):
        _leapfrog(pn, pp, buf, c2, damp)
        pp, pn, buf = pn, buf, pp
        _gather(pn, iy, ix, wts, rec[k])
    return dt * np.arange(nsteps), rec


def fdtd_reference(
    field: FdtdField, cfg: FdtdConfig, geom: SensorGeometry, tgrid: TimeGrid
) -> Sinogram:
    """Pressure traces at the sensors of ``geom`` sampled on ``tgrid``."""
    if not math.isclose(field.spacing, cfg.spacing, rel_tol=1e-12):
        raise ValueError("field spacing differs from the FDTD configuration")
    pts = sensor_positions(geom)
    limit = field.half_width - cfg.padding
    if np.any(np.abs(pts) > limit + 1e-9):
        raise ValueError(
            f"sensor outside the FDTD domain: need |coordinate| <= {limit:.4g} "
            f"(half width {field.half_width:.4g} minus padding {cfg.padding:.4g})"
        )
    times, rec = _run(field, cfg, pts, tgrid.end_time)
    data = CubicSpline(times, rec, axis=0)(tgrid.times()).T
    return Sinogram(geom, tgrid, data)


def fdtd_for_image(
    x: CoefficientImage,
    basis: BumpBasis,
    geom: SensorGeometry,
    tgrid: TimeGrid,
    cfg: FdtdConfig,
) -> Sinogram:
    """Sample ``U* x`` on a mesh just large enough for ``geom`` and run the solver."""
    if cfg.spacing > basis.spacing / 4 * (1 + 1e-12):
        raise ValueError("FDTD spacing must be at most a quarter of the bump spacing")
    reach = float(np.abs(sensor_positions(geom)).max())
    field = sample_bumps(x, basis, cfg.spacing, reach + cfg.padding)
    return fdtd_reference(field, cfg, geom, tgrid)


def reflection_free_padding(geom: SensorGeometry, R0: float, t_end: float) -> float:
    """Padding that keeps wall reflections out of ``[0, t_end]`` without a sponge.

    Any wall point is at least ``L - R0`` from the source and ``L - R`` from the
    sensors, where ``L`` is the mesh half width.
    """
    L = 0.5 * (t_end + R0 + geom.radius)
    return max(L - geom.radius, 0.0) + 1e-9


def energy_history(field: FdtdField, cfg: FdtdConfig, nsteps: int) -> np.ndarray:
    """Discrete leapfrog energy at half steps.

    ``E = 1/2 |(p1 - p0)/dt|^2 + 1/2 <p1, -Lap_h p0>`` (mesh-area weighted),
    conserved exactly by the undamped scheme.
    """
    f = np.ascontiguousarray(field.values, dtype=float)
    dt = cfg.time_step
    c2 = cfg.cfl**2
    damp = 0.5 * dt * sponge_profile(f.shape[0], cfg.spacing, cfg.sponge_width, cfg.sponge_strength)
    area = cfg.spacing**2
    lap = np.zeros_like(f)

    def energy(p0, p1):
        _laplacian(p0, lap)
        kin = np.sum(((p1 - p0) / dt) ** 2)
        pot = -np.sum(p1 * lap) / cfg.spacing**2
        return 0.5 * area * (kin + pot)

    _laplacian(f, lap)
    pp = f.copy()
    pn = f + 0.5 * c2 * lap
    pn[0, :] = pn[-1, :] = pn[:, 0] = pn[:, -1] = 0.0
    out = [energy(pp, pn)]
    buf = np.zeros_like(f)
    for _ in range(nsteps):
        _leapfrog(pn, pp, buf, c2, damp)
        pp, pn, buf = pn, buf, pp
        out.append(energy(pp, pn))
    return np.array(out)


def calibrate_scale(op_factory, cfg: FdtdConfig | None = None, distance_in_h: float = 6.0):
    """Least-squares factor matching the closed-form kernel to FDTD on one bump.

    ``op_factory(geom, tgrid, grid)`` must return a forward operator (typically
    a partial of :func:`patsample.wave.build_forward`). Returns
    ``(scale, relative_misfit)``; the analytic normalisation predicts 1.
    """
    from .geometry import ImageGrid

    grid = ImageGrid(1.0, 1)
    basis = BumpBasis(1.0)
    cfg = cfg or FdtdConfig(spacing=1.0 / 32)
    geom = SensorGeometry(distance_in_h, 1)
    tgrid = TimeGrid.spanning(1.0 / 8, distance_in_h - 1.0, distance_in_h + 3.0)
    op = op_factory(geom, tgrid, grid)
    one = CoefficientImage(grid, np.ones((1, 1)))
    cfg = FdtdConfig(cfg.spacing, cfg.cfl, padding=reflection_free_padding(geom, 1.0, tgrid.end_time))
    ref = fdtd_for_image(one, basis, geom, tgrid, cfg).data.ravel()
    model = op.matvec(one.vector)
    scale = float(ref @ model / (model @ model))
    misfit = float(np.linalg.norm(ref - scale * model) / np.linalg.norm(ref))
    return scale, misfit
