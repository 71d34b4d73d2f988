"""Forward wave operator ``W`` for bump-lattice sources and its exact adjoint.

The pressure at distance ``d`` from a single bump follows from the 2D
Poisson-type formula

    p(t) = d/dt  int_0^t  r (M u)(r) / sqrt(t^2 - r^2) dr
         = (1/t) int_0^t  r (r M u)'(r) / sqrt(t^2 - r^2) dr,

where ``M u`` is the circular mean of the bump around the sensor. The
integrand has a square-root endpoint singularity at ``r = t`` that the
substitution ``r = a + (t - a) sin^2(theta)`` removes. The circular mean
and its radial derivative are computed by Gauss-Legendre quadrature over
the arc of the circle that meets the bump.

The single-bump response ``q(d, t)`` is tabulated on a lattice of distances
and lags ``tau = t - d``:

* near zone ``tau in [-h, 2h]``: fine lag step, with a breakpoint at
  ``tau = h`` where ``q`` has an ``eps^2 log eps`` singularity, and an
  eight times finer knee table on ``|tau - h| <= h/16``;
* tail zone ``tau >= 2h``: ``q`` is smooth there (2D waves have no sharp
  trailing edge, the tail decays like ``tau^(-3/2)``).

Both zones use 4-point Lagrange interpolation in lag and distance.
``q`` vanishes identically for ``tau < -h``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from numpy.polynomial.legendre import leggauss

from .geometry import (
    CoefficientImage,
    ImageGrid,
    SensorGeometry,
    Sinogram,
    TimeGrid,
    sensor_positions,
)
from .phantom import BumpBasis

# older TBB builds make numba fall back to another threading layer; harmless
warnings.filterwarnings("ignore", message="The TBB threading layer", category=numba.NumbaWarning)

DEFAULT_RADIAL_NODES = 32
DEFAULT_ARC_NODES = 24
KNEE_HALF_WIDTH = 1.0 / 16.0
KNEE_REFINE = 8


# ---------------------------------------------------------------------------
# single-bump quadrature
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _circular_mean(d, r, h, nu, xa, wa):
    """Circular mean of the bump (centre at distance ``d``) over the circle of
    radius ``r`` around the sensor, and its derivative in ``r``."""
    rho0 = r - d
    gap = h * h - rho0 * rho0
    if gap <= 0.0:
        return 0.0, 0.0
    rd = r * d
    if rd <= 0.0:
        base = gap / (h * h)
        C = (nu + 1) / (math.pi * h * h)
        return C * base**nu, -2.0 * C * nu / (h * h) * base ** (nu - 1) * rho0
    s2 = gap / (4.0 * rd)
    if s2 >= 1.0:
        phi0 = math.pi
    else:
        phi0 = 2.0 * math.asin(math.sqrt(s2))
    C = (nu + 1) / (math.pi * h * h)
    m = 0.0
    mr = 0.0
    for i in range(xa.shape[0]):
        phi = 0.5 * phi0 * (xa[i] + 1.0)
        sn = math.sin(0.5 * phi)
        sn2 = sn * sn
        base = (gap - 4.0 * rd * sn2) / (h * h)
        if base <= 0.0:
            continue
        m += wa[i] * base**nu
        mr += wa[i] * base ** (nu - 1) * (rho0 + 2.0 * d * sn2)
    fac = 0.5 * phi0 / math.pi
    return C * m * fac, -2.0 * C * nu / (h * h) * mr * fac


@numba.njit(cache=True)
def _kernel_point(d, t, h, nu, xr, wr, xa, wa):
    """Single-bump pressure at distance ``d`` and (rescaled) time ``t``."""
    a = d - h
    if a < 0.0:
        a = 0.0
    b = d + h
    if t <= a:
        return 0.0
    if t <= b:
        thmax = 0.5 * math.pi
    else:
        thmax = math.asin(math.sqrt((b - a) / (t - a)))
    sq = math.sqrt(t - a)
    acc = 0.0
    for i in range(xr.shape[0]):
        th = 0.5 * thmax * (xr[i] + 1.0)
        st = math.sin(th)
        r = a + (t - a) * st * st
        m, mr = _circular_mean(d, r, h, nu, xa, wa)
        acc += wr[i] * 2.0 * sq * st * r * (m + r * mr) / math.sqrt(t + r)
    return acc * 0.5 * thmax / t


@numba.njit(cache=True)
def _kernel_tail_row(d, taus, h, nu, xr, wr, xa, wa, out):
    """``q(d, d + tau)`` for ``tau >= 2h`` using fixed radial nodes.

    Requires ``d >= h`` so the bump support ``[d - h, d + h]`` is a full
    interval; ``r = d - h cos(theta)`` smooths both support edges.
    """
    n = xr.shape[0]
    rs = np.empty(n)
    ws = np.empty(n)
    for i in range(n):
        th = 0.5 * math.pi * (xr[i] + 1.0)
        r = d - h * math.cos(th)
        m, mr = _circular_mean(d, r, h, nu, xa, wa)
        rs[i] = r
        ws[i] = wr[i] * 0.5 * math.pi * h * math.sin(th) * r * (m + r * mr)
    for j in range(taus.shape[0]):
        t = d + taus[j]
        acc = 0.0
        for i in range(n):
            acc += ws[i] / math.sqrt(t * t - rs[i] * rs[i])
        out[j] = acc / t


def kernel_quadrature(d, t, h, nu=2, radial_nodes=DEFAULT_RADIAL_NODES, arc_nodes=DEFAULT_ARC_NODES):
    """Vectorised direct evaluation of the single-bump response ``q(d, t)``."""
    xr, wr = leggauss(radial_nodes)
    xa, wa = leggauss(arc_nodes)
    d, t = np.broadcast_arrays(np.asarray(d, float), np.asarray(t, float))
    out = np.empty(d.shape)
    flat_d, flat_t, flat_o = d.ravel(), t.ravel(), out.reshape(-1)
    for i in range(flat_d.size):
        flat_o[i] = _kernel_point(flat_d[i], flat_t[i], h, nu, xr, wr, xa, wa)
    return out


# ---------------------------------------------------------------------------
# kernel table
# ---------------------------------------------------------------------------


@numba.njit(cache=True, parallel=True)
def _fill_near(d_nodes, taus, h, nu, xr, wr, xa, wa, out):
    for i in numba.prange(d_nodes.shape[0]):
        d = d_nodes[i]
        for j in range(taus.shape[0]):
            out[i, j] = _kernel_point(d, d + taus[j], h, nu, xr, wr, xa, wa)


@numba.njit(cache=True, parallel=True)
def _fill_tail(d_nodes, taus, h, nu, xr, wr, xa, wa, out):
    for i in numba.prange(d_nodes.shape[0]):
        d = d_nodes[i]
        if d >= h:
            _kernel_tail_row(d, taus, h, nu, xr, wr, xa, wa, out[i])
        else:
            for j in range(taus.shape[0]):
                out[i, j] = _kernel_point(d, d + taus[j], h, nu, xr, wr, xa, wa)


@dataclass(frozen=True)
class KernelTable:
    """Tabulated single-bump response ``q(d, d + tau)``.

    ``near`` has shape ``(n_d, 3 * near_per_h + 1)`` on lags ``-h + j h / near_per_h``;
    ``knee`` has shape ``(n_d, h / (8 knee_step) + 1)`` on lags
    ``h - h/16 + j knee_step`` with ``knee_step = h / (8 near_per_h)``.
    ``tail`` has shape ``(n_d, n_tail)`` on lags ``2h + j h / tail_per_h``.
    """

    h: float
    nu: int
    d0: float
    d_step: float
    near_per_h: int
    tail_per_h: int
    near: np.ndarray = field(repr=False)
    knee: np.ndarray = field(repr=False)
    tail: np.ndarray = field(repr=False)

    @property
    def d_max(self) -> float:
        return self.d0 + (self.near.shape[0] - 1) * self.d_step

    @property
    def tau_max(self) -> float:
        return 2 * self.h + (self.tail.shape[1] - 1) * self.h / self.tail_per_h

    @property
    def nbytes(self) -> int:
        return self.near.nbytes + self.knee.nbytes + self.tail.nbytes

    def _args(self):
        return (
            self.h,
            self.d0,
            self.d_step,
            self.h / self.near_per_h,
            self.near_per_h,
            self.h / self.tail_per_h,
            self.near,
            self.knee,
            self.tail,
        )

    def __call__(self, d, t) -> np.ndarray:
        """Interpolated ``q(d, t)``; broadcasts."""
        d, t = np.broadcast_arrays(np.asarray(d, float), np.asarray(t, float))
        out = np.empty(d.shape)
        _table_eval_many(d.ravel(), t.ravel(), *self._args(), out.reshape(-1))
        return out


def build_kernel_table(
    h: float,
    nu: int,
    d_min: float,
    d_max: float,
    tau_max: float,
    d_per_h: int = 8,
    near_per_h: int = 128,
    tail_per_h: int = 16,
    radial_nodes: int = DEFAULT_RADIAL_NODES,
    arc_nodes: int = DEFAULT_ARC_NODES,
) -> KernelTable:
    """Tabulate ``q`` for distances in ``[d_min, d_max]`` and lags up to ``tau_max``."""
    if d_max < d_min:
        raise ValueError("d_max must not be smaller than d_min")
    if near_per_h < 16 or near_per_h % 16:
        raise ValueError("near_per_h must be a positive multiple of 16")
    d_step = h / d_per_h
    d0 = max(d_min - 2 * d_step, 0.0)
    n_d = max(int(math.ceil((d_max - d0) / d_step)) + 3, 4)
    d_nodes = d0 + d_step * np.arange(n_d)
    near_taus = -h + (h / near_per_h) * np.arange(3 * near_per_h + 1)
    n_tail = max(int(math.ceil((max(tau_max, 2 * h) - 2 * h) / h * tail_per_h)) + 3, 4)
    tail_taus = 2 * h + (h / tail_per_h) * np.arange(n_tail)
    xr, wr = leggauss(radial_nodes)
    xa, wa = leggauss(arc_nodes)
    near = np.empty((n_d, near_taus.size))
    tail = np.empty((n_d, n_tail))
    _fill_near(d_nodes, near_taus, h, nu, xr, wr, xa, wa, near)
    knee_taus = h * (1.0 - KNEE_HALF_WIDTH) + (h / (KNEE_REFINE * near_per_h)) * np.arange(
        int(round(2 * KNEE_HALF_WIDTH * KNEE_REFINE * near_per_h)) + 1
    )
    knee = np.empty((n_d, knee_taus.size))
    _fill_near(d_nodes, knee_taus, h, nu, xr, wr, xa, wa, knee)
    # exact zero at the wavefront node
    near[:, 0] = 0.0
    xr2, wr2 = leggauss(2 * radial_nodes)
    _fill_tail(d_nodes, tail_taus, h, nu, xr2, wr2, xa, wa, tail)
    for arr in (near, knee, tail):
        arr.setflags(write=False)
    return KernelTable(h, int(nu), d0, d_step, near_per_h, tail_per_h, near, knee, tail)


@numba.njit(cache=True, inline="always")
def _lagrange4(f):
    # nodes at 0, 1, 2, 3; f measured from node 0
    w0 = -(f - 1.0) * (f - 2.0) * (f - 3.0) / 6.0
    w1 = f * (f - 2.0) * (f - 3.0) / 2.0
    w2 = -f * (f - 1.0) * (f - 3.0) / 2.0
    w3 = f * (f - 1.0) * (f - 2.0) / 6.0
    return w0, w1, w2, w3


@numba.njit(cache=True)
def _row_weights(d, d0, d_step, n_d):
    s = (d - d0) / d_step
    k0 = int(math.floor(s)) - 1
    if k0 < 0:
        k0 = 0
    if k0 > n_d - 4:
        k0 = n_d - 4
    return k0, _lagrange4(s - k0)


@numba.njit(cache=True)
def _blend(tab, k0, wd, i0, wt):
    acc = 0.0
    for a in range(4):
        row = k0 + a
        acc += wd[a] * (
            wt[0] * tab[row, i0]
            + wt[1] * tab[row, i0 + 1]
            + wt[2] * tab[row, i0 + 2]
            + wt[3] * tab[row, i0 + 3]
        )
    return acc


@numba.njit(cache=True)
def _eval_tau(tau, k0, wd, h, dtn, pn, dtt, near, knee, tail):
    if tau < -h:
        return 0.0
    kw = KNEE_HALF_WIDTH * h
    if abs(tau - h) < kw:
        s = (tau - (h - kw)) / (dtn / KNEE_REFINE)
        mid = (knee.shape[1] - 1) // 2
        if tau < h:
            lo, hi = 0, mid
        else:
            lo, hi = mid, knee.shape[1] - 1
        i0 = int(math.floor(s)) - 1
        if i0 < lo:
            i0 = lo
        if i0 > hi - 3:
            i0 = hi - 3
        return _blend(knee, k0, wd, i0, _lagrange4(s - i0))
    if tau < 2.0 * h:
        s = (tau + h) / dtn
        if tau < h:
            lo, hi = 0, 2 * pn
        else:
            lo, hi = 2 * pn, 3 * pn
        i0 = int(math.floor(s)) - 1
        if i0 < lo:
            i0 = lo
        if i0 > hi - 3:
            i0 = hi - 3
        return _blend(near, k0, wd, i0, _lagrange4(s - i0))
    s = (tau - 2.0 * h) / dtt
    i0 = int(math.floor(s)) - 1
    if i0 < 0:
        i0 = 0
    if i0 > tail.shape[1] - 4:
        i0 = tail.shape[1] - 4
    return _blend(tail, k0, wd, i0, _lagrange4(s - i0))


@numba.njit(cache=True)
def _table_eval_many(ds, ts, h, d0, d_step, dtn, pn, dtt, near, knee, tail, out):
    n_d = near.shape[0]
    for i in range(ds.shape[0]):
        k0, wd = _row_weights(ds[i], d0, d_step, n_d)
        out[i] = _eval_tau(ts[i] - ds[i], k0, wd, h, dtn, pn, dtt, near, knee, tail)


@numba.njit(cache=True)
def _trace(d, t0, ht, nt, h, d0, d_step, dtn, pn, dtt, near, knee, tail, buf):
    """Fill ``buf[j0:]`` with ``q(d, t0 + j ht)``; returns ``j0``, the first
    sample at or after the wavefront ``t = d - h``."""
    k0, wd = _row_weights(d, d0, d_step, near.shape[0])
    j0 = int(math.ceil((d - h - t0) / ht))
    if j0 < 0:
        j0 = 0
    for j in range(j0, nt):
        buf[j] = _eval_tau(t0 + j * ht - d, k0, wd, h, dtn, pn, dtt, near, knee, tail)
    return j0


@numba.njit(cache=True, parallel=True)
def _apply_kernel(xs, nodes, sensors, t0, ht, nt, h, d0, d_step, dtn, pn, dtt, near, knee, tail, out):
    # one sensor row per task; each output entry sums nodes in index order
    for m in numba.prange(sensors.shape[0]):
        buf = np.empty(nt)
        sx = sensors[m, 0]
        sy = sensors[m, 1]
        for k in range(nodes.shape[0]):
            xk = xs[k]
            if xk == 0.0:
                continue
            d = math.hypot(sx - nodes[k, 0], sy - nodes[k, 1])
            j0 = _trace(d, t0, ht, nt, h, d0, d_step, dtn, pn, dtt, near, knee, tail, buf)
            for j in range(j0, nt):
                out[m, j] += xk * buf[j]


@numba.njit(cache=True, parallel=True)
def _adjoint_kernel(g, nodes, sensors, t0, ht, nt, h, d0, d_step, dtn, pn, dtt, near, knee, tail, out):
    # one node per task; each output entry sums sensors in index order
    for k in numba.prange(nodes.shape[0]):
        buf = np.empty(nt)
        acc = 0.0
        for m in range(sensors.shape[0]):
            d = math.hypot(sensors[m, 0] - nodes[k, 0], sensors[m, 1] - nodes[k, 1])
            j0 = _trace(d, t0, ht, nt, h, d0, d_step, dtn, pn, dtt, near, knee, tail, buf)
            part = 0.0
            for j in range(j0, nt):
                part += g[m, j] * buf[j]
            acc += part
        out[k] = acc


@numba.njit(cache=True, parallel=True)
def _assemble_kernel(nodes, sensors, t0, ht, nt, h, d0, d_step, dtn, pn, dtt, near, knee, tail, out):
    """``out[m, j, k] = q(|s_m - node_k|, t_j)``."""
    for k in numba.prange(nodes.shape[0]):
        buf = np.empty(nt)
        for m in range(sensors.shape[0]):
            d = math.hypot(sensors[m, 0] - nodes[k, 0], sensors[m, 1] - nodes[k, 1])
            j0 = _trace(d, t0, ht, nt, h, d0, d_step, dtn, pn, dtt, near, knee, tail, buf)
            for j in range(j0, nt):
                out[m, j, k] = buf[j]


# ---------------------------------------------------------------------------
# operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForwardOperator:
    """Matrix-free ``S W U*``: coefficient image -> sampled pressure traces.

    ``scale`` is the overall normalisation; the analytic formula gives 1 and
    :func:`patsample.fdtd.calibrate_scale` confirms it against finite
    differences. Instances are immutable and safe to share.
    """

    geometry: SensorGeometry
    time_grid: TimeGrid
    image_grid: ImageGrid
    basis: BumpBasis
    kernel_table: KernelTable = field(repr=False)
    scale: float = 1.0
    active: np.ndarray = field(repr=False, default=None)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.geometry.num_sensors * self.time_grid.num_samples, self.image_grid.size)

    @property
    def data_shape(self) -> tuple[int, int]:
        return (self.geometry.num_sensors, self.time_grid.num_samples)

    def _nodes(self) -> np.ndarray:
        return np.ascontiguousarray(self.image_grid.node_points()[self.active.ravel()])

    def _sensors(self) -> np.ndarray:
        return np.ascontiguousarray(sensor_positions(self.geometry))

    def _targs(self):
        tg = self.time_grid
        return (tg.start_time, tg.step, tg.num_samples) + self.kernel_table._args()

    def with_scale(self, scale: float) -> "ForwardOperator":
        return ForwardOperator(
            self.geometry, self.time_grid, self.image_grid, self.basis,
            self.kernel_table, float(scale), self.active,
        )

    # vector-level interface, used by solvers
    def matvec(self, x: np.ndarray) -> np.ndarray:
        xs = np.ascontiguousarray(np.asarray(x, float).reshape(self.image_grid.shape)[self.active])
        out = np.zeros(self.data_shape)
        _apply_kernel(xs, self._nodes(), self._sensors(), *self._targs(), out)
        out *= self.scale
        return out.ravel()

    def rmatvec(self, g: np.ndarray) -> np.ndarray:
        g = np.ascontiguousarray(np.asarray(g, float).reshape(self.data_shape))
        acc = np.zeros(int(self.active.sum()))
        _adjoint_kernel(g, self._nodes(), self._sensors(), *self._targs(), acc)
        out = np.zeros(self.image_grid.shape)
        out[self.active] = acc * self.scale
        return out.ravel()

    def assemble(self) -> np.ndarray:
        """Dense matrix of shape ``self.shape`` (rows: sensor-major)."""
        nodes = self._nodes()
        M, nt = self.data_shape
        block = np.zeros((M, nt, nodes.shape[0]))
        _assemble_kernel(nodes, self._sensors(), *self._targs(), block)
        dense = np.zeros((M * nt, self.image_grid.size))
        dense[:, self.active.ravel()] = block.reshape(M * nt, -1) * self.scale
        return dense

    def kernel(self, d, t) -> np.ndarray:
        return self.scale * self.kernel_table(d, t)


def node_distance_range(geom: SensorGeometry, grid: ImageGrid) -> tuple[float, float]:
    nodes = grid.node_points()[grid.active_mask().ravel()]
    if nodes.size == 0:
        return geom.radius, geom.radius
    s = sensor_positions(geom)
    dmin, dmax = np.inf, 0.0
    for m in range(s.shape[0]):
        d = np.hypot(nodes[:, 0] - s[m, 0], nodes[:, 1] - s[m, 1])
        dmin = min(dmin, float(d.min()))
        dmax = max(dmax, float(d.max()))
    return dmin, dmax


def build_forward(
    geom: SensorGeometry,
    tgrid: TimeGrid,
    igrid: ImageGrid,
    basis: BumpBasis | None = None,
    *,
    scale: float = 1.0,
    d_per_h: int = 8,
    near_per_h: int = 128,
    tail_per_h: int = 16,
) -> ForwardOperator:
    """Precompute the kernel table and return a ready operator.

    Raises ``ValueError`` if the time window misses part of the interval
    ``[d_min - h, d_max + h]`` in which signals switch on and peak.
    """
    basis = basis or BumpBasis.for_grid(igrid)
    if not math.isclose(basis.spacing, igrid.spacing, rel_tol=1e-12):
        raise ValueError("basis spacing must equal the image grid spacing")
    h = igrid.spacing
    dmin, dmax = node_distance_range(geom, igrid)
    lo, hi = dmin - h, dmax + h
    if not tgrid.covers(max(lo, 0.0), hi):
        raise ValueError(
            f"time window [{tgrid.start_time:.4g}, {tgrid.end_time:.4g}] is too short: "
            f"signals occupy [{max(lo, 0.0):.4g}, {hi:.4g}]"
        )
    tau_max = tgrid.end_time - dmin + h
    table = build_kernel_table(
        h, basis.nu, dmin, dmax, tau_max,
        d_per_h=d_per_h, near_per_h=near_per_h, tail_per_h=tail_per_h,
    )
    active = igrid.active_mask().copy()
    active.setflags(write=False)
    return ForwardOperator(geom, tgrid, igrid, basis, table, float(scale), active)


def apply(op: ForwardOperator, x: CoefficientImage) -> Sinogram:
    if x.grid != op.image_grid:
        raise ValueError("coefficient image is not on the operator's image grid")
    return Sinogram(op.geometry, op.time_grid, op.matvec(x.vector).reshape(op.data_shape))


def apply_adjoint(op: ForwardOperator, g: Sinogram) -> CoefficientImage:
    if g.geometry != op.geometry or g.time_grid != op.time_grid:
        raise ValueError("sinogram geometry/time grid does not match the operator")
    return CoefficientImage(op.image_grid, op.rmatvec(g.data.ravel()))
