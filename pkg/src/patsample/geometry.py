"""Immutable data types shared by every module: sensor circle, image lattice,
time axis, coefficient images and sinograms.

Lengths are millimetres throughout. Times are converted to lengths once, at
ingestion, by multiplying with the sound speed, after which the wave speed
is treated as 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * math.pi


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SensorGeometry:
    """Point sensors equidistant in angle on a circle of radius ``radius``.

    ``step_convention`` only matters for partial arcs: ``"per_sensor"`` uses
    ``coverage / M`` and ``"endpoints"`` uses ``coverage / (M - 1)`` so both
    arc ends carry a sensor. A full circle always uses ``2 pi / M``.
    ``angular_step`` overrides both (used for decimated arrays).
    """

    radius: float
    num_sensors: int
    coverage: float = TWO_PI
    start_angle: float = 0.0
    sound_speed: float = 1.0
    step_convention: str = "per_sensor"
    angular_step: float | None = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if int(self.num_sensors) != self.num_sensors or self.num_sensors < 1:
            raise ValueError(f"num_sensors must be a positive integer, got {self.num_sensors}")
        if not 0 < self.coverage <= TWO_PI + 1e-12:
            raise ValueError(f"coverage must lie in (0, 2pi], got {self.coverage}")
        if self.step_convention not in ("per_sensor", "endpoints"):
            raise ValueError(f"unknown step_convention {self.step_convention!r}")
        if self.angular_step is not None and not self.angular_step > 0:
            raise ValueError("angular_step must be positive")

    @property
    def full_circle(self) -> bool:
        return self.coverage >= TWO_PI - 1e-12

    @property
    def angular_step_h_theta(self) -> float:
        if self.angular_step is not None:
            return float(self.angular_step)
        if self.full_circle or self.step_convention == "per_sensor" or self.num_sensors == 1:
            return self.coverage / self.num_sensors
        return self.coverage / (self.num_sensors - 1)

    def angles(self) -> np.ndarray:
        return self.start_angle + np.arange(self.num_sensors) * self.angular_step_h_theta

    def positions(self) -> np.ndarray:
        return sensor_positions(self)

    def decimate(self, factor: int) -> "SensorGeometry":
        """Keep every ``factor``-th sensor (sensor 0 is always kept)."""
        factor = int(factor)
        if factor < 1:
            raise ValueError("decimation factor must be >= 1")
        if factor == 1:
            return self
        kept = len(range(0, self.num_sensors, factor))
        return replace(self, num_sensors=kept, angular_step=factor * self.angular_step_h_theta)

    def summary(self) -> dict:
        return {
            "radius": self.radius,
            "num_sensors": self.num_sensors,
            "coverage": self.coverage,
            "start_angle": self.start_angle,
            "sound_speed": self.sound_speed,
            "angular_step": self.angular_step_h_theta,
        }


def sensor_positions(geom: SensorGeometry) -> np.ndarray:
    """Return an ``(M, 2)`` array; sensor ``m`` sits at angle ``start + m h_theta``."""
    ang = geom.angles()
    return geom.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def rescale_time(geom: SensorGeometry, physical_times) -> np.ndarray:
    """Convert physical times to lengths, ``t <- c t``."""
    c = geom.sound_speed
    if not c > 0:
        raise ValueError(f"sound speed must be positive, got {c}")
    return c * np.asarray(physical_times, dtype=float)


@dataclass(frozen=True)
class ImageGrid:
    """Square, axis-aligned lattice of bump centres.

    Coefficient arrays have shape ``(N, N)`` and are indexed ``[iy, ix]``;
    node ``(iy, ix)`` sits at ``center + ((ix, iy) - (N - 1) / 2) * spacing``.
    Nodes farther than ``support_radius`` from the centre are inactive and
    must carry zero coefficients. ``support_radius=None`` activates every node.
    """

    spacing: float
    samples_per_axis: int
    center: tuple[float, float] = (0.0, 0.0)
    support_radius: float | None = None

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if int(self.samples_per_axis) != self.samples_per_axis or self.samples_per_axis < 1:
            raise ValueError("samples_per_axis must be a positive integer")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if self.support_radius is not None and self.support_radius < 0:
            raise ValueError("support_radius must be non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.samples_per_axis, self.samples_per_axis)

    @property
    def size(self) -> int:
        return self.samples_per_axis**2

    @property
    def half_width(self) -> float:
        """Half side length of the square covered by node cells."""
        return 0.5 * self.samples_per_axis * self.spacing

    @property
    def R0(self) -> float:
        if self.support_radius is None:
            return math.hypot(1.0, 1.0) * 0.5 * (self.samples_per_axis - 1) * self.spacing
        return float(self.support_radius)

    def axis(self) -> np.ndarray:
        return (np.arange(self.samples_per_axis) - 0.5 * (self.samples_per_axis - 1)) * self.spacing

    def node_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(X, Y)`` arrays of shape ``(N, N)``."""
        a = self.axis()
        X = a[None, :] + self.center[0]
        Y = a[:, None] + self.center[1]
        return np.broadcast_to(X, self.shape).copy(), np.broadcast_to(Y, self.shape).copy()

    def node_points(self) -> np.ndarray:
        X, Y = self.node_coordinates()
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    def active_mask(self) -> np.ndarray:
        if self.support_radius is None:
            return np.ones(self.shape, dtype=bool)
        X, Y = self.node_coordinates()
        r = np.hypot(X - self.center[0], Y - self.center[1])
        return r <= self.support_radius * (1 + 1e-12) + 1e-12

    def with_support(self, radius: float | None) -> "ImageGrid":
        return replace(self, support_radius=radius)

    def summary(self) -> dict:
        return {
            "spacing": self.spacing,
            "samples_per_axis": self.samples_per_axis,
            "center": list(self.center),
            "support_radius": self.support_radius,
        }


@dataclass(frozen=True)
class TimeGrid:
    """Equidistant samples ``start_time + j * step`` (rescaled, in mm)."""

    step: float
    num_samples: int
    start_time: float = 0.0

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"time step must be positive, got {self.step}")
        if int(self.num_samples) != self.num_samples or self.num_samples < 1:
            raise ValueError("num_samples must be a positive integer")
        if self.start_time < 0:
            raise ValueError("start_time must be non-negative")

    @property
    def end_time(self) -> float:
        return self.start_time + (self.num_samples - 1) * self.step

    def times(self) -> np.ndarray:
        return self.start_time + self.step * np.arange(self.num_samples)

    def refine(self, factor: int) -> "TimeGrid":
        """Finer grid whose every ``factor``-th sample coincides with this one."""
        factor = int(factor)
        return TimeGrid(self.step / factor, (self.num_samples - 1) * factor + 1, self.start_time)

    def covers(self, lo: float, hi: float) -> bool:
        eps = 1e-9 * max(1.0, abs(hi))
        return self.start_time <= lo + eps and self.end_time >= hi - eps

    @classmethod
    def spanning(cls, step: float, lo: float, hi: float) -> "TimeGrid":
        """Smallest grid with the given step, aligned to multiples of ``step``,
        that covers ``[lo, hi]``."""
        start = max(0.0, math.floor(max(lo, 0.0) / step) * step)
        n = int(math.ceil((hi - start) / step - 1e-9)) + 1
        return cls(step, n, start)

    def summary(self) -> dict:
        return {"step": self.step, "num_samples": self.num_samples, "start_time": self.start_time}


def signal_window(geom: SensorGeometry, grid: ImageGrid) -> tuple[float, float]:
    """Interval ``[R - R0 - h, R + R0 + h]`` (widened for an off-centre grid)
    outside of which the compact part of every trace vanishes."""
    off = math.hypot(*grid.center)
    lo = max(0.0, geom.radius - off - grid.R0 - grid.spacing)
    hi = geom.radius + off + grid.R0 + grid.spacing
    return lo, hi


@dataclass(frozen=True)
class CoefficientImage:
    """Coefficient vector ``x`` of the synthesis ``U* x = sum_k x_k u(. - k h)``."""

    grid: ImageGrid
    coefficients: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} coefficients, got {c.size}")
        c = c.reshape(self.grid.shape)
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coefficients", _frozen(c))

    @property
    def vector(self) -> np.ndarray:
        return self.coefficients.ravel()

    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    def with_coefficients(self, values) -> "CoefficientImage":
        return CoefficientImage(self.grid, values)

    @classmethod
    def zeros(cls, grid: ImageGrid) -> "CoefficientImage":
        return cls(grid, np.zeros(grid.shape))


@dataclass(frozen=True)
class Sinogram:
    """Sensor-by-time data; rows are sensors, columns are time samples."""

    geometry: SensorGeometry
    time_grid: TimeGrid
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.array(self.data, copy=True)
        if d.dtype.kind != "f":
            d = d.astype(float)
        expected = (self.geometry.num_sensors, self.time_grid.num_samples)
        if d.shape != expected:
            raise ValueError(f"sinogram data has shape {d.shape}, expected {expected}")
        if not np.all(np.isfinite(d)):
            raise ValueError("sinogram data must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def with_data(self, values) -> "Sinogram":
        return Sinogram(self.geometry, self.time_grid, values)
