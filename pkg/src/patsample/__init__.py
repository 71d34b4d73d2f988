"""Band-limited photoacoustic tomography in circular geometry: forward model,
sampling analysis and sparse-view reconstruction."""

from .bandlimit import FilterSpec, apply_psf, filter_sinogram
from .geometry import (
    CoefficientImage,
    ImageGrid,
    SensorGeometry,
    Sinogram,
    TimeGrid,
    rescale_time,
    sensor_positions,
)
from .phantom import BumpBasis, GridPhantomSpec, random_bandlimited_phantom, rasterize_grid_phantom
from .system import SystemOperator, build_system
from .wave import ForwardOperator, apply, apply_adjoint, build_forward

__all__ = [
    "BumpBasis",
    "CoefficientImage",
    "FilterSpec",
    "ForwardOperator",
    "GridPhantomSpec",
    "ImageGrid",
    "SensorGeometry",
    "Sinogram",
    "SystemOperator",
    "TimeGrid",
    "apply",
    "apply_adjoint",
    "apply_psf",
    "build_forward",
    "build_system",
    "filter_sinogram",
    "random_bandlimited_phantom",
    "rasterize_grid_phantom",
    "rescale_time",
    "sensor_positions",
]
