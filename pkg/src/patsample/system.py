"""System operator ``A = S o phi_Omega o W o U*`` and a dense counterpart."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .bandlimit import FilterSpec, check_time_step, filter_matrix
from .geometry import CoefficientImage, ImageGrid, SensorGeometry, Sinogram, TimeGrid
from .phantom import BumpBasis
from .wave import ForwardOperator, _assemble_kernel, build_forward


def required_refinement(spec: FilterSpec | None, step: float) -> int:
    """Smallest integer refinement of ``step`` on which ``spec`` is representable."""
    if spec is None:
        return 1
    band = spec.effective_band()
    return max(1, int(math.ceil(band * step / math.pi - 1e-12)))


@dataclass(frozen=True)
class SystemOperator:
    """Simulate on a refined time grid, filter, keep every ``refine``-th sample.

    ``matvec``/``rmatvec`` act on flat vectors (coefficients in grid order,
    data sensor-major), so instances plug into solvers and ``LinearOperator``.
    """

    forward: ForwardOperator
    output_grid: TimeGrid
    refine: int
    spec: FilterSpec | None = None

    @property
    def geometry(self) -> SensorGeometry:
        return self.forward.geometry

    @property
    def image_grid(self) -> ImageGrid:
        return self.forward.image_grid

    @property
    def data_shape(self) -> tuple[int, int]:
        return (self.geometry.num_sensors, self.output_grid.num_samples)

    @property
    def shape(self) -> tuple[int, int]:
        return (int(np.prod(self.data_shape)), self.image_grid.size)

    def _fmat(self):
        if self.spec is None:
            return None
        tg = self.forward.time_grid
        return filter_matrix(self.spec, tg.num_samples, tg.step)

    def matvec(self, x) -> np.ndarray:
        fine = self.forward.matvec(x).reshape(self.forward.data_shape)
        F = self._fmat()
        if F is None:
            out = fine[:, :: self.refine]
        else:
            out = fine @ F[:: self.refine].T
        return np.ascontiguousarray(out).ravel()

    def rmatvec(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=float).reshape(self.data_shape)
        F = self._fmat()
        if F is None:
            fine = np.zeros(self.forward.data_shape)
            fine[:, :: self.refine] = g
        else:
            fine = g @ F[:: self.refine]
        return self.forward.rmatvec(fine.ravel())

    def aslinearoperator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.matvec, rmatvec=self.rmatvec, dtype=float)

    def assemble(self) -> np.ndarray:
        """Dense matrix, built one sensor at a time."""
        fw = self.forward
        active = fw.active.ravel()
        nodes = fw._nodes()
        sensors = fw._sensors()
        nt_fine = fw.time_grid.num_samples
        nt = self.output_grid.num_samples
        F = self._fmat()
        A = np.zeros(self.shape)
        block = np.zeros((1, nt_fine, nodes.shape[0]))
        for m in range(sensors.shape[0]):
            block[:] = 0.0
            _assemble_kernel(nodes, sensors[m : m + 1], *fw._targs(), block)
            b = block[0]
            rows = b[:: self.refine] if F is None else F[:: self.refine] @ b
            A[m * nt : (m + 1) * nt, active] = rows * fw.scale
        return A

    def apply(self, x: CoefficientImage) -> Sinogram:
        return Sinogram(self.geometry, self.output_grid, self.matvec(x.vector).reshape(self.data_shape))

    def apply_adjoint(self, g: Sinogram) -> CoefficientImage:
        return CoefficientImage(self.image_grid, self.rmatvec(g.data.ravel()))


@dataclass(frozen=True)
class DenseOperator:
    """Explicit matrix with the same interface as :class:`SystemOperator`."""

    matrix: np.ndarray = field(repr=False)
    image_grid: ImageGrid
    data_shape: tuple[int, int]

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def matvec(self, x) -> np.ndarray:
        return self.matrix @ np.asarray(x, dtype=float).ravel()

    def rmatvec(self, g) -> np.ndarray:
        return self.matrix.T @ np.asarray(g, dtype=float).ravel()

    def aslinearoperator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.matvec, rmatvec=self.rmatvec, dtype=float)

    @classmethod
    def from_operator(cls, op) -> "DenseOperator":
        return cls(op.assemble(), op.image_grid, tuple(op.data_shape))


def build_system(
    geom: SensorGeometry,
    tgrid: TimeGrid,
    igrid: ImageGrid,
    spec: FilterSpec | None = None,
    *,
    basis: BumpBasis | None = None,
    refine: int | None = None,
    scale: float = 1.0,
) -> SystemOperator:
    """Forward model sampled on ``tgrid``; the wave part runs on a grid refined
    by ``refine`` (default: the least factor that represents the filter)."""
    if refine is None:
        refine = required_refinement(spec, tgrid.step)
    refine = int(refine)
    if refine < 1:
        raise ValueError("refine must be a positive integer")
    fine = tgrid.refine(refine)
    if spec is not None:
        check_time_step(spec, fine.step)
    fw = build_forward(geom, fine, igrid, basis, scale=scale)
    return SystemOperator(fw, tgrid, refine, spec)
