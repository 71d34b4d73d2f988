"""Detector impulse response ``phi_Omega``, its spatial twin ``Phi_Omega``,
and resolution constants.

A :class:`FilterSpec` describes the common transfer function ``H``:
``F_t phi(w) = H(|w|)`` in time and ``F Phi(xi) = H(|xi|)`` in the plane.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .geometry import CoefficientImage, SensorGeometry, Sinogram, TimeGrid
from .phantom import BumpBasis, lattice_frequencies

NEGLIGIBLE_GAIN = 1e-6


@dataclass(frozen=True)
class FilterSpec:
    """Even low-pass transfer function with ``H(0) = 1``.

    For ``kind="gaussian"``, ``Omega`` is the frequency where ``H`` has fallen
    to ``attenuation_at_Omega``; for ``kind="ideal"``, ``H`` is the indicator
    of ``|w| <= Omega``.
    """

    Omega: float
    kind: str = "gaussian"
    attenuation_at_Omega: float = 0.01

    def __post_init__(self):
        if not self.Omega > 0:
            raise ValueError(f"Omega must be positive, got {self.Omega}")
        if self.kind not in ("gaussian", "ideal"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if not 0 < self.attenuation_at_Omega < 1:
            raise ValueError("attenuation_at_Omega must lie in (0, 1)")

    @property
    def sigma(self) -> float:
        """Gaussian width parameter in ``exp(-w^2 / (2 sigma^2))``."""
        return self.Omega / math.sqrt(-2.0 * math.log(self.attenuation_at_Omega))

    def transfer(self, w) -> np.ndarray:
        w = np.abs(np.asarray(w, dtype=float))
        if self.kind == "ideal":
            return (w <= self.Omega).astype(float)
        return np.exp(-(w**2) / (2.0 * self.sigma**2))

    def effective_band(self) -> float:
        """Frequency beyond which ``H`` is negligible."""
        if self.kind == "ideal":
            return self.Omega
        return self.sigma * math.sqrt(-2.0 * math.log(NEGLIGIBLE_GAIN))


def check_time_step(spec: FilterSpec, step: float) -> None:
    """Raise if the filter band is not representable on a grid of this step.

    The ideal filter is an exact DFT mask at any step (above the Nyquist
    frequency it is the identity), so only the Gaussian kind is checked.
    """
    if spec.kind == "ideal":
        return
    nyq = math.pi / step
    if spec.effective_band() > nyq * (1 + 1e-12):
        raise ValueError(
            f"filter band {spec.effective_band():.4g} exceeds the Nyquist frequency "
            f"{nyq:.4g} of step {step:.4g}; refine the time grid"
        )


def _pad_length(spec: FilterSpec, n: int, step: float) -> int:
    if spec.kind == "ideal":
        return n
    # the Gaussian impulse response has standard deviation 1/sigma
    return min(max(int(math.ceil(12.0 / (spec.sigma * step))), 1), 4 * n)


@functools.lru_cache(maxsize=32)
def filter_matrix(spec: FilterSpec, n: int, step: float) -> np.ndarray:
    """Dense ``n x n`` matrix of the padded FFT filter on ``n`` samples.

    Symmetric (mirror) padding, circular convolution on the padded signal,
    cropping. Built by filtering the identity so that forward and adjoint
    use the same numbers.
    """
    check_time_step(spec, step)
    pad = _pad_length(spec, n, step)
    eye = np.eye(n)
    ext = np.pad(eye, ((pad, pad), (0, 0)), mode="symmetric")
    L = ext.shape[0]
    w = 2 * np.pi * np.fft.rfftfreq(L, step)
    out = np.fft.irfft(np.fft.rfft(ext, axis=0) * spec.transfer(w)[:, None], n=L, axis=0)
    mat = np.ascontiguousarray(out[pad : pad + n])
    mat.setflags(write=False)
    return mat


def filter_traces(data: np.ndarray, spec: FilterSpec, step: float) -> np.ndarray:
    """Filter each row of ``data`` (time along the last axis)."""
    data = np.asarray(data, dtype=float)
    return data @ filter_matrix(spec, data.shape[-1], step).T


def filter_traces_adjoint(data: np.ndarray, spec: FilterSpec, step: float) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    return data @ filter_matrix(spec, data.shape[-1], step)


def filter_sinogram(g: Sinogram, spec: FilterSpec) -> Sinogram:
    """Per-sensor temporal convolution with ``phi_Omega``."""
    return g.with_data(filter_traces(g.data, spec, g.time_grid.step))


def check_lattice(spec: FilterSpec, spacing: float) -> None:
    """Raise unless ``H`` is negligible beyond the lattice Nyquist frequency
    or is identically one on the whole lattice band."""
    nyq = math.pi / spacing
    if spec.effective_band() <= nyq * (1 + 1e-12):
        return
    if spec.kind == "ideal" and spec.Omega >= math.sqrt(2) * nyq:
        return
    raise ValueError(
        f"filter band {spec.effective_band():.4g} is not resolved by lattice spacing "
        f"{spacing:.4g} (Nyquist {nyq:.4g})"
    )


def apply_psf(
    x: CoefficientImage, spec: FilterSpec, pad: int = 1, check: bool = True
) -> CoefficientImage:
    """Multiply the lattice spectrum of ``x`` by ``H(|xi|)``.

    ``pad=1`` is circular convolution on the grid; larger values zero-pad to
    ``pad`` times the grid size before cropping back.
    """
    if check:
        check_lattice(spec, x.grid.spacing)
    N = x.grid.samples_per_axis
    n = int(pad) * N
    F = np.fft.fft2(x.coefficients, s=(n, n))
    F *= spec.transfer(lattice_frequencies(n, x.grid.spacing))
    return x.with_coefficients(np.fft.ifft2(F).real[:N, :N])


def verify_convolution_identity(op, spec: FilterSpec, x: CoefficientImage, pad: int = 2) -> float:
    """Relative mismatch between filtering the data and blurring the source."""
    from .wave import apply

    lhs = filter_sinogram(apply(op, x), spec)
    denom = lhs.norm()
    if denom == 0:
        raise ValueError("zero phantom: relative error undefined")
    rhs = apply(op, apply_psf(x, spec, pad=pad))
    return float(np.linalg.norm(lhs.data - rhs.data) / denom)


# ---------------------------------------------------------------------------
# resolution constants
# ---------------------------------------------------------------------------


def _stack(subspace_basis) -> np.ndarray:
    vecs = list(subspace_basis)
    if not vecs:
        raise ValueError("empty subspace basis")
    grid = vecs[0].grid
    for v in vecs:
        if v.grid != grid:
            raise ValueError("subspace basis vectors must share one grid")
    return np.stack([v.coefficients for v in vecs])


def _min_generalized_eig(G_filtered: np.ndarray, G: np.ndarray, rank_tol: float = 1e-10) -> float:
    G = 0.5 * (G + G.T.conj())
    Gf = 0.5 * (G_filtered + G_filtered.T.conj())
    ev = np.linalg.eigvalsh(G)
    if ev[0] <= rank_tol * max(ev[-1], 0.0) or ev[-1] <= 0:
        raise ValueError("subspace basis is rank deficient")
    lam = scipy.linalg.eigh(Gf, G, eigvals_only=True)
    return float(np.clip(lam[0], 0.0, 1.0))


def _alias_weights(n: int, spacing: float, basis: BumpBasis, spec: FilterSpec | None, zones: int):
    k = 2 * np.pi * np.fft.fftfreq(n, spacing)
    period = 2 * np.pi / spacing
    W = np.zeros((n, n))
    for a in range(-zones, zones + 1):
        for b in range(-zones, zones + 1):
            r = np.hypot(k[None, :] + a * period, k[:, None] + b * period)
            w = basis.spectrum(r) ** 2
            if spec is not None:
                w = w * spec.transfer(r) ** 2
            W += w
    return W


def estimate_resolution_constant(
    subspace_basis,
    spec: FilterSpec,
    norm: str = "function",
    basis: BumpBasis | None = None,
    pad: int = 4,
    zones: int = 3,
) -> float:
    """Smallest ``|Phi * f|^2 / |f|^2`` over the span of ``subspace_basis``.

    ``norm="function"`` measures ``f = U* x`` in ``L^2`` of the plane (spectra
    of zero-padded coefficients, summed over ``2 zones + 1`` squared Brillouin
    zones). ``norm="coefficient"`` treats ``x`` as a periodic lattice signal
    and uses the plain DFT.
    """
    X = _stack(subspace_basis)
    grid = subspace_basis[0].grid
    N = grid.samples_per_axis
    if norm == "coefficient":
        F = np.fft.fft2(X).reshape(len(X), -1)
        w = spec.transfer(lattice_frequencies(N, grid.spacing)).ravel() ** 2
        G = F.conj() @ F.T
        Gf = (F.conj() * w) @ F.T
    elif norm == "function":
        basis = basis or BumpBasis.for_grid(grid)
        n = pad * N
        F = np.fft.fft2(X, s=(n, n)).reshape(len(X), -1)
        W0 = _alias_weights(n, grid.spacing, basis, None, zones).ravel()
        W1 = _alias_weights(n, grid.spacing, basis, spec, zones).ravel()
        G = (F.conj() * W0) @ F.T
        Gf = (F.conj() * W1) @ F.T
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return _min_generalized_eig(Gf.real, G.real)


@dataclass(frozen=True)
class ResolutionReport:
    a_image: float
    a_data: float
    dense_sensors: int
    time_step: float
    window: tuple[float, float]

    @property
    def relative_gap(self) -> float:
        top = max(self.a_image, self.a_data)
        return abs(self.a_image - self.a_data) / top if top > 0 else 0.0


def data_side_operator(op, spec: FilterSpec, angular_density: int = 8, tail_factor: float = 6.0):
    """Dense-angle, fine-time forward operator used for data-side norms.

    Sensors: ``max(angular_density * M, 4 R Omega)`` on the full circle.
    Time: step ``<= pi / (2 Omega)`` and ``<= h / 4``, window from the first
    arrival to ``tail_factor`` times the signal window length past it.
    """
    from .geometry import signal_window
    from .wave import build_forward

    geom = op.geometry
    grid = op.image_grid
    M = max(angular_density * geom.num_sensors, int(math.ceil(4 * geom.radius * spec.Omega)))
    dense = SensorGeometry(geom.radius, M, start_angle=geom.start_angle)
    step = min(math.pi / (2 * spec.effective_band()), grid.spacing / 4, op.time_grid.step)
    lo, hi = signal_window(dense, grid)
    tgrid = TimeGrid.spanning(step, lo, lo + tail_factor * (hi - lo))
    return build_forward(dense, tgrid, grid, op.basis, scale=op.scale)


def verify_resolution_theorem(
    op,
    subspace_basis,
    spec: FilterSpec,
    angular_density: int = 8,
    tail_factor: float = 6.0,
) -> ResolutionReport:
    """Compare image-side and data-side resolution constants on one subspace."""
    X = _stack(subspace_basis)
    a_image = estimate_resolution_constant(subspace_basis, spec, norm="function", basis=op.basis)
    dense = data_side_operator(op, spec, angular_density, tail_factor)
    G = np.stack([dense.matvec(x.ravel()) for x in X]).reshape(len(X), dense.geometry.num_sensors, -1)
    nt = G.shape[-1]
    step = dense.time_grid.step
    L = 2 * nt
    F = np.fft.rfft(G, n=L, axis=-1)
    w = 2 * np.pi * np.fft.rfftfreq(L, step)
    # one-sided spectrum weights for Parseval on real signals
    mult = np.full(w.size, 2.0)
    mult[0] = 1.0
    if L % 2 == 0:
        mult[-1] = 1.0
    H2 = spec.transfer(w) ** 2
    Fm = F.reshape(len(X), -1)
    W0 = np.broadcast_to(mult, F.shape[1:]).ravel()
    W1 = np.broadcast_to(mult * H2, F.shape[1:]).ravel()
    Gram = ((Fm.conj() * W0) @ Fm.T).real
    Gram_f = ((Fm.conj() * W1) @ Fm.T).real
    a_data = _min_generalized_eig(Gram_f, Gram)
    return ResolutionReport(
        a_image, a_data, dense.geometry.num_sensors, step,
        (dense.time_grid.start_time, dense.time_grid.end_time),
    )
