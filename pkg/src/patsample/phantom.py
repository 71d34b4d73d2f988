"""Test objects on the bump lattice and the synthesis operator ``U*``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .geometry import CoefficientImage, ImageGrid


@dataclass(frozen=True)
class BumpBasis:
    """Radial bump ``u(r) = (nu+1)/(pi h^2) (1 - |r|^2/h^2)^nu`` on ``|r| <= h``.

    The profile integrates to one over the plane and its support radius is
    the lattice spacing ``h``.
    """

    spacing: float
    nu: int = 2

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("bump spacing must be positive")
        if int(self.nu) != self.nu or self.nu < 1:
            raise ValueError(f"bump exponent must be a positive integer, got {self.nu}")

    @property
    def peak(self) -> float:
        return (self.nu + 1) / (math.pi * self.spacing**2)

    def profile(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        base = np.clip(1.0 - (r / self.spacing) ** 2, 0.0, None)
        return self.peak * base**self.nu

    def spectrum(self, k) -> np.ndarray:
        """Radial Fourier transform, normalised so that ``spectrum(0) == 1``."""
        z = np.asarray(k, dtype=float) * self.spacing
        out = np.ones_like(z)
        nz = np.abs(z) > 1e-6
        n1 = self.nu + 1
        scale = 2.0**n1 * math.gamma(self.nu + 2)
        out[nz] = scale * special.jv(n1, z[nz]) / z[nz] ** n1
        small = ~nz
        # series J_n(z)/z^n ~ 1/(2^n n!) (1 - z^2 / (4 (n+1)))
        out[small] = 1.0 - z[small] ** 2 / (4.0 * (n1 + 1))
        return out

    @classmethod
    def for_grid(cls, grid: ImageGrid, nu: int = 2) -> "BumpBasis":
        return cls(grid.spacing, nu)


def synthesize(x: CoefficientImage, basis: BumpBasis, eval_points) -> np.ndarray:
    """Evaluate ``U* x`` at ``eval_points`` of shape ``(P, 2)``.

    Only the 3 x 3 lattice neighbourhood of the nearest node can reach a point,
    since the bump support radius equals the spacing.
    """
    grid = x.grid
    if not math.isclose(basis.spacing, grid.spacing, rel_tol=1e-12):
        raise ValueError(
            f"basis spacing {basis.spacing} does not match grid spacing {grid.spacing}"
        )
    pts = np.asarray(eval_points, dtype=float).reshape(-1, 2)
    N = grid.samples_per_axis
    h = grid.spacing
    offset = 0.5 * (N - 1)
    fx = (pts[:, 0] - grid.center[0]) / h + offset
    fy = (pts[:, 1] - grid.center[1]) / h + offset
    ix0 = np.rint(fx).astype(int)
    iy0 = np.rint(fy).astype(int)
    coeffs = x.coefficients
    out = np.zeros(len(pts))
    for dy in (-1, 0, 1):
        iy = iy0 + dy
        for dx in (-1, 0, 1):
            ix = ix0 + dx
            ok = (ix >= 0) & (ix < N) & (iy >= 0) & (iy < N)
            if not ok.any():
                continue
            r = h * np.hypot(fx[ok] - ix[ok], fy[ok] - iy[ok])
            out[ok] += coeffs[iy[ok], ix[ok]] * basis.profile(r)
    return out


def synthesize_on_grid(x: CoefficientImage, basis: BumpBasis, oversample: int = 4):
    """Sample ``U* x`` on a lattice ``oversample`` times finer than the grid.

    Returns ``(values, axis)`` with ``values[iy, ix]`` at ``(axis[ix], axis[iy])``
    relative to the grid centre.
    """
    grid = x.grid
    h = grid.spacing
    n = (grid.samples_per_axis + 1) * oversample + 1
    axis = (np.arange(n) - (n - 1) / 2) * (h / oversample)
    X, Y = np.meshgrid(axis + grid.center[0], axis + grid.center[1])
    vals = synthesize(x, basis, np.stack([X.ravel(), Y.ravel()], axis=1))
    return vals.reshape(n, n), axis


@dataclass(frozen=True)
class GridPhantomSpec:
    """Two perpendicular families of periodic bars inside a square.

    Each period cell of length ``pitch`` carries one bar of width ``bar_width``
    at its centre, so the pattern is mirror symmetric whenever ``pitch``
    divides ``extent``.
    """

    pitch: float
    bar_width: float
    extent: float
    amplitude: float = 1.0
    orientation: float = 0.0
    center: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.bar_width > 0:
            raise ValueError("bar_width must be positive")
        if self.bar_width > self.pitch * (1 + 1e-12):
            raise ValueError("bar_width must not exceed pitch")
        if self.pitch > self.extent * (1 + 1e-12):
            raise ValueError("pitch must not exceed extent")

    def frame_coordinates(self, X, Y, grid_center=(0.0, 0.0)):
        cx, cy = self.center if self.center is not None else grid_center
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        u = c * (X - cx) + s * (Y - cy)
        v = -s * (X - cx) + c * (Y - cy)
        return u, v

    def in_bar(self, u) -> np.ndarray:
        """Whether frame coordinate ``u`` lies on a bar (ignoring the square)."""
        s = np.mod(np.asarray(u) + 0.5 * self.extent, self.pitch)
        lo = 0.5 * (self.pitch - self.bar_width)
        return (s >= lo - 1e-12) & (s <= lo + self.bar_width + 1e-12)

    def indicator(self, X, Y, grid_center=(0.0, 0.0)) -> np.ndarray:
        u, v = self.frame_coordinates(X, Y, grid_center)
        half = 0.5 * self.extent * (1 + 1e-12)
        inside = (np.abs(u) <= half) & (np.abs(v) <= half)
        return inside & (self.in_bar(u) | self.in_bar(v))

    def corners(self, grid_center=(0.0, 0.0)) -> np.ndarray:
        cx, cy = self.center if self.center is not None else grid_center
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        e = 0.5 * self.extent
        local = np.array([[e, e], [-e, e], [-e, -e], [e, -e]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([cx, cy])


def rasterize_grid_phantom(spec: GridPhantomSpec, grid: ImageGrid) -> CoefficientImage:
    """Coefficient image equal to ``amplitude`` on nodes lying on a bar."""
    corners = spec.corners(grid.center) - np.asarray(grid.center)
    limit = grid.half_width * (1 + 1e-9)
    if np.any(np.abs(corners) > limit):
        raise ValueError(
            f"phantom square (extent {spec.extent}) exceeds the grid support "
            f"(side {2 * grid.half_width})"
        )
    X, Y = grid.node_coordinates()
    mask = spec.indicator(X, Y, grid.center)
    if np.any(mask & ~grid.active_mask()):
        raise ValueError("phantom covers nodes outside the grid support radius")
    return CoefficientImage(grid, np.where(mask, float(spec.amplitude), 0.0))


def _radial_taper(grid: ImageGrid, radius: float, width: float) -> np.ndarray:
    X, Y = grid.node_coordinates()
    r = np.hypot(X - grid.center[0], Y - grid.center[1])
    inner = max(radius - width, 0.0)
    ramp = np.clip((radius - r) / max(radius - inner, 1e-300), 0.0, 1.0)
    return np.sin(0.5 * np.pi * ramp) ** 4


def disc_mask(grid: ImageGrid, radius: float) -> np.ndarray:
    """Nodes whose centres lie within ``radius`` of the grid centre."""
    X, Y = grid.node_coordinates()
    r = np.hypot(X - grid.center[0], Y - grid.center[1])
    return r <= radius * (1 + 1e-12) + 1e-12


def lattice_frequencies(n: int, spacing: float) -> np.ndarray:
    """Radial angular frequencies ``|xi|`` of an ``n x n`` DFT lattice."""
    k = 2 * np.pi * np.fft.fftfreq(n, spacing)
    return np.hypot(k[None, :], k[:, None])


def random_bandlimited_phantom(
    grid: ImageGrid,
    Omega: float,
    seed: int,
    support_radius: float | None = None,
    margin: float = 0.7,
    taper_width: float | None = None,
    refine_iters: int = 20,
) -> CoefficientImage:
    """Random coefficients whose lattice spectrum is confined to ``|xi| <= Omega``.

    White noise is low-passed at ``margin * Omega`` and multiplied by a smooth
    radial window vanishing beyond ``support_radius`` (default: grid ``R0``).
    ``refine_iters`` rounds of (low-pass at ``Omega``, re-mask) then damp the
    poorly concentrated components. Out-of-band energy is below 1e-4 once
    ``support_radius * Omega`` exceeds about 16; smaller products cannot be
    that concentrated.
    """
    if not Omega > 0:
        raise ValueError("Omega must be positive")
    R0 = grid.R0 if support_radius is None else float(support_radius)
    if taper_width is None:
        taper_width = max(0.5 * R0, 4 * grid.spacing)
    rng = np.random.default_rng(seed)
    N = grid.samples_per_axis
    n = 2 * N
    noise = np.zeros((n, n))
    noise[:N, :N] = rng.standard_normal((N, N))
    spec = np.fft.fft2(noise)
    spec[lattice_frequencies(n, grid.spacing) > margin * Omega] = 0.0
    smooth = np.fft.ifft2(spec).real[:N, :N]
    support = grid.active_mask() & disc_mask(grid, R0)
    vals = smooth * _radial_taper(grid, R0, taper_width) * support
    inband = lattice_frequencies(n, grid.spacing) <= Omega
    for _ in range(refine_iters):
        F = np.fft.fft2(vals, s=(n, n))
        F[~inband] = 0.0
        vals = np.fft.ifft2(F).real[:N, :N] * support
    nrm = np.linalg.norm(vals)
    if nrm > 0:
        vals = vals / nrm
    return CoefficientImage(grid, vals)


def spectral_energy_fraction(x: CoefficientImage, Omega: float, pad: int = 4) -> float:
    """Fraction of the (zero-padded) lattice spectrum energy inside ``|xi| <= Omega``."""
    N = x.grid.samples_per_axis
    n = pad * N
    F = np.fft.fft2(x.coefficients, s=(n, n))
    E = np.abs(F) ** 2
    inside = lattice_frequencies(n, x.grid.spacing) <= Omega
    total = E.sum()
    return float(E[inside].sum() / total) if total > 0 else 1.0
