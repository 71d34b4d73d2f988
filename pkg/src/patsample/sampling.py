"""Nyquist rates, resolved-disc radius and stability probes for sampled data."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg
from scipy import special

from .geometry import ImageGrid, SensorGeometry, TimeGrid
from .phantom import disc_mask


@dataclass(frozen=True)
class SamplingReport:
    """Nyquist steps for bandwidth ``Omega`` next to the configured steps.

    ``resolved_disc_radius`` is the largest ``R0`` for which the actual
    angular step satisfies ``h_theta <= pi / (R0 Omega)``.
    """

    Omega: float
    R0: float
    nyquist_h_t: float
    nyquist_h_x: float
    nyquist_h_theta: float
    h_t: float
    h_x: float
    h_theta: float
    resolved_disc_radius: float
    undersampling_factor_angular: float

    @property
    def temporal_ok(self) -> bool:
        return self.h_t <= self.nyquist_h_t * (1 + 1e-12)

    @property
    def spatial_ok(self) -> bool:
        return self.h_x <= self.nyquist_h_x * (1 + 1e-12)

    @property
    def angular_ok(self) -> bool:
        return self.undersampling_factor_angular <= 1 + 1e-12

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(temporal_ok=self.temporal_ok, spatial_ok=self.spatial_ok, angular_ok=self.angular_ok)
        return d

    def to_text(self) -> str:
        rows = [
            ("Omega [rad/mm]", self.Omega),
            ("R0 [mm]", self.R0),
            ("h_t / Nyquist [mm]", f"{self.h_t:.4f} / {self.nyquist_h_t:.4f}"),
            ("h_x / Nyquist [mm]", f"{self.h_x:.4f} / {self.nyquist_h_x:.4f}"),
            ("h_theta / Nyquist [rad]", f"{self.h_theta:.4f} / {self.nyquist_h_theta:.4f}"),
            ("resolved disc radius [mm]", f"{self.resolved_disc_radius:.3f}"),
            ("angular undersampling", f"{self.undersampling_factor_angular:.3f}"),
        ]
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{w}}  {v}" for k, v in rows)


def compute_report(
    geom: SensorGeometry, igrid: ImageGrid, tgrid: TimeGrid, Omega: float
) -> SamplingReport:
    if not Omega > 0:
        raise ValueError("Omega must be positive")
    h_theta = geom.angular_step_h_theta
    R0 = igrid.R0
    nyq_theta = math.pi / (R0 * Omega) if R0 > 0 else math.inf
    return SamplingReport(
        Omega=float(Omega),
        R0=float(R0),
        nyquist_h_t=math.pi / Omega,
        nyquist_h_x=math.pi / Omega,
        nyquist_h_theta=nyq_theta,
        h_t=tgrid.step,
        h_x=igrid.spacing,
        h_theta=h_theta,
        resolved_disc_radius=math.pi / (Omega * h_theta),
        undersampling_factor_angular=h_theta / nyq_theta,
    )


# ---------------------------------------------------------------------------
# the subspace B_{R0, Omega}
# ---------------------------------------------------------------------------


def _lowpass_kernel(r, spacing, Omega):
    """Ideal lattice low-pass at ``Omega`` as a function of node distance."""
    r = np.asarray(r, dtype=float)
    out = np.full(r.shape, spacing**2 * Omega**2 / (4 * math.pi))
    nz = r > 0
    out[nz] = spacing**2 * Omega * special.j1(Omega * r[nz]) / (2 * math.pi * r[nz])
    return out


def _support_nodes(grid: ImageGrid, R0: float) -> np.ndarray:
    return np.flatnonzero((grid.active_mask() & disc_mask(grid, R0)).ravel())


def landau_count(R0: float, Omega: float) -> float:
    """Time-bandwidth estimate of ``dim B_{R0,Omega}``: disc area x band area / (2 pi)^2."""
    return (R0 * Omega) ** 2 / 4.0


def concentration_matrix(grid: ImageGrid, R0: float, Omega: float):
    """Dense concentration operator on the nodes with centres inside ``R0``."""
    if Omega > math.pi / grid.spacing * (1 + 1e-12):
        raise ValueError("Omega exceeds the lattice Nyquist frequency")
    idx = _support_nodes(grid, R0)
    P = grid.node_points()[idx]
    D = np.hypot(P[:, None, 0] - P[None, :, 0], P[:, None, 1] - P[None, :, 1])
    return idx, _lowpass_kernel(D, grid.spacing, Omega)


def bandlimited_subspace(grid: ImageGrid, R0: float, Omega: float, threshold: float = 0.5) -> np.ndarray:
    """Orthonormal basis (columns, full grid length) of ``B_{R0,Omega}``.

    The subspace is spanned by the eigenvectors of the concentration operator
    (restrict to centres within ``R0``, ideal low-pass, restrict) with
    eigenvalue at least ``threshold``.
    """
    idx, K = concentration_matrix(grid, R0, Omega)
    if idx.size == 0:
        return np.zeros((grid.size, 0))
    lam, V = scipy.linalg.eigh(K)
    keep = lam >= threshold
    Q = np.zeros((grid.size, int(keep.sum())))
    Q[idx] = V[:, keep][:, ::-1]
    return Q


def _concentration_apply(grid, idx, Omega, V):
    """``K @ V`` for the concentration operator via zero-padded FFT."""
    N = grid.samples_per_axis
    n = 2 * N
    k = 2 * np.pi * np.fft.fftfreq(n, grid.spacing)
    band = np.hypot(k[None, :], k[:, None]) <= Omega
    out = np.empty_like(V)
    for j in range(V.shape[1]):
        img = np.zeros(grid.size)
        img[idx] = V[:, j]
        F = np.fft.fft2(img.reshape(N, N), s=(n, n))
        F[~band] = 0.0
        out[:, j] = np.fft.ifft2(F).real[:N, :N].ravel()[idx]
    return out


def bandlimited_subspace_randomized(
    grid: ImageGrid,
    R0: float,
    Omega: float,
    num_probes: int,
    seed: int,
    power_iters: int = 6,
    threshold: float = 0.5,
) -> np.ndarray:
    """Randomized subspace iteration for ``B_{R0,Omega}`` (matrix free).

    The sketch size is ``max(num_probes, 1.5 x Landau count + 10)`` so the
    sketch can hold the whole subspace; Rayleigh-Ritz keeps Ritz values
    ``>= threshold``. Note the FFT low-pass is a discretised version of the
    ideal lattice filter, so borderline eigenvalues may switch sides.
    """
    idx = _support_nodes(grid, R0)
    if idx.size == 0:
        return np.zeros((grid.size, 0))
    rng = np.random.default_rng(seed)
    k = min(idx.size, max(int(num_probes), int(1.5 * landau_count(R0, Omega)) + 10))
    Y = _concentration_apply(grid, idx, Omega, rng.standard_normal((idx.size, k)))
    for _ in range(power_iters):
        Q, _ = np.linalg.qr(Y)
        Y = _concentration_apply(grid, idx, Omega, Q)
    Q, _ = np.linalg.qr(Y)
    T = Q.T @ _concentration_apply(grid, idx, Omega, Q)
    lam, S = np.linalg.eigh(0.5 * (T + T.T))
    keep = lam >= threshold
    out = np.zeros((grid.size, int(keep.sum())))
    out[idx] = (Q @ S[:, keep])[:, ::-1]
    return out


@dataclass(frozen=True)
class StabilityProbe:
    sigma_min: float
    sigma_max: float
    subspace_dim: int
    data_dim: int

    @property
    def cond(self) -> float:
        return self.sigma_max / self.sigma_min if self.sigma_min > 0 else math.inf

    @property
    def underdetermined(self) -> bool:
        return self.subspace_dim > self.data_dim


def restricted_singular_values(A, Q: np.ndarray) -> np.ndarray:
    """Singular values of ``A`` restricted to the column span of orthonormal ``Q``.

    ``A`` is a dense matrix or anything with ``matvec``.
    """
    if Q.shape[1] == 0:
        return np.zeros(0)
    if isinstance(A, np.ndarray):
        AQ = A @ Q
    else:
        AQ = np.stack([A.matvec(Q[:, j]) for j in range(Q.shape[1])], axis=1)
    s = np.linalg.svd(AQ, compute_uv=False)
    if Q.shape[1] > AQ.shape[0]:
        s = np.concatenate([s, np.zeros(Q.shape[1] - AQ.shape[0])])
    return s


def probe_stability(op, R0: float, Omega: float, num_probes: int, seed: int) -> StabilityProbe:
    """Extreme singular values of ``op`` on ``B_{R0,Omega}`` (randomized subspace)."""
    if num_probes < 10:
        raise ValueError("num_probes must be at least 10")
    Q = bandlimited_subspace_randomized(op.image_grid, R0, Omega, num_probes, seed)
    s = restricted_singular_values(op, Q)
    if s.size == 0:
        return StabilityProbe(0.0, 0.0, 0, op.shape[0])
    return StabilityProbe(float(s.min()), float(s.max()), Q.shape[1], op.shape[0])


def dense_stability(A: np.ndarray, grid: ImageGrid, R0: float, Omega: float) -> StabilityProbe:
    """Reference values from the assembled matrix and a dense eigenbasis."""
    Q = bandlimited_subspace(grid, R0, Omega)
    s = restricted_singular_values(A, Q)
    if s.size == 0:
        return StabilityProbe(0.0, 0.0, 0, A.shape[0])
    return StabilityProbe(float(s.min()), float(s.max()), Q.shape[1], A.shape[0])


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ("factor", "h_theta", "sigma_min", "sigma_max", "cond", "recon_rel_err")


def nyquist_sweep(
    build_op,
    Omega: float,
    R0: float,
    theta_factors,
    phantom,
    *,
    num_probes: int = 32,
    seed: int = 0,
    tikhonov=None,
) -> list[dict]:
    """One row per angular step ``factor x pi / (R0 Omega)``.

    ``build_op(num_sensors)`` returns a system operator for a full-circle array
    of that many sensors; ``phantom`` is the coefficient image reconstructed
    from noise-free data with Tikhonov (config ``tikhonov``).
    """
    from .recon import TikhonovConfig, reconstruct_tikhonov

    tikhonov = tikhonov or TikhonovConfig(lam=1e-6, max_iters=500, tol=1e-8)
    nyq = math.pi / (R0 * Omega)
    rows = []
    for factor in theta_factors:
        factor = float(factor)
        if factor <= 0:
            raise ValueError("theta factors must be positive")
        M = max(1, int(round(2 * math.pi / (factor * nyq))))
        op = build_op(M)
        probe = probe_stability(op, R0, Omega, num_probes, seed)
        g = op.matvec(phantom.vector)
        res = reconstruct_tikhonov(op, g, tikhonov)
        err = np.linalg.norm(res.x - phantom.vector) / np.linalg.norm(phantom.vector)
        rows.append(
            {
                "factor": factor,
                "h_theta": 2 * math.pi / M,
                "sigma_min": probe.sigma_min,
                "sigma_max": probe.sigma_max,
                "cond": probe.cond,
                "recon_rel_err": float(err),
            }
        )
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(r[k])) for k in SWEEP_COLUMNS})
