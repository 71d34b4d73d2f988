"""Independent reference computations used only by the tests.

None of these share code with the package: the kernel oracle integrates the
undifferentiated Poisson-type formula with adaptive quadrature and takes the
time derivative by finite differences; the others are brute-force sums.
"""

import math

import numpy as np
from scipy.integrate import quad


def circular_mean_quad(d, r, h, nu=2):
    """Mean of the bump (centre at distance d) over the circle of radius r."""
    C = (nu + 1) / (math.pi * h * h)
    if abs(r - d) >= h:
        return 0.0
    if r == 0.0:
        return C * max(0.0, 1 - d * d / (h * h)) ** nu

    def f(phi):
        rho2 = r * r + d * d - 2 * r * d * math.cos(phi)
        return C * max(0.0, 1 - rho2 / (h * h)) ** nu

    c0 = (r * r + d * d - h * h) / (2 * r * d)
    phi0 = math.pi if c0 <= -1 else math.acos(min(1.0, c0))
    val, _ = quad(f, 0, phi0, epsabs=1e-15, epsrel=1e-13, limit=200)
    return val / math.pi


def poisson_integral(d, t, h, nu=2):
    """int_0^t r (M u)(r) / sqrt(t^2 - r^2) dr."""
    a, b = max(d - h, 0.0), d + h
    if t <= a:
        return 0.0
    if t <= b:
        val, _ = quad(
            lambda r: r * circular_mean_quad(d, r, h, nu) / math.sqrt(t + r),
            a, t, weight="alg", wvar=(0, -0.5), epsabs=1e-15, epsrel=1e-13, limit=200,
        )
    else:
        val, _ = quad(
            lambda r: r * circular_mean_quad(d, r, h, nu) / math.sqrt(t * t - r * r),
            a, b, epsabs=1e-15, epsrel=1e-13, limit=200,
        )
    return val


def kernel_oracle(d, t, h, nu=2, delta=None):
    """Single-bump pressure by a 5-point derivative of the Poisson integral."""
    delta = delta or 1e-3 * h
    c = (1 / 12, -2 / 3, 0.0, 2 / 3, -1 / 12)
    return sum(ci * poisson_integral(d, t + (i - 2) * delta, h, nu) for i, ci in enumerate(c)) / delta


def synthesize_dense(coeffs, spacing, center, points, nu=2):
    """Sum of every bump at every point, no neighbourhood shortcut."""
    N = coeffs.shape[0]
    ax = (np.arange(N) - 0.5 * (N - 1)) * spacing
    out = np.zeros(len(points))
    C = (nu + 1) / (math.pi * spacing**2)
    for iy in range(N):
        for ix in range(N):
            r2 = (points[:, 0] - center[0] - ax[ix]) ** 2 + (points[:, 1] - center[1] - ax[iy]) ** 2
            out += coeffs[iy, ix] * C * np.clip(1 - r2 / spacing**2, 0, None) ** nu
    return out


def grid_area_fraction_mc(pitch, bar_width, extent, n, seed=0):
    """Monte Carlo estimate of the bar-covered fraction of the square."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(-extent / 2, extent / 2, size=(n, 2))
    s = np.mod(u + extent / 2, pitch)
    lo = (pitch - bar_width) / 2
    on = (s >= lo) & (s <= lo + bar_width)
    return float(np.mean(on[:, 0] | on[:, 1]))


def alias_mismatch_prediction(coeffs, spacing, transfer, nu=2, zones=3, pad=2):
    """Predicted relative misfit of the lattice-blur convolution identity.

    ``U* x`` has spectrum ``X(k) u_hat(k + 2 pi m / h)`` in every Brillouin
    zone m. Time filtering scales zone m by ``H(|k + 2 pi m / h|)`` while the
    lattice blur scales every zone by ``H(|k|)``; the far-field data norm is
    taken equal to the plane L2 norm.
    """
    from scipy.special import jv

    def u_hat(z):
        z = np.maximum(z, 1e-8)
        n1 = nu + 1
        return 2.0**n1 * math.gamma(nu + 2) * jv(n1, z * spacing) / (z * spacing) ** n1

    N = coeffs.shape[0]
    n = pad * N
    X2 = np.abs(np.fft.fft2(coeffs, s=(n, n))) ** 2
    k = 2 * np.pi * np.fft.fftfreq(n, spacing)
    kx, ky = np.meshgrid(k, k)
    H0 = transfer(np.hypot(kx, ky))
    num = den = 0.0
    P = 2 * np.pi / spacing
    for a in range(-zones, zones + 1):
        for b in range(-zones, zones + 1):
            r = np.hypot(kx + a * P, ky + b * P)
            u2 = u_hat(r) ** 2
            Hm = transfer(r)
            num += np.sum(X2 * u2 * (Hm - H0) ** 2)
            den += np.sum(X2 * u2 * Hm**2)
    return math.sqrt(num / den)
