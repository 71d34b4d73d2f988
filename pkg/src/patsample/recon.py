"""Reconstruction solvers and image-quality metrics.

Operators are duck-typed: anything with ``matvec``, ``rmatvec`` and
``shape`` (system operators, dense wrappers, scipy ``LinearOperator``).
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import CoefficientImage
from .phantom import GridPhantomSpec

log = logging.getLogger(__name__)


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TikhonovConfig:
    """Minimise ``|Ax - g|^2 + lam |x|^2``."""

    lam: float = 1e-3
    max_iters: int = 500
    tol: float = 1e-6

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass(frozen=True)
class L1PosConfig:
    """Minimise ``1/2 |Ax - g|^2 + mu |x|_1`` subject to ``x >= 0``.

    ``step_size=None`` uses ``1 / (1.02 L)`` with ``L`` from power iteration.
    """

    mu: float = 1e-3
    max_iters: int = 500
    step_size: float | None = None
    tol: float = 1e-5
    restart: bool = True
    norm_iters: int = 50
    seed: int = 0
    check_every: int = 1

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass
class SolverResult:
    x: np.ndarray
    converged: bool
    iterations: int
    history: list = field(default_factory=list)
    final_residual: float = math.nan
    notes: str = ""

    def image(self, grid) -> CoefficientImage:
        return CoefficientImage(grid, self.x)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "objective", "residual"])
            for it, obj, res in self.history:
                w.writerow([it, repr(float(obj)), repr(float(res))])


def estimate_operator_norm(op, iters: int = 50, seed: int = 0, return_history: bool = False):
    """Power iteration for ``L = |A|^2``, the largest eigenvalue of ``A^T A``.

    The Rayleigh quotients increase monotonically towards ``L`` from below.
    """
    if iters < 10:
        raise ValueError("use at least 10 power iterations")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.shape[1])
    v /= np.linalg.norm(v)
    history = []
    for _ in range(iters):
        Av = op.matvec(v)
        history.append(float(Av @ Av))
        w = op.rmatvec(Av)
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        v = w / nw
    L = max(history)
    if L <= 0:
        raise ValueError("operator is zero")
    if len(history) >= 2 and history[-2] > 0:
        log.info("power iteration: L=%.6g, last ratio %.3g", L, history[-1] / history[-2])
    return (L, history) if return_history else L


def reconstruct_tikhonov(op, g, cfg: TikhonovConfig) -> SolverResult:
    """Conjugate residuals on ``(A^T A + lam I) x = A^T g``.

    The method minimises the normal-equation residual over growing Krylov
    spaces, so the logged residual never increases; an increase caused by
    rounding ends the iteration. The true residual is recomputed at the end.
    """
    g = np.asarray(g, dtype=float).ravel()
    lam = cfg.lam
    n = op.shape[1]
    b = op.rmatvec(g)
    bnorm = np.linalg.norm(b)
    x = np.zeros(n)
    if bnorm == 0:
        return SolverResult(x, True, 0, [(0, float(g @ g), 0.0)], 0.0)

    def normal(v):
        Av = op.matvec(v)
        return Av, op.rmatvec(Av) + lam * v

    Ax = np.zeros_like(g)
    r = b.copy()
    Ar, Br = normal(r)
    p, Ap, Bp = r.copy(), Ar.copy(), Br.copy()
    rBr = r @ Br
    res = np.linalg.norm(r)
    history = [(0, float(g @ g), res / bnorm)]
    converged = res <= cfg.tol * bnorm
    it = 0
    notes = ""
    while not converged and it < cfg.max_iters:
        it += 1
        BpBp = Bp @ Bp
        if BpBp == 0:
            break
        alpha = rBr / BpBp
        x_new = x + alpha * p
        r_new = r - alpha * Bp
        res_new = np.linalg.norm(r_new)
        if res_new > res:
            notes = "stopped: residual increase at rounding level"
            it -= 1
            break
        x, r, res = x_new, r_new, res_new
        Ax = Ax + alpha * Ap
        Ar, Br = normal(r)
        rBr_new = r @ Br
        beta = rBr_new / rBr if rBr != 0 else 0.0
        rBr = rBr_new
        p = r + beta * p
        Ap = Ar + beta * Ap
        Bp = Br + beta * Bp
        resid = Ax - g
        history.append((it, float(resid @ resid + lam * (x @ x)), res / bnorm))
        converged = res <= cfg.tol * bnorm
    _, Bx = normal(x)
    final = float(np.linalg.norm(Bx - b) / bnorm)
    converged = converged or final <= cfg.tol
    if not converged:
        warnings.warn(
            f"Tikhonov solver stopped after {it} iterations at relative normal residual {final:.3g}",
            ConvergenceWarning,
            stacklevel=2,
        )
    return SolverResult(x, bool(converged), it, history, final, notes)


def prox_l1_pos(v: np.ndarray, thresh: float) -> np.ndarray:
    """Proximal map of ``thresh |x|_1 + indicator(x >= 0)``: shrink, then clamp."""
    return np.maximum(v - thresh, 0.0)


def l1pos_objective(Ax_minus_g: np.ndarray, x: np.ndarray, mu: float) -> float:
    return 0.5 * float(Ax_minus_g @ Ax_minus_g) + mu * float(np.abs(x).sum())


def reconstruct_l1pos(op, g, cfg: L1PosConfig, L: float | None = None, callback=None) -> SolverResult:
    """Accelerated proximal gradient; with ``restart`` the objective is monotone.

    A candidate that raises the objective is rejected, the momentum is reset
    and a plain proximal-gradient step is taken from the current iterate,
    which cannot increase the objective for a step below ``1/L``.
    ``callback(k, x)``, if given, sees every accepted iterate.
    """
    g = np.asarray(g, dtype=float).ravel()
    if cfg.step_size is not None:
        step = cfg.step_size
    else:
        if L is None:
            L = estimate_operator_norm(op, cfg.norm_iters, cfg.seed)
        step = 1.0 / (1.02 * L)
    mu = cfg.mu
    n = op.shape[1]
    x = np.zeros(n)
    Ax = np.zeros_like(g)
    F = l1pos_objective(Ax - g, x, mu)
    history = [(0, F, math.nan)]
    y, Ay = x, Ax
    x_prev, Ax_prev = x, Ax
    t = 1.0
    converged = False
    it = 0
    fp = math.nan
    while it < cfg.max_iters:
        it += 1
        grad = op.rmatvec(Ay - g)
        z = prox_l1_pos(y - step * grad, step * mu)
        dz = z - y
        nz = np.linalg.norm(z)
        fp = np.linalg.norm(dz) / nz if nz > 0 else (0.0 if not dz.any() else math.inf)
        Az = op.matvec(z)
        Fz = l1pos_objective(Az - g, z, mu)
        if cfg.restart and Fz > F and y is not x:
            # reject, restart momentum from x
            t = 1.0
            y, Ay = x, Ax
            grad = op.rmatvec(Ax - g)
            z = prox_l1_pos(x - step * grad, step * mu)
            dz = z - x
            nz = np.linalg.norm(z)
            fp = np.linalg.norm(dz) / nz if nz > 0 else (0.0 if not dz.any() else math.inf)
            Az = op.matvec(z)
            Fz = l1pos_objective(Az - g, z, mu)
        if cfg.restart and Fz > F:
            # rounding-level increase at a fixed point
            z, Az, Fz = x, Ax, F
        x_prev, Ax_prev = x, Ax
        x, Ax, F = z, Az, Fz
        history.append((it, F, fp))
        if callback is not None:
            callback(it, x)
        if fp <= cfg.tol:
            converged = True
            break
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_next
        t = t_next
        if beta == 0.0:
            y, Ay = x, Ax
        else:
            y = x + beta * (x - x_prev)
            Ay = Ax + beta * (Ax - Ax_prev)
    if not converged:
        warnings.warn(
            f"l1+positivity solver stopped after {it} iterations at fixed-point residual {fp:.3g}",
            ConvergenceWarning,
            stacklevel=2,
        )
    return SolverResult(x, converged, it, history, float(fp))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    relative_l2_error: float
    psnr: float
    grid_contrast: float
    resolved_flag: bool
    threshold: float = 0.2

    def to_dict(self) -> dict:
        return {
            "relative_l2_error": self.relative_l2_error,
            "psnr": self.psnr if math.isfinite(self.psnr) else None,
            "grid_contrast": self.grid_contrast,
            "resolved_flag": self.resolved_flag,
            "threshold": self.threshold,
        }


def _michelson(seg: np.ndarray) -> float:
    seg = np.clip(seg, 0.0, None)
    hi, lo = seg.max(), seg.min()
    return float((hi - lo) / (hi + lo)) if hi + lo > 0 else 0.0


def grid_contrast(x: CoefficientImage, spec: GridPhantomSpec) -> float:
    """Median per-period Michelson contrast across the bars.

    Scanlines run along each bar family's normal, placed at the gap centres
    of the other family so they only cross one family of bars. The image is
    read at the nearest node and clipped at zero.
    """
    grid = x.grid
    h = grid.spacing
    N = grid.samples_per_axis
    p, E = spec.pitch, spec.extent
    n_per = int(round(E / p))
    cx, cy = spec.center if spec.center is not None else grid.center
    c, s = math.cos(spec.orientation), math.sin(spec.orientation)
    offs = 0.5 * (N - 1)
    samples_per_period = max(int(math.ceil(2 * p / h)), 8)
    vals = []
    for family in (0, 1):
        for j in range(1, n_per):
            v = -0.5 * E + j * p
            for i in range(n_per):
                u = -0.5 * E + (i + (np.arange(samples_per_period) + 0.5) / samples_per_period) * p
                uu, vv = (u, np.full_like(u, v)) if family == 0 else (np.full_like(u, v), u)
                X = cx + c * uu - s * vv
                Y = cy + s * uu + c * vv
                ix = np.rint((X - grid.center[0]) / h + offs).astype(int)
                iy = np.rint((Y - grid.center[1]) / h + offs).astype(int)
                ok = (ix >= 0) & (ix < N) & (iy >= 0) & (iy < N)
                if ok.sum() < 2:
                    continue
                vals.append(_michelson(x.coefficients[iy[ok], ix[ok]]))
    return float(np.median(vals)) if vals else 0.0


def compute_metrics(
    x: CoefficientImage,
    reference: CoefficientImage,
    spec: GridPhantomSpec,
    threshold: float = 0.2,
) -> MetricsReport:
    if x.grid != reference.grid:
        raise ValueError("reconstruction and reference live on different grids")
    ref = reference.coefficients
    rnorm = np.linalg.norm(ref)
    peak = np.abs(ref).max()
    if rnorm == 0 or peak == 0:
        raise ValueError("reference image is zero")
    diff = x.coefficients - ref
    rel = float(np.linalg.norm(diff) / rnorm)
    rmse = math.sqrt(float(np.mean(diff**2)))
    psnr = math.inf if rmse == 0 else 20.0 * math.log10(peak / rmse)
    contrast = grid_contrast(x, spec)
    return MetricsReport(rel, psnr, contrast, contrast >= threshold, threshold)


def parameter_sweep(solve, op, g, reference: CoefficientImage, values) -> list[tuple[float, float]]:
    """Relative error of ``solve(op, g, value)`` for each value (log sweeps)."""
    out = []
    for v in values:
        res = solve(op, g, v)
        err = float(np.linalg.norm(res.x - reference.vector) / np.linalg.norm(reference.vector))
        out.append((float(v), err))
    return out


def best_parameter(sweep) -> float:
    return min(sweep, key=lambda r: r[1])[0]
