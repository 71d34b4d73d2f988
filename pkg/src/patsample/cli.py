"""Command line entry point: ``patsample <verb> --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import io as pio
from .config import ConfigError, ExperimentConfig, load_config
from .geometry import CoefficientImage, ImageGrid, SensorGeometry, TimeGrid, signal_window
from .phantom import BumpBasis, random_bandlimited_phantom, rasterize_grid_phantom
from .recon import (
    ConvergenceWarning,
    L1PosConfig,
    TikhonovConfig,
    compute_metrics,
    estimate_operator_norm,
    reconstruct_l1pos,
    reconstruct_tikhonov,
)
from .sampling import compute_report, nyquist_sweep, write_sweep_csv
from .system import DenseOperator, build_system

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

METHODS = ("tikhonov", "l1pos")


class NumericalFailure(RuntimeError):
    pass


def _emit(text: str) -> None:
    print(text, flush=True)


def _write_json(path: Path, obj, stamp: bool) -> None:
    if stamp:
        obj = dict(obj, created=datetime.now(timezone.utc).isoformat())
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def make_phantom(cfg: ExperimentConfig) -> CoefficientImage:
    grid = cfg.image_grid()
    p = cfg.section("phantom")
    if p["type"] == "grid":
        try:
            return rasterize_grid_phantom(cfg.grid_phantom_spec(), grid)
        except ValueError as exc:
            raise ConfigError("phantom.extent_mm", str(exc)) from None
    omega = p["omega_rad_per_mm"]
    if omega is None:
        spec = cfg.filter_spec()
        omega = spec.Omega if spec is not None else math.pi / grid.spacing
    x = random_bandlimited_phantom(grid, float(omega), cfg.seed, support_radius=p["support_radius_mm"])
    return x.with_coefficients(float(p["amplitude"]) * x.coefficients)


def make_operator(cfg: ExperimentConfig, geom: SensorGeometry | None = None, tgrid: TimeGrid | None = None):
    geom = geom or cfg.geometry()
    tgrid = tgrid or cfg.time_grid()
    refine = cfg.section("operator", "time_refine")
    return build_system(geom, tgrid, cfg.image_grid(), cfg.filter_spec(), refine=refine)


def _maybe_dense(cfg: ExperimentConfig, op):
    limit = float(cfg.section("operator", "dense_limit_mb")) * 1e6
    if op.shape[0] * op.shape[1] * 8 <= limit:
        return DenseOperator.from_operator(op)
    return op


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------


def cmd_phantom(cfg: ExperimentConfig, out: Path, args) -> int:
    x = make_phantom(cfg)
    meta = {"phantom": cfg.section("phantom"), "seed": cfg.seed}
    pio.write_raster(out / "phantom.raw", x, meta)
    pio.write_pgm(out / "phantom.pgm", x.coefficients)
    grid = x.grid
    _emit(
        f"phantom: {grid.samples_per_axis}x{grid.samples_per_axis} raster, "
        f"{int(np.count_nonzero(x.coefficients))} nonzero coefficients, "
        f"extent {2 * grid.half_width:.4g} mm -> {out / 'phantom.raw'}"
    )
    return EXIT_OK


def simulate_data(cfg: ExperimentConfig, subsample: int):
    x = make_phantom(cfg)
    op = make_operator(cfg)
    data = op.matvec(x.vector).reshape(op.data_shape)
    noise = float(cfg.section("simulation", "noise_level"))
    if noise > 0:
        rng = np.random.default_rng(cfg.seed)
        scale = noise * np.linalg.norm(data) / math.sqrt(data.size)
        data = data + scale * rng.standard_normal(data.shape)
    geom = op.geometry.decimate(subsample)
    from .geometry import Sinogram

    return x, Sinogram(geom, op.output_grid, data[::subsample])


def cmd_simulate(cfg: ExperimentConfig, out: Path, args) -> int:
    sub = args.subsample or int(cfg.section("simulation", "subsample"))
    _, sino = simulate_data(cfg, sub)
    meta = {"subsample": sub, "seed": cfg.seed, "filter": cfg.section("filter")}
    pio.write_sinogram(out / "sinogram.sino", sino, meta)
    M, nt = sino.data.shape
    _emit(
        f"simulate: {M} sensors x {nt} samples, h_theta {sino.geometry.angular_step_h_theta:.4f} rad, "
        f"window [{sino.time_grid.start_time:.4g}, {sino.time_grid.end_time:.4g}] mm -> {out / 'sinogram.sino'}"
    )
    return EXIT_OK


def _check_sinogram(cfg: ExperimentConfig, sino, header) -> None:
    sub = int(header.get("meta", {}).get("subsample", 1))
    want_geom = cfg.geometry().decimate(sub)
    want_t = cfg.time_grid()
    if sino.data.shape != (want_geom.num_sensors, want_t.num_samples):
        raise ConfigError(
            "geometry.num_sensors",
            f"sinogram has shape {sino.data.shape}, config implies "
            f"{(want_geom.num_sensors, want_t.num_samples)}",
        )
    if not np.allclose(want_geom.positions(), sino.geometry.positions(), atol=1e-9):
        raise ConfigError("geometry", "sensor positions in the sinogram differ from the config")


def cmd_reconstruct(cfg: ExperimentConfig, out: Path, args) -> int:
    method = args.method
    path = Path(args.sinogram) if args.sinogram else out / "sinogram.sino"
    sino, header = pio.read_sinogram(path)
    _check_sinogram(cfg, sino, header)
    op = make_operator(cfg, sino.geometry, sino.time_grid)
    op = _maybe_dense(cfg, op)
    g = sino.data.astype(np.float64).ravel()
    L = estimate_operator_norm(op, int(cfg.section("methods", "l1pos", "norm_iters")), cfg.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        if method == "tikhonov":
            m = cfg.section("methods", "tikhonov")
            tcfg = TikhonovConfig(m["lambda_relative"] * L, m["max_iters"], m["tol"])
            res = reconstruct_tikhonov(op, g, tcfg)
        else:
            m = cfg.section("methods", "l1pos")
            atg = op.rmatvec(g)
            mu = m["mu_relative"] * float(np.abs(atg).max())
            lcfg = L1PosConfig(
                mu, m["max_iters"], m["step_size"], m["tol"], m["restart"], m["norm_iters"], cfg.seed
            )
            res = reconstruct_l1pos(op, g, lcfg, L=L)
    grid = cfg.image_grid()
    x = res.image(grid)
    pio.write_raster(out / f"recon_{method}.raw", x, {"method": method, "iterations": res.iterations})
    pio.write_pgm(out / f"recon_{method}.pgm", x.coefficients)
    res.write_csv(out / f"convergence_{method}.csv")
    report = {
        "method": method,
        "converged": res.converged,
        "iterations": res.iterations,
        "final_residual": res.final_residual,
        "operator_norm_sq": L,
    }
    ref = make_phantom(cfg)
    spec = cfg.grid_phantom_spec()
    if spec is not None and np.any(ref.coefficients):
        metrics = compute_metrics(x, ref, spec, float(cfg.section("metrics", "threshold")))
        report["metrics"] = metrics.to_dict()
    elif np.any(ref.coefficients):
        err = float(np.linalg.norm(x.coefficients - ref.coefficients) / np.linalg.norm(ref.coefficients))
        report["metrics"] = {"relative_l2_error": err}
    _write_json(out / f"metrics_{method}.json", report, args.timestamp)
    line = f"reconstruct[{method}]: {res.iterations} iterations, converged={res.converged}"
    if "metrics" in report:
        line += ", " + ", ".join(f"{k}={v}" for k, v in sorted(report["metrics"].items()))
    _emit(line)
    if not res.converged:
        _emit(f"error: {method} did not converge within {res.iterations} iterations")
        return EXIT_NUMERIC
    return EXIT_OK


def sweep_rows(cfg: ExperimentConfig, factors):
    from .bandlimit import FilterSpec

    inst = cfg.section("sampling", "instance")
    h = float(inst["spacing_mm"])
    N = int(inst["samples_per_axis"])
    R0 = float(inst["R0_mm"])
    R = float(inst["radius_mm"])
    omega = float(inst["omega_rad_per_mm"])
    grid = ImageGrid(h, N, support_radius=R0 + h)
    kind = inst["filter_kind"]
    spec = None if kind == "none" else FilterSpec(omega, kind)
    lo, hi = signal_window(SensorGeometry(R, 1), grid)
    tgrid = TimeGrid.spanning(math.pi / omega, lo, hi)
    refine = 2

    def build(M):
        return build_system(SensorGeometry(R, M), tgrid, grid, spec, refine=refine)

    phantom = random_bandlimited_phantom(grid, omega, cfg.seed, support_radius=R0)
    ref_op = build(max(1, int(round(2 * math.pi / (math.pi / (R0 * omega))))))
    L = estimate_operator_norm(ref_op, 30, cfg.seed)
    tik = TikhonovConfig(float(inst["lambda_relative"]) * L, 1000, 1e-8)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        return nyquist_sweep(
            build, omega, R0, factors, phantom,
            num_probes=int(cfg.section("sampling", "num_probes")), seed=cfg.seed, tikhonov=tik,
        )


def cmd_sampling_report(cfg: ExperimentConfig, out: Path, args) -> int:
    geom = cfg.geometry()
    grid = cfg.image_grid()
    tgrid = cfg.time_grid()
    spec = cfg.filter_spec()
    omega = spec.Omega if spec is not None else math.pi / grid.spacing
    rep = compute_report(geom, grid, tgrid, omega)
    _write_json(out / "sampling_report.json", rep.to_dict(), args.timestamp)
    _emit(rep.to_text())
    if args.sweep is not None:
        factors = cfg.section("sampling", "sweep_factors") if args.sweep == "" else _parse_factors(args.sweep)
        rows = sweep_rows(cfg, factors)
        write_sweep_csv(rows, out / "nyquist_sweep.csv")
        _emit(f"nyquist sweep: {len(rows)} rows -> {out / 'nyquist_sweep.csv'}")
    return EXIT_OK


def _parse_factors(text: str):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("sampling.sweep_factors", f"cannot parse --sweep {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise ConfigError("sampling.sweep_factors", "factors must be positive")
    return vals


VERBS = {
    "phantom": cmd_phantom,
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "sampling-report": cmd_sampling_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patsample",
        description="Band-limited photoacoustic sampling experiments in circular geometry.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    for name in VERBS:
        p = sub.add_parser(name, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.add_argument("--config", help="JSON experiment file (defaults to the shipped config)")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--timestamp", action="store_true", help="embed a creation time in JSON reports")
        if name == "simulate":
            p.add_argument("--subsample", type=int, help="keep every N-th sensor")
        if name == "reconstruct":
            p.add_argument("--method", required=True, choices=METHODS)
            p.add_argument("--sinogram", help="input file (default: OUT/sinogram.sino)")
        if name == "sampling-report":
            p.add_argument(
                "--sweep", nargs="?", const="", default=None,
                help='comma separated factors, e.g. "1,2,4,8" (bare flag: config factors)',
            )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "subsample", None) is not None and args.subsample < 1:
        print("error: simulation.subsample: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        overrides = {"seed": args.seed} if args.seed is not None else None
        cfg = load_config(args.config, overrides)
        out = Path(args.out or cfg.section("output_dir"))
        out.mkdir(parents=True, exist_ok=True)
        return VERBS[args.verb](cfg, out, args)
    except ConfigError as exc:
        print(f"error: config {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, pio.FileFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalFailure, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
