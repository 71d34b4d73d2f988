import json

import numpy as np
import pytest

from patsample import io as pio
from patsample.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, main

SMALL = {
    "grid": {"samples_per_axis": 36},
    "phantom": {"pitch_mm": 4.0, "bar_width_mm": 2.0},
    "sampling": {
        "num_probes": 16,
        "instance": {"samples_per_axis": 24, "R0_mm": 6.0, "radius_mm": 10.0},
    },
}


def _config(path, **sections):
    cfg = json.loads(json.dumps(SMALL))
    for k, v in sections.items():
        cfg.setdefault(k, {}).update(v)
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = _config(d / "small.json")
    assert main(["simulate", "--config", cfg, "--out", str(d)]) == EXIT_OK
    return d, cfg


def test_phantom_verb(tmp_path):
    cfg = _config(tmp_path / "c.json")
    assert main(["phantom", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    x, header = pio.read_raster(tmp_path / "phantom.raw")
    assert x.grid.samples_per_axis == 36
    assert set(np.unique(x.coefficients)) == {0.0, 1.0}
    assert (tmp_path / "phantom.pgm").read_bytes().startswith(b"P5")


def test_simulate_writes_sinogram(run_dir):
    d, _ = run_dir
    sino, header = pio.read_sinogram(d / "sinogram.sino")
    assert sino.data.shape[0] == 64
    assert np.abs(sino.data).max() > 0
    assert header["meta"]["subsample"] == 1


def test_subsample_one_matches_default(run_dir, tmp_path):
    d, cfg = run_dir
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path), "--subsample", "1"]) == EXIT_OK
    assert (tmp_path / "sinogram.sino").read_bytes() == (d / "sinogram.sino").read_bytes()


def test_subsample_keeps_every_nth_sensor(run_dir, tmp_path):
    d, cfg = run_dir
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path), "--subsample", "4"]) == EXIT_OK
    full, _ = pio.read_sinogram(d / "sinogram.sino")
    sub, _ = pio.read_sinogram(tmp_path / "sinogram.sino")
    np.testing.assert_array_equal(sub.data, full.data[::4])
    assert sub.geometry.angular_step_h_theta == pytest.approx(4 * full.geometry.angular_step_h_theta)


@pytest.mark.parametrize("method", ["tikhonov", "l1pos"])
def test_reconstruct_resolves_coarse_grid(run_dir, method):
    d, cfg = run_dir
    assert main(["reconstruct", "--config", cfg, "--out", str(d), "--method", method]) == EXIT_OK
    report = json.loads((d / f"metrics_{method}.json").read_text())
    assert report["converged"]
    assert report["metrics"]["resolved_flag"]
    assert "created" not in report
    lines = (d / f"convergence_{method}.csv").read_text().splitlines()
    assert lines[0] == "iter,objective,residual" and len(lines) > 2
    x, _ = pio.read_raster(d / f"recon_{method}.raw")
    assert x.grid.samples_per_axis == 36


def test_non_convergence_exit_code(run_dir, tmp_path):
    d, _ = run_dir
    cfg = _config(tmp_path / "c.json", methods={"tikhonov": {"max_iters": 1, "tol": 1e-15}})
    code = main(["reconstruct", "--config", cfg, "--out", str(tmp_path), "--sinogram", str(d / "sinogram.sino"), "--method", "tikhonov"])
    assert code == EXIT_NUMERIC
    assert (tmp_path / "recon_tikhonov.raw").exists()


def test_zero_phantom_reconstructs_to_zero(tmp_path):
    cfg = _config(tmp_path / "c.json", phantom={"pitch_mm": 4.0, "bar_width_mm": 2.0, "amplitude": 0.0})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    for method in ("tikhonov", "l1pos"):
        assert main(["reconstruct", "--config", cfg, "--out", str(tmp_path), "--method", method]) == EXIT_OK
        x, _ = pio.read_raster(tmp_path / f"recon_{method}.raw")
        assert not np.any(x.coefficients)


def test_sampling_report(tmp_path, capsys):
    cfg = _config(tmp_path / "c.json")
    assert main(["sampling-report", "--config", cfg, "--out", str(tmp_path), "--sweep", "1,4"]) == EXIT_OK
    rep = json.loads((tmp_path / "sampling_report.json").read_text())
    # 36 samples over 40 mm: Omega = pi / h with h = 40 / 36
    h = 40 / 36
    assert rep["Omega"] == pytest.approx(np.pi / h)
    assert rep["resolved_disc_radius"] == pytest.approx(h / rep["h_theta"])
    rows = (tmp_path / "nyquist_sweep.csv").read_text().splitlines()
    assert len(rows) == 3
    assert "resolved disc radius" in capsys.readouterr().out


def test_config_error_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"geometry": {"radius": 40}}))
    assert main(["phantom", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "geometry.radius" in capsys.readouterr().err
    big = _config(tmp_path / "big.json", phantom={"extent_mm": 60.0})
    assert main(["phantom", "--config", big, "--out", str(tmp_path)]) == EXIT_CONFIG
    cfg = _config(tmp_path / "c.json")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path), "--subsample", "0"]) == EXIT_CONFIG
    assert main(["sampling-report", "--config", cfg, "--out", str(tmp_path), "--sweep", "1,-2"]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        main(["reconstruct", "--config", cfg, "--method", "art"])
    assert info.value.code == 2


def test_io_error_exit_codes(run_dir, tmp_path):
    d, cfg = run_dir
    assert main(["reconstruct", "--config", cfg, "--out", str(tmp_path), "--method", "tikhonov"]) == EXIT_IO
    corrupt = tmp_path / "bad.sino"
    corrupt.write_bytes((d / "sinogram.sino").read_bytes()[:-10])
    code = main(["reconstruct", "--config", cfg, "--out", str(tmp_path), "--sinogram", str(corrupt), "--method", "tikhonov"])
    assert code == EXIT_IO


def test_mismatched_sinogram_rejected(run_dir, tmp_path):
    d, _ = run_dir
    other = _config(tmp_path / "c.json", geometry={"num_sensors": 32})
    code = main(["reconstruct", "--config", other, "--out", str(tmp_path), "--sinogram", str(d / "sinogram.sino"), "--method", "tikhonov"])
    assert code == EXIT_CONFIG
