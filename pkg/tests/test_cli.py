import json

import numpy as np
import pytest

from tidypsf import io as tio
from tidypsf.cli import ConfigError, ExperimentConfig, main

TOY = ["--n", "7", "--defocus", "3,-20,20", "--psf-crop", "7"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_certify_zero_mask_on_circle(tmp_path, capsys):
    code, out, _ = run(capsys, "certify", "--n", "23", "--k", "1", "--init", "zeros", "--out", tmp_path)
    assert code == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["verdict"] == "on_circle"
    assert cert["magnitude"] == pytest.approx(1.0, abs=1e-12)
    assert json.loads(out)["verdict"] == "on_circle"


def test_certify_two_noise_masks_escape(tmp_path, capsys):
    code, _, _ = run(capsys, "certify", *TOY, "--k", "2", "--seed", "3", "--out", tmp_path)
    assert code == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["verdict"] == "inside_disc"
    assert len(cert["per_mask_coordinates"]) == 2


def test_capture_delta_reproduces_scene_bitwise(tmp_path, capsys, rng):
    img = rng.uniform(0, 1, (9, 11, 3)).astype(np.float32)
    src = tmp_path / "scene.pfm"
    tio.write_pfm(src, img)
    out_dir = tmp_path / "out"
    code, _, _ = run(capsys, "capture", *TOY, "--delta", "--image", src, "--out", out_dir)
    assert code == 0
    assert (out_dir / "coded" / "000.pfm").read_bytes() == src.read_bytes()


def test_capture_with_depth_map(tmp_path, capsys, rng):
    img = rng.uniform(0, 1, (12, 12, 3)).astype(np.float32)
    depth = rng.uniform(-20, 20, (12, 12)).astype(np.float32)
    tio.write_pfm(tmp_path / "img.pfm", img)
    tio.write_pfm(tmp_path / "depth.pfm", depth)
    code, _, _ = run(capsys, "capture", *TOY, "--image", tmp_path / "img.pfm", "--depth", tmp_path / "depth.pfm",
                     "--out", tmp_path / "out")
    assert code == 0
    coded = tio.read_pfm(tmp_path / "out" / "coded" / "000.pfm")
    assert coded.shape == img.shape and np.all(coded >= 0)
    report = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert report["rmse"] > 0


def test_sweep_switching_rmse_non_decreasing(tmp_path, capsys):
    # the sweep optimises the sequence first; random noise masks carry no such guarantee
    code, _, _ = run(capsys, "sweep-switching", *TOY, "--k", "5", "--iters", "50", "--synthetic", "16", "16",
                     "--swaps", "0,1,2,4,8,16", "--out", tmp_path)
    assert code == 0
    rows = json.loads((tmp_path / "sweep_switching.json").read_text())["rows"]
    assert [r["swap_ms"] for r in rows] == [0, 1, 2, 4, 8, 16]
    rmse = [r["rmse"] for r in rows]
    assert all(b >= a for a, b in zip(rmse, rmse[1:]))


def test_psf_writes_stacks_and_manifest(tmp_path, capsys):
    code, _, _ = run(capsys, "psf", *TOY, "--k", "2", "--out", tmp_path)
    assert code == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "psf"
    assert "psf/avg_d00.pfm" in manifest["files"]
    assert "psf/mask1_d02.pfm" in manifest["files"]
    psf = tio.read_pfm(tmp_path / "psf" / "avg_d01.pfm")
    assert psf.shape == (7, 7, 3)
    assert np.allclose(psf.sum(axis=(0, 1)), 1.0, atol=1e-6)


def test_metrics_subcommand(tmp_path, capsys, rng):
    a = rng.uniform(0, 1, (16, 16, 3)).astype(np.float32)
    tio.write_pfm(tmp_path / "a.pfm", a)
    tio.write_pfm(tmp_path / "b.pfm", a)
    code, out, _ = run(capsys, "metrics", tmp_path / "a.pfm", tmp_path / "b.pfm", "--out", tmp_path / "m")
    assert code == 0
    report = json.loads(out)
    assert report["rmse"] == 0 and report["psnr_db"] == 99.0 and report["ssim"] == pytest.approx(1.0)


def test_manifest_hashes_reproducible(tmp_path, capsys):
    args = ["optimize", *TOY, "--k", "2", "--iters", "15", "--seed", "42"]
    assert run(capsys, *args, "--out", tmp_path / "a")[0] == 0
    assert run(capsys, *args, "--out", tmp_path / "b")[0] == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["files"] == mb["files"]
    assert ma["config_hash"] == mb["config_hash"]
    assert set(ma["files"]) == {"optrun.json", "sequence.tpsf"}


def test_seed_changes_hash(tmp_path, capsys):
    run(capsys, "psf", *TOY, "--seed", "1", "--out", tmp_path / "a")
    run(capsys, "psf", *TOY, "--seed", "2", "--out", tmp_path / "b")
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["config_hash"] != mb["config_hash"]
    assert ma["files"]["sequence.tpsf"] != mb["files"]["sequence.tpsf"]


def test_yaml_config_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(
        "seed: 5\n"
        "aperture: {shape: square, n: 6}\n"
        "recipe:\n  defocus: {count: 2, min: -4, max: 4}\n  psf_crop: 5\n"
        "sequence: {k: 2}\n"
    )
    code, _, _ = run(capsys, "psf", "--config", cfg, "--seed", "9", "--out", tmp_path / "o")
    assert code == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["seed"] == 9
    assert manifest["config"]["aperture"]["shape"] == "square"
    heights, _ = tio.read_tpsf(tmp_path / "o" / "sequence.tpsf")
    assert heights.shape == (2, 6, 6)


def test_global_flags_before_subcommand(tmp_path, capsys):
    code, _, _ = run(capsys, "--seed", "4", "--out", tmp_path, "certify", *TOY)
    assert code == 0
    assert json.loads((tmp_path / "certificate.json").read_text())["seed"] == 4


def test_run_subcommand(tmp_path, capsys):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(
        f"out_dir: {tmp_path / 'run'}\n"
        "aperture: {n: 7}\n"
        "recipe:\n  defocus: {count: 3, min: -20, max: 20}\n  psf_crop: 7\n"
        "bins: {count: 3, min: -20, max: 20}\n"
        "sequence: {k: 2}\n"
        "optimizer: {max_iters: 5}\n"
        "synthetic_scene: {height: 12, width: 12}\n"
        "switching: {swaps_ms: [0, 4]}\n"
    )
    code, _, _ = run(capsys, "run", "--config", cfg)
    assert code == 0
    files = json.loads((tmp_path / "run" / "manifest.json").read_text())["files"]
    for name in ("sequence.tpsf", "optrun.json", "metrics.json", "certificate.json",
                 "sweep_switching.json", "coded/000.pfm", "psf/avg_d00.pfm"):
        assert name in files


# -- errors ------------------------------------------------------------------------

def test_invalid_config_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "certify", "--config", tmp_path / "missing.yaml", "--out", tmp_path)
    assert code == 2 and "invalid config" in err
    bad = tmp_path / "bad.yaml"
    bad.write_text("no_such_key: 1\n")
    code, _, err = run(capsys, "certify", "--config", bad, "--out", tmp_path)
    assert code == 2 and "no_such_key" in err


def test_missing_base_mask_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "psf", *TOY, "--init", "one_fisher_rest_noise", "--k", "3", "--out", tmp_path)
    assert code == 2 and "mask is required" in err


def test_bins_must_match_defocus(tmp_path, capsys):
    code, _, err = run(capsys, "capture", *TOY, "--bins", "4,-20,20", "--out", tmp_path)
    assert code == 2 and "bin count" in err


def test_unwritable_output_dir_reported_distinctly(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, err = run(capsys, "certify", *TOY, "--out", blocker / "sub")
    assert code == 2
    assert "not writable" in err and "invalid config" not in err


def test_numerical_failure_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "optimize", *TOY, "--iters", "5", "--lr", "1e306", "--out", tmp_path)
    assert code == 3 and "numerical failure" in err
    assert (tmp_path / "optrun.json").exists()


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"sequence": {"k": 0}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"seed": -1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"recipe": {"psf_crop": 200}})
