import json

import numpy as np
import pytest

import ldct


def disk(size, radius, value=0.5):
    c = (size - 1) / 2.0
    r, q = np.mgrid[0:size, 0:size]
    return np.where(np.hypot(r - c, q - c) <= radius, value, 0.0)


def test_radon_shape_and_linearity():
    g = ldct.Geometry(32)
    rng = np.random.default_rng(0)
    x, y = rng.random((32, 32)), rng.random((32, 32))
    s = ldct.radon(x, g)
    assert s.shape == (g.num_angles, g.num_detectors)
    lhs = ldct.radon(0.3 * x + y, g)
    assert np.allclose(lhs, 0.3 * s + ldct.radon(y, g), rtol=0, atol=1e-9)


def test_fbp_recovers_a_disk():
    g = ldct.Geometry(64)
    x = disk(64, 20)
    recon = ldct.fbp(ldct.radon(x, g), g, "hann-ramp")
    mask = ldct.roi_mask(64, 16)
    assert ldct.psnr_roi(recon, x, mask) > 20.0


def test_low_dose_is_seeded():
    g = ldct.Geometry(32)
    x = disk(32, 10)
    a = ldct.simulate_low_dose(x, g, photon_count=1000, seed=3)
    b = ldct.simulate_low_dose(x, g, photon_count=1000, seed=3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, ldct.simulate_low_dose(x, g, photon_count=1000, seed=4))


def test_phantom_labels():
    image, labels = ldct.generate_phantom(64, seed=1)
    assert image.shape == labels.shape == (64, 64)
    assert set(np.unique(labels)) <= {0, 1, 2}
    assert 0.0 <= image.min() and image.max() <= 1.0


def test_psnr_and_ssim():
    rng = np.random.default_rng(1)
    x = rng.random((32, 32))
    mask = ldct.roi_mask(32, 12)
    assert ldct.psnr_roi(x + 0.1, x, mask) == pytest.approx(20.0, abs=1e-9)
    assert ldct.ssim_roi(x, x, mask) == pytest.approx(1.0, abs=1e-9)


def test_losses():
    rng = np.random.default_rng(2)
    recon, full = rng.random((8, 8)), rng.random((8, 8))
    labels = rng.integers(0, 3, size=(8, 8), dtype=np.uint8)
    probs = rng.random((3, 64)) + 0.01
    probs /= probs.sum(axis=0)
    mse = ldct.mse_loss(recon, full)
    assert mse == pytest.approx(np.mean((recon - full) ** 2), abs=1e-12)
    dice = ldct.dice_loss(probs, labels)
    assert ldct.task_adaptive_loss(recon, full, probs, labels, 0.0) == pytest.approx(mse, abs=1e-12)
    assert ldct.task_adaptive_loss(recon, full, probs, labels, 1.0) == pytest.approx(dice, abs=1e-12)
    with pytest.raises(ldct.ConfigError):
        ldct.task_adaptive_loss(recon, full, probs, labels, 1.5)


def test_hard_dice_identity():
    labels = np.random.default_rng(3).integers(0, 3, size=(16, 16), dtype=np.uint8)
    assert ldct.hard_dice(labels, labels) == pytest.approx(1.0)


def test_cli_simulate(tmp_path):
    code, _, _ = ldct.run_cli([])
    assert code == 1
    code, out, _ = ldct.run_cli(["--help"])
    assert code == 0 and "simulate" in out
    config = {"data": {"count": 4, "split_ratio": 0.5}}
    path = tmp_path / "small.json"
    path.write_text(json.dumps(config))
    code, _, err = ldct.run_cli(["simulate", "--config", str(path), "--out", str(tmp_path / "d")])
    assert code == 0, err
    assert (tmp_path / "d" / "manifest.json").exists()
