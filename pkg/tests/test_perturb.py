import numpy as np
import pytest

from stardiff import dataio
from stardiff.errors import StarDiffError
from stardiff.perturb import DEFAULT_BATTERY, Perturbation, apply, run_battery
from stardiff.quality_metrics import ssim


def sample_image(seed=0, size=32):
    return np.random.default_rng(seed).uniform(0, 1, (3, size, size))


def test_zero_translation_is_identity():
    img = sample_image()
    out = apply(img, Perturbation("translate", 0))
    np.testing.assert_array_equal(out, img)


def test_full_rotation_is_identity_within_interpolation():
    img = sample_image(1)
    a = apply(img, Perturbation("rotate", 360))
    b = apply(img, Perturbation("rotate", 0))
    assert np.max(np.abs(a - b)) <= 1e-6


def test_elastic_deterministic():
    img = sample_image(2)
    a = apply(img, Perturbation("elastic", "high", seed=9))
    b = apply(img, Perturbation("elastic", "high", seed=9))
    np.testing.assert_array_equal(a, b)
    c = apply(img, Perturbation("elastic", "high", seed=10))
    assert not np.array_equal(a, c)


def test_translation_magnitude_bound():
    img = sample_image(3)
    with pytest.raises(ValueError, match="half the image"):
        apply(img, Perturbation("translate", 20))


def test_unknown_severity_and_kind():
    img = sample_image(4)
    with pytest.raises(ValueError, match="severity"):
        apply(img, Perturbation("elastic", "extreme"))
    with pytest.raises(ValueError, match="unknown perturbation"):
        apply(img, Perturbation("shear", 5))


@pytest.mark.parametrize("p", DEFAULT_BATTERY)
def test_shape_preserved(p):
    img = sample_image(5)
    assert apply(img, p).shape == img.shape


def test_ssim_decreases_with_small_translations():
    # beyond the blob correlation length SSIM can fluctuate (structure may
    # partially re-align), so only the decorrelating regime is ordered
    patches = dataio.synth_dataset(6, size=32, seed=11)
    for patch in patches:
        img = patch.ihc.astype(np.float64) / 255.0
        values = [ssim(img, apply(img, Perturbation("translate", m)))
                  for m in (0, 2, 5)]
        assert values[0] == 1.0
        assert all(a >= b - 1e-9 for a, b in zip(values, values[1:]))
        assert ssim(img, apply(img, Perturbation("translate", 10))) < 0.9


def test_battery_baseline_row(classifier_stages, eval_patches):
    stages, _ = classifier_stages
    clf = stages["properly_fit"][0]
    images = np.stack([p.ihc for p in eval_patches[:12]]).astype(np.float64) / 255.0
    labels = np.array([p.binary_label for p in eval_patches[:12]])
    report = run_battery(images, labels, clf,
                         perturbations=[Perturbation("translate", 5)])
    assert report.baseline["ssim"] == 1.0
    assert report.baseline["psnr_db"] == float("inf")
    acc = report.baseline["accuracy"]
    assert report.baseline["sfs"] == (acc + 1.0) / 2.0
    assert len(report.rows) == 1
    md = report.to_markdown()
    assert "SSIM drop" in md and "identical pair" in md


def test_battery_requires_classifier(eval_patches):
    images = np.stack([p.ihc for p in eval_patches[:4]]).astype(np.float64) / 255.0
    labels = np.array([p.binary_label for p in eval_patches[:4]])
    with pytest.raises(StarDiffError, match="classifier"):
        run_battery(images, labels, None)


def test_battery_empty_set(classifier_stages):
    stages, _ = classifier_stages
    with pytest.raises(ValueError, match="empty"):
        run_battery(np.zeros((0, 3, 8, 8)), np.zeros(0), stages["properly_fit"][0])
