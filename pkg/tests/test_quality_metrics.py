import numpy as np
import pytest

from stardiff.quality_metrics import QualityResult, evaluate_pairs, psnr, quality_rank, ssim


def rand01(seed, shape=(3, 32, 32)):
    return np.random.default_rng(seed).uniform(0, 1, shape)


def test_ssim_identity():
    x = rand01(0)
    assert ssim(x, x) == 1.0


def test_ssim_symmetry():
    a, b = rand01(1), rand01(2)
    assert ssim(a, b) == ssim(b, a)


def test_ssim_inverted_checkerboard_is_low():
    yy, xx = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    board = ((yy + xx) % 2).astype(np.float64)
    img = np.stack([board] * 3)
    assert ssim(img, 1.0 - img) < 0.1


def test_ssim_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        ssim(rand01(3), rand01(4, (3, 16, 16)))


def test_psnr_identity_is_infinite():
    x = rand01(5)
    assert psnr(x, x) == float("inf")


def test_psnr_zero_db_at_full_scale_mse():
    a = np.zeros((3, 8, 8))
    b = np.ones((3, 8, 8))
    assert abs(psnr(a, b)) < 1e-12


def test_psnr_constant_offset_closed_form():
    a = np.full((3, 8, 8), 0.3)
    b = np.full((3, 8, 8), 0.4)
    assert abs(psnr(a, b) - 20.0) < 1e-9


def test_psnr_monotone_in_mse():
    a = rand01(6)
    values = [psnr(a, np.clip(a + d, 0, 2)) for d in (0.01, 0.05, 0.1, 0.3)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_quality_rank_dominance():
    methods = {
        "A": QualityResult(ssim=0.9, psnr_db=30.0),
        "B": QualityResult(ssim=0.5, psnr_db=20.0),
    }
    assert quality_rank(methods).final_rank["A"] == 1


def test_quality_rank_weight_arithmetic():
    methods = {
        "A": QualityResult(ssim=0.9, psnr_db=20.0),
        "B": QualityResult(ssim=0.5, psnr_db=30.0),
    }
    ranking = quality_rank(methods)
    assert ranking.composite["A"] == pytest.approx(0.6 * 1 + 0.4 * 2)
    assert ranking.composite["B"] == pytest.approx(0.6 * 2 + 0.4 * 1)
    assert ranking.final_rank["A"] == 1


def test_quality_rank_needs_two_methods():
    with pytest.raises(ValueError):
        quality_rank({"only": QualityResult(ssim=1.0, psnr_db=10.0)})


TABLE1 = {
    "reinhard": QualityResult(ssim=0.44, psnr_db=15.34),
    "macenko": QualityResult(ssim=0.41, psnr_db=15.49),
    "vahadane": QualityResult(ssim=0.35, psnr_db=15.04),
    "cyclegan": QualityResult(ssim=0.37, psnr_db=16.20),
    "pix2pix": QualityResult(ssim=0.42, psnr_db=19.63),
    "pix2pix_pyramid": QualityResult(ssim=0.48, psnr_db=21.61),
    "palette": QualityResult(ssim=0.53, psnr_db=17.13),
    "pst_diff": QualityResult(ssim=0.38, psnr_db=16.75),
    "stardiff": QualityResult(ssim=0.53, psnr_db=21.30),
}


def test_published_benchmark_table_places_stardiff_first():
    ranking = quality_rank(TABLE1)
    assert ranking.final_rank["stardiff"] == 1


def test_rank_invariant_under_monotone_ssim_rescale():
    ranking = quality_rank(TABLE1)
    rescaled = {m: QualityResult(ssim=np.tanh(3 * q.ssim), psnr_db=q.psnr_db)
                for m, q in TABLE1.items()}
    assert quality_rank(rescaled).final_rank == ranking.final_rank


def test_evaluate_pairs_identical_set():
    imgs = [rand01(i) for i in range(3)]
    result = evaluate_pairs([(x, x) for x in imgs])
    assert result.ssim == 1.0
    assert result.psnr_db == float("inf")
    assert result.n_pairs == 3
