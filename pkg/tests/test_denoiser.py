import numpy as np
import pytest
import torch

from stardiff import checkpoint as ckpt, dataio, schedules as sched
from stardiff.denoiser import DenoiserPair, TrainConfig, sinusoidal_embedding, train
from stardiff.diffusion import residual
from stardiff.errors import CheckpointFormatError


def small_cfg(**kw):
    base = dict(epochs=2, batch_size=8, learning_rate=1e-3, T=5, seed=3,
                checkpoint_interval=1)
    base.update(kw)
    return TrainConfig(**base)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ValueError):
        TrainConfig(w_res=0.0, w_eps=0.0)


def test_sinusoidal_embedding_shape():
    emb = sinusoidal_embedding([1.0, 5.0, 9.0], 32)
    assert emb.shape == (3, 32)
    assert torch.isfinite(emb).all()


def test_untrained_predict_deterministic_and_finite():
    pair = DenoiserPair.fresh(base=8, seed=0).eval()
    x = np.random.default_rng(0).uniform(-1, 1, (3, 16, 16))
    cond = np.random.default_rng(1).uniform(-1, 1, (3, 16, 16))
    r1, e1 = pair.predict(x, 3, cond)
    r2, e2 = pair.predict(x, 3, cond)
    assert np.array_equal(r1, r2) and np.array_equal(e1, e2)
    assert np.all(np.isfinite(r1)) and np.all(np.isfinite(e1))
    assert r1.shape == e1.shape == x.shape


def test_conditioning_is_wired_in():
    pair = DenoiserPair.fresh(base=8, seed=0).eval()
    x = np.random.default_rng(2).uniform(-1, 1, (3, 16, 16))
    cond_a = np.random.default_rng(3).uniform(-1, 1, (3, 16, 16))
    cond_b = np.random.default_rng(4).uniform(-1, 1, (3, 16, 16))
    r_a, _ = pair.predict(x, 2, cond_a)
    r_b, _ = pair.predict(x, 2, cond_b)
    assert np.max(np.abs(r_a - r_b)) > 0.0


def test_predict_t_out_of_range():
    pair = DenoiserPair.fresh(base=8, seed=0).eval()
    pair.max_t = 5
    x = np.zeros((3, 16, 16))
    with pytest.raises(ValueError, match="outside the trained range"):
        pair.predict(x, 6, x)
    with pytest.raises(ValueError):
        pair.predict(x, -1, x)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError, match="empty"):
        train([], small_cfg())


def test_training_determinism():
    patches = dataio.synth_dataset(24, size=16, seed=5)
    _, log_a = train(patches, small_cfg(), base_channels=8)
    _, log_b = train(patches, small_cfg(), base_channels=8)
    assert round(log_a["epoch_loss"][-1], 6) == round(log_b["epoch_loss"][-1], 6)


def test_zero_noise_weight_freezes_noiser():
    patches = dataio.synth_dataset(16, size=16, seed=6)
    cfg = small_cfg(epochs=1, w_eps=0.0)
    torch.manual_seed(cfg.seed)
    before = DenoiserPair.fresh(base=8, seed=cfg.seed)
    ref = [p.detach().clone() for p in before.noiser.parameters()]
    pair, _ = train(patches, cfg, base_channels=8)
    for p_new, p_old in zip(pair.noiser.parameters(), ref):
        assert torch.equal(p_new, p_old)


def test_loss_decomposition_exact():
    patches = dataio.synth_dataset(16, size=16, seed=7)
    _, log = train(patches, small_cfg(epochs=1, w_res=0.3, w_eps=0.7), base_channels=8)
    combined = log["epoch_loss"][0]
    parts = 0.3 * log["epoch_loss_res"][0] + 0.7 * log["epoch_loss_eps"][0]
    assert combined == pytest.approx(parts, rel=1e-6)


def test_gradient_check_against_finite_differences():
    torch.manual_seed(0)
    conv_r = torch.nn.Conv2d(3, 3, 3, padding=1).double()
    conv_e = torch.nn.Conv2d(3, 3, 3, padding=1).double()
    x = torch.randn(2, 3, 8, 8, dtype=torch.float64)
    r_true = torch.randn(2, 3, 8, 8, dtype=torch.float64)
    e_true = torch.randn(2, 3, 8, 8, dtype=torch.float64)

    def loss_fn():
        mse = torch.nn.functional.mse_loss
        return 0.6 * mse(conv_r(x), r_true) + 0.4 * mse(conv_e(x), e_true)

    loss = loss_fn()
    loss.backward()
    for conv in (conv_r, conv_e):
        w = conv.weight
        grad = w.grad.clone()
        idx = (0, 1, 1, 1)
        h = 1e-6
        with torch.no_grad():
            w[idx] += h
            up = loss_fn().item()
            w[idx] -= 2 * h
            down = loss_fn().item()
            w[idx] += h
        fd = (up - down) / (2 * h)
        assert abs(fd - grad[idx].item()) <= 1e-4 * max(1.0, abs(fd))


def test_training_loss_halves_on_toy_run(toy_model):
    _, log, _ = toy_model
    assert log["epoch_loss"][-1] <= 0.5 * log["epoch_loss"][0]


def test_trained_restorer_correlates_with_true_residual(toy_model, toy_schedule, synth_patches):
    pair, _, _ = toy_model
    p = synth_patches[0]
    he = dataio.normalize(p.he).astype(np.float64)
    ihc = dataio.normalize(p.ihc).astype(np.float64)
    r_true = residual(ihc, he)
    eps = np.random.default_rng(0).standard_normal(he.shape)
    t = toy_schedule.T // 2
    x_t = ihc + toy_schedule.alpha_bar[t] * eps + toy_schedule.beta_bar[t] * r_true
    r_hat, _ = pair.predict(x_t, t, he)
    corr = np.corrcoef(r_hat.ravel(), r_true.ravel())[0, 1]
    assert corr > 0.5


def test_checkpoint_roundtrip_bit_identical(toy_model, toy_schedule, tmp_path):
    pair, _, cfg = toy_model
    path = tmp_path / "ckpt.pt"
    ckpt.save_denoiser(path, pair, toy_schedule, cfg, "he_minus_ihc", base_channels=16)
    loaded, schedule, cfg2, orientation = ckpt.load_denoiser(path)
    assert orientation == "he_minus_ihc"
    assert cfg2 == cfg
    assert np.array_equal(schedule.alpha_bar, toy_schedule.alpha_bar)
    x = np.random.default_rng(1).uniform(-1, 1, (3, 32, 32))
    cond = np.random.default_rng(2).uniform(-1, 1, (3, 32, 32))
    r_a, e_a = pair.predict(x, 4, cond)
    r_b, e_b = loaded.predict(x, 4, cond)
    assert np.array_equal(r_a, r_b)
    assert np.array_equal(e_a, e_b)


def test_checkpoint_kind_mismatch(tmp_path):
    pair = DenoiserPair.fresh(base=8, seed=0)
    s = sched.make_schedule(5)
    path = tmp_path / "ckpt.pt"
    ckpt.save_denoiser(path, pair, s, TrainConfig(T=5), "he_minus_ihc", base_channels=8)
    with pytest.raises(CheckpointFormatError, match="kind"):
        ckpt.load_classifier(path, lambda meta: None)
    with pytest.raises(CheckpointFormatError, match="not found"):
        ckpt.load_denoiser(tmp_path / "absent.pt")
