"""Prediction networks for the two reverse-process paths and their joint
training loop.

Two independent encoder-decoder networks with skip connections share one
topology: the restorer estimates the stain residual, the noiser estimates the
forward-process noise.  Conditioning is wired in by channel-concatenating the
H&E patch to the diffusion state; the timestep enters via a sinusoidal
embedding added at every resolution level.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn

from . import schedules as sched
from .dataio import normalize
from .diffusion import residual
from .errors import TrainingDivergedError


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 2e-3
    T: int = 20
    w_res: float = 1.0
    w_eps: float = 1.0
    seed: int = 0
    checkpoint_interval: int = 10

    def __post_init__(self):
        for name in ("epochs", "batch_size", "T", "checkpoint_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.w_res < 0 or self.w_eps < 0 or self.w_res + self.w_eps <= 0:
            raise ValueError("loss weights must be non-negative with positive sum")


def sinusoidal_embedding(t, dim):
    """Standard sin/cos timestep embedding, shape (len(t), dim)."""
    t = torch.as_tensor(t, dtype=torch.float32).reshape(-1, 1)
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    ang = t * freqs[None]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class _Block(nn.Module):
    def __init__(self, cin, cout, t_dim):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.t_proj = nn.Linear(t_dim, cout)
        self.act = nn.SiLU()

    def forward(self, x, t_emb):
        h = self.act(self.conv1(x))
        h = h + self.t_proj(t_emb)[:, :, None, None]
        return self.act(self.conv2(h))


class CondUNet(nn.Module):
    """3-level encoder-decoder with skip connections, conditioned on the H&E
    patch (channel concat) and the timestep (sinusoidal embedding)."""

    def __init__(self, base=24, t_dim=32):
        super().__init__()
        self.t_dim = t_dim
        c1, c2, c3 = base, base * 2, base * 4
        self.enc1 = _Block(6, c1, t_dim)
        self.enc2 = _Block(c1, c2, t_dim)
        self.enc3 = _Block(c2, c3, t_dim)
        self.dec2 = _Block(c3 + c2, c2, t_dim)
        self.dec1 = _Block(c2 + c1, c1, t_dim)
        self.out = nn.Conv2d(c1, 3, 1)
        self.down = nn.AvgPool2d(2)
        self.up = nn.Upsample(scale_factor=2, mode="nearest")

    def forward(self, x_t, t, cond_he):
        t_emb = sinusoidal_embedding(t, self.t_dim).to(x_t.device)
        if t_emb.shape[0] == 1 and x_t.shape[0] > 1:
            t_emb = t_emb.expand(x_t.shape[0], -1)
        h = torch.cat([x_t, cond_he], dim=1)
        e1 = self.enc1(h, t_emb)
        e2 = self.enc2(self.down(e1), t_emb)
        e3 = self.enc3(self.down(e2), t_emb)
        d2 = self.dec2(torch.cat([self.up(e3), e2], dim=1), t_emb)
        d1 = self.dec1(torch.cat([self.up(d2), e1], dim=1), t_emb)
        return self.out(d1)


class DenoiserPair:
    """The two prediction networks plus the numpy-facing predict API."""

    def __init__(self, restorer, noiser, t_embedding_dim=32, max_t=None):
        self.restorer = restorer
        self.noiser = noiser
        self.t_embedding_dim = t_embedding_dim
        self.max_t = max_t

    @classmethod
    def fresh(cls, base=24, t_dim=32, seed=0):
        torch.manual_seed(seed)
        return cls(CondUNet(base, t_dim), CondUNet(base, t_dim), t_dim)

    def eval(self):
        self.restorer.eval()
        self.noiser.eval()
        return self

    def predict_batch(self, x_t, t, cond_he):
        """Torch-tensor inference, shapes (B, 3, H, W)."""
        with torch.no_grad():
            return self.restorer(x_t, t, cond_he), self.noiser(x_t, t, cond_he)

    def predict(self, x_t, t, cond_he):
        """Single-image numpy inference: (3, H, W) in, (r_hat, eps_hat) out."""
        x_t = np.asarray(x_t)
        if x_t.shape != np.asarray(cond_he).shape:
            raise ValueError("x_t and cond_he must share shape")
        if t < 0 or (self.max_t is not None and t > self.max_t):
            raise ValueError(f"t={t} outside the trained range [0, {self.max_t}]")
        xt = torch.as_tensor(x_t, dtype=torch.float32)[None]
        ch = torch.as_tensor(np.asarray(cond_he), dtype=torch.float32)[None]
        tt = torch.tensor([float(t)])
        r_hat, eps_hat = self.predict_batch(xt, tt, ch)
        r_hat = r_hat[0].numpy().astype(np.float64)
        eps_hat = eps_hat[0].numpy().astype(np.float64)
        if not (np.all(np.isfinite(r_hat)) and np.all(np.isfinite(eps_hat))):
            raise FloatingPointError("predictor produced non-finite output")
        return r_hat, eps_hat


def _loss_terms(pair, x_t, t, cond, r_true, eps_true):
    mse = nn.functional.mse_loss
    l_res = mse(pair.restorer(x_t, t, cond), r_true)
    l_eps = mse(pair.noiser(x_t, t, cond), eps_true)
    return l_res, l_eps


def train(patches, cfg, schedule=None, orientation="he_minus_ihc",
          checkpoint_fn=None, base_channels=24):
    """Train the restoration and noise networks jointly.

    Per batch: draw t uniform in [1, T] and standard-normal eps, build x_t by
    the forward formula, and minimize w_res*MSE(r_hat, r) + w_eps*MSE(eps_hat,
    eps).  Returns (DenoiserPair, log) where log["epoch_loss"] holds per-epoch
    means of the combined loss.  checkpoint_fn(epoch, pair), when given, is
    called every cfg.checkpoint_interval epochs and after the final one.
    """
    patches = list(patches)
    if not patches:
        raise ValueError("training dataset is empty")
    if schedule is None:
        schedule = sched.make_schedule(cfg.T)
    if schedule.T != cfg.T:
        raise ValueError(f"schedule T={schedule.T} != cfg.T={cfg.T}")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    pair = DenoiserPair.fresh(base=base_channels, seed=cfg.seed)

    he = torch.as_tensor(np.stack([normalize(p.he) for p in patches]))
    ihc = torch.as_tensor(np.stack([normalize(p.ihc) for p in patches]))
    res = torch.as_tensor(np.stack([
        residual(normalize(p.ihc), normalize(p.he), orientation) for p in patches
    ]), dtype=torch.float32)
    alpha_bar = torch.as_tensor(schedule.alpha_bar, dtype=torch.float32)
    beta_bar = torch.as_tensor(schedule.beta_bar, dtype=torch.float32)

    params = list(pair.restorer.parameters()) + list(pair.noiser.parameters())
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)

    n = len(patches)
    log = {"epoch_loss": [], "epoch_loss_res": [], "epoch_loss_eps": []}
    last_ckpt_epoch = None
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        tot = tot_r = tot_e = 0.0
        nb = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            t = torch.as_tensor(rng.integers(1, cfg.T + 1, size=len(idx)), dtype=torch.long)
            eps = torch.as_tensor(
                rng.standard_normal((len(idx), *he.shape[1:])), dtype=torch.float32)
            a = alpha_bar[t][:, None, None, None]
            b = beta_bar[t][:, None, None, None]
            x0 = ihc[idx]
            r = res[idx]
            x_t = x0 + a * eps + b * r

            l_res, l_eps = _loss_terms(pair, x_t, t.float(), he[idx], r, eps)
            loss = cfg.w_res * l_res + cfg.w_eps * l_eps
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}",
                    last_checkpoint=last_ckpt_epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot += loss.item()
            tot_r += l_res.item()
            tot_e += l_eps.item()
            nb += 1
        log["epoch_loss"].append(tot / nb)
        log["epoch_loss_res"].append(tot_r / nb)
        log["epoch_loss_eps"].append(tot_e / nb)
        if checkpoint_fn and (epoch % cfg.checkpoint_interval == 0 or epoch == cfg.epochs):
            checkpoint_fn(epoch, pair)
            last_ckpt_epoch = epoch

    pair.eval()
    pair.max_t = cfg.T
    log["config"] = asdict(cfg)
    return pair, log
