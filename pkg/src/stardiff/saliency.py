"""Randomized-mask (RISE-style) saliency over the denoising trajectory.

The probe runs one unmasked reverse trajectory, and at each probed timestep
re-evaluates the single reverse update with the conditioning H&E patch
randomly occluded.  Each mask is scored by how far the occluded update drifts
from the unmasked one, and that drift is attributed to the occluded pixels,
so regions whose removal changes the output most light up.
"""

from dataclasses import dataclass

import numpy as np
import torch
from scipy.ndimage import zoom

from .diffusion import PathMask, reverse_step
from .errors import StarDiffError


@dataclass
class SaliencyMap:
    """Per-timestep importance maps normalized to [0, 1] (constant maps
    collapse to all zeros)."""

    maps: dict
    timesteps: list
    n_masks: int
    keep_prob: float
    cell: int


def _make_masks(n, hw, cell, p, rng):
    h, w = hw
    gh, gw = h // cell, w // cell
    grid = (rng.random((n, gh, gw)) < p).astype(np.float64)
    up = np.stack([zoom(g, (h / gh, w / gw), order=1) for g in grid])
    return np.clip(up, 0.0, 1.0)


def _normalize(m):
    lo, hi = float(m.min()), float(m.max())
    if hi - lo < 1e-12:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def rise_saliency(cond_he, predictor, s, timesteps=None, n_masks=1000, p=0.5,
                  cell=8, seed=0, fill=None, batch_size=64):
    """Estimate which H&E pixels drive the generation at selected timesteps.

    cond_he: (3, H, W) in [-1, 1].  fill is the replacement color for
    occluded regions (default: the image's own per-channel mean, a stand-in
    for the dataset mean color).  Deterministic given seed.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"keep probability p must be in (0, 1), got {p}")
    if n_masks < 1:
        raise ValueError("n_masks must be >= 1")
    cond_he = np.asarray(cond_he, dtype=np.float64)
    h, w = cond_he.shape[1:]
    if h % cell or w % cell:
        raise ValueError(f"cell={cell} must divide the image size {h}x{w}")
    if predictor is None:
        raise StarDiffError("a trained predictor is required")
    if timesteps is None:
        timesteps = [s.T, max(1, s.T // 2), 1]
    timesteps = sorted({int(t) for t in timesteps}, reverse=True)
    if timesteps[0] > s.T or timesteps[-1] < 1:
        raise ValueError(f"probed timesteps must lie in [1, {s.T}]")

    rng = np.random.default_rng(seed)
    masks = _make_masks(n_masks, (h, w), cell, p, rng)
    if fill is None:
        fill = cond_he.mean(axis=(1, 2))
    fill = np.broadcast_to(np.asarray(fill, dtype=np.float64).reshape(3, 1, 1), cond_he.shape)
    masked_conds = masks[:, None] * cond_he[None] + (1.0 - masks[:, None]) * fill[None]

    # One unmasked trajectory provides the x_t states to probe.
    eps0 = rng.standard_normal(cond_he.shape)
    states = {}
    x = cond_he + s.alpha_bar[s.T] * eps0
    for t in range(s.T, 0, -1):
        if t in timesteps:
            states[t] = x.copy()
        r_hat, eps_hat = predictor.predict(x, t, cond_he)
        x = x - s.gamma_at(t) * r_hat - s.eta_at(t) * eps_hat

    maps = {}
    for t in timesteps:
        x_t = states[t]
        base = reverse_step_output(x_t, t, cond_he, predictor, s)
        scores = np.empty(n_masks)
        xt_batchable = torch.as_tensor(x_t, dtype=torch.float32)[None]
        for start in range(0, n_masks, batch_size):
            chunk = masked_conds[start:start + batch_size]
            mc = torch.as_tensor(chunk, dtype=torch.float32)
            xt = xt_batchable.expand(len(chunk), -1, -1, -1)
            tt = torch.full((len(chunk),), float(t))
            if hasattr(predictor, "predict_batch"):
                r_hat, eps_hat = predictor.predict_batch(xt, tt, mc)
                r_hat = torch.as_tensor(r_hat, dtype=xt.dtype)
                eps_hat = torch.as_tensor(eps_hat, dtype=xt.dtype)
                out = (xt - s.gamma_at(t) * r_hat - s.eta_at(t) * eps_hat).numpy()
            else:
                out = np.stack([
                    reverse_step_output(x_t, t, c, predictor, s) for c in chunk])
            scores[start:start + len(chunk)] = np.mean(
                (out - base[None]) ** 2, axis=(1, 2, 3))

        occluded = 1.0 - masks
        weight = occluded.sum(axis=0)
        weight[weight == 0] = 1.0
        sal = np.tensordot(scores, occluded, axes=1) / weight
        maps[t] = _normalize(sal)

    return SaliencyMap(maps=maps, timesteps=timesteps, n_masks=n_masks,
                       keep_prob=p, cell=cell)


def reverse_step_output(x_t, t, cond, predictor, s, mask=PathMask()):
    """Single reverse update at t under a given conditioning image."""
    from .diffusion import DiffusionSample
    r_hat, eps_hat = predictor.predict(x_t, t, cond)
    state = DiffusionSample(t=t, x_t=np.asarray(x_t, dtype=np.float64),
                            cond_he=np.asarray(cond, dtype=np.float64))
    return reverse_step(state, r_hat, eps_hat, s, mask).x_t
