"""Forward corruption and dual-path reverse sampling.

Images are float arrays of shape (3, H, W) in the model range [-1, 1].  The
forward process perturbs the clean target with a stochastic noise term and a
deterministic restoration residual; the reverse pass removes both via the
per-step schedule coefficients.  All operations are pure given an explicit
noise array or seed.
"""

from dataclasses import dataclass

import numpy as np

ORIENTATIONS = ("he_minus_ihc", "ihc_minus_he")
MODEL_RANGE = (-1.0, 1.0)


@dataclass(frozen=True)
class PathMask:
    """Which reverse-update paths are active (sampling-path ablation)."""

    use_restoration: bool = True
    use_noise: bool = True

    def __post_init__(self):
        if not (self.use_restoration or self.use_noise):
            raise ValueError("at least one sampling path must be enabled")


@dataclass
class DiffusionSample:
    """Trajectory state: timestep, current image, conditioning H&E patch."""

    t: int
    x_t: np.ndarray
    cond_he: np.ndarray

    def __post_init__(self):
        if self.x_t.shape != self.cond_he.shape:
            raise ValueError(
                f"x_t shape {self.x_t.shape} != cond_he shape {self.cond_he.shape}")


def residual(target_ihc, source_he, orientation="he_minus_ihc"):
    """Restoration residual between the two stain domains.

    he_minus_ihc (default): r = he - ihc, so the forward endpoint x_T sits at
    the H&E image plus noise and the reverse pass restores toward IHC.
    ihc_minus_he: the literal opposite sign.
    """
    target_ihc = np.asarray(target_ihc, dtype=np.float64)
    source_he = np.asarray(source_he, dtype=np.float64)
    if target_ihc.shape != source_he.shape:
        raise ValueError(
            f"shape mismatch: ihc {target_ihc.shape} vs he {source_he.shape}")
    if orientation == "he_minus_ihc":
        r = source_he - target_ihc
    elif orientation == "ihc_minus_he":
        r = target_ihc - source_he
    else:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}, got {orientation!r}")
    if not np.all(np.isfinite(r)):
        raise ValueError("residual contains non-finite entries")
    return r


def forward_sample(x0, res, s, t, eps=None, rng_seed=None, cond_he=None):
    """State at timestep t: x_t = x0 + alpha_bar[t]*eps + beta_bar[t]*r.

    Exactly one of eps / rng_seed must be given when t > 0 and the noise
    amplitude is nonzero; at t=0 the clean image is returned unchanged.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    res = np.asarray(res, dtype=np.float64)
    if x0.shape != res.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs residual {res.shape}")
    if not 0 <= t <= s.T:
        raise ValueError(f"t must be in [0, {s.T}], got {t}")
    cond = x0 if cond_he is None else np.asarray(cond_he, dtype=np.float64)
    if t == 0:
        return DiffusionSample(t=0, x_t=x0.copy(), cond_he=cond)
    if eps is None and rng_seed is None:
        raise ValueError("provide eps or rng_seed for t > 0")
    if eps is not None and rng_seed is not None:
        raise ValueError("provide exactly one of eps / rng_seed")
    if eps is None:
        eps = np.random.default_rng(rng_seed).standard_normal(x0.shape)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    x_t = x0 + s.alpha_bar[t] * eps + s.beta_bar[t] * res
    return DiffusionSample(t=int(t), x_t=x_t, cond_he=cond)


def reverse_step(sample, r_hat, eps_hat, s, mask=PathMask()):
    """One reverse update: x_{t-1} = x_t - gamma_t*r_hat - eta_t*eps_hat.

    Disabled paths contribute exactly zero (the prediction is not touched).
    """
    if sample.t < 1:
        raise ValueError("cannot reverse from t=0: nothing to invert")
    if sample.t > s.T:
        raise ValueError(f"sample.t={sample.t} exceeds schedule T={s.T}")
    r_hat = np.asarray(r_hat, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if r_hat.shape != sample.x_t.shape or eps_hat.shape != sample.x_t.shape:
        raise ValueError("prediction shapes must match x_t")
    x = sample.x_t.copy()
    if mask.use_restoration:
        x = x - s.gamma_at(sample.t) * r_hat
    if mask.use_noise:
        x = x - s.eta_at(sample.t) * eps_hat
    return DiffusionSample(t=sample.t - 1, x_t=x, cond_he=sample.cond_he)


def sample_ihc(cond_he, predictor, s, mask=PathMask(), rng_seed=0, clamp=True):
    """Full reverse trajectory: generate a virtual IHC image from an H&E patch.

    Starts at x_T = cond_he + alpha_bar[T]*eps (the forward marginal endpoint
    under the default residual orientation) and applies reverse_step for
    t = T..1.  The predictor must expose predict(x_t, t, cond_he) returning
    (r_hat, eps_hat) shaped like x_t.  Deterministic given rng_seed.
    """
    cond_he = np.asarray(cond_he, dtype=np.float64)
    rng = np.random.default_rng(rng_seed)
    eps0 = rng.standard_normal(cond_he.shape)
    state = DiffusionSample(t=s.T, x_t=cond_he + s.alpha_bar[s.T] * eps0, cond_he=cond_he)
    for t in range(s.T, 0, -1):
        r_hat, eps_hat = predictor.predict(state.x_t, t, cond_he)
        r_hat = np.asarray(r_hat, dtype=np.float64)
        eps_hat = np.asarray(eps_hat, dtype=np.float64)
        if r_hat.shape != cond_he.shape or eps_hat.shape != cond_he.shape:
            raise ValueError("predictor output shape does not match the image")
        state = reverse_step(state, r_hat, eps_hat, s, mask)
    out = state.x_t
    if clamp:
        out = np.clip(out, MODEL_RANGE[0], MODEL_RANGE[1])
    return out
