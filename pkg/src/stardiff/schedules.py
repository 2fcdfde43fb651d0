"""Noise and restoration schedules for the dual-path diffusion process.

Convention: cumulative amplitudes are stored at indices 0..T with an explicit
t=0 row, so that the state at t=0 is the clean target by construction.  The
per-step reverse coefficients are the first differences of the cumulative
schedules, which makes the composed reverse pass telescope exactly back to the
forward marginal.
"""

from dataclasses import dataclass, field

import numpy as np

NOISE_SHAPES = ("linear", "cosine")
RESTORATION_SHAPES = ("linear", "quadratic")


@dataclass(frozen=True)
class SchedulePair:
    """Discretized noise schedule (alpha_bar) and restoration schedule
    (beta_bar), plus the derived per-step reverse coefficients.

    alpha_bar, beta_bar have length T+1 (index = timestep); gamma and eta have
    length T, where gamma[t-1] / eta[t-1] apply to the reverse step t -> t-1.
    """

    T: int
    noise_shape: str
    restoration_shape: str
    alpha_bar: np.ndarray
    beta_bar: np.ndarray
    gamma: np.ndarray = field(repr=False)
    eta: np.ndarray = field(repr=False)

    def gamma_at(self, t):
        return self.gamma[t - 1]

    def eta_at(self, t):
        return self.eta[t - 1]

    def to_dict(self):
        return {
            "T": int(self.T),
            "noise_shape": self.noise_shape,
            "restoration_shape": self.restoration_shape,
            "alpha_bar": np.asarray(self.alpha_bar, dtype=np.float64),
            "beta_bar": np.asarray(self.beta_bar, dtype=np.float64),
        }

    @classmethod
    def from_dict(cls, d):
        return from_cumulative(
            np.asarray(d["alpha_bar"], dtype=np.float64),
            np.asarray(d["beta_bar"], dtype=np.float64),
            noise_shape=d.get("noise_shape", "linear"),
            restoration_shape=d.get("restoration_shape", "linear"),
        )


def _check_cumulative(name, v, T):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (T + 1,):
        raise ValueError(f"{name} must have length T+1={T + 1}, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    if v[0] != 0.0:
        raise ValueError(f"{name}[0] must be 0, got {v[0]}")
    if np.any(np.diff(v) < 0):
        raise ValueError(f"{name} must be non-decreasing")
    return v


def reverse_coefficients(alpha_bar, beta_bar):
    """Per-step reverse coefficients as first differences of the cumulative
    schedules: gamma[t-1] = beta_bar[t] - beta_bar[t-1], eta likewise.

    Raises ValueError if either schedule is non-monotone or malformed.
    """
    alpha_bar = np.asarray(alpha_bar, dtype=np.float64)
    beta_bar = np.asarray(beta_bar, dtype=np.float64)
    if alpha_bar.shape != beta_bar.shape or alpha_bar.ndim != 1 or len(alpha_bar) < 2:
        raise ValueError("alpha_bar and beta_bar must be 1-d vectors of equal length >= 2")
    T = len(alpha_bar) - 1
    alpha_bar = _check_cumulative("alpha_bar", alpha_bar, T)
    beta_bar = _check_cumulative("beta_bar", beta_bar, T)
    return np.diff(beta_bar), np.diff(alpha_bar)


def from_cumulative(alpha_bar, beta_bar, noise_shape="custom", restoration_shape="custom"):
    """Build a SchedulePair from explicit cumulative vectors."""
    gamma, eta = reverse_coefficients(alpha_bar, beta_bar)
    return SchedulePair(
        T=len(alpha_bar) - 1,
        noise_shape=noise_shape,
        restoration_shape=restoration_shape,
        alpha_bar=np.asarray(alpha_bar, dtype=np.float64),
        beta_bar=np.asarray(beta_bar, dtype=np.float64),
        gamma=gamma,
        eta=eta,
    )


def make_schedule(T, noise_shape="linear", restoration_shape="linear",
                  noise_amplitude=1.0, restoration_amplitude=1.0):
    """Construct the paired schedules for T timesteps.

    noise_shape:
        linear  -> alpha_bar[t] = amp * t / T
        cosine  -> alpha_bar[t] = amp * (1 - cos(pi * t / T)) / 2
    restoration_shape:
        linear    -> beta_bar[t] = amp * t / T
        quadratic -> beta_bar[t] = amp * (t / T)^2

    With the default restoration_amplitude=1.0 the restoration path carries
    the state fully to the H&E endpoint at t=T.  restoration_amplitude=0
    disables the restoration path entirely (gamma == 0), recovering a plain
    noise-only process.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if noise_shape not in NOISE_SHAPES:
        raise ValueError(f"noise_shape must be one of {NOISE_SHAPES}, got {noise_shape!r}")
    if restoration_shape not in RESTORATION_SHAPES:
        raise ValueError(
            f"restoration_shape must be one of {RESTORATION_SHAPES}, got {restoration_shape!r}")
    if noise_amplitude < 0 or restoration_amplitude < 0:
        raise ValueError("schedule amplitudes must be non-negative")

    u = np.arange(T + 1, dtype=np.float64) / T
    if noise_shape == "linear":
        alpha_bar = noise_amplitude * u
    else:
        alpha_bar = noise_amplitude * (1.0 - np.cos(np.pi * u)) / 2.0
    if restoration_shape == "linear":
        beta_bar = restoration_amplitude * u
    else:
        beta_bar = restoration_amplitude * u ** 2

    # Pin the exact endpoints against float rounding.
    alpha_bar[0] = 0.0
    beta_bar[0] = 0.0
    alpha_bar[-1] = noise_amplitude
    beta_bar[-1] = restoration_amplitude

    return SchedulePair(
        T=int(T),
        noise_shape=noise_shape,
        restoration_shape=restoration_shape,
        alpha_bar=alpha_bar,
        beta_bar=beta_bar,
        gamma=np.diff(beta_bar),
        eta=np.diff(alpha_bar),
    )
