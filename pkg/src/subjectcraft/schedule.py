"""Noise schedule and forward noising for the latent video diffusion model.

The schedule stores per-timestep signal/noise coefficient pairs
``(signal_coef[t], noise_coef[t])`` for integer timesteps ``t = 1..T`` with
``noise_coef = sqrt(1 - signal_coef**2)``.  A noised latent at step ``t`` is

    z_t = signal_coef[t] * z0 + noise_coef[t] * eps

Coefficients are kept in float64 so the defining identity holds to ~1e-16;
`forward_noise` casts them to the latent's dtype.

Naming note: the schedule's signal coefficient is a different quantity from
the low-rank adapter strength (``lora_scale`` elsewhere in this package).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Endpoints of the built-in linear-in-signal schedule. The nonzero floor at
# t = T keeps the deterministic sampler's z0 prediction well conditioned.
SIGNAL_START = 0.9999
SIGNAL_END = 0.05

SCHEDULE_KINDS = ("linear_signal",)


@dataclass
class NoiseSchedule:
    """Per-timestep coefficients, index ``t - 1`` for timestep ``t``."""

    signal_coef: np.ndarray
    noise_coef: np.ndarray
    kind: str = "linear_signal"

    @property
    def steps(self) -> int:
        return len(self.signal_coef)

    def check_timestep(self, t: int) -> None:
        if not isinstance(t, (int, np.integer)):
            raise ValueError(f"timestep must be an integer, got {t!r}")
        if not 1 <= t <= self.steps:
            raise ValueError(f"timestep {t} out of range 1..{self.steps}")

    def signal(self, t: int) -> float:
        self.check_timestep(t)
        return float(self.signal_coef[t - 1])

    def noise(self, t: int) -> float:
        self.check_timestep(t)
        return float(self.noise_coef[t - 1])


def build_noise_schedule(steps: int, kind: str = "linear_signal") -> NoiseSchedule:
    """Build a schedule whose signal coefficient falls linearly from
    ``SIGNAL_START`` at t=1 to ``SIGNAL_END`` at t=T.

    For ``steps == 1`` the single coefficient is the t=1 endpoint.
    """
    if not isinstance(steps, (int, np.integer)) or steps < 1:
        raise ValueError(f"steps must be a positive integer, got {steps!r}")
    if kind not in SCHEDULE_KINDS:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    if steps == 1:
        signal = np.array([SIGNAL_START], dtype=np.float64)
    else:
        signal = np.linspace(SIGNAL_START, SIGNAL_END, steps, dtype=np.float64)
    noise = np.sqrt(1.0 - signal**2)
    return NoiseSchedule(signal_coef=signal, noise_coef=noise, kind=kind)


def forward_noise(z0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Noise a clean latent to timestep ``t``: ``signal*z0 + noise*eps``."""
    z0 = np.asarray(z0)
    eps = np.asarray(eps)
    if z0.shape != eps.shape:
        raise ValueError(f"z0 shape {z0.shape} does not match eps shape {eps.shape}")
    lam = z0.dtype.type(sched.signal(t))
    sig = z0.dtype.type(sched.noise(t))
    return lam * z0 + sig * eps
