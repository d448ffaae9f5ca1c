"""Deterministic DDIM sampling with classifier-free guidance and a two-phase
adapter-strength schedule.

The denoising loop runs t = T..1. The adapter strength starts at ``lambda_s``
and switches to ``lambda_l`` at the top of the iteration where t == T - K,
before that step's denoiser calls; so the first K steps (t > T - K) run at
``lambda_s`` and every later step at ``lambda_l``. With K = 0 the switch
fires immediately at t = T, with K = T it never fires. The early low-strength
phase leaves the base model's layout and motion tendencies mostly untouched;
the late high-strength phase restores the learned subject's appearance.

Sampling is pure: the strength is passed per denoiser call, runs with
distinct seeds can proceed concurrently against shared read-only weights,
and a (seed, config, weights) triple fixes the whole latent trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bundle import ModelBundle
from .errors import NumericDivergenceError
from .lora import AdapterSet
from .schedule import NoiseSchedule, build_noise_schedule


@dataclass
class SamplerConfig:
    steps: int = 50
    guidance_scale: float = 12.0
    lambda_s: float = 0.4
    lambda_l: float = 0.8
    k: int = 5
    seed: int = 0
    frames: int = 8
    height: int = 16
    width: int = 16
    channels: int = 4

    def __post_init__(self):
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps!r}")
        if not isinstance(self.k, int) or not 0 <= self.k <= self.steps:
            raise ValueError("K must satisfy 0 <= K <= T")
        for name in ("lambda_s", "lambda_l"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
        if self.guidance_scale < 0:
            raise ValueError(f"guidance_scale must be >= 0, got {self.guidance_scale!r}")
        for name in ("frames", "height", "width", "channels"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")


@dataclass
class SampleResult:
    latent: np.ndarray
    scales: list[float]
    trajectory: list[np.ndarray] = field(default_factory=list)


def lora_weight_at_step(t: int, config: SamplerConfig) -> float:
    """Adapter strength the denoiser sees at step ``t`` of the loop above."""
    if not isinstance(t, (int, np.integer)) or not 1 <= t <= config.steps:
        raise ValueError(f"step {t!r} out of range 1..{config.steps}")
    return config.lambda_s if t > config.steps - config.k else config.lambda_l


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray, guidance_scale: float) -> np.ndarray:
    """Classifier-free guidance: uncond + scale * (cond - uncond)."""
    eps_uncond = np.asarray(eps_uncond)
    eps_cond = np.asarray(eps_cond)
    if eps_uncond.shape != eps_cond.shape:
        raise ValueError(f"shape mismatch: {eps_uncond.shape} vs {eps_cond.shape}")
    return eps_uncond + guidance_scale * (eps_cond - eps_uncond)


def ddim_step(z_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """One deterministic denoising update from t to t-1 (t=1 returns the
    predicted clean latent)."""
    z_t = np.asarray(z_t)
    eps_hat = np.asarray(eps_hat)
    if z_t.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch: {z_t.shape} vs {eps_hat.shape}")
    lam_t = sched.signal(t)
    if lam_t == 0.0:
        raise ValueError(f"singular schedule: signal coefficient is 0 at t={t}")
    sig_t = sched.noise(t)
    pred_z0 = (z_t - sig_t * eps_hat) / lam_t
    if t == 1:
        return pred_z0
    return sched.signal(t - 1) * pred_z0 + sched.noise(t - 1) * eps_hat


def sample_video(bundle: ModelBundle, adapters: AdapterSet | None, prompt: str,
                 config: SamplerConfig, uncond_prompt: str | None = None,
                 keep_trajectory: bool = False) -> SampleResult:
    """Generate a clean latent video from noise.

    Two denoiser evaluations per step (unconditional and conditional) feed the
    guidance combination; the unconditional branch uses the all-PAD encoding
    unless ``uncond_prompt`` is given.
    """
    model, encoder = bundle.model, bundle.encoder
    if config.steps > model.config.schedule_steps:
        raise ValueError(
            f"steps {config.steps} exceed the model's schedule range {model.config.schedule_steps}"
        )
    if config.channels != model.config.latent_channels:
        raise ValueError(
            f"config channels {config.channels} != model latent channels {model.config.latent_channels}"
        )
    sched = build_noise_schedule(config.steps)
    cond = encoder.encode(prompt)
    uncond = encoder.encode(uncond_prompt) if uncond_prompt else encoder.empty_condition()

    rng = np.random.default_rng(config.seed)
    z = rng.standard_normal((config.frames, config.height, config.width, config.channels))
    scales: list[float] = []
    trajectory: list[np.ndarray] = []
    for t in range(config.steps, 0, -1):
        scale = lora_weight_at_step(t, config)
        scales.append(scale)
        eps_uncond = model.forward(z, uncond, t, adapters=adapters, lora_scale=scale)
        eps_cond = model.forward(z, cond, t, adapters=adapters, lora_scale=scale)
        eps_hat = cfg_combine(eps_uncond, eps_cond, config.guidance_scale)
        z = ddim_step(z, eps_hat, t, sched)
        if not np.isfinite(z).all():
            raise NumericDivergenceError(f"latent diverged at step t={t}", step=t)
        if keep_trajectory:
            trajectory.append(z.copy())
    return SampleResult(latent=z, scales=scales, trajectory=trajectory)
