"""Desk-scale subject-customized latent video diffusion.

A minimal latent video denoiser learns a new subject from still images via
low-rank adapters on its spatial attention projections plus one learned
pseudo-token, with a class-regularization term against overfitting. The
deterministic sampler then schedules the adapter strength in two phases:
weak for the first K denoising steps (layout and motion form early), strong
afterwards (appearance detail forms late).
"""

from .bundle import ModelBundle, build_bundle, load_checkpoint, save_checkpoint
from .errors import ContainerFormatError, IncompatibleModelError, NumericDivergenceError
from .images import LatentCodec, default_codec, read_ppm, render_class_image, write_ppm
from .lora import (AdapterSet, LoraAdapter, attach_adapters, load_adapters, lora_delta,
                   merge_weights, save_adapters, set_scale)
from .metrics import (MetricReport, PrecomputedEmbedder, ToyEmbedder, clip_i, clip_t,
                      compute_report, cosine, dino_i, temporal_consistency, toy_embedder)
from .model import (DenoiserModel, ModelConfig, predict_noise, spatial_attention_forward,
                    video_loss)
from .sampler import (SampleResult, SamplerConfig, cfg_combine, ddim_step,
                      lora_weight_at_step, sample_video)
from .schedule import NoiseSchedule, build_noise_schedule, forward_noise
from .text import ToyTextEncoder, encode_prompt, register_token
from .training import (AdamW, Batch, RegularizationSample, TrainConfig, TrainResult,
                       TrainState, make_regularization_set, make_still_video, prior_loss,
                       total_loss, train, train_step)

__version__ = "0.1.0"

__all__ = [
    "AdamW", "AdapterSet", "Batch", "ContainerFormatError", "DenoiserModel",
    "IncompatibleModelError", "LatentCodec", "LoraAdapter", "MetricReport",
    "ModelBundle", "ModelConfig", "NoiseSchedule", "NumericDivergenceError",
    "PrecomputedEmbedder", "RegularizationSample", "SampleResult", "SamplerConfig",
    "ToyEmbedder", "ToyTextEncoder", "TrainConfig", "TrainResult", "TrainState",
    "attach_adapters", "build_bundle", "build_noise_schedule", "cfg_combine",
    "clip_i", "clip_t", "compute_report", "cosine", "ddim_step", "default_codec",
    "dino_i", "encode_prompt", "forward_noise", "load_adapters", "load_checkpoint",
    "lora_delta", "lora_weight_at_step", "make_regularization_set", "make_still_video",
    "merge_weights", "predict_noise", "prior_loss", "read_ppm", "register_token",
    "render_class_image", "sample_video", "save_adapters", "save_checkpoint",
    "set_scale", "spatial_attention_forward", "temporal_consistency", "total_loss",
    "toy_embedder", "train", "train_step", "video_loss", "write_ppm",
]
