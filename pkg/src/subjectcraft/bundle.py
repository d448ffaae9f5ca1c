"""The checkpointable unit: denoiser weights, text encoder state, noise
schedule configuration, and the pixel/latent codec, saved to and restored
from a single container file bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container
from .errors import ContainerFormatError
from .images import LatentCodec, default_codec
from .model import DenoiserModel, ModelConfig, ParamStore
from .schedule import NoiseSchedule, build_noise_schedule
from .text import ToyTextEncoder

EMBEDDING_PARAM = "text.embedding"


@dataclass
class ModelBundle:
    model: DenoiserModel
    encoder: ToyTextEncoder
    schedule: NoiseSchedule
    codec: LatentCodec

    @property
    def config(self) -> ModelConfig:
        return self.model.config


def build_bundle(config: ModelConfig | None = None, seed=0, vocab_words=(),
                 max_length: int = 16) -> ModelBundle:
    """Fresh bundle with seeded weights and a vocabulary covering the base
    word list plus ``vocab_words``."""
    config = config or ModelConfig()
    root = np.random.SeedSequence(seed)
    s_model, s_text = root.spawn(2)
    model = DenoiserModel.build(config, seed=s_model)
    encoder = ToyTextEncoder(
        embed_dim=config.cond_dim, max_length=max_length,
        extra_words=vocab_words, seed=s_text,
    )
    schedule = build_noise_schedule(config.schedule_steps)
    codec = default_codec(config.latent_channels)
    return ModelBundle(model=model, encoder=encoder, schedule=schedule, codec=codec)


def save_checkpoint(path, bundle: ModelBundle) -> None:
    enc = bundle.encoder
    params = [[name, list(value.shape)] for name, value in bundle.model.params.items()]
    params.append([EMBEDDING_PARAM, list(enc.embedding_table.shape)])
    header = {
        "format": container.FORMAT_CHECKPOINT,
        "format_version": container.FORMAT_VERSION,
        "model": bundle.config.as_dict(),
        "schedule": {"kind": bundle.schedule.kind, "steps": bundle.schedule.steps},
        "codec": {"scale": list(bundle.codec.scale), "shift": list(bundle.codec.shift)},
        "text": {
            "embed_dim": enc.embed_dim,
            "max_length": enc.max_length,
            "vocabulary": enc.vocabulary,
            "learned_token_ids": sorted(enc.learned_token_ids),
        },
        "params": params,
    }
    arrays = [value for _, value in bundle.model.params.items()]
    arrays.append(enc.embedding_table)
    container.write_container(path, header, arrays)


def load_checkpoint(path) -> ModelBundle:
    header, payload = container.read_container(path, expected_format=container.FORMAT_CHECKPOINT)
    try:
        config = ModelConfig(**header["model"])
        declared = header["params"]
        shapes = [tuple(shape) for _, shape in declared]
        arrays = container.split_payload(payload, shapes, path)
        names = [name for name, _ in declared]
        if names[-1] != EMBEDDING_PARAM:
            raise ContainerFormatError(f"{path}: checkpoint missing {EMBEDDING_PARAM} section")
        store = ParamStore()
        for name, value in zip(names[:-1], arrays[:-1]):
            store.add(name, value)
        model = DenoiserModel(config, store)
        text = header["text"]
        encoder = ToyTextEncoder.from_state(
            embed_dim=text["embed_dim"],
            max_length=text["max_length"],
            vocabulary={w: int(i) for w, i in text["vocabulary"].items()},
            embedding_table=arrays[-1],
            learned_token_ids=text["learned_token_ids"],
        )
        if encoder.embedding_table.shape != (len(encoder.vocabulary), encoder.embed_dim):
            raise ContainerFormatError(f"{path}: embedding table does not match vocabulary")
        sched_cfg = header["schedule"]
        schedule = build_noise_schedule(int(sched_cfg["steps"]), kind=sched_cfg["kind"])
        codec_cfg = header["codec"]
        codec = LatentCodec(scale=tuple(codec_cfg["scale"]), shift=tuple(codec_cfg["shift"]))
    except ContainerFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ContainerFormatError(f"{path}: corrupt checkpoint ({exc})") from None
    if schedule.steps != config.schedule_steps:
        raise ContainerFormatError(f"{path}: schedule steps disagree with model config")
    return ModelBundle(model=model, encoder=encoder, schedule=schedule, codec=codec)
