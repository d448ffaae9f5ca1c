import hashlib

import numpy as np
import pytest

from subjectcraft import (ModelConfig, TrainConfig, build_bundle, make_regularization_set,
                          render_class_image, train)

# Small enough for exhaustive finite-difference sweeps.
TINY_CONFIG = ModelConfig(latent_channels=1, width=8, cond_dim=8, spatial_blocks=2,
                          schedule_steps=10)

# Desk-scale training setup shared by the trainability/overfit/sampling tests.
DESK_LR = 1e-2  # calibrated: halves the smoothed subject loss well within 300 steps
DESK_PROMPT = "a photo of v* ball"
DESK_REG_PROMPT = "a photo of a ball"


def checksum(arr) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def embedding_row_checksums(encoder) -> dict[int, str]:
    return {i: checksum(encoder.embedding_table[i])
            for i in range(encoder.embedding_table.shape[0])}


def make_desk_bundle(seed=0):
    bundle = build_bundle(seed=seed, vocab_words=["photo"])
    bundle.encoder.register_token("v*", "ball")
    return bundle


def run_desk_training(seed=0, iterations=300, mode="cross_and_self", alpha=1.0):
    """Train on one rendered subject image; returns (bundle, result, snapshots
    of parameter/embedding checksums taken before training)."""
    bundle = make_desk_bundle(seed)
    image = render_class_image(np.random.default_rng([seed, 1000001]))
    cfg = TrainConfig(learning_rate=DESK_LR, iterations=iterations, seed=seed,
                      mode=mode, alpha=alpha)
    reg = make_regularization_set(bundle.codec, cfg.reg_set_size, cfg.frames,
                                  DESK_REG_PROMPT, seed=[seed, 1000002])
    before = {
        "params": bundle.model.params.checksums(),
        "embedding_rows": embedding_row_checksums(bundle.encoder),
    }
    result = train(bundle, [image], [DESK_PROMPT], reg, cfg)
    return bundle, result, before


@pytest.fixture(scope="session")
def trained_run():
    """One full 300-step desk training run, shared by the slow tests."""
    return run_desk_training(seed=0, iterations=300)
