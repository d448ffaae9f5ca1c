"""Subject learning: still-video construction, prior-preservation batches,
the combined loss, and the optimization loop.

Only the low-rank adapter matrices (per the active mode) and the registered
subject token rows are trainable; every other parameter must come out of a
training run bitwise unchanged, which the tests assert by checksum. One step
consumes one subject sample plus one class-regularization sample and performs
a single AdamW update on

    total = subject_term + alpha * prior_term

where both terms are the mean-squared noise-reconstruction loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bundle import ModelBundle, save_checkpoint
from .errors import NumericDivergenceError
from .images import render_class_image
from .lora import AdapterSet, attach_adapters, save_adapters
from .model import video_loss
from .schedule import forward_noise
from .text import ToyTextEncoder

CHECKPOINT_NAME = "checkpoint.bin"
ADAPTERS_NAME = "adapters.bin"
LOSS_CSV_NAME = "loss.csv"

TRAIN_LORA_SCALE = 1.0  # adapters run at full strength while learning


@dataclass
class TrainConfig:
    learning_rate: float = 3e-5
    weight_decay: float = 1e-2
    alpha: float = 1.0
    iterations: int = 300
    frames: int = 8
    reg_set_size: int = 16
    rank: int = 4
    mode: str = "cross_and_self"
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate!r}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay!r}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha!r}")
        if not isinstance(self.iterations, int) or self.iterations < 1:
            raise ValueError(f"iterations must be a positive integer, got {self.iterations!r}")
        if not isinstance(self.frames, int) or self.frames < 1:
            raise ValueError(f"frames must be a positive integer, got {self.frames!r}")
        if not isinstance(self.reg_set_size, int) or self.reg_set_size < 0:
            raise ValueError(f"reg_set_size must be >= 0, got {self.reg_set_size!r}")
        if not isinstance(self.rank, int) or self.rank < 1:
            raise ValueError(f"rank must be a positive integer, got {self.rank!r}")
        if self.mode not in ("cross_and_self", "cross_only"):
            raise ValueError(f"unknown adapter mode {self.mode!r}")


@dataclass
class RegularizationSample:
    """A class-generic still video and its caption (never the subject token)."""

    latent: np.ndarray
    caption: str


@dataclass
class Batch:
    latent: np.ndarray
    prompt: str
    t: int
    eps: np.ndarray


@dataclass
class StepStats:
    step: int
    l_video: float
    l_pr: float
    total: float


@dataclass
class TrainResult:
    adapters: AdapterSet
    learned_rows: dict[int, np.ndarray]
    history: list[StepStats]


def make_still_video(image: np.ndarray, n_frames: int, codec) -> np.ndarray:
    """Encode one image to latent space and repeat it across frames."""
    if not isinstance(n_frames, (int, np.integer)) or n_frames < 1:
        raise ValueError(f"n_frames must be a positive integer, got {n_frames!r}")
    image = np.asarray(image, dtype=np.float64)
    if not np.isfinite(image).all():
        raise ValueError("image contains non-finite entries")
    latent = codec.encode(image)
    return np.repeat(latent[None, :, :, :], int(n_frames), axis=0)


def make_regularization_set(codec, n: int, frames: int, caption: str, seed=0) -> list[RegularizationSample]:
    """Procedurally rendered class images turned into still regularization videos."""
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        image = render_class_image(rng)
        samples.append(RegularizationSample(latent=make_still_video(image, frames, codec),
                                            caption=caption))
    return samples


def prior_loss(model, encoder: ToyTextEncoder, adapters, sample: RegularizationSample,
               t: int, eps: np.ndarray, sched, lora_scale: float | None = None) -> float:
    """Noise-reconstruction loss on one class-regularization sample."""
    cond = encoder.encode(sample.caption)
    z_t = forward_noise(sample.latent, t, eps, sched)
    pred = model.forward(z_t, cond, t, adapters=adapters, lora_scale=lora_scale)
    return video_loss(eps, pred)


def total_loss(l_video: float, l_pr: float, alpha: float) -> float:
    if l_video < 0 or l_pr < 0:
        raise ValueError(f"loss terms must be non-negative, got {l_video!r}, {l_pr!r}")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha!r}")
    return float(l_video) + float(alpha) * float(l_pr)


class AdamW:
    """Decoupled-weight-decay Adam over named float32 tensors.

    Updates are computed in float64 and written back in the parameter's own
    dtype, in sorted key order, so runs are bit-reproducible. A tensor that
    has never received a nonzero gradient is left untouched (no decay), so a
    stub step with zero gradients changes nothing.
    """

    def __init__(self, learning_rate: float, weight_decay: float = 1e-2,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = float(learning_rate)
        self.wd = float(weight_decay)
        self.b1, self.b2 = betas
        self.eps = float(eps)
        self.t = 0
        self.state: dict[str, dict[str, np.ndarray]] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for key in sorted(params):
            p = params[key]
            g = np.asarray(grads[key], dtype=np.float64)
            st = self.state.get(key)
            if st is None:
                if not np.any(g):
                    continue
                st = self.state[key] = {
                    "m": np.zeros(p.shape, dtype=np.float64),
                    "v": np.zeros(p.shape, dtype=np.float64),
                }
            st["m"] = self.b1 * st["m"] + (1 - self.b1) * g
            st["v"] = self.b2 * st["v"] + (1 - self.b2) * (g * g)
            mhat = st["m"] / (1 - self.b1**self.t)
            vhat = st["v"] / (1 - self.b2**self.t)
            update = self.lr * (mhat / (np.sqrt(vhat) + self.eps) + self.wd * p.astype(np.float64))
            with np.errstate(over="ignore"):
                p[...] = (p.astype(np.float64) - update).astype(p.dtype)


@dataclass
class TrainState:
    bundle: ModelBundle
    adapters: AdapterSet
    optimizer: AdamW
    step: int = 0
    trainable: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.trainable:
            self.trainable = trainable_tensors(self.bundle.encoder, self.adapters)


def trainable_tensors(encoder: ToyTextEncoder, adapters: AdapterSet) -> dict[str, np.ndarray]:
    """The exact update set: adapter matrices plus registered token rows.

    Rows are views into the embedding table, so in-place optimizer writes
    land in the encoder. Must be rebuilt if tokens are registered later.
    """
    tensors: dict[str, np.ndarray] = {}
    for target_id, ad in adapters.adapters.items():
        tensors[f"adapter:{target_id}:a"] = ad.a
        tensors[f"adapter:{target_id}:b"] = ad.b
    for row_id in sorted(encoder.learned_token_ids):
        tensors[f"token:{row_id}"] = encoder.embedding_table[row_id]
    return tensors


def _loss_and_grads(bundle: ModelBundle, adapters, batch: Batch, term: str, step: int):
    model, encoder, sched = bundle.model, bundle.encoder, bundle.schedule
    cond = encoder.encode(batch.prompt)
    ids = encoder.token_ids(batch.prompt)
    z_t = forward_noise(batch.latent, batch.t, batch.eps, sched)
    eps_pred, cache = model.forward(z_t, cond, batch.t, adapters=adapters,
                                    lora_scale=TRAIN_LORA_SCALE, want_cache=True)
    loss = video_loss(batch.eps, eps_pred)
    if not np.isfinite(loss):
        raise NumericDivergenceError(f"{term} is non-finite at step {step}", step=step)
    d_eps = (2.0 / batch.eps.size) * (eps_pred - batch.eps)
    grads = model.backward(cache, d_eps)
    return loss, grads, ids


def train_step(state: TrainState, subject_batch: Batch, prior_batch: Batch | None,
               config: TrainConfig) -> StepStats:
    """One optimizer update; returns the loss components for logging."""
    state.step += 1
    bundle, adapters = state.bundle, state.adapters
    l_video, g_sub, ids_sub = _loss_and_grads(bundle, adapters, subject_batch, "l_video", state.step)
    l_pr = 0.0
    g_pr, ids_pr = None, None
    if prior_batch is not None:
        l_pr, g_pr, ids_pr = _loss_and_grads(bundle, adapters, prior_batch, "l_pr", state.step)
    total = total_loss(l_video, l_pr, config.alpha)

    grad_map: dict[str, np.ndarray] = {}
    for target_id in adapters.adapters:
        pair = dict(g_sub.adapters.get(target_id, {}))
        if g_pr is not None:
            other = g_pr.adapters.get(target_id, {})
            for key in other:
                pair[key] = pair.get(key, 0.0) + config.alpha * other[key]
        ad = adapters.adapters[target_id]
        grad_map[f"adapter:{target_id}:a"] = np.asarray(pair.get("a", np.zeros_like(ad.a, dtype=np.float64)))
        grad_map[f"adapter:{target_id}:b"] = np.asarray(pair.get("b", np.zeros_like(ad.b, dtype=np.float64)))

    encoder = bundle.encoder
    for row_id in sorted(encoder.learned_token_ids):
        row_grad = np.zeros(encoder.embed_dim, dtype=np.float64)
        for pos, tok in enumerate(ids_sub):
            if tok == row_id:
                row_grad += g_sub.cond[pos]
        if g_pr is not None:
            for pos, tok in enumerate(ids_pr):
                if tok == row_id:
                    row_grad += config.alpha * g_pr.cond[pos]
        grad_map[f"token:{row_id}"] = row_grad

    state.optimizer.step(state.trainable, grad_map)
    for key, tensor in state.trainable.items():
        if not np.isfinite(tensor).all():
            raise NumericDivergenceError(
                f"trainable tensor {key} diverged at step {state.step}", step=state.step)
    return StepStats(step=state.step, l_video=l_video, l_pr=l_pr, total=total)


def train(bundle: ModelBundle, images, prompts, reg_set, config: TrainConfig,
          out_dir=None, log=None) -> TrainResult:
    """Run the full subject-learning loop.

    ``images`` are pixel arrays (each becomes a still video), ``prompts`` the
    subject prompts containing the registered token, ``reg_set`` a list of
    `RegularizationSample`. With ``out_dir`` set, writes the checkpoint,
    adapter file, and loss CSV there.
    """
    encoder = bundle.encoder
    if not images:
        raise ValueError("need at least one subject image")
    if not prompts:
        raise ValueError("need at least one subject prompt")
    if config.alpha > 0 and not reg_set:
        raise ValueError("alpha > 0 requires a non-empty reg_set")
    if not encoder.learned_token_ids:
        raise ValueError("no subject token registered on the encoder")
    literals = set(encoder.learned_literals())
    for sample in reg_set or []:
        words = set(sample.caption.lower().split())
        clash = literals & words
        if clash:
            raise ValueError(f"regularization caption contains subject token(s) {sorted(clash)}")

    root = np.random.SeedSequence(config.seed)
    s_attach, s_loop = root.spawn(2)
    adapters = attach_adapters(bundle.model, rank=config.rank, mode=config.mode,
                               seed=s_attach, lora_scale=TRAIN_LORA_SCALE)
    latents = [make_still_video(img, config.frames, bundle.codec) for img in images]

    state = TrainState(
        bundle=bundle,
        adapters=adapters,
        optimizer=AdamW(config.learning_rate, config.weight_decay),
    )
    rng = np.random.default_rng(s_loop)
    steps_max = bundle.schedule.steps
    history: list[StepStats] = []
    for _ in range(config.iterations):
        i_img = int(rng.integers(len(latents))) if len(latents) > 1 else 0
        i_prompt = int(rng.integers(len(prompts))) if len(prompts) > 1 else 0
        t = int(rng.integers(1, steps_max + 1))
        eps = rng.standard_normal(latents[i_img].shape)
        subject = Batch(latent=latents[i_img], prompt=prompts[i_prompt], t=t, eps=eps)
        prior = None
        if config.alpha > 0:
            i_reg = int(rng.integers(len(reg_set))) if len(reg_set) > 1 else 0
            t_pr = int(rng.integers(1, steps_max + 1))
            eps_pr = rng.standard_normal(reg_set[i_reg].latent.shape)
            prior = Batch(latent=reg_set[i_reg].latent, prompt=reg_set[i_reg].caption,
                          t=t_pr, eps=eps_pr)
        stats = train_step(state, subject, prior, config)
        history.append(stats)
        if log is not None:
            log(stats)

    learned_rows = {
        row_id: encoder.embedding_table[row_id].copy()
        for row_id in sorted(encoder.learned_token_ids)
    }
    result = TrainResult(adapters=adapters, learned_rows=learned_rows, history=history)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / CHECKPOINT_NAME, bundle)
        save_adapters(adapters, out / ADAPTERS_NAME)
        write_loss_csv(out / LOSS_CSV_NAME, history)
    return result


def write_loss_csv(path, history: list[StepStats]) -> None:
    lines = ["step,l_video,l_pr,total"]
    for s in history:
        lines.append(f"{s.step},{s.l_video!r},{s.l_pr!r},{s.total!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
