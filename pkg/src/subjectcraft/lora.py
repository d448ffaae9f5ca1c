"""Low-rank adapters for the denoiser's spatial attention projections.

An adapter augments one frozen projection ``W0`` (stored row-major as
``(in_dim, out_dim)``) with a scaled low-rank residual, so the effective
projection of an input ``x`` is

    x @ W0 + lora_scale * (x @ a.T) @ b.T

i.e. the classic ``W0 + scale * B A`` reparameterization with ``a`` of shape
``(rank, in_dim)`` and ``b`` of shape ``(out_dim, rank)``.  Fresh adapters
start with ``b = 0`` so attaching them is an exact no-op.

Adapters only ever target the query/key/value projections of spatial
self-/cross-attention sublayers; temporal layers and output projections are
never adapted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import container
from .errors import IncompatibleModelError

MODES = ("cross_and_self", "cross_only")

ADAPTER_INIT_RANGE = 0.01  # a ~ uniform(+-this); b starts at zero


@dataclass
class LoraAdapter:
    """Low-rank pair for a single projection, keyed by its parameter id."""

    target_id: str
    a: np.ndarray  # (rank, in_dim)
    b: np.ndarray  # (out_dim, rank)

    def __post_init__(self):
        if self.a.ndim != 2 or self.b.ndim != 2:
            raise ValueError(f"adapter {self.target_id}: a and b must be matrices")
        if self.a.shape[0] != self.b.shape[1]:
            raise ValueError(
                f"adapter {self.target_id}: rank mismatch between a {self.a.shape} and b {self.b.shape}"
            )
        rank = self.a.shape[0]
        in_dim, out_dim = self.a.shape[1], self.b.shape[0]
        if rank >= min(in_dim, out_dim):
            raise ValueError(
                f"adapter {self.target_id}: rank {rank} must be < min(in_dim={in_dim}, out_dim={out_dim})"
            )

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    def copy(self, dtype=None) -> "LoraAdapter":
        dt = dtype if dtype is not None else self.a.dtype
        return LoraAdapter(self.target_id, self.a.astype(dt), self.b.astype(dt))


@dataclass
class AdapterSet:
    """All adapters of one subject, sharing a single runtime strength."""

    adapters: dict[str, LoraAdapter]
    mode: str
    lora_scale: float = 1.0
    rank: int = field(default=0)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown adapter mode {self.mode!r}; expected one of {MODES}")
        _check_scale(self.lora_scale)
        if self.rank == 0 and self.adapters:
            self.rank = next(iter(self.adapters.values())).rank

    def __len__(self) -> int:
        return len(self.adapters)

    def get(self, target_id: str) -> LoraAdapter | None:
        return self.adapters.get(target_id)

    def target_ids(self) -> list[str]:
        return sorted(self.adapters)

    def set_scale(self, lora_scale: float) -> "AdapterSet":
        _check_scale(lora_scale)
        self.lora_scale = float(lora_scale)
        return self

    def copy(self, dtype=None) -> "AdapterSet":
        return AdapterSet(
            adapters={k: v.copy(dtype) for k, v in self.adapters.items()},
            mode=self.mode,
            lora_scale=self.lora_scale,
            rank=self.rank,
        )


def _check_scale(value: float) -> None:
    if not np.isfinite(value) or not 0.0 <= float(value) <= 1.0:
        raise ValueError(f"lora_scale must lie in [0, 1], got {value!r}")


def set_scale(adapter_set: AdapterSet, lora_scale: float) -> AdapterSet:
    """Set the runtime strength applied by every adapter in the set."""
    return adapter_set.set_scale(lora_scale)


def lora_delta(x: np.ndarray, adapter: LoraAdapter, lora_scale: float) -> np.ndarray:
    """The low-rank residual the adapter adds to its projection's output."""
    x = np.asarray(x)
    if x.shape[-1] != adapter.a.shape[1]:
        raise ValueError(
            f"adapter {adapter.target_id}: input dim {x.shape[-1]} != adapter in_dim {adapter.a.shape[1]}"
        )
    return lora_scale * ((x @ adapter.a.T) @ adapter.b.T)


def attach_adapters(model, rank: int = 4, mode: str = "cross_and_self", seed=0,
                    lora_scale: float = 1.0) -> AdapterSet:
    """Create one fresh adapter per projection mandated by ``mode``.

    ``a`` matrices are filled from a seeded uniform(+-0.01) draw, ``b``
    matrices are zero, so the attached model is numerically identical to the
    base model until training moves ``b``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown adapter mode {mode!r}; expected one of {MODES}")
    if not isinstance(rank, (int, np.integer)) or rank < 1:
        raise ValueError(f"rank must be a positive integer, got {rank!r}")
    rng = np.random.default_rng(seed)
    adapters: dict[str, LoraAdapter] = {}
    for target_id in model.adapter_targets(mode):
        w = model.params[target_id]
        in_dim, out_dim = w.shape
        if rank >= min(in_dim, out_dim):
            raise ValueError(
                f"rank {rank} too large for target {target_id}: needs rank < {min(in_dim, out_dim)}"
            )
        a = rng.uniform(-ADAPTER_INIT_RANGE, ADAPTER_INIT_RANGE, size=(rank, in_dim))
        adapters[target_id] = LoraAdapter(
            target_id=target_id,
            a=a.astype(np.float32),
            b=np.zeros((out_dim, rank), dtype=np.float32),
        )
    return AdapterSet(adapters=adapters, mode=mode, lora_scale=lora_scale, rank=int(rank))


def validate_against(adapter_set: AdapterSet, model) -> None:
    """Check every adapter resolves onto the model with consistent shapes
    and that the set covers exactly the projections its mode mandates."""
    expected = set(model.adapter_targets(adapter_set.mode))
    actual = set(adapter_set.adapters)
    missing = sorted(expected - actual)
    extra = sorted(actual - expected)
    if missing or extra:
        raise IncompatibleModelError(
            f"adapter set does not match model in mode {adapter_set.mode!r}: "
            f"missing targets {missing}, unexpected targets {extra}"
        )
    for target_id, ad in adapter_set.adapters.items():
        w = model.params[target_id]
        if ad.a.shape[1] != w.shape[0] or ad.b.shape[0] != w.shape[1]:
            raise IncompatibleModelError(
                f"adapter {target_id} shapes a{ad.a.shape}/b{ad.b.shape} "
                f"do not match projection {w.shape}"
            )


def merge_weights(model, adapter_set: AdapterSet):
    """Return a copy of the model with every adapted projection materialized
    as ``W0 + lora_scale * (a.T @ b.T)`` and no adapters attached."""
    validate_against(adapter_set, model)
    merged = model.copy()
    for target_id, ad in adapter_set.adapters.items():
        w = merged.params[target_id]
        delta = adapter_set.lora_scale * (ad.a.T.astype(np.float64) @ ad.b.T.astype(np.float64))
        merged.params[target_id] = (w.astype(np.float64) + delta).astype(w.dtype)
    return merged


def save_adapters(adapter_set: AdapterSet, path) -> None:
    """Write the set to the JSON-header + float32-payload container format.

    Targets are serialized sorted by id so two saves of the same set are
    byte-identical.
    """
    targets = []
    arrays = []
    for target_id in sorted(adapter_set.adapters):
        ad = adapter_set.adapters[target_id]
        targets.append({"id": target_id, "a": list(ad.a.shape), "b": list(ad.b.shape)})
        arrays.append(ad.a)
        arrays.append(ad.b)
    header = {
        "format": container.FORMAT_ADAPTERS,
        "format_version": container.FORMAT_VERSION,
        "mode": adapter_set.mode,
        "rank": adapter_set.rank,
        "lora_scale": adapter_set.lora_scale,
        "targets": targets,
    }
    container.write_container(path, header, arrays)


def load_adapters(path, model) -> AdapterSet:
    """Read an adapter file and resolve it against ``model``."""
    header, arrays = container.read_container(path, expected_format=container.FORMAT_ADAPTERS)
    shapes = []
    for entry in header["targets"]:
        shapes.append(tuple(entry["a"]))
        shapes.append(tuple(entry["b"]))
    mats = container.split_payload(arrays, shapes, path)
    adapters: dict[str, LoraAdapter] = {}
    for i, entry in enumerate(header["targets"]):
        target_id = entry["id"]
        if target_id not in model.params:
            raise IncompatibleModelError(
                f"adapter target {target_id!r} does not resolve on this model"
            )
        adapters[target_id] = LoraAdapter(target_id, mats[2 * i], mats[2 * i + 1])
    adapter_set = AdapterSet(
        adapters=adapters,
        mode=header["mode"],
        lora_scale=float(header["lora_scale"]),
        rank=int(header["rank"]),
    )
    validate_against(adapter_set, model)
    return adapter_set
