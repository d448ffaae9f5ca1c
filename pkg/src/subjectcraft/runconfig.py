"""Flat ``key = value`` run configuration files.

UTF-8 text, one assignment per line, ``#`` comments and blank lines ignored,
booleans spelled true/false, paths resolved relative to the config file.
Unknown or duplicate keys are hard errors.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .training import TrainConfig

TRAIN_KEYS = frozenset({
    "seed", "learning_rate", "weight_decay", "alpha", "iterations", "frames",
    "reg_set_size", "rank", "mode", "prompt", "reg_prompt", "subject_token",
    "token_init", "out_dir", "subject_image", "schedule_steps", "quiet",
})


def parse_flat_config(path) -> dict[str, str]:
    path = Path(path)
    entries: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ValueError(f"{path}:{lineno}: empty key")
        if key in entries:
            raise ValueError(f"{path}:{lineno}: duplicate config key {key!r}")
        entries[key] = value
    return entries


def _as_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"config key {key}: expected an integer, got {raw!r}") from None


def _as_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"config key {key}: expected a number, got {raw!r}") from None


def _as_bool(key: str, raw: str) -> bool:
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise ValueError(f"config key {key}: expected true or false, got {raw!r}")


@dataclass
class TrainRunSettings:
    train: TrainConfig
    prompt: str
    reg_prompt: str
    subject_token: str
    token_init: str
    out_dir: Path
    subject_images: list[Path]
    schedule_steps: int
    quiet: bool


def load_train_settings(path) -> TrainRunSettings:
    path = Path(path)
    raw = parse_flat_config(path)
    unknown = sorted(set(raw) - TRAIN_KEYS)
    if unknown:
        raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
    for key in ("prompt", "out_dir"):
        if key not in raw:
            raise ValueError(f"missing required config key {key!r}")

    base = path.parent
    train = TrainConfig(
        learning_rate=_as_float("learning_rate", raw.get("learning_rate", "3e-5")),
        weight_decay=_as_float("weight_decay", raw.get("weight_decay", "1e-2")),
        alpha=_as_float("alpha", raw.get("alpha", "1.0")),
        iterations=_as_int("iterations", raw.get("iterations", "300")),
        frames=_as_int("frames", raw.get("frames", "8")),
        reg_set_size=_as_int("reg_set_size", raw.get("reg_set_size", "16")),
        rank=_as_int("rank", raw.get("rank", "4")),
        mode=raw.get("mode", "cross_and_self"),
        seed=_as_int("seed", raw.get("seed", "0")),
    )
    subject_token = raw.get("subject_token", "v*").lower()
    token_init = raw.get("token_init", "toy").lower()
    prompt = raw["prompt"]
    if subject_token not in prompt.lower().split():
        raise ValueError(f"prompt must mention the subject token {subject_token!r}")
    images = []
    if raw.get("subject_image"):
        for part in raw["subject_image"].split(","):
            images.append((base / part.strip()).resolve())
    return TrainRunSettings(
        train=train,
        prompt=prompt,
        reg_prompt=raw.get("reg_prompt", "a photo of a toy"),
        subject_token=subject_token,
        token_init=token_init,
        out_dir=(base / raw["out_dir"]).resolve(),
        subject_images=images,
        schedule_steps=_as_int("schedule_steps", raw.get("schedule_steps", "50")),
        quiet=_as_bool("quiet", raw.get("quiet", "false")),
    )
