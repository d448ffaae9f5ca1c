"""Pixel-space utilities.

The heavy learned autoencoder of full-scale systems is replaced here by a
fixed, exactly invertible per-channel affine map between pixel arrays and
latents; its constants travel in the checkpoint header. "Pixel" arrays are
``(H, W, C)`` floats in [0, 1] with C matching the latent channel count
(channels 0..2 are RGB, channel 3 carries luminance), so PPM export simply
takes the first three channels.

Also here: a tiny procedural renderer that draws one colored shape per image,
used to synthesize desk-scale subject and class-regularization data.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

SHAPES = ("disk", "square", "bar")


@dataclass(frozen=True)
class LatentCodec:
    """Invertible per-channel affine map: latent = (pixel - shift) / scale."""

    scale: tuple
    shift: tuple

    def __post_init__(self):
        if len(self.scale) != len(self.shift):
            raise ValueError("scale and shift must have the same length")
        if any(s == 0.0 for s in self.scale):
            raise ValueError("codec scale entries must be nonzero")

    @property
    def channels(self) -> int:
        return len(self.scale)

    def _check(self, arr: np.ndarray) -> np.ndarray:
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != self.channels:
            raise ValueError(
                f"expected an (H, W, {self.channels}) array, got shape {arr.shape}"
            )
        return arr

    def encode(self, pixels: np.ndarray) -> np.ndarray:
        pixels = self._check(pixels)
        return (pixels - np.asarray(self.shift)) / np.asarray(self.scale)

    def decode(self, latent: np.ndarray) -> np.ndarray:
        latent = self._check(latent)
        return latent * np.asarray(self.scale) + np.asarray(self.shift)


def default_codec(channels: int = 4) -> LatentCodec:
    # Maps [0, 1] pixels to roughly unit-variance latents in [-2, 2].
    return LatentCodec(scale=(0.25,) * channels, shift=(0.5,) * channels)


# -- PPM frame io -------------------------------------------------------------

def write_ppm(path, image: np.ndarray) -> None:
    """Write the first three channels of a [0, 1] float image as binary PPM."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] < 3:
        raise ValueError(f"expected an (H, W, >=3) image, got shape {image.shape}")
    rgb = np.clip(image[:, :, :3], 0.0, 1.0)
    data = np.round(rgb * 255.0).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary 8-bit PPM into an (H, W, 3) float64 array in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM supported, maxval={maxval}")
    pos += 1  # single whitespace after maxval
    raster = data[pos:pos + w * h * 3]
    if len(raster) != w * h * 3:
        raise ValueError(f"{path}: truncated PPM raster")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)
    return arr.astype(np.float64) / 255.0


def with_luma_channel(rgb: np.ndarray) -> np.ndarray:
    """Append a luminance channel so 3-channel frames fit the 4-channel codec."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {rgb.shape}")
    luma = rgb.mean(axis=2, keepdims=True)
    return np.concatenate([rgb, luma], axis=2)


def load_image(path, channels: int = 4) -> np.ndarray:
    """Read a PPM file and lift it to the codec's channel count."""
    rgb = read_ppm(path)
    if channels == 3:
        return rgb
    if channels == 4:
        return with_luma_channel(rgb)
    raise ValueError(f"unsupported channel count {channels}")


# -- procedural image source ---------------------------------------------------

def render_class_image(seed_or_rng, size: int = 16, shape: str | None = None) -> np.ndarray:
    """Draw one colored shape on a plain background; (size, size, 4) in [0, 1].

    Accepts either a seed or an existing Generator, so callers can draw a
    reproducible sequence of class images from one stream.
    """
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)
    if shape is None:
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
    if shape not in SHAPES:
        raise ValueError(f"unknown shape {shape!r}; expected one of {SHAPES}")
    bg = rng.uniform(0.05, 0.35, size=3)
    fg = rng.uniform(0.45, 0.95, size=3)
    cy, cx = rng.uniform(0.3, 0.7, size=2) * size
    radius = rng.uniform(0.18, 0.32) * size

    yy, xx = np.mgrid[0:size, 0:size]
    if shape == "disk":
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    elif shape == "square":
        mask = (np.abs(yy - cy) <= radius) & (np.abs(xx - cx) <= radius)
    else:  # bar
        mask = np.abs(yy - cy) <= radius * 0.45
    rgb = np.where(mask[:, :, None], fg[None, None, :], bg[None, None, :])
    return with_luma_channel(rgb)


def frames_in_dir(path) -> list[Path]:
    """Sorted PPM files inside a directory."""
    d = Path(path)
    if not d.is_dir():
        raise ValueError(f"{d} is not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() == ".ppm")
