"""
Image distortions
=================
Grayscale corruption pipeline: additive Gaussian noise, separable Gaussian
blur and a JPEG quantisation round trip (8x8 DCT-II with the IJG luminance
table; no entropy coding). Every output is clamped to [0, 1] and keeps the
input size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
import numpy.typing as npt
from scipy.fft import dctn, idctn
from scipy.ndimage import correlate1d

from core.errors import InputError

DistortionKind = Literal["gaussian_noise", "gaussian_blur", "jpeg"]

BLOCK = 8

# Standard JPEG luminance quantisation table (quality 50).
LUMINANCE_TABLE = np.array(
    [[16, 11, 10, 16, 24, 40, 51, 61],
     [12, 12, 14, 19, 26, 58, 60, 55],
     [14, 13, 16, 24, 40, 57, 69, 56],
     [14, 17, 22, 29, 51, 87, 80, 62],
     [18, 22, 37, 56, 68, 109, 103, 77],
     [24, 35, 55, 64, 81, 104, 113, 92],
     [49, 64, 78, 87, 103, 121, 120, 101],
     [72, 92, 95, 98, 112, 100, 103, 99]],
    dtype=np.float64,
)

# CLI short names → kinds
KIND_ALIASES: dict[str, DistortionKind] = {
    "noise": "gaussian_noise",
    "gaussian_noise": "gaussian_noise",
    "blur": "gaussian_blur",
    "gaussian_blur": "gaussian_blur",
    "jpeg": "jpeg",
}

# Level of each kind that leaves the image untouched (or as close as it gets).
CLEAN_LEVEL: dict[DistortionKind, float] = {
    "gaussian_noise": 0.0,
    "gaussian_blur": 0.0,
    "jpeg": 100.0,
}


# ─────────────────────────────────────────────────────────────────────────────
# Types
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ImageGrid:
    width: int
    height: int
    pixels: npt.NDArray[np.float64]  # (height, width), row-major

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise InputError(f"image size must be positive, got {self.width}x{self.height}")
        pixels = np.array(self.pixels, dtype=np.float64)
        if pixels.size != self.width * self.height:
            raise InputError(f"{pixels.size} pixels do not fill {self.width}x{self.height}")
        pixels = pixels.reshape(self.height, self.width)
        if not np.all(np.isfinite(pixels)) or pixels.min() < 0.0 or pixels.max() > 1.0:
            raise InputError("image pixels must lie in [0, 1]")
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @classmethod
    def from_vector(cls, vector: npt.ArrayLike, width: int, height: int) -> ImageGrid:
        return cls(width=width, height=height, pixels=np.asarray(vector, dtype=np.float64))

    def to_vector(self) -> npt.NDArray[np.float64]:
        return self.pixels.reshape(-1).copy()

    def _replace(self, pixels: npt.NDArray[np.float64]) -> ImageGrid:
        return ImageGrid(width=self.width, height=self.height, pixels=np.clip(pixels, 0.0, 1.0))


@dataclass(frozen=True)
class DistortionSpec:
    kind: DistortionKind
    level: float
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in CLEAN_LEVEL:
            raise InputError(f"unknown distortion kind: {self.kind}")
        if self.kind == "jpeg":
            if self.level != int(self.level) or not 1 <= self.level <= 100:
                raise InputError(f"jpeg quality must be an integer in [1, 100], got {self.level}")
        elif not self.level >= 0.0:
            raise InputError(f"{self.kind} level must be >= 0, got {self.level}")


def parse_kind(text: str) -> DistortionKind:
    try:
        return KIND_ALIASES[text.strip().lower()]
    except KeyError as exc:
        raise InputError(f"unknown distortion kind '{text}' (use noise, blur or jpeg)") from exc


def parse_distortion(text: str, seed: int = 0) -> DistortionSpec:
    """'noise:0.3' | 'blur:1.2' | 'jpeg:20'"""
    kind_text, sep, level_text = text.partition(":")
    if not sep:
        raise InputError(f"distortion must look like kind:level, got '{text}'")
    try:
        level = float(level_text)
    except ValueError as exc:
        raise InputError(f"distortion level is not a number: '{level_text}'") from exc
    return DistortionSpec(kind=parse_kind(kind_text), level=level, seed=seed)


# ─────────────────────────────────────────────────────────────────────────────
# Noise & blur
# ─────────────────────────────────────────────────────────────────────────────

def gaussian_noise(img: ImageGrid, sigma: float, seed: int) -> ImageGrid:
    if not sigma >= 0.0:
        raise InputError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return img
    rng = np.random.default_rng(seed)
    return img._replace(img.pixels + rng.normal(0.0, sigma, size=img.pixels.shape))


def gaussian_kernel(sigma: float) -> npt.NDArray[np.float64]:
    """Normalised 1-D taps over [-ceil(3σ), ceil(3σ)]."""
    if not sigma > 0.0:
        raise InputError(f"kernel sigma must be > 0, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def gaussian_blur(img: ImageGrid, sigma: float) -> ImageGrid:
    if not sigma >= 0.0:
        raise InputError(f"blur sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return img
    kernel = gaussian_kernel(sigma)
    # scipy's "reflect" mirrors about the edge, repeating the edge pixel.
    rows = correlate1d(img.pixels, kernel, axis=1, mode="reflect")
    return img._replace(correlate1d(rows, kernel, axis=0, mode="reflect"))


def high_frequency_energy(img: ImageGrid) -> float:
    """Sum of squared differences between horizontally and vertically adjacent pixels."""
    px = img.pixels
    return float(np.sum(np.diff(px, axis=1) ** 2) + np.sum(np.diff(px, axis=0) ** 2))


# ─────────────────────────────────────────────────────────────────────────────
# JPEG quantisation round trip
# ─────────────────────────────────────────────────────────────────────────────

def quantization_table(quality: int) -> npt.NDArray[np.float64]:
    if quality != int(quality) or not 1 <= quality <= 100:
        raise InputError(f"jpeg quality must be an integer in [1, 100], got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    # Round half up, as the IJG integer formula does.
    table = np.floor(LUMINANCE_TABLE * scale / 100.0 + 0.5)
    return np.clip(table, 1.0, 255.0)


def block_dct(blocks: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Orthonormal 2-D DCT-II over the last two axes."""
    return dctn(np.asarray(blocks, dtype=np.float64), type=2, axes=(-2, -1), norm="ortho")


def block_idct(coefficients: npt.ArrayLike) -> npt.NDArray[np.float64]:
    return idctn(np.asarray(coefficients, dtype=np.float64), type=2, axes=(-2, -1), norm="ortho")


def _to_blocks(plane: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    h, w = plane.shape
    return plane.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).swapaxes(1, 2)


def _from_blocks(blocks: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    by, bx = blocks.shape[:2]
    return blocks.swapaxes(1, 2).reshape(by * BLOCK, bx * BLOCK)


def jpeg_compress(img: ImageGrid, quality: int) -> ImageGrid:
    table = quantization_table(quality)
    pad_h = -img.height % BLOCK
    pad_w = -img.width % BLOCK
    # "symmetric" is numpy's name for the same edge-repeating reflection blur uses.
    plane = np.pad(img.pixels * 255.0 - 128.0, ((0, pad_h), (0, pad_w)), mode="symmetric")

    coefficients = block_dct(_to_blocks(plane))
    quantized = np.round(coefficients / table)
    restored = _from_blocks(block_idct(quantized * table))

    restored = restored[: img.height, : img.width]
    return img._replace((restored + 128.0) / 255.0)


# ─────────────────────────────────────────────────────────────────────────────
# Dispatch
# ─────────────────────────────────────────────────────────────────────────────

def apply_distortion(img: ImageGrid, spec: DistortionSpec) -> ImageGrid:
    if spec.kind == "gaussian_noise":
        return gaussian_noise(img, spec.level, spec.seed)
    if spec.kind == "gaussian_blur":
        return gaussian_blur(img, spec.level)
    return jpeg_compress(img, int(spec.level))
