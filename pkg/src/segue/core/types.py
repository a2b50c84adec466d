from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch

from segue.errors import ArgumentError, DimensionError, ManifestError

DEFAULT_EPSILON = 8 / 255


@dataclass
class ImageBatch:
    """Images in [0, 1] as a float32 [N, C, H, W] tensor with optional int64 labels."""

    pixels: torch.Tensor
    labels: Optional[torch.Tensor] = None

    def __post_init__(self):
        if self.pixels.dim() != 4:
            raise DimensionError(f"pixels must be [N, C, H, W], got shape {tuple(self.pixels.shape)}")
        if self.labels is not None:
            self.labels = torch.as_tensor(self.labels, dtype=torch.int64)
            if self.labels.shape != (self.pixels.shape[0],):
                raise DimensionError(
                    f"labels shape {tuple(self.labels.shape)} does not match {self.pixels.shape[0]} images"
                )
        if self.pixels.numel() and (self.pixels.min() < 0 or self.pixels.max() > 1):
            raise ArgumentError("pixel values must lie in [0, 1]")

    def __len__(self):
        return self.pixels.shape[0]

    @property
    def image_size(self):
        return tuple(self.pixels.shape[1:])

    def subset(self, index) -> "ImageBatch":
        labels = None if self.labels is None else self.labels[index]
        return ImageBatch(self.pixels[index], labels)

    def with_pixels(self, pixels: torch.Tensor) -> "ImageBatch":
        return ImageBatch(pixels, self.labels)


@dataclass
class Dataset:
    name: str
    num_classes: int
    image_size: tuple
    train: ImageBatch
    test: ImageBatch
    manifest_path: Optional[Path] = None
    train_paths: list = field(default_factory=list)
    test_paths: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ManifestError("num_classes must be >= 2", key="num_classes")
        for split in (self.train, self.test):
            if split.labels is not None and len(split) and int(split.labels.max()) >= self.num_classes:
                raise ManifestError(
                    f"label {int(split.labels.max())} >= num_classes {self.num_classes}", key="label"
                )

    @property
    def labeled(self):
        return self.train.labels is not None


@dataclass
class Perturbation:
    delta: torch.Tensor
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ArgumentError("epsilon must be positive")

    @property
    def max_abs(self) -> float:
        return float(self.delta.abs().max()) if self.delta.numel() else 0.0

    def within_budget(self) -> bool:
        return self.max_abs <= self.epsilon


@dataclass(frozen=True)
class QuantizationPolicy:
    levels: int = 256

    @property
    def step(self) -> float:
        return 1.0 / (self.levels - 1)

    def quantize(self, x: torch.Tensor) -> torch.Tensor:
        scale = float(self.levels - 1)
        return torch.round(x * scale) / scale

    def to_uint8(self, x: torch.Tensor) -> torch.Tensor:
        if self.levels != 256:
            raise ArgumentError("8-bit export requires levels == 256")
        return torch.round(x * 255.0).to(torch.uint8)
