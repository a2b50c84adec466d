"""Attacker-side augmentations. All functions take a batch [N, C, H, W] and soft targets [N, K]."""
from __future__ import annotations

import torch

from segue.distortion import gaussian_blur
from segue.errors import ArgumentError

AUGMENTATIONS = ("gaussian_blur", "cutout", "cutmix", "mixup")


def _boxes(n, n_patches, length, H, W, rng):
    """Top-left corners so every square lies fully inside the image."""
    ys = torch.randint(0, H - length + 1, (n, n_patches), generator=rng)
    xs = torch.randint(0, W - length + 1, (n, n_patches), generator=rng)
    return torch.stack([ys, xs], dim=-1)


def _mask(boxes, length, H, W):
    n = boxes.shape[0]
    mask = torch.zeros(n, 1, H, W)
    for i in range(n):
        for y0, x0 in boxes[i].tolist():
            mask[i, :, y0:y0 + length, x0:x0 + length] = 1.0
    return mask


def cutout(x, rng, n_patches=2, length=None, boxes=None):
    N, C, H, W = x.shape
    length = H // 2 if length is None else length
    if length > min(H, W):
        raise ArgumentError(f"cutout length {length} exceeds image size {H}x{W}")
    if boxes is None:
        boxes = _boxes(N, n_patches, length, H, W, rng)
    return x * (1.0 - _mask(boxes, length, H, W))


def mixup(x, y, rng, lam=None, perm=None):
    """Blend random pairs; lam ~ Beta(1, 1) unless given."""
    if lam is None:
        lam = float(torch.rand((), generator=rng))  # Beta(1, 1) is uniform
    if perm is None:
        perm = torch.randperm(len(x), generator=rng)
    return lam * x + (1 - lam) * x[perm], lam * y + (1 - lam) * y[perm]


def cutmix(x, y, rng, n_patches=2, length=None, boxes=None, perm=None):
    """Paste a partner's pixels into cutout squares; label weight follows the pasted area."""
    N, C, H, W = x.shape
    length = H // 2 if length is None else length
    if length > min(H, W):
        raise ArgumentError(f"cutmix length {length} exceeds image size {H}x{W}")
    if boxes is None:
        boxes = _boxes(N, n_patches, length, H, W, rng)
    if perm is None:
        perm = torch.randperm(N, generator=rng)
    mask = _mask(boxes, length, H, W)
    area = mask.flatten(1).mean(1)[:, None]
    return x * (1 - mask) + x[perm] * mask, (1 - area) * y + area * y[perm]


def blur(x, kernel=5, sigma=1.0):
    return gaussian_blur(x, (kernel, kernel), sigma)


def apply_augmentations(x, y, names, rng):
    for name in AUGMENTATIONS:
        if name not in names:
            continue
        if name == "gaussian_blur":
            x = blur(x)
        elif name == "cutout":
            x = cutout(x, rng)
        elif name == "cutmix":
            x, y = cutmix(x, y, rng)
        elif name == "mixup":
            x, y = mixup(x, y, rng)
    return torch.clamp(x, 0.0, 1.0), y
