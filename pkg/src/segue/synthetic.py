"""Procedural shape dataset used as the desk-scale fixture.

Each class is a shape family (disc, square, triangle, ...). Colour, position, size,
rotation, background and clutter are drawn at random, so the class is carried only by
geometry and a small CNN has to work for its accuracy.
"""
from __future__ import annotations

import math

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

from segue.core.dataset import write_dataset

SHAPES = ("disc", "square", "triangle", "cross", "ring", "bars", "diamond", "star", "hbar", "chevron")
SUPERSAMPLE = 4
MAX_ROTATION = 30.0


def _polygon(kind, cx, cy, r, rot):
    if kind == "square":
        angles, radii = [45, 135, 225, 315], [r] * 4
    elif kind == "triangle":
        angles, radii = [90, 210, 330], [r] * 3
    elif kind == "diamond":
        angles, radii = [0, 90, 180, 270], [r * 0.6, r, r * 0.6, r]
    elif kind == "star":
        angles = [90 + 36 * i for i in range(10)]
        radii = [r if i % 2 == 0 else r * 0.42 for i in range(10)]
    elif kind == "chevron":
        pts = [(-1, -0.2), (0, 0.8), (1, -0.2), (1, -0.8), (0, 0.2), (-1, -0.8)]
        return _rotate(pts, cx, cy, r, rot)
    else:
        raise ValueError(kind)
    return [(cx + rad * math.cos(math.radians(a + rot)), cy - rad * math.sin(math.radians(a + rot)))
            for a, rad in zip(angles, radii)]


def _rotate(pts, cx, cy, r, rot):
    c, s = math.cos(math.radians(rot)), math.sin(math.radians(rot))
    return [(cx + r * (x * c - y * s), cy - r * (x * s + y * c)) for x, y in pts]


def _draw_shape(draw, kind, cx, cy, r, rot, color, width):
    if kind == "disc":
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=color)
    elif kind == "ring":
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], outline=color, width=width)
    elif kind == "cross":
        for a in (rot, rot + 90):
            pts = _rotate([(-1, 0), (1, 0)], cx, cy, r, a)
            draw.line(pts, fill=color, width=width)
    elif kind == "bars":
        for off in (-0.5, 0.5):
            pts = _rotate([(off, -1), (off, 1)], cx, cy, r, rot)
            draw.line(pts, fill=color, width=width)
    elif kind == "hbar":
        pts = _rotate([(-1, 0.3), (1, 0.3), (1, -0.3), (-1, -0.3)], cx, cy, r, rot)
        draw.polygon(pts, fill=color)
    else:
        draw.polygon(_polygon(kind, cx, cy, r, rot), fill=color)


def render(label: int, rng: np.random.Generator, size: int = 32, noise: float = 0.01) -> np.ndarray:
    """One RGB uint8 image [3, size, size] of class `label`."""
    S = size * SUPERSAMPLE
    c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    t = np.linspace(0, 1, S)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(theta) * t[None, :] + np.sin(theta) * t[:, None]
    ramp = (ramp - ramp.min()) / (np.ptp(ramp) + 1e-8)
    bg = c0[None, None] * (1 - ramp[..., None]) + c1[None, None] * ramp[..., None]
    img = Image.fromarray((bg * 255).astype(np.uint8))
    draw = ImageDraw.Draw(img)
    # clutter: a few random thin strokes
    for _ in range(rng.integers(0, 3)):
        p = rng.uniform(0, S, 4)
        col = tuple(int(v) for v in rng.integers(0, 256, 3))
        draw.line(list(p), fill=col, width=int(rng.integers(1, SUPERSAMPLE + 1)))
    r = rng.uniform(0.22, 0.36) * S
    cx, cy = rng.uniform(r, S - r, 2)
    # foreground colour kept away from the local background
    fg = rng.uniform(0, 1, 3)
    local = bg[int(cy), int(cx)]
    if np.abs(fg - local).sum() < 0.6:
        fg = 1.0 - local
    color = tuple(int(v * 255) for v in fg)
    _draw_shape(draw, SHAPES[label], cx, cy, r, rng.uniform(-MAX_ROTATION, MAX_ROTATION), color, int(r * 0.28))
    img = img.filter(ImageFilter.GaussianBlur(SUPERSAMPLE * 0.5)).resize((size, size), Image.BOX)
    arr = np.asarray(img, dtype=np.float64) / 255.0
    arr = arr + rng.normal(0, noise, arr.shape)
    return np.clip(np.round(arr * 255), 0, 255).astype(np.uint8).transpose(2, 0, 1)


def make_images(n_per_class: int, num_classes: int, seed: int, size: int = 32):
    if num_classes > len(SHAPES):
        raise ValueError(f"at most {len(SHAPES)} shape classes")
    rng = np.random.default_rng(seed)
    labels = np.tile(np.arange(num_classes), n_per_class)
    images = np.stack([render(int(y), rng, size) for y in labels])
    return images, labels


def make_fixture(out_dir, num_classes: int = 10, n_train: int = 200, n_test: int = 50,
                 seed: int = 0, size: int = 32, labeled: bool = True, name: str = "shapes"):
    """Write a fixture dataset (n_train / n_test images per class) and return its manifest path."""
    train, ytr = make_images(n_train, num_classes, seed, size)
    test, yte = make_images(n_test, num_classes, seed + 10_000, size)
    images = np.concatenate([train, test])
    labels = np.concatenate([ytr, yte]).tolist()
    if not labeled:
        labels = [None] * len(labels)
    splits = ["train"] * len(train) + ["test"] * len(test)
    return write_dataset(images, labels, splits, out_dir, name=name, num_classes=num_classes)
