"""Attacker harness: train a classifier on (possibly unlearnable) data and score it on clean test data."""
from __future__ import annotations

import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from segue.core.atomic import atomic_write_json, atomic_write_text
from segue.core.dataset import load_dataset
from segue.core.types import Dataset, ImageBatch
from segue.distortion import adversarial_step
from segue.errors import BudgetViolation, ConfigError, DatasetIOError, NonFiniteLossError
from segue.evaluation.augment import AUGMENTATIONS, apply_augmentations
from segue.evaluation.metrics import clean_test_accuracy, image_quality
from segue.evaluation.probe import linear_separability_probe
from segue.models import ARCHITECTURES, build_classifier


@dataclass
class ExperimentSpec:
    dataset_ref: Optional[str] = None
    unlearnable_ref: Optional[str] = None
    arch: str = "resnet"
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 64
    augmentations: tuple = ()
    rho_a: float = 0.0
    adv_steps: int = 1
    jpeg_quality: Optional[int] = None
    seed: int = 0
    widths: tuple = (16, 32, 64)

    def __post_init__(self):
        self.augmentations = tuple(a for a in AUGMENTATIONS if a in set(self.augmentations))
        self.widths = tuple(self.widths)

    def validate(self, check_paths: bool = True):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown attacker architecture {self.arch!r}; choose from {sorted(ARCHITECTURES)}",
                              key="arch")
        if not self.rho_a >= 0:
            raise ConfigError("rho_a must be >= 0", key="rho_a")
        for key in ("epochs", "batch_size", "adv_steps"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1", key=key)
        if not self.lr > 0:
            raise ConfigError("lr must be positive", key="lr")
        if self.jpeg_quality is not None and not 1 <= self.jpeg_quality <= 100:
            raise ConfigError("jpeg_quality must be in 1..100", key="jpeg_quality")
        if check_paths:
            if self.dataset_ref is None:
                raise ConfigError("dataset_ref is required", key="dataset_ref")
            for ref in (self.dataset_ref, self.unlearnable_ref):
                if ref is not None and not Path(ref).is_file():
                    raise DatasetIOError(f"manifest not found: {ref}", path=ref)
        return self

    def to_dict(self):
        d = asdict(self)
        d["augmentations"] = list(self.augmentations)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown experiment keys {sorted(unknown)}", key=sorted(unknown)[0])
        bad = set(d.get("augmentations", ())) - set(AUGMENTATIONS)
        if bad:
            raise ConfigError(f"unknown augmentations {sorted(bad)}; choose from {list(AUGMENTATIONS)}",
                              key="augmentations")
        return cls(**d)

    def spec_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class EvalReport:
    spec_hash: str
    spec: dict
    final_test_accuracy: float
    best_test_accuracy: float
    curves: list
    metrics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_dict(self, with_timings=False):
        d = asdict(self)
        if not with_timings:
            d.pop("timings")
        return d

    def save(self, path):
        """Report JSON (reproducible) plus a sibling file for the wall-clock timings."""
        path = Path(path)
        atomic_write_json(path, self.to_dict())
        atomic_write_json(path.with_name(path.stem + ".timings.json"), self.timings)
        return path

    def save_curves_csv(self, path):
        lines = ["epoch,train_loss,train_acc,test_acc"]
        lines += [f"{c['epoch']},{c['train_loss']!r},{c['train_acc']!r},{c['test_acc']!r}" for c in self.curves]
        atomic_write_text(path, "\n".join(lines) + "\n")


def jpeg_batch(batch: ImageBatch, quality: int, paths=None) -> ImageBatch:
    if not 1 <= quality <= 100:
        raise ConfigError("jpeg quality must be in 1..100", key="jpeg_quality")
    arr = torch.round(batch.pixels * 255).clamp(0, 255).to(torch.uint8).numpy()
    out = np.empty_like(arr)
    for i, img in enumerate(arr):
        hwc = img.transpose(1, 2, 0)
        pil = Image.fromarray(hwc[:, :, 0] if hwc.shape[2] == 1 else hwc)
        try:
            buf = io.BytesIO()
            # 4:4:4 chroma: the quality factor alone controls the loss
            pil.save(buf, format="JPEG", quality=int(quality), subsampling=0)
            buf.seek(0)
            dec = np.asarray(Image.open(buf).convert(pil.mode))
        except OSError as exc:
            where = paths[i] if paths and i < len(paths) else f"train image {i}"
            raise DatasetIOError(f"JPEG codec failed on {where}: {exc}", path=where) from exc
        out[i] = dec[None] if dec.ndim == 2 else dec.transpose(2, 0, 1)
    return batch.with_pixels(torch.from_numpy(out).to(torch.float32) / 255.0)


def jpeg_preprocess(dataset: Dataset, quality: int) -> Dataset:
    """JPEG encode + decode the train split; the test split is left untouched."""
    return replace(dataset, train=jpeg_batch(dataset.train, quality, dataset.train_paths))


def fit_attacker(train: ImageBatch, test: ImageBatch, num_classes: int, spec: ExperimentSpec, log=None):
    """Train `spec.arch` on `train`, scoring clean accuracy on `test` after every epoch."""
    spec.validate(check_paths=False)
    if train.labels is None:
        raise ConfigError("attacker training needs a labeled train split", key="dataset_ref")
    h = spec.spec_hash()
    torch.manual_seed(spec.seed)
    model = build_classifier(spec.arch, num_classes, train.pixels.shape[1], spec.widths)
    opt = torch.optim.Adam(model.parameters(), lr=spec.lr)
    gen = torch.Generator().manual_seed(spec.seed)
    N = len(train)
    curves = []
    t0 = time.perf_counter()
    for epoch in range(1, spec.epochs + 1):
        model.train()
        perm = torch.randperm(N, generator=gen)
        total, correct = 0.0, 0
        for i in range(0, N, spec.batch_size):
            idx = perm[i:i + spec.batch_size]
            x = train.pixels[idx]
            y = F.one_hot(train.labels[idx], num_classes).to(x.dtype)
            x, y = apply_augmentations(x, y, spec.augmentations, gen)
            if spec.rho_a > 0:
                adv = adversarial_step(model, x, y, spec.rho_a, spec.adv_steps)
                dev = float((adv - x).abs().max())
                if dev > spec.rho_a + 1e-6:
                    raise BudgetViolation(f"adversarial deviation {dev} exceeds rho_a {spec.rho_a}")
                x = adv
            logits = model(x)
            loss = F.cross_entropy(logits, y)
            if not math.isfinite(float(loss.detach())):
                raise NonFiniteLossError(f"non-finite attacker loss at epoch {epoch} (spec {h[:12]})",
                                         step=epoch, value=float(loss.detach()))
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
            correct += int((logits.argmax(1) == y.argmax(1)).sum())
        rec = {"epoch": epoch, "train_loss": total / N, "train_acc": correct / N,
               "test_acc": clean_test_accuracy(model, test)}
        curves.append(rec)
        if log:
            log(rec)
    report = EvalReport(
        spec_hash=h, spec=spec.to_dict(),
        final_test_accuracy=curves[-1]["test_acc"] if curves else 0.0,
        best_test_accuracy=max((c["test_acc"] for c in curves), default=0.0),
        curves=curves, timings={"train_seconds": time.perf_counter() - t0},
    )
    return model, report


def train_attacker(spec: ExperimentSpec, log=None):
    """Load the referenced manifests, train, and attach the perturbation metric block."""
    spec.validate()
    clean = load_dataset(spec.dataset_ref)
    source = load_dataset(spec.unlearnable_ref) if spec.unlearnable_ref else clean
    if source.num_classes != clean.num_classes:
        raise ConfigError(f"unlearnable set has {source.num_classes} classes, clean set {clean.num_classes}",
                          key="unlearnable_ref")
    metrics = {}
    if spec.unlearnable_ref and source.train.pixels.shape == clean.train.pixels.shape:
        metrics.update(image_quality(clean.train.pixels, source.train.pixels))
        if source.train.labels is not None:
            metrics["probe_accuracy"] = linear_separability_probe(
                source.train.pixels - clean.train.pixels, source.train.labels, clean.num_classes)
    if spec.jpeg_quality is not None:
        source = jpeg_preprocess(source, spec.jpeg_quality)
    model, report = fit_attacker(source.train, clean.test, clean.num_classes, spec, log=log)
    report.metrics = metrics
    return model, report
