from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np
import torch
from PIL import Image

from segue.core.atomic import atomic_write_text
from segue.core.perturb import max_deviation
from segue.core.types import Dataset, ImageBatch, QuantizationPolicy
from segue.errors import BudgetViolation, DatasetIOError, DimensionError, ManifestError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
LOSSLESS_FORMATS = {"PNG", "BMP", "PPM", "TIFF"}
# generator downsamples three times
SIZE_MULTIPLE = 8

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["format_version", "name", "num_classes", "image_size", "entries"],
    "properties": {
        "format_version": {"type": "integer"},
        "name": {"type": "string"},
        "num_classes": {"type": "integer", "minimum": 2},
        "image_size": {"type": "array", "items": {"type": "integer", "minimum": 1},
                       "minItems": 3, "maxItems": 3},
        "entries": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["path", "split"],
                "properties": {
                    "path": {"type": "string"},
                    "label": {"type": ["integer", "null"], "minimum": 0},
                    "split": {"enum": ["train", "test"]},
                },
            },
        },
    },
}


def read_manifest(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DatasetIOError(f"manifest not found: {path}", path=path)
    try:
        doc = json.loads(path.read_text())
    except ValueError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    try:
        jsonschema.validate(doc, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        key = ".".join(str(p) for p in exc.absolute_path) or None
        raise ManifestError(f"{path}: {exc.message}", key=key) from exc
    if doc["format_version"] != FORMAT_VERSION:
        raise ManifestError(f"{path}: unsupported format_version {doc['format_version']}", key="format_version")
    K = doc["num_classes"]
    for i, e in enumerate(doc["entries"]):
        if e.get("label") is not None and e["label"] >= K:
            raise ManifestError(f"{path}: entry {i} ({e['path']}) has label {e['label']} >= num_classes {K}",
                                key=f"entries.{i}.label")
    splits = {}
    for e in doc["entries"]:
        if e["path"] in splits and splits[e["path"]] != e["split"]:
            raise ManifestError(f"{path}: {e['path']} appears in both train and test", key="entries")
        splits[e["path"]] = e["split"]
    labels = [e.get("label") for e in doc["entries"]]
    if any(v is None for v in labels) and not all(v is None for v in labels):
        raise ManifestError(f"{path}: labels must be given for all entries or none", key="label")
    return doc


def _resolve(manifest_path: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else manifest_path.parent / p


def _decode(path: Path, image_size):
    C, H, W = image_size
    try:
        with Image.open(path) as im:
            fmt = im.format
            im = im.convert("RGB" if C == 3 else "L")
            resized = im.size != (W, H)
            if resized:
                im = im.resize((W, H), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.uint8)
    except FileNotFoundError as exc:
        raise DatasetIOError(f"image not found: {path}", path=path) from exc
    except OSError as exc:
        raise DatasetIOError(f"cannot decode image {path}: {exc}", path=path) from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.transpose(2, 0, 1), fmt, resized


def _to_float(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(arr).to(torch.float32) / 255.0


def load_dataset(manifest_path, workers: int = 1) -> Dataset:
    """Decode every image of a manifest into [0, 1] tensors, in manifest order."""
    manifest_path = Path(manifest_path)
    doc = read_manifest(manifest_path)
    C, H, W = doc["image_size"]
    paths = [_resolve(manifest_path, e["path"]) for e in doc["entries"]]
    for p in paths:
        if not p.is_file():
            raise DatasetIOError(f"image not found: {p}", path=p)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            decoded = list(pool.map(lambda p: _decode(p, (C, H, W)), paths))
    else:
        decoded = [_decode(p, (C, H, W)) for p in paths]

    metadata = {"warnings": []}
    lossy = sorted({str(p) for p, (_, fmt, _) in zip(paths, decoded) if fmt not in LOSSLESS_FORMATS})
    if lossy:
        metadata["warnings"].append(f"{len(lossy)} image(s) come from a lossy format, e.g. {lossy[0]}")
        log.warning(metadata["warnings"][-1])
    n_resized = sum(r for _, _, r in decoded)
    if n_resized:
        metadata["resized"] = n_resized
    for k in ("source_manifest", "generator_checkpoint", "epsilon", "max_observed_delta"):
        if k in doc:
            metadata[k] = doc[k]

    pad_h, pad_w = (-H) % SIZE_MULTIPLE, (-W) % SIZE_MULTIPLE
    if pad_h or pad_w:
        metadata["padded_from"] = [C, H, W]

    labeled = all(e.get("label") is not None for e in doc["entries"])

    def build(split):
        idx = [i for i, e in enumerate(doc["entries"]) if e["split"] == split]
        if idx:
            pixels = _to_float(np.stack([decoded[i][0] for i in idx]))
        else:
            pixels = torch.zeros(0, C, H, W)
        if pad_h or pad_w:
            pixels = torch.nn.functional.pad(pixels, (0, pad_w, 0, pad_h), mode="replicate") \
                if len(idx) else torch.zeros(0, C, H + pad_h, W + pad_w)
        labels = torch.tensor([doc["entries"][i]["label"] for i in idx], dtype=torch.int64) if labeled else None
        return ImageBatch(pixels, labels), [doc["entries"][i]["path"] for i in idx]

    train, train_paths = build("train")
    test, test_paths = build("test")
    return Dataset(
        name=doc["name"], num_classes=doc["num_classes"], image_size=(C, H + pad_h, W + pad_w),
        train=train, test=test, manifest_path=manifest_path,
        train_paths=train_paths, test_paths=test_paths, metadata=metadata,
    )


def _save_png(arr: np.ndarray, path: Path):
    img = arr.transpose(1, 2, 0)
    img = Image.fromarray(img[:, :, 0] if img.shape[2] == 1 else img)
    img.save(path, format="PNG")


def _mirror_path(rel: str, index: int, split: str) -> str:
    p = Path(rel)
    if p.is_absolute() or ".." in p.parts:
        return f"{split}/{index:06d}_{p.stem}.png"
    return str(p.with_suffix(".png"))


def write_manifest(path, doc: dict):
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def export_unlearnable(dataset: Dataset, perturbed: ImageBatch, out_dir, *, epsilon: float,
                       generator_checkpoint: str | None = None,
                       policy: QuantizationPolicy = QuantizationPolicy(),
                       extra: dict | None = None) -> Path:
    """Write the perturbed train split (and the untouched test split) as 8-bit PNGs.

    The new manifest records the source manifest, generator id, epsilon and the
    per-image max |delta| measured on the written 8-bit values.
    """
    out_dir = Path(out_dir)
    if perturbed.pixels.shape != dataset.train.pixels.shape:
        raise DimensionError(
            f"perturbed batch {tuple(perturbed.pixels.shape)} does not match train split "
            f"{tuple(dataset.train.pixels.shape)}"
        )
    clean8 = policy.to_uint8(dataset.train.pixels)
    pert8 = policy.to_uint8(perturbed.pixels)
    per_image = max_deviation(clean8.to(torch.int32), pert8.to(torch.int32)).tolist() if len(clean8) else []
    step_limit = round(epsilon * 255) + 1
    if per_image and max(per_image) > step_limit:
        raise BudgetViolation(f"exported deviation {max(per_image)}/255 exceeds epsilon + one step")

    entries = []
    jobs = []
    for split, batch8, rels in (("train", pert8, dataset.train_paths),
                                ("test", policy.to_uint8(dataset.test.pixels), dataset.test_paths)):
        labels = getattr(dataset, split).labels
        for i in range(batch8.shape[0]):
            rel = rels[i] if i < len(rels) else f"{split}/{i:06d}.png"
            rel = _mirror_path(rel, i, split)
            entry = {"path": rel, "label": None if labels is None else int(labels[i]), "split": split}
            if split == "train":
                entry["max_delta"] = per_image[i] / 255.0
            entries.append(entry)
            jobs.append((batch8[i].numpy(), out_dir / rel))

    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise PermissionError(f"directory not writable: {out_dir}")
        for arr, p in jobs:
            p.parent.mkdir(parents=True, exist_ok=True)
            _save_png(arr, p)
        doc = {
            "format_version": FORMAT_VERSION,
            "name": f"{dataset.name}-unlearnable",
            "num_classes": dataset.num_classes,
            "image_size": list(dataset.image_size),
            "entries": entries,
            "source_manifest": str(dataset.manifest_path) if dataset.manifest_path else None,
            "generator_checkpoint": generator_checkpoint,
            "epsilon": epsilon,
            "max_observed_delta": (max(per_image) / 255.0) if per_image else 0.0,
        }
        if extra:
            doc.update(extra)
        manifest = out_dir / "manifest.json"
        write_manifest(manifest, doc)
    except OSError as exc:
        raise DatasetIOError(f"export to {out_dir} failed: {exc}", path=out_dir) from exc
    return manifest


def write_dataset(images: np.ndarray, labels, splits, out_dir, name: str, num_classes: int) -> Path:
    """Write uint8 [N, C, H, W] images as PNGs plus a manifest (used for fixtures)."""
    out_dir = Path(out_dir)
    entries = []
    counters = {"train": 0, "test": 0}
    try:
        for arr, y, split in zip(images, labels, splits):
            rel = f"{split}/{counters[split]:05d}.png"
            counters[split] += 1
            (out_dir / split).mkdir(parents=True, exist_ok=True)
            _save_png(arr, out_dir / rel)
            entries.append({"path": rel, "label": None if y is None else int(y), "split": split})
        doc = {"format_version": FORMAT_VERSION, "name": name, "num_classes": num_classes,
               "image_size": list(images.shape[1:]), "entries": entries}
        write_manifest(out_dir / "manifest.json", doc)
    except OSError as exc:
        raise DatasetIOError(f"writing dataset to {out_dir} failed: {exc}", path=out_dir) from exc
    return out_dir / "manifest.json"
