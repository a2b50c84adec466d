"""Guide signals for the generator: binary label codes and K-means pseudo-labels."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from torch import nn

from segue.core.types import ImageBatch
from segue.errors import ArgumentError, DimensionError, EncodingError

DEFAULT_BITS = 16


@dataclass(frozen=True)
class LabelEmbedding:
    bits: tuple
    source_label: int

    def decode(self) -> int:
        return int("".join(map(str, self.bits)), 2)


def encode_label(y: int, bits: int = DEFAULT_BITS) -> LabelEmbedding:
    """Big-endian binary expansion of `y`, zero padded to `bits` digits."""
    y = int(y)
    if not 0 <= y < 2 ** bits:
        raise EncodingError(f"label {y} cannot be encoded in {bits} bits")
    return LabelEmbedding(tuple(int(c) for c in format(y, f"0{bits}b")), y)


def embedding_to_channels(emb: LabelEmbedding, spatial) -> torch.Tensor:
    """One constant plane per bit: [B, H', W']."""
    h, w = spatial
    return torch.tensor(emb.bits, dtype=torch.float32)[:, None, None].expand(len(emb.bits), h, w).clone()


def label_bits(labels: torch.Tensor, bits: int = DEFAULT_BITS) -> torch.Tensor:
    """Vectorised encode_label for a batch: [N] int -> [N, bits] float (MSB first)."""
    labels = torch.as_tensor(labels, dtype=torch.int64)
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= 2 ** bits):
        bad = int(labels.max()) if int(labels.max()) >= 2 ** bits else int(labels.min())
        raise EncodingError(f"label {bad} cannot be encoded in {bits} bits")
    shifts = torch.arange(bits - 1, -1, -1, dtype=torch.int64)
    return ((labels[:, None] >> shifts) & 1).to(torch.float32)


@dataclass
class SideInformation:
    """Per-sample guide labels. `kind` is "labels" or "pseudo"."""

    labels: torch.Tensor
    kind: str = "labels"
    bits: int = DEFAULT_BITS

    def __post_init__(self):
        self.labels = torch.as_tensor(self.labels, dtype=torch.int64)
        label_bits(self.labels, self.bits)

    def __len__(self):
        return len(self.labels)

    def channels(self, spatial) -> torch.Tensor:
        h, w = spatial
        return label_bits(self.labels, self.bits)[:, :, None, None].expand(-1, -1, h, w)


class FeatureExtractor:
    """Frozen classifier used as an image -> feature map (penultimate layer).

    `model` must expose `embed(x)`; provenance records what it was trained on.
    """

    def __init__(self, model: nn.Module, image_size, provenance: dict | None = None):
        self.model = model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.image_size = tuple(image_size)
        state = b"".join(t.detach().cpu().numpy().tobytes() for t in model.state_dict().values())
        self.provenance = dict(provenance or {})
        self.provenance.setdefault("checkpoint_sha256", hashlib.sha256(state).hexdigest())

    @property
    def feature_dim(self):
        return self.model.feature_dim

    @torch.no_grad()
    def __call__(self, pixels: torch.Tensor, batch_size: int = 256) -> torch.Tensor:
        if pixels.shape[0] == 0:
            return torch.zeros(0, self.feature_dim)
        return torch.cat([self.model.embed(pixels[i:i + batch_size]) for i in range(0, len(pixels), batch_size)])


def extract_features(extractor: FeatureExtractor, images: ImageBatch) -> torch.Tensor:
    if tuple(images.image_size) != extractor.image_size:
        raise DimensionError(f"extractor expects {extractor.image_size}, got {images.image_size}")
    return extractor(images.pixels)


def train_feature_extractor(proxy: ImageBatch, num_classes: int, *, arch: str = "cnn", epochs: int = 20,
                            lr: float = 1e-3, batch_size: int = 64, seed: int = 0,
                            dataset_id: str = "proxy") -> FeatureExtractor:
    """Fit a small classifier on a labeled proxy split and keep its penultimate features."""
    from segue.models import build_classifier

    torch.manual_seed(seed)
    model = build_classifier(arch, num_classes, in_channels=proxy.image_size[0])
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    gen = torch.Generator().manual_seed(seed)
    model.train()
    for _ in range(epochs):
        perm = torch.randperm(len(proxy), generator=gen)
        for i in range(0, len(perm), batch_size):
            idx = perm[i:i + batch_size]
            opt.zero_grad()
            nn.functional.cross_entropy(model(proxy.pixels[idx]), proxy.labels[idx]).backward()
            opt.step()
    return FeatureExtractor(model, proxy.image_size,
                            {"training_dataset": dataset_id, "arch": arch, "epochs": epochs, "seed": seed})


@dataclass
class PseudoLabelAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    seed: int
    n_iter: int = 0
    inertia_history: list = field(default_factory=list)

    @property
    def K(self):
        return len(self.centroids)

    def to_json(self, truth=None) -> str:
        doc = {"seed": self.seed, "K": self.K, "labels": [int(v) for v in self.labels],
               "inertia": float(self.inertia)}
        if truth is not None:
            doc["accuracy_vs_truth"] = clustering_accuracy(self.labels, truth, self.K)
        return json.dumps(doc)


def _kmeans_pp(X, K, rng):
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(1)
    for _ in range(1, K):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(1))
    return np.array(centers)


def _assign(X, C):
    d2 = (X ** 2).sum(1)[:, None] - 2 * X @ C.T + (C ** 2).sum(1)[None, :]
    d2 = np.maximum(d2, 0)
    lab = d2.argmin(1)
    return lab, d2[np.arange(len(X)), lab]


def kmeans_cluster(features, K: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-4,
                   n_init: int = 10) -> PseudoLabelAssignment:
    """Lloyd's algorithm from k-means++ starts; the lowest-inertia of `n_init` restarts wins.

    Each restart stops once no centroid moves more than `tol` or after `max_iter` rounds.
    An empty cluster is re-seeded with the point farthest from its current centroid.
    """
    X = np.asarray(features, dtype=np.float64)
    n = len(X)
    if K < 1 or n < K:
        raise ArgumentError(f"need at least K={K} samples, got {n}")
    if n_init < 1:
        raise ArgumentError("n_init must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = _lloyd(X, K, rng, max_iter, tol, seed)
        if best is None or run.inertia < best.inertia:
            best = run
    return best


def _lloyd(X, K, rng, max_iter, tol, seed) -> PseudoLabelAssignment:
    C = _kmeans_pp(X, K, rng)
    labels, d2 = _assign(X, C)
    history = [float(d2.sum())]
    it = 0
    for it in range(1, max_iter + 1):
        new = np.empty_like(C)
        taken = set()
        for k in range(K):
            members = labels == k
            if members.any():
                new[k] = X[members].mean(0)
            else:
                order = np.argsort(-d2, kind="stable")
                far = next(i for i in order if i not in taken)
                taken.add(far)
                new[k] = X[far]
                labels[far] = k
                d2[far] = 0.0
        shift = np.sqrt(((new - C) ** 2).sum(1)).max()
        C = new
        labels, d2 = _assign(X, C)
        inertia = float(d2.sum())
        # tolerance covers round-off in the distance expansion
        assert inertia <= history[-1] * (1 + 1e-9) + 1e-9, "k-means inertia increased"
        history.append(inertia)
        if shift < tol:
            break
    counts = np.bincount(labels, minlength=K)
    for k in np.flatnonzero(counts == 0):
        # repair clusters emptied by the final assignment
        donors = np.flatnonzero(counts[labels] > 1)
        far = donors[np.argmax(d2[donors])]
        counts[labels[far]] -= 1
        labels[far] = k
        counts[k] += 1
        C[k] = X[far]
        d2[far] = 0.0
    return PseudoLabelAssignment(labels=labels.astype(np.int64), centroids=C, inertia=float(d2.sum()),
                                 seed=seed, n_iter=it, inertia_history=history)


def contingency(pseudo, truth, K: int) -> np.ndarray:
    m = np.zeros((K, K), dtype=np.int64)
    np.add.at(m, (np.asarray(pseudo), np.asarray(truth)), 1)
    return m


def clustering_accuracy(pseudo, truth, K: int) -> float:
    """Best agreement over one-to-one cluster -> class matchings."""
    pseudo, truth = np.asarray(pseudo), np.asarray(truth)
    if pseudo.shape != truth.shape:
        raise DimensionError("pseudo and truth must have the same length")
    if len(pseudo) == 0:
        return 1.0
    size = max(K, int(pseudo.max()) + 1, int(truth.max()) + 1)
    m = contingency(pseudo, truth, size)
    rows, cols = linear_sum_assignment(-m)
    return float(m[rows, cols].sum()) / len(pseudo)


def clustering_accuracy_bruteforce(pseudo, truth, K: int) -> float:
    """Exhaustive K! search; reference for small K only."""
    pseudo, truth = np.asarray(pseudo), np.asarray(truth)
    best = 0
    for perm in permutations(range(K)):
        best = max(best, int((np.asarray(perm)[pseudo] == truth).sum()))
    return best / len(pseudo)


def pseudo_labels(extractor: FeatureExtractor, images: ImageBatch, K: int, seed: int = 0) -> PseudoLabelAssignment:
    feats = extract_features(extractor, images).numpy()
    return kmeans_cluster(feats, K, seed=seed)
