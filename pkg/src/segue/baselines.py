"""Reference perturbation methods: error-minimizing noise (UE), its robust variant (RUE),
patch-based separable noise (LSP) and class-wise uniform noise.

RUE and LSP are simplified stand-ins: their metadata carries ``"fidelity": "simplified"``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from segue.core.container import read_container, write_container
from segue.core.dataset import export_unlearnable
from segue.core.perturb import apply_and_quantize, budget_bound, clip_perturbation
from segue.core.types import Dataset, ImageBatch, Perturbation, QuantizationPolicy
from segue.distortion import adversarial_step
from segue.errors import ArgumentError, NonFiniteLossError

PSET_KIND = "segue-perturbation-set"
PSET_VERSION = 1


@dataclass
class PerturbationSet:
    mode: str
    deltas: torch.Tensor
    epsilon: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("sample_wise", "class_wise"):
            raise ArgumentError(f"unknown mode {self.mode!r}")

    @property
    def max_abs(self):
        return float(self.deltas.abs().max()) if self.deltas.numel() else 0.0

    def for_batch(self, batch: ImageBatch) -> Perturbation:
        if self.mode == "sample_wise":
            if len(self.deltas) != len(batch):
                raise ArgumentError(f"{len(self.deltas)} perturbations for {len(batch)} samples")
            return Perturbation(self.deltas, self.epsilon)
        if batch.labels is None:
            raise ArgumentError("class-wise perturbations need labels")
        if len(batch) and int(batch.labels.max()) >= len(self.deltas):
            raise ArgumentError(f"label {int(batch.labels.max())} has no class-wise perturbation "
                                f"(set covers {len(self.deltas)} classes)")
        return Perturbation(self.deltas[batch.labels], self.epsilon)

    def save(self, path) -> str:
        return write_container(path, PSET_KIND, PSET_VERSION, {"deltas": self.deltas},
                               {"mode": self.mode, "epsilon": self.epsilon, "metadata": self.metadata})

    @classmethod
    def load(cls, path) -> "PerturbationSet":
        header, tensors = read_container(path, PSET_KIND, PSET_VERSION)
        return cls(header["mode"], tensors["deltas"], header["epsilon"], header["metadata"])


def _project(x, delta, epsilon):
    delta = clip_perturbation(delta, epsilon)
    return torch.clamp(x + delta, 0.0, 1.0) - x


def inner_min_step(f, x, delta, y, epsilon, step_size, rho_a=0.0):
    """One sign-gradient descent step on delta, optionally after an adversarial max step.

    Returns (new_delta, loss_after_max, loss_after_min); losses are measured with the
    same adversarial offset so they are comparable.
    """
    xp = torch.clamp(x + delta, 0.0, 1.0)
    adv = adversarial_step(f, xp, y, rho_a) if rho_a > 0 else xp
    offset = (adv - xp).detach()
    d = delta.detach().clone().requires_grad_(True)
    loss = F.cross_entropy(f(x + d + offset), y)
    if not math.isfinite(float(loss.detach())):
        raise NonFiniteLossError(f"non-finite inner loss {float(loss.detach())}", value=float(loss.detach()))
    (grad,) = torch.autograd.grad(loss, d)
    new = _project(x, delta.detach() - step_size * grad.sign(), epsilon)
    with torch.no_grad():
        after = F.cross_entropy(f(x + new + offset), y)
    return new, float(loss.detach()), float(after)


def _min_min(train: ImageBatch, f, epsilon, *, rho_a=0.0, outer_steps=100, inner_steps=20, step_size=None,
             max_rounds=10, stop_error=0.01, batch_size=64, lr=0.1, seed=0, log=None):
    if train.labels is None:
        raise ArgumentError("error-minimizing noise needs labels")
    step_size = epsilon / 10 if step_size is None else step_size
    x_all, y_all = train.pixels, train.labels
    N = len(train)
    delta = torch.zeros_like(x_all)
    if N == 0:
        return delta, []
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.SGD(f.parameters(), lr=lr, momentum=0.9, weight_decay=5e-4)
    perm, cursor = torch.randperm(N, generator=gen), 0
    history = []
    for rnd in range(max_rounds):
        f.train()
        for step in range(outer_steps):
            if cursor >= N:
                perm, cursor = torch.randperm(N, generator=gen), 0
            idx = perm[cursor:cursor + batch_size]
            cursor += batch_size
            xp = torch.clamp(x_all[idx] + delta[idx], 0.0, 1.0)
            if rho_a > 0:
                xp = adversarial_step(f, xp, y_all[idx], rho_a)
            loss = F.cross_entropy(f(xp), y_all[idx])
            if not math.isfinite(float(loss.detach())):
                raise NonFiniteLossError(f"non-finite model loss at round {rnd} step {step}", step=step,
                                         value=float(loss.detach()))
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
        f.eval()
        for p in f.parameters():
            p.requires_grad_(False)
        try:
            for i in range(0, N, batch_size):
                sl = slice(i, i + batch_size)
                d = delta[sl]
                for _ in range(inner_steps):
                    d, _, _ = inner_min_step(f, x_all[sl], d, y_all[sl], epsilon, step_size, rho_a)
                delta[sl] = d
            with torch.no_grad():
                correct = sum(int((f(torch.clamp(x_all[i:i + 256] + delta[i:i + 256], 0, 1)).argmax(1)
                                   == y_all[i:i + 256]).sum()) for i in range(0, N, 256))
        finally:
            for p in f.parameters():
                p.requires_grad_(True)
        error = 1.0 - correct / N
        history.append({"round": rnd + 1, "train_error": error})
        if log:
            log(history[-1])
        if error < stop_error:
            break
    return clip_perturbation(delta, epsilon), history


def ue_min_min(train: ImageBatch, f, epsilon=8 / 255, outer_steps=100, inner_steps=20, **kw) -> PerturbationSet:
    """Sample-wise error-minimizing noise: alternate model updates with per-example PGD descent."""
    delta, history = _min_min(train, f, epsilon, outer_steps=outer_steps, inner_steps=inner_steps, **kw)
    return PerturbationSet("sample_wise", delta, epsilon,
                           {"method": "ue", "outer_steps": outer_steps, "inner_steps": inner_steps,
                            "history": history})


def rue_min_min_max(train: ImageBatch, f, epsilon=8 / 255, rho_a=4 / 255, outer_steps=100, inner_steps=20,
                    **kw) -> PerturbationSet:
    """UE with a single adversarial max step of radius rho_a before every min step."""
    delta, history = _min_min(train, f, epsilon, rho_a=rho_a, outer_steps=outer_steps,
                              inner_steps=inner_steps, **kw)
    return PerturbationSet("sample_wise", delta, epsilon,
                           {"method": "rue", "fidelity": "simplified", "rho_a": rho_a,
                            "outer_steps": outer_steps, "inner_steps": inner_steps, "history": history})


def lsp_patches(K: int, image_size, patch_size: int = 8, epsilon=8 / 255, seed: int = 0) -> PerturbationSet:
    """Per class, a grid of constant-colour patches from uniform noise, centred and scaled to max |delta| = eps."""
    C, H, W = image_size
    if patch_size < 1 or H % patch_size or W % patch_size:
        raise ArgumentError(f"patch size {patch_size} must divide {H}x{W}")
    rng = np.random.default_rng(seed)
    grid = rng.uniform(0.0, 1.0, size=(K, C, H // patch_size, W // patch_size))
    full = grid.repeat(patch_size, axis=2).repeat(patch_size, axis=3)
    full = full - full.mean(axis=(1, 2, 3), keepdims=True)
    peak = np.abs(full).max(axis=(1, 2, 3), keepdims=True)
    full = np.divide(full, peak, out=np.zeros_like(full), where=peak > 0) * epsilon
    deltas = clip_perturbation(torch.from_numpy(full).to(torch.float32), epsilon)
    return PerturbationSet("class_wise", deltas, epsilon,
                           {"method": "lsp", "fidelity": "simplified", "patch_size": patch_size, "seed": seed})


def classwise_random(K: int, image_size, epsilon=8 / 255, seed: int = 0) -> PerturbationSet:
    gen = torch.Generator().manual_seed(seed)
    bound = float(budget_bound(epsilon))
    deltas = (torch.rand(K, *image_size, generator=gen) * 2 - 1) * bound
    return PerturbationSet("class_wise", clip_perturbation(deltas, epsilon), epsilon,
                           {"method": "random", "seed": seed})


def perturb_batch(batch: ImageBatch, pset: PerturbationSet,
                  policy: QuantizationPolicy = QuantizationPolicy()) -> ImageBatch:
    return apply_and_quantize(batch, pset.for_batch(batch), policy)


def apply_perturbation_set(dataset: Dataset, pset: PerturbationSet, out_dir,
                           policy: QuantizationPolicy = QuantizationPolicy()) -> Path:
    if pset.mode == "class_wise" and dataset.num_classes > len(pset.deltas):
        raise ArgumentError(f"dataset has {dataset.num_classes} classes, perturbation set only {len(pset.deltas)}")
    perturbed = perturb_batch(dataset.train, pset, policy)
    return export_unlearnable(dataset, perturbed, out_dir, epsilon=pset.epsilon, policy=policy,
                              extra={"method": pset.metadata.get("method"),
                                     "fidelity": pset.metadata.get("fidelity", "full")})
