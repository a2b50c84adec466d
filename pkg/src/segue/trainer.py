"""Alternating surrogate / generator optimisation.

Epoch e trains the surrogate when (e - 1) % cycle == 0 and the generator otherwise,
so the default cycle of 5 gives the pattern f, G, G, G, G. After every epoch the
surrogate's mean loss over the whole perturbed training set (no distortion) is
measured and training stops once it falls below `stop_loss`.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import torch
import torch.nn.functional as F
from torch import nn

from segue.core.perturb import clip_perturbation
from segue.core.types import DEFAULT_EPSILON, ImageBatch
from segue.distortion import DistortionConfig, apply_distortion
from segue.errors import ArgumentError, BudgetViolation, ConfigError, NonFiniteLossError
from segue.generator import GeneratorModel, save_checkpoint
from segue.models import build_classifier
from segue.side_info import DEFAULT_BITS, SideInformation, label_bits


@dataclass
class TrainConfig:
    epochs: int = 20
    cycle: int = 5
    lr_f: float = 5e-4
    lr_g: float = 5e-4
    alpha: float = 1.0
    beta: float = 1e-3
    epsilon: float = DEFAULT_EPSILON
    batch_size: int = 64
    stop_loss: float = 1e-3
    seed: int = 0
    side_info: str = "labels"
    side_fusion: bool = True
    distort_surrogate: bool = True
    surrogate_arch: str = "cnn"
    surrogate_widths: tuple = (16, 32, 64)
    generator_widths: tuple = (32, 64, 128)
    bits: int = DEFAULT_BITS
    distortion: DistortionConfig = field(default_factory=DistortionConfig)

    def __post_init__(self):
        self.surrogate_widths = tuple(self.surrogate_widths)
        self.generator_widths = tuple(self.generator_widths)
        if isinstance(self.distortion, dict):
            self.distortion = DistortionConfig.from_dict(self.distortion)
        for key in ("lr_f", "lr_g", "epsilon", "batch_size"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive", key=key)
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1", key="epochs")
        if self.cycle < 1:
            raise ConfigError("cycle must be >= 1", key="cycle")
        if self.side_info not in ("labels", "pseudo"):
            raise ConfigError("side_info must be 'labels' or 'pseudo'", key="side_info")

    def to_dict(self):
        d = asdict(self)
        d["surrogate_widths"] = list(self.surrogate_widths)
        d["generator_widths"] = list(self.generator_widths)
        d["distortion"] = self.distortion.to_dict()
        return d


def stage_for(epoch: int, cycle: int = 5) -> str:
    """'f' for a surrogate epoch, 'G' for a generator epoch (epochs count from 1)."""
    return "f" if (epoch - 1) % cycle == 0 else "G"


@dataclass
class TrainState:
    f: nn.Module
    G: GeneratorModel
    opt_f: torch.optim.Optimizer
    opt_g: torch.optim.Optimizer
    rng: torch.Generator
    epoch: int = 0
    history: list = field(default_factory=list)
    stopped_early: bool = False

    @classmethod
    def create(cls, cfg: TrainConfig, num_classes: int, in_channels: int = 3):
        if num_classes > 2 ** cfg.bits:
            raise ConfigError(f"{num_classes} classes do not fit in {cfg.bits} bits", key="bits")
        torch.manual_seed(cfg.seed)
        f = build_classifier(cfg.surrogate_arch, num_classes, in_channels, cfg.surrogate_widths)
        G = GeneratorModel(in_channels, cfg.generator_widths, cfg.bits, cfg.epsilon)
        return cls(f=f, G=G,
                   opt_f=torch.optim.Adam(f.parameters(), lr=cfg.lr_f, betas=(0.9, 0.999), eps=1e-8),
                   opt_g=torch.optim.Adam(G.parameters(), lr=cfg.lr_g, betas=(0.9, 0.999), eps=1e-8),
                   rng=torch.Generator().manual_seed(cfg.seed))


def _ce(logits, target):
    return F.cross_entropy(logits, target)


def perturbed_input(G, x, side_bits):
    return torch.clamp(x + G(x, side_bits), 0.0, 1.0)


def loss_f(f, G, x, side_bits, target, distortion=None):
    """CE(f(distort(x + clip(G(x, side)))), target); G is treated as constant."""
    with torch.no_grad():
        xp = perturbed_input(G, x, side_bits)
    if distortion is not None:
        xp = distortion(xp, target)
    return _ce(f(xp), target)


def loss_G(f, G, x, side_bits, target, alpha=1.0, beta=1e-3, distortion=None):
    """alpha * CE(f(distort(x + delta)), target) + beta * mean_i ||raw G(x_i)||_2."""
    raw = G.raw(x, side_bits)
    delta = clip_perturbation(raw, G.epsilon)
    xp = torch.clamp(x + delta, 0.0, 1.0)
    if distortion is not None:
        xp = distortion(xp, target)
    ce = _ce(f(xp), target)
    norm = raw.flatten(1).norm(dim=1).mean()
    return alpha * ce + beta * norm


def _frozen(module: nn.Module):
    class _Ctx:
        def __enter__(self):
            self.flags = [p.requires_grad for p in module.parameters()]
            for p in module.parameters():
                p.requires_grad_(False)

        def __exit__(self, *exc):
            for p, flag in zip(module.parameters(), self.flags):
                p.requires_grad_(flag)

    return _Ctx()


def _side_bits(cfg, side: SideInformation):
    bits = label_bits(side.labels, cfg.bits)
    return bits if cfg.side_fusion else torch.zeros_like(bits)


def _check_finite(loss, step, stage):
    v = float(loss.detach())
    if not math.isfinite(v):
        raise NonFiniteLossError(f"non-finite {stage} loss {v} at step {step}", step=step, value=v)


def _run_epoch(state: TrainState, data: ImageBatch, side: SideInformation, cfg: TrainConfig, stage: str):
    N = len(data)
    if N < cfg.batch_size:
        raise ArgumentError(f"dataset of {N} samples is smaller than one batch ({cfg.batch_size})")
    bits_all = _side_bits(cfg, side)
    target_all = side.labels
    maxiter = math.ceil(N / cfg.batch_size)
    perm = torch.randperm(N, generator=state.rng)
    f, G = state.f, state.G
    if stage == "f":
        f.train(), G.eval()
    else:
        f.eval(), G.train()

    def distort(xp, target):
        return apply_distortion(xp, target, f, cfg.distortion, state.rng)

    total, steps = 0.0, 0
    for i in range(maxiter):
        idx = perm[i * cfg.batch_size:(i + 1) * cfg.batch_size]
        x, bits, target = data.pixels[idx], bits_all[idx], target_all[idx]
        if stage == "f":
            with _frozen(G):
                loss = loss_f(f, G, x, bits, target, distort if cfg.distort_surrogate else None)
            _check_finite(loss, i, "surrogate")
            state.opt_f.zero_grad(set_to_none=True)
            loss.backward()
            state.opt_f.step()
        else:
            with _frozen(f):
                loss = loss_G(f, G, x, bits, target, cfg.alpha, cfg.beta, distort)
            _check_finite(loss, i, "generator")
            state.opt_g.zero_grad(set_to_none=True)
            loss.backward()
            state.opt_g.step()
        total += float(loss.detach()) * len(idx)
        steps += 1
    return total / N, steps


def train_surrogate_epoch(state, data, side, cfg):
    return _run_epoch(state, data, side, cfg, "f")


def train_generator_epoch(state, data, side, cfg):
    return _run_epoch(state, data, side, cfg, "G")


@torch.no_grad()
def full_set_loss(state: TrainState, data: ImageBatch, side: SideInformation, cfg: TrainConfig,
                  batch_size: int = 256):
    """Mean surrogate CE over the whole perturbed set, eval mode, no distortion.

    Also returns the largest |delta| seen, for the per-epoch budget check.
    """
    f, G = state.f, state.G
    modes = f.training, G.training
    f.eval(), G.eval()
    bits_all = _side_bits(cfg, side)
    total, max_delta = 0.0, 0.0
    for i in range(0, len(data), batch_size):
        x = data.pixels[i:i + batch_size]
        delta = G(x, bits_all[i:i + batch_size])
        max_delta = max(max_delta, float(delta.abs().max()))
        logits = f(torch.clamp(x + delta, 0.0, 1.0))
        total += float(F.cross_entropy(logits, side.labels[i:i + batch_size], reduction="sum"))
    f.train(modes[0]), G.train(modes[1])
    return total / len(data), max_delta


def param_digest(module: nn.Module) -> str:
    h = hashlib.sha256()
    for k, v in module.state_dict().items():
        h.update(k.encode())
        h.update(v.detach().cpu().numpy().tobytes())
    return h.hexdigest()


EvalFn = Callable[[TrainState, int], float]


def run_two_stage(data: ImageBatch, side: SideInformation, cfg: TrainConfig, num_classes: int,
                  eval_fn: Optional[EvalFn] = None, log: Optional[Callable[[dict], None]] = None,
                  state: Optional[TrainState] = None) -> TrainState:
    """Train surrogate and generator alternately; returns the final state.

    `eval_fn(state, epoch)` replaces the full-set loss measurement (used to stub the
    stopping rule in tests).
    """
    if len(data) == 0:
        raise ArgumentError("training set is empty")
    if len(side) != len(data):
        raise ArgumentError(f"{len(side)} guide labels for {len(data)} images")
    if int(side.labels.max()) >= num_classes:
        raise ArgumentError(f"guide label {int(side.labels.max())} >= num_classes {num_classes}")
    if state is None:
        state = TrainState.create(cfg, num_classes, data.pixels.shape[1])
    while state.epoch < cfg.epochs:
        epoch = state.epoch + 1
        stage = stage_for(epoch, cfg.cycle)
        train_loss, steps = _run_epoch(state, data, side, cfg, stage)
        eval_loss, max_delta = full_set_loss(state, data, side, cfg)
        if max_delta > cfg.epsilon:
            raise BudgetViolation(f"generator output {max_delta} exceeds epsilon {cfg.epsilon} at epoch {epoch}")
        if eval_fn is not None:
            eval_loss = float(eval_fn(state, epoch))
        if not math.isfinite(eval_loss):
            raise NonFiniteLossError(f"non-finite full-set loss at epoch {epoch}", step=epoch, value=eval_loss)
        state.epoch = epoch
        record = {"epoch": epoch, "stage": stage, "steps": steps, "train_loss": train_loss,
                  "full_set_loss": eval_loss, "max_delta": max_delta}
        state.history.append(record)
        if log is not None:
            log(record)
        if eval_loss < cfg.stop_loss:
            state.stopped_early = True
            break
    return state


def checkpoint_metadata(state: TrainState, cfg: TrainConfig, dataset_id: str) -> dict:
    return {"dataset": dataset_id, "epochs_run": state.epoch, "stopped_early": state.stopped_early,
            "seed": cfg.seed, "config": cfg.to_dict(), "history": state.history,
            "final_losses": state.history[-1] if state.history else None}


def save_run(state: TrainState, cfg: TrainConfig, ckpt_path, csv_path=None, dataset_id: str = "") -> str:
    ckpt_id = save_checkpoint(state.G, ckpt_path, checkpoint_metadata(state, cfg, dataset_id))
    if csv_path is not None:
        write_loss_csv(state.history, csv_path)
    return ckpt_id


def write_loss_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "stage", "steps", "train_loss", "full_set_loss", "max_delta"],
                           lineterminator="\n")
        w.writeheader()
        for rec in history:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in rec.items()})
