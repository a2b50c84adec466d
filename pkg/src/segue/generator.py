"""Encoder / side-information fusion / decoder network that emits bounded perturbations."""
from __future__ import annotations

import datetime as _dt
from pathlib import Path

import torch
from torch import nn

from segue.core.container import read_container, write_container
from segue.core.dataset import export_unlearnable
from segue.core.perturb import apply_and_quantize, clip_perturbation
from segue.core.types import DEFAULT_EPSILON, Dataset, ImageBatch, Perturbation, QuantizationPolicy
from segue.errors import ArgumentError, CheckpointError, DimensionError
from segue.side_info import DEFAULT_BITS, PseudoLabelAssignment, SideInformation, label_bits

CHECKPOINT_KIND = "segue-generator"
CHECKPOINT_VERSION = 1


def _block(cin, cout, stride=1):
    return [nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False), nn.BatchNorm2d(cout), nn.ReLU(inplace=True)]


class GeneratorModel(nn.Module):
    def __init__(self, in_channels=3, widths=(32, 64, 128), bits=DEFAULT_BITS, epsilon=DEFAULT_EPSILON):
        super().__init__()
        if epsilon <= 0:
            raise ArgumentError("epsilon must be positive")
        self.in_channels, self.widths, self.bits, self.epsilon = in_channels, tuple(widths), bits, float(epsilon)
        enc, cin = [], in_channels
        for w in self.widths:
            enc += _block(cin, w, stride=2)
            cin = w
        self.encoder = nn.Sequential(*enc)
        self.fusion = nn.Sequential(*_block(cin + bits, cin))
        # mirror of the encoder: widths step back down and the last stage emits image channels
        dec = []
        for w in reversed(self.widths[:-1]):
            dec += [nn.Upsample(scale_factor=2, mode="nearest")] + _block(cin, w)
            cin = w
        self.decoder = nn.Sequential(*dec, nn.Upsample(scale_factor=2, mode="nearest"))
        self.head = nn.Conv2d(cin, in_channels, 3, padding=1)

    @property
    def config(self):
        return {"in_channels": self.in_channels, "widths": list(self.widths), "bits": self.bits,
                "epsilon": self.epsilon}

    def _check(self, x, side):
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise DimensionError(f"expected [N, {self.in_channels}, H, W] input, got {tuple(x.shape)}")
        m = 2 ** len(self.widths)
        if x.shape[2] % m or x.shape[3] % m:
            raise DimensionError(f"H and W must be divisible by {m}, got {tuple(x.shape[2:])}")
        if side.shape != (x.shape[0], self.bits):
            raise DimensionError(f"side information must be [N, {self.bits}], got {tuple(side.shape)}")

    def raw(self, x: torch.Tensor, side_bits: torch.Tensor) -> torch.Tensor:
        """Pre-clip output: eps * tanh(decoder(...)). `side_bits` is [N, bits] of 0/1."""
        self._check(x, side_bits)
        h = self.encoder(x)
        planes = side_bits.to(h.dtype)[:, :, None, None].expand(-1, -1, h.shape[2], h.shape[3])
        h = self.fusion(torch.cat([h, planes], dim=1))
        return self.epsilon * torch.tanh(self.head(self.decoder(h)))

    def forward(self, x, side_bits):
        return clip_perturbation(self.raw(x, side_bits), self.epsilon)


def _side_bits(side, n, bits):
    if isinstance(side, SideInformation):
        labels = side.labels
    elif isinstance(side, PseudoLabelAssignment):
        labels = torch.as_tensor(side.labels)
    else:
        labels = torch.as_tensor(side)
    if len(labels) != n:
        raise DimensionError(f"{len(labels)} guide labels for {n} images")
    return label_bits(labels, bits)


@torch.no_grad()
def generate_perturbation(G: GeneratorModel, x: ImageBatch, side, epsilon: float | None = None,
                          batch_size: int = 256) -> Perturbation:
    """delta = clip(G(x, embed(side)), -eps, eps) in inference mode."""
    eps = G.epsilon if epsilon is None else float(epsilon)
    bits = _side_bits(side, len(x), G.bits)
    was_training = G.training
    G.eval()
    try:
        if len(x) == 0:
            delta = torch.zeros_like(x.pixels)
        else:
            delta = torch.cat([G(x.pixels[i:i + batch_size], bits[i:i + batch_size])
                               for i in range(0, len(x), batch_size)])
    finally:
        G.train(was_training)
    return Perturbation(clip_perturbation(delta, eps), eps)


def protect_dataset(G: GeneratorModel, dataset: Dataset, side_source, out_dir, *,
                    checkpoint_id: str | None = None, epsilon: float | None = None,
                    policy: QuantizationPolicy = QuantizationPolicy(), extra: dict | None = None) -> Path:
    """Perturb the train split guided by true labels ("labels") or a pseudo-label assignment, then export."""
    if isinstance(side_source, str):
        if side_source != "labels":
            raise ArgumentError(f"unknown side source {side_source!r}")
        if not dataset.labeled:
            raise ArgumentError("dataset has no labels; use pseudo labels")
        side = SideInformation(dataset.train.labels, "labels", G.bits)
    elif isinstance(side_source, PseudoLabelAssignment):
        if len(side_source.labels) != len(dataset.train):
            raise ArgumentError(f"assignment covers {len(side_source.labels)} of {len(dataset.train)} samples")
        side = SideInformation(torch.as_tensor(side_source.labels), "pseudo", G.bits)
    else:
        side = side_source
    pert = generate_perturbation(G, dataset.train, side, epsilon)
    perturbed = apply_and_quantize(dataset.train, pert, policy)
    info = {"side_information": side.kind}
    info.update(extra or {})
    return export_unlearnable(dataset, perturbed, out_dir, epsilon=pert.epsilon,
                              generator_checkpoint=checkpoint_id, policy=policy, extra=info)


def _fixture_input(G: GeneratorModel, n=4, size=16):
    gen = torch.Generator().manual_seed(1234)
    x = torch.rand(n, G.in_channels, size, size, generator=gen)
    labels = torch.arange(n) % (2 ** G.bits)
    return x, label_bits(labels, G.bits)


def save_checkpoint(G: GeneratorModel, path, metadata: dict | None = None) -> str:
    """Write a checkpoint; returns its id (digest of the parameter blob)."""
    x, bits = _fixture_input(G)
    was_training = G.training
    G.eval()
    with torch.no_grad():
        y = G(x, bits)
    G.train(was_training)
    tensors = {f"param/{k}": v for k, v in G.state_dict().items()}
    tensors["fixture/input"] = x
    tensors["fixture/output"] = y
    header = {"architecture": G.config, "epsilon": G.epsilon, "bits": G.bits,
              "metadata": metadata or {},
              "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}
    return write_container(path, CHECKPOINT_KIND, CHECKPOINT_VERSION, tensors, header)


def load_checkpoint(path, verify: bool = True):
    """Return (GeneratorModel in eval mode, header). Verifies the embedded fixture pair."""
    header, tensors = read_container(path, CHECKPOINT_KIND, CHECKPOINT_VERSION)
    arch = header["architecture"]
    G = GeneratorModel(arch["in_channels"], arch["widths"], arch["bits"], arch["epsilon"])
    state = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    try:
        G.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameters do not match architecture: {exc}") from exc
    G.eval()
    if verify:
        x, bits = _fixture_input(G)
        with torch.no_grad():
            y = G(x, bits)
        # exact on the writing machine; tolerance absorbs thread-count reduction order
        if not torch.allclose(y, tensors["fixture/output"], rtol=0, atol=1e-6):
            raise CheckpointError(f"{path}: fixture forward pass does not reproduce")
    header["id"] = header["blob_sha256"]
    return G, header
