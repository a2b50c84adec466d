"""Image-quality metrics and classifier accuracy."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from segue.core.types import ImageBatch
from segue.distortion import gaussian_kernel
from segue.errors import DimensionError

PSNR_IDENTICAL = math.inf


def _same_shape(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _as4d(t):
    return t[None] if t.dim() == 3 else t


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """PSNR in dB with peak 1 over all elements; identical inputs give +inf."""
    _same_shape(a, b)
    mse = float(((a.double() - b.double()) ** 2).mean())
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(1.0 / mse)


def psnr_per_image(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _same_shape(a, b)
    a, b = _as4d(a).double(), _as4d(b).double()
    mse = ((a - b) ** 2).flatten(1).mean(1)
    out = torch.full_like(mse, PSNR_IDENTICAL)
    nz = mse > 0
    out[nz] = 10.0 * torch.log10(1.0 / mse[nz])
    return out


def ssim_per_image(a: torch.Tensor, b: torch.Tensor, window=11, sigma=1.5, c1=0.01 ** 2, c2=0.03 ** 2):
    """Gaussian-windowed SSIM over valid windows, averaged over windows and channels."""
    _same_shape(a, b)
    a, b = _as4d(a).double(), _as4d(b).double()
    N, C, H, W = a.shape
    if H < window or W < window:
        raise DimensionError(f"SSIM window {window} larger than image {H}x{W}")
    k = gaussian_kernel((window, window), sigma, torch.float64)[None, None].expand(C, 1, window, window)

    def filt(t):
        return F.conv2d(t, k, groups=C)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    out = s.flatten(1).mean(1)
    # exact 1.0 for identical inputs, independent of rounding in the filtered moments
    same = (a == b).flatten(1).all(1)
    out[same] = 1.0
    return out


def ssim(a, b, **kw) -> float:
    return float(ssim_per_image(a, b, **kw).mean())


class PerceptualMetric:
    """Distance between image batches; lower is closer. Subclass or wrap a callable."""

    name = "perceptual"

    def __call__(self, a: torch.Tensor, b: torch.Tensor) -> float:
        raise NotImplementedError


class FeatureMSE(PerceptualMetric):
    """Mean squared distance between embeddings of a frozen feature extractor."""

    name = "feature_mse"

    def __init__(self, extractor):
        self.extractor = extractor

    def __call__(self, a, b):
        _same_shape(a, b)
        fa, fb = self.extractor(_as4d(a)), self.extractor(_as4d(b))
        return float(((fa.double() - fb.double()) ** 2).mean())


class CallableMetric(PerceptualMetric):
    """Adapter for an external metric, e.g. a pretrained LPIPS network."""

    def __init__(self, fn, name="external"):
        self.fn, self.name = fn, name

    def __call__(self, a, b):
        _same_shape(a, b)
        return float(self.fn(a, b))


@torch.no_grad()
def predict(model, x: torch.Tensor, batch_size=256) -> torch.Tensor:
    was = model.training
    model.eval()
    try:
        # argmax returns the first maximal index, so ties go to the lowest class
        return torch.cat([model(x[i:i + batch_size]).argmax(1) for i in range(0, len(x), batch_size)]) \
            if len(x) else torch.zeros(0, dtype=torch.long)
    finally:
        model.train(was)


def clean_test_accuracy(model, test: ImageBatch, num_classes=None) -> float:
    if test.labels is None:
        raise DimensionError("test split has no labels")
    if len(test) == 0:
        return 0.0
    pred = predict(model, test.pixels)
    if num_classes is not None:
        with torch.no_grad():
            k = model(test.pixels[:1]).shape[1]
        if k != num_classes:
            raise DimensionError(f"model outputs {k} classes, expected {num_classes}")
    return float((pred == test.labels).double().mean())


def image_quality(clean: torch.Tensor, perturbed: torch.Tensor, perceptual: PerceptualMetric = None) -> dict:
    p = psnr_per_image(clean, perturbed)
    block = {"psnr_mean": float(p.mean()), "psnr_min": float(p.min()),
             "ssim_mean": float(ssim_per_image(clean, perturbed).mean())}
    if perceptual is not None:
        block[perceptual.name] = perceptual(clean, perturbed)
    return block
