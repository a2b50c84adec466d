"""Training-time distortion layer: adversarial step, blur, flips, sharpening."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F

from segue.errors import ConfigError

OPS = ("adversarial", "blur", "hflip", "vflip", "sharpness")


@dataclass
class DistortionConfig:
    rho_d: float = 1 / 255
    adv_steps: int = 1
    blur_kernel: tuple = (3, 3)
    blur_sigma: float = 0.2
    p_hflip: float = 0.1
    p_vflip: float = 0.1
    sharpness_factor: float = 2.0
    enabled_ops: frozenset = field(default_factory=lambda: frozenset(OPS))
    seed: int = 0

    def __post_init__(self):
        self.blur_kernel = tuple(self.blur_kernel)
        self.enabled_ops = frozenset(self.enabled_ops)
        if self.rho_d < 0:
            raise ConfigError("rho_d must be >= 0", key="rho_d")
        if not 1 <= self.adv_steps <= 10:
            raise ConfigError("adv_steps must be in 1..10", key="adv_steps")
        for key in ("p_hflip", "p_vflip"):
            if not 0 <= getattr(self, key) <= 1:
                raise ConfigError(f"{key} must be a probability", key=key)
        if any(k % 2 == 0 or k < 1 for k in self.blur_kernel):
            raise ConfigError("blur_kernel sizes must be odd", key="blur_kernel")
        unknown = self.enabled_ops - set(OPS)
        if unknown:
            raise ConfigError(f"unknown distortion ops {sorted(unknown)}", key="enabled_ops")

    @classmethod
    def identity(cls):
        return cls(rho_d=0.0, p_hflip=0.0, p_vflip=0.0, enabled_ops=frozenset())

    def to_dict(self):
        d = asdict(self)
        d["blur_kernel"] = list(self.blur_kernel)
        d["enabled_ops"] = [op for op in OPS if op in self.enabled_ops]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def adversarial_step(f, x: torch.Tensor, y: torch.Tensor, rho: float, steps: int = 1) -> torch.Tensor:
    """L-inf PGD ascent on cross-entropy: `steps` sign steps of rho/steps, projected and clamped.

    `y` may be class indices or a probability matrix. Runs `f` in eval mode and leaves
    its mode, parameters and gradients untouched. Returns a detached tensor.
    """
    if rho <= 0:
        return x.detach().clone()
    was_training = f.training
    f.eval()
    try:
        x0 = x.detach()
        adv = x0.clone()
        step = rho / steps
        for _ in range(steps):
            adv.requires_grad_(True)
            loss = F.cross_entropy(f(adv), y)
            (grad,) = torch.autograd.grad(loss, adv)
            adv = adv.detach() + step * grad.sign()
            adv = torch.clamp(torch.min(torch.max(adv, x0 - rho), x0 + rho), 0.0, 1.0)
    finally:
        f.train(was_training)
    return adv.detach()


def gaussian_kernel(size=(3, 3), sigma=0.2, dtype=torch.float32) -> torch.Tensor:
    kh, kw = size
    ys = torch.arange(kh, dtype=torch.float64) - (kh - 1) / 2
    xs = torch.arange(kw, dtype=torch.float64) - (kw - 1) / 2
    gy, gx = torch.exp(-ys ** 2 / (2 * sigma ** 2)), torch.exp(-xs ** 2 / (2 * sigma ** 2))
    k = gy[:, None] * gx[None, :]
    return (k / k.sum()).to(dtype)


def _filter(x, kernel):
    C = x.shape[1]
    kh, kw = kernel.shape
    w = kernel.to(x.dtype)[None, None].expand(C, 1, kh, kw)
    xp = F.pad(x, (kw // 2, kw // 2, kh // 2, kh // 2), mode="replicate")
    return F.conv2d(xp, w, groups=C)


def gaussian_blur(x: torch.Tensor, size=(3, 3), sigma=0.2) -> torch.Tensor:
    return _filter(x, gaussian_kernel(size, sigma))


# PIL / torchvision "smooth" kernel used by their sharpness enhancers
_SMOOTH = torch.tensor([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]]) / 13.0


def adjust_sharpness(x: torch.Tensor, factor: float) -> torch.Tensor:
    return torch.clamp(x + (factor - 1.0) * (x - _filter(x, _SMOOTH)), 0.0, 1.0)


def hflip(x):
    return torch.flip(x, dims=(-1,))


def vflip(x):
    return torch.flip(x, dims=(-2,))


def apply_distortion(x: torch.Tensor, y: torch.Tensor, f, cfg: DistortionConfig,
                     rng: torch.Generator) -> torch.Tensor:
    """Distort a batch in fixed order: adversarial, blur, hflip, vflip, sharpness.

    Differentiable in `x` (the adversarial offset is treated as a constant), so the
    generator receives gradients through the layer. Flip decisions are per batch.
    """
    ops = cfg.enabled_ops
    # draw both coins unconditionally so the random stream does not depend on enabled ops
    coins = torch.rand(2, generator=rng)
    if "adversarial" in ops and cfg.rho_d > 0:
        adv = adversarial_step(f, x, y, cfg.rho_d, cfg.adv_steps)
        x = x + (adv - x).detach()
    if "blur" in ops:
        x = gaussian_blur(x, cfg.blur_kernel, cfg.blur_sigma)
    if "hflip" in ops and coins[0] < cfg.p_hflip:
        x = hflip(x)
    if "vflip" in ops and coins[1] < cfg.p_vflip:
        x = vflip(x)
    if "sharpness" in ops:
        x = adjust_sharpness(x, cfg.sharpness_factor)
    return torch.clamp(x, 0.0, 1.0)
