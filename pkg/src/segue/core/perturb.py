from __future__ import annotations

import torch

from segue.core.types import ImageBatch, Perturbation, QuantizationPolicy
from segue.errors import ArgumentError, BudgetViolation, DimensionError

# float32 slack for comparisons against epsilon + one quantization step
_ATOL = 1e-6


def budget_bound(epsilon: float, dtype=torch.float32) -> torch.Tensor:
    """Largest value of `dtype` that does not exceed epsilon (float32(8/255) rounds up)."""
    bound = torch.tensor(epsilon, dtype=dtype)
    if float(bound) > epsilon:
        bound = torch.nextafter(bound, torch.zeros((), dtype=dtype))
    return bound


def clip_perturbation(delta: torch.Tensor, epsilon: float) -> torch.Tensor:
    if epsilon <= 0:
        raise ArgumentError("epsilon must be positive")
    bound = budget_bound(epsilon, delta.dtype if delta.is_floating_point() else torch.float64)
    return torch.clamp(delta, -bound, bound)


def max_deviation(clean: torch.Tensor, perturbed: torch.Tensor) -> torch.Tensor:
    """Per-image L-inf distance, shape [N]."""
    if clean.shape != perturbed.shape:
        raise DimensionError(f"shape mismatch {tuple(clean.shape)} vs {tuple(perturbed.shape)}")
    if clean.shape[0] == 0:
        return torch.zeros(0)
    return (perturbed - clean).abs().flatten(1).amax(dim=1)


def apply_and_quantize(batch: ImageBatch, pert: Perturbation,
                       policy: QuantizationPolicy = QuantizationPolicy()) -> ImageBatch:
    """Add the perturbation, clamp to [0, 1] and snap to the quantization grid.

    Raises BudgetViolation if the quantized result drifts from quantize(x) by more than
    epsilon plus one quantization step.
    """
    if batch.pixels.shape != pert.delta.shape:
        raise DimensionError(
            f"perturbation shape {tuple(pert.delta.shape)} does not match batch {tuple(batch.pixels.shape)}"
        )
    if not pert.max_abs <= pert.epsilon:
        raise BudgetViolation(f"perturbation max {pert.max_abs} exceeds epsilon {pert.epsilon}")
    out = policy.quantize(torch.clamp(batch.pixels + pert.delta, 0.0, 1.0))
    dev = max_deviation(policy.quantize(batch.pixels), out)
    limit = pert.epsilon + policy.step
    if dev.numel() and float(dev.max()) > limit + _ATOL:
        raise BudgetViolation(f"quantized deviation {float(dev.max())} exceeds {limit}")
    return batch.with_pixels(out)
