from segue.core.dataset import export_unlearnable, load_dataset, read_manifest, write_dataset
from segue.core.perturb import apply_and_quantize, clip_perturbation, max_deviation
from segue.core.types import DEFAULT_EPSILON, Dataset, ImageBatch, Perturbation, QuantizationPolicy

__all__ = [
    "DEFAULT_EPSILON", "Dataset", "ImageBatch", "Perturbation", "QuantizationPolicy",
    "apply_and_quantize", "clip_perturbation", "export_unlearnable", "load_dataset",
    "max_deviation", "read_manifest", "write_dataset",
]
