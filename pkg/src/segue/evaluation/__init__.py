from segue.evaluation.attacker import (EvalReport, ExperimentSpec, fit_attacker, jpeg_batch, jpeg_preprocess,
                                       train_attacker)
from segue.evaluation.augment import cutmix, cutout, mixup
from segue.evaluation.bench import efficiency_benchmark
from segue.evaluation.metrics import (FeatureMSE, PerceptualMetric, clean_test_accuracy, psnr, psnr_per_image,
                                      ssim, ssim_per_image)
from segue.evaluation.probe import linear_separability_probe

__all__ = [
    "EvalReport", "ExperimentSpec", "FeatureMSE", "PerceptualMetric", "clean_test_accuracy", "cutmix", "cutout",
    "efficiency_benchmark", "fit_attacker", "jpeg_batch", "jpeg_preprocess", "linear_separability_probe", "mixup",
    "psnr", "psnr_per_image", "ssim", "ssim_per_image", "train_attacker",
]
