import json
import math

import numpy as np
import pytest
import torch
from skimage.metrics import structural_similarity
from torch import nn

from segue.core import ImageBatch, load_dataset
from segue.errors import ConfigError, DatasetIOError, DimensionError
from segue.evaluation import (EvalReport, ExperimentSpec, FeatureMSE, clean_test_accuracy, cutmix, cutout,
                              efficiency_benchmark, fit_attacker, jpeg_batch, jpeg_preprocess,
                              linear_separability_probe, mixup, psnr, psnr_per_image, ssim, ssim_per_image,
                              train_attacker)
from segue.evaluation.augment import apply_augmentations
from segue.evaluation.metrics import CallableMetric
from segue.evaluation.plots import plot_accuracy_vs_quality
from segue.models import SmallCNN
from segue.side_info import FeatureExtractor


def test_cutout_full_length_zeroes_image():
    x = torch.rand(2, 3, 8, 8)
    assert float(cutout(x, torch.Generator(), n_patches=1, length=8).abs().max()) == 0


def test_cutout_default_zeroes_at_most_half_area_patches():
    x = torch.ones(4, 3, 8, 8)
    out = cutout(x, torch.Generator().manual_seed(0))
    zeros = (out == 0).flatten(1).float().mean(1)
    assert ((zeros >= 0.25) & (zeros <= 0.5)).all()


def test_cutout_rejects_long_patch():
    from segue.errors import ArgumentError
    with pytest.raises(ArgumentError):
        cutout(torch.rand(1, 3, 8, 8), torch.Generator(), length=9)


def test_mixup_endpoint_and_label_mass():
    x, y = torch.rand(4, 3, 8, 8), torch.eye(4)
    xm, ym = mixup(x, y, torch.Generator(), lam=1.0)
    assert torch.equal(xm, x) and torch.equal(ym, y)
    xm, ym = mixup(x, y, torch.Generator().manual_seed(1))
    assert torch.allclose(ym.sum(1), torch.ones(4))


def test_cutmix_area_weights_fixed_geometry():
    x = torch.zeros(2, 1, 8, 8)
    x[1] = 1.0
    y = torch.eye(2)
    boxes = torch.tensor([[[0, 0], [2, 2]], [[4, 4], [4, 4]]])
    xm, ym = cutmix(x, y, None, n_patches=2, length=4, boxes=boxes, perm=torch.tensor([1, 0]))
    # image 0: two overlapping 4x4 squares cover 16 + 16 - 4 = 28 of 64 pixels
    a0 = 28 / 64
    assert float(xm[0].mean()) == pytest.approx(a0)
    assert torch.allclose(ym[0], torch.tensor([1 - a0, a0]))
    a1 = 16 / 64
    assert torch.allclose(ym[1], torch.tensor([a1, 1 - a1]))


def test_augmentations_stay_in_range():
    x, y = torch.rand(8, 3, 8, 8), torch.eye(8)
    out, ym = apply_augmentations(x, y, ("gaussian_blur", "cutout", "cutmix", "mixup"), torch.Generator())
    assert 0 <= float(out.min()) and float(out.max()) <= 1
    assert torch.allclose(ym.sum(1), torch.ones(8))


def test_psnr_examples():
    a = torch.rand(2, 3, 8, 8) * 0.5 + 0.25
    assert psnr(a, a) == math.inf
    assert psnr(a, a + 8 / 255) == pytest.approx(20 * math.log10(255 / 8), abs=1e-6)
    assert torch.isinf(psnr_per_image(a, a)).all()
    with pytest.raises(DimensionError):
        psnr(a, a[:1])


def test_ssim_identical_is_exactly_one():
    a = torch.rand(2, 3, 16, 16)
    assert ssim(a, a) == 1.0
    assert torch.equal(ssim_per_image(torch.zeros(1, 3, 16, 16), torch.zeros(1, 3, 16, 16)), torch.ones(1).double())


def test_ssim_matches_skimage():
    rng = np.random.default_rng(0)
    a = rng.random((3, 24, 24))
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                data_range=1.0, channel_axis=0)
    assert ssim(torch.from_numpy(a), torch.from_numpy(b)) == pytest.approx(ref, abs=1e-9)


def test_perceptual_interfaces():
    torch.manual_seed(0)
    ex = FeatureExtractor(SmallCNN(3), (3, 16, 16))
    m = FeatureMSE(ex)
    a = torch.rand(2, 3, 16, 16)
    assert m(a, a) == 0.0 and m(a, 1 - a) > 0
    ext = CallableMetric(lambda p, q: (p - q).abs().mean(), "l1")
    assert ext(a, a) == 0.0 and ext.name == "l1"


class _Lookup(nn.Module):
    """Predicts the class written into pixel (0, 0, 0) as label / 10."""

    def __init__(self, K=10, perm=None):
        super().__init__()
        self.K, self.perm = K, perm

    def forward(self, x):
        y = torch.round(x[:, 0, 0, 0] * 10).long()
        if self.perm is not None:
            y = self.perm[y]
        return torch.nn.functional.one_hot(y, self.K).float()


def _labelled_images(K=10, per=5):
    y = torch.arange(K).repeat(per)
    x = torch.zeros(len(y), 3, 8, 8)
    x[:, 0, 0, 0] = y / 10
    return ImageBatch(x, y)


def test_clean_test_accuracy_cases():
    test = _labelled_images()
    assert clean_test_accuracy(_Lookup(), test) == 1.0

    class Constant(nn.Module):
        def forward(self, x):
            return torch.zeros(len(x), 10)

    # ties resolve to class 0, which holds a tenth of the balanced set
    assert clean_test_accuracy(Constant(), test) == pytest.approx(0.1)
    perm = torch.tensor([0, 2, 1, 3, 5, 4, 6, 9, 8, 7])
    fixed = int((perm == torch.arange(10)).sum())
    assert clean_test_accuracy(_Lookup(perm=perm), test) == pytest.approx(fixed / 10)
    with pytest.raises(DimensionError):
        clean_test_accuracy(_Lookup(K=10), test, num_classes=5)


def test_probe_cases():
    y = torch.arange(10).repeat(20)
    consts = torch.randn(10, 3, 8, 8) * (8 / 255)
    assert linear_separability_probe(consts[y], y) == 1.0
    assert linear_separability_probe(torch.zeros(4, 5), torch.tensor([0, 0, 0, 1])) == 0.75
    gen = torch.Generator().manual_seed(0)
    noise = (torch.rand(2000, 3, 32, 32, generator=gen) * 2 - 1) * (8 / 255)
    acc = linear_separability_probe(noise, torch.randint(0, 10, (2000,), generator=gen), 10)
    assert abs(acc - 0.1) <= 0.1


def test_jpeg_quality_and_split_handling(small_fixture):
    ds = load_dataset(small_fixture)
    q100 = jpeg_preprocess(ds, 100)
    assert psnr(ds.train.pixels, q100.train.pixels) >= 40
    assert torch.equal(q100.test.pixels, ds.test.pixels)
    values = [psnr(ds.train.pixels, jpeg_batch(ds.train, q).pixels) for q in (90, 70, 50, 30, 10)]
    assert all(b <= a for a, b in zip(values, values[1:]))
    out = jpeg_batch(ds.train, 10).pixels
    assert 0 <= float(out.min()) and float(out.max()) <= 1
    with pytest.raises(ConfigError):
        jpeg_batch(ds.train, 0)


def _separable_toy(n=64, seed=0):
    gen = torch.Generator().manual_seed(seed)
    y = torch.arange(n) % 2
    x = torch.rand(n, 3, 8, 8, generator=gen) * 0.2
    x[y == 1] += 0.7
    return ImageBatch(x, y)


def test_fit_attacker_separable_and_deterministic():
    train, test = _separable_toy(), _separable_toy(seed=1)
    spec = ExperimentSpec(arch="cnn", epochs=5, lr=1e-2, batch_size=16, widths=(4, 4, 4))
    _, r1 = fit_attacker(train, test, 2, spec)
    _, r2 = fit_attacker(train, test, 2, spec)
    assert r1.final_test_accuracy == 1.0
    assert r1.to_dict() == r2.to_dict()
    assert [c["epoch"] for c in r1.curves] == [1, 2, 3, 4, 5]


def test_fit_attacker_adversarial_and_augmented_paths():
    train, test = _separable_toy(), _separable_toy(seed=1)
    before = test.pixels.clone()
    spec = ExperimentSpec(arch="dwsep", epochs=1, batch_size=16, widths=(4, 4, 4), rho_a=2 / 255,
                          augmentations=("mixup", "cutout", "cutmix", "gaussian_blur"))
    _, r = fit_attacker(train, test, 2, spec)
    assert 0 <= r.final_test_accuracy <= 1
    assert torch.equal(test.pixels, before)


def test_spec_validation_and_hash(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentSpec(rho_a=-0.1).validate(check_paths=False)
    with pytest.raises(ConfigError):
        ExperimentSpec(arch="vgg").validate(check_paths=False)
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict({"augmentations": ["rotate"]})
    with pytest.raises(DatasetIOError):
        ExperimentSpec(dataset_ref=str(tmp_path / "nope.json")).validate()
    assert ExperimentSpec(seed=1).spec_hash() != ExperimentSpec(seed=2).spec_hash()
    assert ExperimentSpec(augmentations=("mixup", "cutout")).augmentations == ("cutout", "mixup")


def test_train_attacker_on_fixture_and_report_files(small_fixture, tmp_path):
    spec = ExperimentSpec(dataset_ref=str(small_fixture), arch="cnn", epochs=1, batch_size=12, widths=(4, 4, 4))
    _, report = train_attacker(spec)
    path = report.save(tmp_path / "report.json")
    doc = json.loads(path.read_text())
    assert "timings" not in doc and doc["spec_hash"] == spec.spec_hash()
    assert json.loads((tmp_path / "report.timings.json").read_text())["train_seconds"] >= 0
    report.save_curves_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().startswith("epoch,train_loss,train_acc,test_acc\n1,")
    assert isinstance(report, EvalReport)


def test_efficiency_benchmark_empty_and_median():
    table = efficiency_benchmark({"noop": lambda: None}, runs=3)
    assert len(table["noop"]["runs"]) == 3 and table["noop"]["median_seconds"] < 0.01


def test_plot_written(tmp_path):
    p = plot_accuracy_vs_quality([90, 50, 10], {"segue": [0.1, 0.2, 0.3]}, tmp_path / "q.png")
    assert p.stat().st_size > 0
