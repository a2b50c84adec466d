import numpy as np
import pytest
import torch

from segue.core.types import ImageBatch
from segue.synthetic import make_fixture


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def tiny_batch():
    gen = torch.Generator().manual_seed(0)
    x = torch.round(torch.rand(6, 3, 16, 16, generator=gen) * 255) / 255
    return ImageBatch(x, torch.tensor([0, 1, 2, 0, 1, 2]))


@pytest.fixture(scope="session")
def small_fixture(tmp_path_factory):
    """3 classes, 12 train / 4 test per class, 16x16: enough to exercise I/O paths quickly."""
    out = tmp_path_factory.mktemp("small")
    return make_fixture(out, num_classes=3, n_train=12, n_test=4, seed=3, size=16)


@pytest.fixture(scope="session")
def small_unlabeled(tmp_path_factory):
    out = tmp_path_factory.mktemp("small_unlabeled")
    return make_fixture(out, num_classes=3, n_train=12, n_test=4, seed=4, size=16, labeled=False)


def rng(seed=0):
    return np.random.default_rng(seed)


def pytest_terminal_summary(terminalreporter):
    from acceptance_registry import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        passed, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
