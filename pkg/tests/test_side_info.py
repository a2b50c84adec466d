from itertools import permutations

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from segue.core.types import ImageBatch
from segue.errors import ArgumentError, DimensionError, EncodingError
from segue.models import SmallCNN
from segue.side_info import (FeatureExtractor, SideInformation, clustering_accuracy, clustering_accuracy_bruteforce,
                             embedding_to_channels, encode_label, extract_features, kmeans_cluster, label_bits,
                             pseudo_labels)


def _binary_oracle(y, bits):
    # repeated division, most significant digit first
    digits = []
    for _ in range(bits):
        digits.append(y % 2)
        y //= 2
    return tuple(reversed(digits))


@pytest.mark.parametrize("y,expected", [(0, (0,) * 16), (5, (0,) * 13 + (1, 0, 1)), (65535, (1,) * 16)])
def test_encode_label_examples(y, expected):
    assert encode_label(y).bits == expected


@given(st.integers(0, 2 ** 16 - 1))
def test_encode_decode_roundtrip(y):
    emb = encode_label(y)
    assert emb.bits == _binary_oracle(y, 16)
    assert emb.decode() == y


def test_encode_out_of_range():
    with pytest.raises(EncodingError):
        encode_label(65536)
    with pytest.raises(EncodingError):
        encode_label(-1)
    with pytest.raises(EncodingError):
        label_bits(torch.tensor([0, 70000]))


def test_label_bits_matches_scalar_encoder():
    ys = torch.tensor([0, 1, 2, 9, 1023, 65535])
    bits = label_bits(ys)
    for y, row in zip(ys.tolist(), bits):
        assert tuple(int(v) for v in row) == encode_label(y).bits


def test_channels_are_constant_planes():
    ch = embedding_to_channels(encode_label(5), (4, 3))
    assert ch.shape == (16, 4, 3)
    assert torch.equal(ch[:, 0, 0], torch.tensor(encode_label(5).bits, dtype=torch.float32))
    assert (ch == ch[:, :1, :1]).all()
    side = SideInformation(torch.tensor([5, 2]))
    assert torch.equal(side.channels((4, 3))[0], ch)


def _blobs(K=10, per=30, dim=8, sep=6.0, seed=0):
    rng = np.random.default_rng(seed)
    # centres on scaled axes keep every pair at least `sep` standard deviations apart
    centres = np.zeros((K, max(dim, K)))
    centres[np.arange(K), np.arange(K)] = sep / np.sqrt(2)
    X = np.concatenate([c + rng.standard_normal((per, centres.shape[1])) for c in centres])
    return X, np.repeat(np.arange(K), per)


def test_kmeans_recovers_separated_clusters():
    X, y = _blobs(sep=12.0)
    a = kmeans_cluster(X, 10, seed=0)
    assert clustering_accuracy(a.labels, y, 10) == 1.0
    assert len(a.labels) == len(X) and a.K == 10


def test_kmeans_inertia_non_increasing():
    X, _ = _blobs(sep=3.0, seed=1)
    h = kmeans_cluster(X, 10, seed=2, n_init=1).inertia_history
    assert all(b <= a * (1 + 1e-9) for a, b in zip(h, h[1:]))


def test_kmeans_deterministic_and_non_empty():
    X, _ = _blobs(sep=2.0, seed=3)
    a, b = kmeans_cluster(X, 10, seed=7), kmeans_cluster(X, 10, seed=7)
    assert np.array_equal(a.labels, b.labels)
    assert (np.bincount(a.labels, minlength=10) > 0).all()


def test_kmeans_duplicate_points_keep_clusters_non_empty():
    X = np.zeros((12, 2))
    X[6:] = 1.0
    a = kmeans_cluster(X, 4, seed=0)
    assert (np.bincount(a.labels, minlength=4) > 0).all()


def test_kmeans_too_few_points():
    with pytest.raises(ArgumentError):
        kmeans_cluster(np.zeros((3, 2)), 5)


@given(st.lists(st.integers(0, 3), min_size=1, max_size=30), st.randoms(use_true_random=False))
@settings(max_examples=100, deadline=None)
def test_hungarian_matches_bruteforce(pseudo, r):
    truth = [r.randrange(4) for _ in pseudo]
    assert clustering_accuracy(pseudo, truth, 4) == pytest.approx(clustering_accuracy_bruteforce(pseudo, truth, 4))


def test_clustering_accuracy_permutation_invariant():
    truth = np.repeat(np.arange(5), 4)
    for perm in list(permutations(range(5)))[:20]:
        assert clustering_accuracy(np.asarray(perm)[truth], truth, 5) == 1.0


def test_clustering_accuracy_shape_mismatch():
    with pytest.raises(DimensionError):
        clustering_accuracy([0, 1], [0], 2)


def test_feature_extractor_and_pseudo_labels():
    torch.manual_seed(0)
    ex = FeatureExtractor(SmallCNN(3), (3, 16, 16), {"training_dataset": "none"})
    assert "checkpoint_sha256" in ex.provenance
    assert all(not p.requires_grad for p in ex.model.parameters())
    x = ImageBatch(torch.rand(12, 3, 16, 16))
    f = extract_features(ex, x)
    assert f.shape == (12, ex.feature_dim)
    a = pseudo_labels(ex, x, 3, seed=0)
    assert set(a.labels.tolist()) == {0, 1, 2}
    with pytest.raises(DimensionError):
        extract_features(ex, ImageBatch(torch.rand(2, 3, 8, 8)))
