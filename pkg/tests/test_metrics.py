import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import kendalltau
from sklearn.metrics import silhouette_score

from oracles import kendall_pairs, silhouette_direct
from shapespace.errors import DataError, EvaluationError, ValidationError
from shapespace.layers import sigmoid_cross_entropy
from shapespace.mds import TargetSpace, classical_mds, normalize_space, pairwise_distances
from shapespace.metrics import (TABLE2_COLUMNS, accuracy, feature_space_tau, kendall_tau, mapping_metrics,
                                reconstruction_error, silhouette_cosine, write_table, zero_baseline_med)
from shapespace.model import build_network


# -- mapping metrics -----------------------------------------------------

def test_perfect_prediction(rng):
    y = rng.normal(size=(5, 3))
    m = mapping_metrics(y, y, baseline_med=2.0)
    assert (m.mse, m.med, m.relative_med, m.r2) == (0.0, 0.0, 0.0, 1.0)


def test_three_four_five():
    m = mapping_metrics([[0.0, 0.0]], [[3.0, 4.0]])
    assert m.med == 5.0 and m.mse == 12.5


@given(st.integers(1, 10), st.integers(0, 2 ** 31 - 1))
def test_zero_predictor_on_normalized_space(dim, seed):
    truth = normalize_space(TargetSpace(np.random.default_rng(seed).normal(size=(20, dim)))).coords
    base = zero_baseline_med(truth)
    m = mapping_metrics(np.zeros_like(truth), truth, baseline_med=base)
    assert abs(m.mse - 1.0) < 1e-12 and abs(m.r2) < 1e-12 and m.relative_med == 1.0
    pred = truth + np.random.default_rng(seed + 1).normal(size=truth.shape)
    m = mapping_metrics(pred, truth)
    assert m.r2 == pytest.approx(1.0 - m.mse, abs=1e-12)


def test_mean_reference_and_errors(rng):
    truth = rng.normal(size=(10, 2)) + 5
    m = mapping_metrics(np.tile(truth.mean(axis=0), (10, 1)), truth, reference="mean")
    assert abs(m.r2) < 1e-12
    with pytest.raises(ValidationError):
        mapping_metrics(np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(DataError):
        mapping_metrics(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(ValidationError):
        mapping_metrics(truth, truth, reference="median")


# -- accuracy ------------------------------------------------------------

def test_accuracy_examples():
    assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert accuracy([1, 2, 3], [0, 0, 0]) == 0.0
    src = ["a", "b", "a", "b"]
    assert accuracy([1, 0, 1, 1], [1, 1, 0, 1], src, "b") == 0.5
    with pytest.raises(DataError):
        accuracy([1], [1], ["a"], "b")


@pytest.mark.parametrize("k", [2, 5, 10])
def test_accuracy_chance_level(rng, k):
    acc = accuracy(rng.integers(0, k, 10_000), rng.integers(0, k, 10_000))
    assert abs(acc - 1 / k) <= 0.02


# -- Kendall's tau -------------------------------------------------------

def test_tau_examples():
    x = np.arange(10.0)
    assert kendall_tau(x, x ** 3) == 1.0
    assert kendall_tau(x, -x) == -1.0
    with pytest.raises(EvaluationError):
        kendall_tau(np.ones(5), x[:5])
    with pytest.raises(ValidationError):
        kendall_tau(x, x[:5])


def test_tau_matches_pair_count_oracle():
    rng = np.random.default_rng(0)
    for i in range(100):
        n = int(rng.integers(2, 51))
        # small integer ranges force ties on both sides
        x = rng.integers(0, 1 + i % 7 + 1, n).astype(float) if i % 2 else rng.normal(size=n)
        y = rng.integers(0, 4, n).astype(float) if i % 3 == 0 else rng.normal(size=n)
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            continue
        assert kendall_tau(x, y) == kendall_pairs(x, y)


def test_tau_length_forty_against_scipy():
    rng = np.random.default_rng(1)
    for _ in range(100):
        x, y = rng.normal(size=40), rng.integers(0, 6, 40).astype(float)
        assert kendall_tau(x, y) == pytest.approx(kendalltau(x, y).statistic, abs=1e-12)


@given(st.lists(st.integers(-5, 5), min_size=3, max_size=30), st.integers(0, 2 ** 31 - 1))
def test_tau_monotone_invariance(values, seed):
    x = np.array(values, dtype=float)
    y = np.random.default_rng(seed).normal(size=len(x))
    if np.ptp(x) == 0:
        return
    t = kendall_tau(x, y)
    assert -1.0 <= t <= 1.0
    assert kendall_tau(np.exp(x), 3 * y + 1) == t


def test_feature_space_tau_exact_embedding():
    pts = np.random.default_rng(2).normal(size=(12, 3))
    d = pairwise_distances(pts)
    coords = classical_mds(d, 3).coords
    assert feature_space_tau(coords, d) == pytest.approx(1.0, abs=1e-12)
    perm = np.random.default_rng(3).permutation(12)
    assert abs(feature_space_tau(coords[perm], d)) < 1.0
    with pytest.raises(EvaluationError):
        feature_space_tau(np.ones((12, 3)), d)


def test_feature_space_tau_null():
    taus = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        d = pairwise_distances(rng.normal(size=(20, 4)))
        taus.append(feature_space_tau(rng.normal(size=(20, 8)), d, "cosine" if seed % 2 else "euclidean"))
    assert abs(np.mean(taus)) < 0.1


# -- silhouette ----------------------------------------------------------

def test_silhouette_perfect_separation():
    f = np.array([[1.0, 0], [2.0, 0], [3.0, 0], [0, 1.0], [0, 5.0]])
    assert silhouette_cosine(f, [0, 0, 0, 1, 1]) == pytest.approx(1.0)


def test_silhouette_matches_direct_oracle():
    rng = np.random.default_rng(4)
    for _ in range(20):
        f = rng.normal(size=(50, 6))
        labels = rng.integers(0, 5, 50)
        if len(set(labels)) < 2:
            continue
        assert abs(silhouette_cosine(f, labels) - silhouette_direct(f, labels)) <= 1e-10


def test_silhouette_matches_sklearn(rng):
    f = rng.normal(size=(60, 4))
    labels = np.repeat(np.arange(6), 10)
    assert silhouette_cosine(f, labels) == pytest.approx(silhouette_score(f, labels, metric="cosine"), abs=1e-10)


def test_silhouette_singletons_score_zero():
    f = np.array([[1.0, 0], [0, 1.0], [1.0, 1.0]])
    assert silhouette_cosine(f, [0, 1, 2]) == 0.0


def test_silhouette_label_shuffle_null():
    # b is a minimum over the other clusters, which biases shuffled scores
    # downwards as the cluster count grows; two clusters have no such bias
    for seed in range(20):
        rng = np.random.default_rng(seed)
        f = rng.normal(size=(200, 5)) + np.repeat(rng.normal(size=(2, 5)), 100, axis=0)
        labels = rng.permutation(np.repeat(np.arange(2), 100))
        assert abs(silhouette_cosine(f, labels)) < 0.1


@given(st.integers(0, 2 ** 31 - 1))
def test_silhouette_scale_invariant_and_bounded(seed):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(30, 4))
    labels = rng.integers(0, 3, 30)
    if len(set(labels)) < 2:
        return
    s = silhouette_cosine(f, labels)
    assert -1.0 <= s <= 1.0
    scaled = f * rng.uniform(0.1, 10.0, size=(30, 1))
    assert silhouette_cosine(scaled, labels) == pytest.approx(s, abs=1e-12)


def test_silhouette_errors():
    with pytest.raises(ValidationError):
        silhouette_cosine(np.ones((4, 2)), [0, 0, 0, 0])
    with pytest.raises(ValidationError):
        silhouette_cosine(np.array([[1.0, 0], [0, 0]]), [0, 1])


# -- reconstruction error ------------------------------------------------

class _FixedLogits:
    def __init__(self, value):
        self.value = value

    def encode(self, x, training=False):
        return x

    def decode(self, x, training=False):
        from shapespace.tensor import Tensor
        return Tensor(np.full(np.shape(x), self.value))


def test_reconstruction_error_examples():
    white = np.ones((3, 8, 8))
    assert reconstruction_error(_FixedLogits(40.0), white) < 1e-16
    assert reconstruction_error(_FixedLogits(0.0), np.random.default_rng(0).random((2, 8, 8))) \
        == pytest.approx(np.log(2), rel=1e-14)


def test_reconstruction_error_matches_loss(rng):
    net = build_network("R_best", ("reconstruct",), rng=0)
    images = rng.random((5, 64, 64))
    expected = sigmoid_cross_entropy(net.decode(net.encode(images)), images).item()
    assert reconstruction_error(net, images, batch_size=2) == pytest.approx(expected, abs=1e-12)


# -- tables --------------------------------------------------------------

def test_table_columns_and_format(tmp_path):
    write_table(tmp_path / "t.csv", [{"configuration": "C_default", "task": "transfer", "regressor": "lasso",
                                      "beta_lambda": 0.05, "mse": 0.5, "r2": 0.5}], TABLE2_COLUMNS)
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert tuple(rows[0]) == ("configuration", "task", "regressor", "beta_lambda", "tau", "mse", "med", "r2")
    assert rows[1] == ["C_default", "transfer", "lasso", "0.050000", "", "0.500000", "", "0.500000"]
