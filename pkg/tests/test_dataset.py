import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncood.dataset import (
    ClassifierHead,
    FeatureSet,
    compute_logits,
    compute_train_stats,
    predict_classes,
)
from ncood.errors import ContractError, FitError


def two_class_train():
    X = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [0.0, 0.0]])
    y = np.array([0, 0, 1, 1])
    return FeatureSet(features=X, labels=y, name="hand")


IDENTITY_HEAD = ClassifierHead(weights=np.eye(2), bias=np.zeros(2))


def test_train_stats_hand_example():
    stats = compute_train_stats(two_class_train(), IDENTITY_HEAD)
    np.testing.assert_allclose(stats.class_means[0], [1.0, 0.0])
    np.testing.assert_allclose(stats.class_means[1], [0.0, 1.0])
    np.testing.assert_allclose(stats.mu_G, [0.5, 0.5])
    np.testing.assert_array_equal(stats.class_counts, [2, 2])
    np.testing.assert_allclose(stats.mean_feature, stats.mu_G)


def test_sigma_w_zero_when_features_at_class_means():
    X = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    stats = compute_train_stats(
        FeatureSet(features=X, labels=np.array([0, 0, 1, 1])), IDENTITY_HEAD
    )
    np.testing.assert_array_equal(stats.sigma_W, np.zeros((2, 2)))


def test_empty_class_is_fit_error():
    fs = FeatureSet(features=np.zeros((3, 2)), labels=np.array([0, 0, 0]))
    with pytest.raises(FitError, match="class 1"):
        compute_train_stats(fs, IDENTITY_HEAD)


def test_missing_labels_is_contract_error():
    fs = FeatureSet(features=np.zeros((3, 2)))
    with pytest.raises(ContractError, match="labels"):
        compute_train_stats(fs, IDENTITY_HEAD)


def sigma_w_bruteforce(X, y, means):
    S = np.zeros((X.shape[1], X.shape[1]))
    for i in range(X.shape[0]):
        d = (X[i] - means[y[i]]).reshape(-1, 1)
        S += d @ d.T
    return S / X.shape[0]


def test_sigma_w_matches_bruteforce_double_loop():
    rng = np.random.default_rng(11)
    C, D, N = 5, 7, 200
    y = rng.integers(0, C, size=N)
    y[:C] = np.arange(C)  # keep every class populated
    X = rng.standard_normal((N, D))
    head = ClassifierHead(weights=rng.standard_normal((C, D)), bias=np.zeros(C))
    stats = compute_train_stats(FeatureSet(features=X, labels=y), head)
    expected = sigma_w_bruteforce(X, y, stats.class_means)
    np.testing.assert_allclose(stats.sigma_W, expected, atol=1e-10)


def test_class_count_reconstruction_of_global_mean():
    rng = np.random.default_rng(5)
    C, D, N = 4, 6, 150
    y = rng.integers(0, C, size=N)
    y[:C] = np.arange(C)
    X = rng.standard_normal((N, D))
    head = ClassifierHead(weights=rng.standard_normal((C, D)), bias=np.zeros(C))
    stats = compute_train_stats(FeatureSet(features=X, labels=y), head)
    weighted = (stats.class_counts[:, None] * stats.class_means).sum(axis=0)
    np.testing.assert_allclose(weighted, N * stats.mu_G, atol=1e-10)


def test_lambda_matches_definition():
    stats = compute_train_stats(two_class_train(), IDENTITY_HEAD)
    expected = np.linalg.norm(stats.class_means - stats.mu_G, axis=1)
    np.testing.assert_allclose(stats.lambda_c, expected)  # unit weight rows
    assert np.all(stats.lambda_c >= 0)


def test_logits_identity_head():
    np.testing.assert_allclose(
        compute_logits(IDENTITY_HEAD, np.array([[3.0, 4.0]])), [[3.0, 4.0]]
    )


def test_logits_with_bias():
    head = ClassifierHead(weights=np.array([[1.0, 0.0], [0.0, 1.0]]), bias=np.array([1.0, 0.0]))
    np.testing.assert_allclose(compute_logits(head, np.array([[3.0, 4.0]])), [[4.0, 4.0]])


def test_logits_width_mismatch():
    with pytest.raises(ContractError, match="width"):
        compute_logits(IDENTITY_HEAD, np.zeros((1, 3)))


def test_predict_classes_and_tie_rule():
    head = ClassifierHead(weights=np.array([[1.0, 0.0], [0.0, 1.0]]), bias=np.array([1.0, 0.0]))
    assert predict_classes(IDENTITY_HEAD, np.array([[3.0, 4.0]]))[0] == 1
    assert predict_classes(head, np.array([[3.0, 4.0]]))[0] == 0  # tie -> lowest


def test_predict_classes_empty_batch():
    out = predict_classes(IDENTITY_HEAD, np.zeros((0, 2)))
    assert out.shape == (0,)
    assert out.dtype == np.int64


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    k=st.floats(-50, 50, allow_nan=False),
)
def test_argmax_invariant_to_per_sample_constant(seed, k):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((8, 5))
    base = np.argmax(logits, axis=1)
    shifted = np.argmax(logits + k, axis=1)
    np.testing.assert_array_equal(base, shifted)


def test_zero_weight_row_rejected():
    with pytest.raises(ContractError, match="row 1"):
        ClassifierHead(weights=np.array([[1.0, 0.0], [0.0, 0.0]]), bias=np.zeros(2))


def test_label_out_of_range_rejected():
    fs = FeatureSet(features=np.zeros((3, 2)), labels=np.array([0, 1, 2]))
    with pytest.raises(ContractError, match="out of range"):
        compute_train_stats(fs, IDENTITY_HEAD)
