import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ncood import baselines, scores
from ncood.dataset import ClassifierHead, FeatureSet, compute_logits, compute_train_stats
from ncood.detectors import (
    CosScoreDetector,
    DiceDetector,
    DistScoreDetector,
    EnergyDetector,
    KNNDetector,
    MahalanobisDetector,
    MSPDetector,
    NCScoreDetector,
    PScoreDetector,
    ReActDetector,
)
from ncood.errors import ContractError
from ncood.synth import SynthSpec, gen_id_features, simplex_etf


@pytest.fixture(scope="module")
def world():
    frame = simplex_etf(5, 12, seed=4)
    spec = SynthSpec(n_classes=5, dim=12, n_per_class=40, seed=4)
    train, head = gen_id_features(frame, spec)
    test, _ = gen_id_features(frame, SynthSpec(n_classes=5, dim=12, n_per_class=10, seed=44))
    return train, test, head


def test_ncscore_detector_matches_functional_path(world):
    train, test, head = world
    det = NCScoreDetector(head, alpha=0.01).fit(train.features, train.labels)
    stats = compute_train_stats(train, head)
    expected = scores.nc_score(test.features, stats, head, scores.NcScoreConfig(alpha=0.01))
    np.testing.assert_array_equal(det.score_samples(test.features), expected)


def test_pscore_detector_equals_alpha_zero(world):
    train, test, head = world
    p = PScoreDetector(head).fit(train.features, train.labels)
    nc = NCScoreDetector(head, alpha=0.0).fit(train.features, train.labels)
    np.testing.assert_array_equal(p.score_samples(test.features), nc.score_samples(test.features))


def test_cos_and_dist_detectors(world):
    train, test, head = world
    stats = compute_train_stats(train, head)
    cos = CosScoreDetector(head).fit(train.features, train.labels)
    np.testing.assert_array_equal(
        cos.score_samples(test.features), scores.cos_score(test.features, stats, head)
    )
    dist = DistScoreDetector(head).fit(train.features, train.labels)
    np.testing.assert_array_equal(
        dist.score_samples(test.features), scores.dist_score(test.features, stats, head)
    )


def test_logit_detectors(world):
    _, test, head = world
    logits = compute_logits(head, test.features)
    np.testing.assert_array_equal(
        MSPDetector(head).fit().score_samples(test.features), baselines.msp_score(logits)
    )
    np.testing.assert_array_equal(
        EnergyDetector(head).fit().score_samples(test.features),
        baselines.energy_score(logits),
    )


def test_react_detector(world):
    train, test, head = world
    det = ReActDetector(head, percentile=90.0).fit(train.features)
    clip = baselines.fit_react(FeatureSet(features=train.features), 90.0)
    np.testing.assert_array_equal(
        det.score_samples(test.features),
        baselines.react_score(test.features, head, clip),
    )


def test_dice_detector(world):
    train, test, head = world
    det = DiceDetector(head, sparsity_percentile=50.0).fit(train.features, train.labels)
    stats = compute_train_stats(train, head)
    mask = baselines.fit_dice(stats, head, 50.0)
    np.testing.assert_array_equal(
        det.score_samples(test.features), baselines.dice_score(test.features, head, mask)
    )


def test_mahalanobis_detector(world):
    train, test, _ = world
    det = MahalanobisDetector().fit(train.features, train.labels)
    fit = baselines.mahalanobis_fit(train)
    np.testing.assert_array_equal(
        det.score_samples(test.features), baselines.mahalanobis_score(test.features, fit)
    )


def test_knn_detector(world):
    train, test, _ = world
    det = KNNDetector(k=10).fit(train.features)
    index = baselines.fit_knn(FeatureSet(features=train.features), 10)
    np.testing.assert_array_equal(
        det.score_samples(test.features), baselines.knn_score(test.features, index)
    )


def test_unfitted_detector_raises(world):
    _, test, head = world
    with pytest.raises(NotFittedError):
        NCScoreDetector(head).score_samples(test.features)
    with pytest.raises(NotFittedError):
        KNNDetector().score_samples(test.features)


def test_labels_required_where_needed(world):
    train, _, head = world
    with pytest.raises(ContractError, match="labels"):
        NCScoreDetector(head).fit(train.features, None)
    with pytest.raises(ContractError, match="labels"):
        MahalanobisDetector().fit(train.features, None)


def test_detectors_support_sklearn_clone_and_get_params(world):
    train, test, head = world
    det = NCScoreDetector(head, alpha=0.1, filter_norm="linf")
    params = det.get_params()
    assert params["alpha"] == 0.1
    assert params["filter_norm"] == "linf"
    cloned = clone(det)
    assert cloned.get_params()["alpha"] == 0.1
    cloned.set_params(alpha=1.0)
    cloned.fit(train.features, train.labels)
    assert cloned.score_samples(test.features).shape == (test.n,)


def test_predicted_classes_exposed(world):
    train, test, head = world
    det = NCScoreDetector(head).fit(train.features, train.labels)
    from ncood.dataset import predict_classes

    np.testing.assert_array_equal(
        det.predict(test.features), predict_classes(head, test.features)
    )
