"""Estimator-style wrappers: ``fit`` on training features, ``score_samples``
on test features, higher score = more in-distribution.

Every detector follows scikit-learn conventions (constructor stores
hyperparameters untouched, fitted state lives in trailing-underscore
attributes, ``get_params``/``set_params`` work), so the scores compose with
sklearn model selection and pipelines. Detectors that read the classifier
head take it as a constructor argument, like a fixed vocabulary.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import baselines, scores
from .dataset import ClassifierHead, FeatureSet, compute_logits, compute_train_stats, predict_classes
from .errors import ContractError

DETECTOR_NAMES = (
    "ncood",
    "pscore",
    "cosscore",
    "distscore",
    "msp",
    "energy",
    "react",
    "dice",
    "mahalanobis",
    "knn",
)


def _as_features(X) -> np.ndarray:
    return check_array(X, dtype="float64")


def _labelled(X, y) -> FeatureSet:
    if y is None:
        raise ContractError("this detector needs class labels at fit time")
    return FeatureSet(features=np.asarray(X, dtype=np.float64), labels=np.asarray(y))


class NCScoreDetector(BaseEstimator):
    """Weight-proximity score with norm-based origin filtering."""

    def __init__(self, head: ClassifierHead, alpha: float = 0.01,
                 filter_norm: str = "l1", epsilon: float = 1e-12):
        self.head = head
        self.alpha = alpha
        self.filter_norm = filter_norm
        self.epsilon = epsilon

    def fit(self, X, y):
        X = _as_features(X)
        self.stats_ = compute_train_stats(_labelled(X, y), self.head)
        return self

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self, "stats_")
        cfg = scores.NcScoreConfig(
            alpha=self.alpha, filter_norm=self.filter_norm, epsilon=self.epsilon
        )
        return scores.nc_score(_as_features(X), self.stats_, self.head, cfg)

    def predict(self, X) -> np.ndarray:
        """Predicted class indices under the head (not an OOD decision)."""
        return predict_classes(self.head, _as_features(X))


class PScoreDetector(NCScoreDetector):
    """Projection score alone (no origin filtering)."""

    def __init__(self, head: ClassifierHead, epsilon: float = 1e-12):
        super().__init__(head, alpha=0.0, epsilon=epsilon)

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self, "stats_")
        return scores.p_score(_as_features(X), self.stats_, self.head, self.epsilon)


class CosScoreDetector(NCScoreDetector):
    """Cosine similarity to the predicted-class weight."""

    def __init__(self, head: ClassifierHead, epsilon: float = 1e-12):
        super().__init__(head, alpha=0.0, epsilon=epsilon)

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self, "stats_")
        return scores.cos_score(_as_features(X), self.stats_, self.head, self.epsilon)


class DistScoreDetector(NCScoreDetector):
    """Negative distance to the scaled predicted-class weight."""

    def __init__(self, head: ClassifierHead):
        super().__init__(head, alpha=0.0)

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self, "stats_")
        return scores.dist_score(_as_features(X), self.stats_, self.head)


class MSPDetector(BaseEstimator):
    """Maximum softmax probability of the head's logits (stateless fit)."""

    def __init__(self, head: ClassifierHead):
        self.head = head

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def score_samples(self, X) -> np.ndarray:
        return baselines.msp_score(compute_logits(self.head, _as_features(X)))


class EnergyDetector(MSPDetector):
    """Log-sum-exp of the head's logits."""

    def score_samples(self, X) -> np.ndarray:
        return baselines.energy_score(compute_logits(self.head, _as_features(X)))


class ReActDetector(BaseEstimator):
    """Energy over activation-clipped features; clip fit on training data."""

    def __init__(self, head: ClassifierHead, percentile: float = 90.0):
        self.head = head
        self.percentile = percentile

    def fit(self, X, y=None):
        X = _as_features(X)
        self.clip_ = baselines.fit_react(FeatureSet(features=X), self.percentile)
        return self

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self, "clip_")
        return baselines.react_score(_as_features(X), self.head, self.clip_)


class DiceDetector(BaseEstimator):
    """Energy over importance-masked head weights."""

    def __init__(self, head: ClassifierHead, sparsity_percentile: float = 90.0):
        self.head = head
        self.sparsity_percentile = sparsity_percentile

    def fit(self, X, y):
        X = _as_features(X)
        stats = compute_train_stats(_labelled(X, y), self.head)
        self.mask_ = baselines.fit_dice(stats, self.head, self.sparsity_percentile)
        return self

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self, "mask_")
        return baselines.dice_score(_as_features(X), self.head, self.mask_)


class MahalanobisDetector(BaseEstimator):
    """Max over classes of negative squared Mahalanobis distance."""

    def __init__(self, ridge: float | None = None):
        self.ridge = ridge

    def fit(self, X, y):
        X = _as_features(X)
        self.fit_ = baselines.mahalanobis_fit(_labelled(X, y), self.ridge)
        return self

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self, "fit_")
        return baselines.mahalanobis_score(_as_features(X), self.fit_)


class KNNDetector(BaseEstimator):
    """Negative k-th nearest neighbor distance on normalized features."""

    def __init__(self, k: int = 50):
        self.k = k

    def fit(self, X, y=None):
        X = _as_features(X)
        self.index_ = baselines.fit_knn(FeatureSet(features=X), self.k)
        return self

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self, "index_")
        return baselines.knn_score(_as_features(X), self.index_)
