"""Weight-proximity OOD scores over centered penultimate features.

All scores are computed per sample against the weight row of the sample's
predicted class, after centering by the training global mean. Higher score
means more in-distribution; thresholding the projection score selects,
per class, an infinite hypercone around that class's weight vector. The
combined score adds an ``alpha``-weighted norm of the raw feature to filter
out samples that sit inside a cone but near the origin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ClassifierHead, TrainStats, predict_classes
from .errors import ContractError

FILTER_NORMS = ("l1", "l2", "linf")


@dataclass(frozen=True)
class NcScoreConfig:
    """Filtering strength, filtering norm, and degeneracy guard."""

    alpha: float = 0.01
    filter_norm: str = "l1"
    epsilon: float = 1e-12

    def __post_init__(self):
        if self.alpha < 0:
            raise ContractError(f"alpha must be >= 0, got {self.alpha}")
        if self.filter_norm not in FILTER_NORMS:
            raise ContractError(
                f"filter_norm must be one of {FILTER_NORMS}, got {self.filter_norm!r}"
            )
        if self.epsilon <= 0:
            raise ContractError(f"epsilon must be > 0, got {self.epsilon}")


def _centered_and_predicted(
    features: np.ndarray, stats: TrainStats, head: ClassifierHead
) -> tuple[np.ndarray, np.ndarray]:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != head.dim:
        raise ContractError(
            f"features shape {features.shape} does not match head width {head.dim}"
        )
    if stats.dim != head.dim:
        raise ContractError(
            f"stats width {stats.dim} does not match head width {head.dim}"
        )
    predicted = predict_classes(head, features)
    centered = features - stats.mu_G
    return centered, predicted


def p_score(
    features: np.ndarray,
    stats: TrainStats,
    head: ClassifierHead,
    epsilon: float = 1e-12,
) -> np.ndarray:
    """Norm of the projection of the predicted-class weight onto g = h - mu_G.

    Per sample: ``(g . w_c) / |g|_2`` with c the predicted class. A centered
    feature with near-zero norm scores 0, the orthogonal value.
    """
    g, predicted = _centered_and_predicted(features, stats, head)
    w = head.weights[predicted]
    g_norm = np.linalg.norm(g, axis=1)
    dots = np.einsum("ij,ij->i", g, w)
    out = np.zeros(g.shape[0])
    ok = g_norm >= epsilon
    out[ok] = dots[ok] / g_norm[ok]
    return out


def feature_filter_norm(features: np.ndarray, filter_norm: str) -> np.ndarray:
    """Per-row p-norm of the raw (uncentered) features."""
    features = np.asarray(features, dtype=np.float64)
    if filter_norm == "l1":
        return np.abs(features).sum(axis=1)
    if filter_norm == "l2":
        return np.linalg.norm(features, axis=1)
    if filter_norm == "linf":
        return np.abs(features).max(axis=1) if features.shape[1] else np.zeros(len(features))
    raise ContractError(f"filter_norm must be one of {FILTER_NORMS}, got {filter_norm!r}")


def nc_score(
    features: np.ndarray,
    stats: TrainStats,
    head: ClassifierHead,
    cfg: NcScoreConfig = NcScoreConfig(),
) -> np.ndarray:
    """Combined score ``alpha * |h|_p + p_score(h)``; lower signals OOD.

    The filtering norm applies to the raw feature, not the centered one, so
    the origin-proximity signal is independent of the training mean.
    """
    base = p_score(features, stats, head, epsilon=cfg.epsilon)
    if cfg.alpha == 0.0:
        return base
    return cfg.alpha * feature_filter_norm(features, cfg.filter_norm) + base


def cos_score(
    features: np.ndarray,
    stats: TrainStats,
    head: ClassifierHead,
    epsilon: float = 1e-12,
) -> np.ndarray:
    """Cosine similarity between g = h - mu_G and the predicted-class weight."""
    g, predicted = _centered_and_predicted(features, stats, head)
    w = head.weights[predicted]
    g_norm = np.linalg.norm(g, axis=1)
    w_norm = np.linalg.norm(w, axis=1)
    dots = np.einsum("ij,ij->i", g, w)
    out = np.zeros(g.shape[0])
    ok = g_norm >= epsilon
    out[ok] = dots[ok] / (g_norm[ok] * w_norm[ok])
    return out


def dist_score(
    features: np.ndarray, stats: TrainStats, head: ClassifierHead
) -> np.ndarray:
    """Negative distance between g = h - mu_G and the scaled weight lambda_c w_c.

    The per-class scale comes from the training statistics, so rescaling a
    weight row leaves the score unchanged.
    """
    g, predicted = _centered_and_predicted(features, stats, head)
    target = stats.lambda_c[predicted, None] * head.weights[predicted]
    return -np.linalg.norm(g - target, axis=1)
