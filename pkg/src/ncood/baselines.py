"""Reference detectors computable from exported features and the head alone.

Covers maximum softmax probability, the logit energy, activation-clipped
energy (react), importance-masked energy (dice), shared-covariance
Mahalanobis, and k-th nearest neighbor distance on normalized features.
For every score here, higher means more in-distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .dataset import ClassifierHead, FeatureSet, TrainStats, compute_logits
from .errors import ContractError, FitError


@dataclass(frozen=True)
class ReactClip:
    """Global activation clip value at a declared training percentile."""

    threshold: float
    percentile: float


@dataclass(frozen=True)
class DiceMask:
    """Per-class boolean weight mask keeping the most important units."""

    mask: np.ndarray  # C x D bool
    sparsity_percentile: float


@dataclass(frozen=True)
class MahalanobisFit:
    """Class means plus the inverse of the ridge-stabilized tied covariance."""

    class_means: np.ndarray
    shared_precision: np.ndarray


@dataclass(frozen=True)
class KnnIndex:
    """L2-normalized training features for exact nearest-neighbor search."""

    normalized_train: np.ndarray
    k: int


def _check_logits(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ContractError(f"logits must be N x C with C >= 2, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise ContractError("logits contain non-finite values")
    return logits


def msp_score(logits: np.ndarray) -> np.ndarray:
    """Maximum softmax probability, computed with max-subtraction."""
    logits = _check_logits(logits)
    return softmax(logits, axis=1).max(axis=1)


def energy_score(logits: np.ndarray) -> np.ndarray:
    """Log-sum-exp of the class logits (larger for confident ID samples)."""
    logits = _check_logits(logits)
    return logsumexp(logits, axis=1)


def fit_react(train: FeatureSet, percentile: float = 90.0) -> ReactClip:
    """Clip threshold = linear-interpolated percentile of all training activations."""
    if not 0.0 < percentile <= 100.0:
        raise ContractError(f"percentile must be in (0, 100], got {percentile}")
    if train.n == 0:
        raise FitError("cannot fit an activation clip on an empty training set")
    threshold = float(np.percentile(train.features.ravel(), percentile))
    return ReactClip(threshold=threshold, percentile=percentile)


def react_score(
    features: np.ndarray, head: ClassifierHead, clip: ReactClip
) -> np.ndarray:
    """Energy of logits computed on activations clipped at the fitted threshold."""
    features = np.asarray(features, dtype=np.float64)
    clipped = np.minimum(features, clip.threshold)
    return energy_score(compute_logits(head, clipped))


def fit_dice(
    stats: TrainStats, head: ClassifierHead, sparsity_percentile: float = 90.0
) -> DiceMask:
    """Keep, per class row, the top (100 - sparsity)% units by importance.

    Importance of unit j for class c is ``w[c, j] * mean_feature[j]``. The
    kept count is ``ceil(D * (100 - sparsity) / 100)``; importance ties keep
    the lowest feature index.
    """
    if not 0.0 <= sparsity_percentile < 100.0:
        raise ContractError(
            f"sparsity_percentile must be in [0, 100), got {sparsity_percentile}"
        )
    if stats.dim != head.dim:
        raise ContractError(
            f"stats width {stats.dim} does not match head width {head.dim}"
        )
    importance = head.weights * stats.mean_feature
    D = head.dim
    keep = int(np.ceil(D * (100.0 - sparsity_percentile) / 100.0))
    mask = np.zeros_like(importance, dtype=bool)
    for c in range(head.n_classes):
        order = np.argsort(-importance[c], kind="stable")
        mask[c, order[:keep]] = True
    return DiceMask(mask=mask, sparsity_percentile=sparsity_percentile)


def dice_score(
    features: np.ndarray, head: ClassifierHead, mask: DiceMask
) -> np.ndarray:
    """Energy over logits from masked weights; the bias is kept intact."""
    if mask.mask.shape != head.weights.shape:
        raise ContractError(
            f"mask shape {mask.mask.shape} does not match head shape {head.weights.shape}"
        )
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != head.dim:
        raise ContractError(
            f"features shape {features.shape} does not match head width {head.dim}"
        )
    logits = features @ (head.weights * mask.mask).T + head.bias
    return energy_score(logits)


def mahalanobis_fit(train: FeatureSet, ridge: float | None = None) -> MahalanobisFit:
    """Class means and the precision of the tied within-class covariance.

    ``ridge`` defaults to ``1e-6 * trace(cov) / D``. The inverse is verified
    against the stabilized covariance; an unusable inverse is a fit error
    suggesting a larger ridge.
    """
    if train.labels is None:
        raise ContractError("mahalanobis fit needs labelled training features")
    if ridge is not None and ridge < 0:
        raise ContractError(f"ridge must be >= 0, got {ridge}")
    X, y = train.features, train.labels
    C = int(y.max()) + 1 if y.size else 0
    if C < 1:
        raise FitError("mahalanobis fit needs at least one labelled class")
    counts = np.bincount(y, minlength=C)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise FitError(f"class {int(empty[0])} has no training samples")
    means = np.stack([X[y == c].mean(axis=0) for c in range(C)])
    centered = X - means[y]
    cov = centered.T @ centered / X.shape[0]
    return MahalanobisFit(
        class_means=means, shared_precision=_stabilized_precision(cov, ridge)
    )


def mahalanobis_fit_from_stats(stats: TrainStats, ridge: float | None = None) -> MahalanobisFit:
    """Build the fit from precomputed class means and tied covariance."""
    if ridge is not None and ridge < 0:
        raise ContractError(f"ridge must be >= 0, got {ridge}")
    return MahalanobisFit(
        class_means=stats.class_means.copy(),
        shared_precision=_stabilized_precision(stats.sigma_W, ridge),
    )


def _stabilized_precision(cov: np.ndarray, ridge: float | None) -> np.ndarray:
    D = cov.shape[0]
    if ridge is None:
        ridge = 1e-6 * float(np.trace(cov)) / D
    stabilized = cov + ridge * np.eye(D)
    try:
        precision = np.linalg.inv(stabilized)
    except np.linalg.LinAlgError as exc:
        raise FitError(
            f"covariance is singular at ridge={ridge}; increase the ridge"
        ) from exc
    residual = np.abs(stabilized @ precision - np.eye(D)).max()
    if not np.isfinite(residual) or residual > 1e-6:
        raise FitError(
            f"covariance inverse residual {residual:.3g} exceeds 1e-6 at ridge={ridge}; "
            "increase the ridge"
        )
    return (precision + precision.T) / 2.0


def mahalanobis_score(features: np.ndarray, fit: MahalanobisFit) -> np.ndarray:
    """Max over classes of the negative squared Mahalanobis distance."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != fit.class_means.shape[1]:
        raise ContractError(
            f"features shape {features.shape} does not match fit width "
            f"{fit.class_means.shape[1]}"
        )
    scores = np.full(features.shape[0], -np.inf)
    for mu in fit.class_means:
        diff = features - mu
        d2 = np.einsum("ij,jk,ik->i", diff, fit.shared_precision, diff)
        scores = np.maximum(scores, -d2)
    return scores


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """L2-normalize rows; all-zero rows stay zero instead of producing NaN."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return x / safe


def fit_knn(train: FeatureSet, k: int = 50) -> KnnIndex:
    """Store L2-normalized training rows for exact k-NN distance queries."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if k > train.n:
        raise ContractError(f"k={k} exceeds the {train.n} stored training rows")
    return KnnIndex(normalized_train=normalize_rows(train.features), k=k)


def knn_score(features: np.ndarray, index: KnnIndex) -> np.ndarray:
    """Negative distance to the k-th nearest normalized training feature.

    Exact brute-force search; queries are normalized the same way as the
    stored rows.
    """
    if index.k > index.normalized_train.shape[0]:
        raise ContractError(
            f"k={index.k} exceeds the {index.normalized_train.shape[0]} stored rows"
        )
    q = normalize_rows(features)
    if q.shape[1] != index.normalized_train.shape[1]:
        raise ContractError(
            f"query width {q.shape[1]} does not match index width "
            f"{index.normalized_train.shape[1]}"
        )
    if q.shape[0] == 0:
        return np.zeros(0)
    # |a - b|^2 = |a|^2 + |b|^2 - 2 a.b, clipped against round-off
    sq = (
        (q**2).sum(axis=1, keepdims=True)
        + (index.normalized_train**2).sum(axis=1)
        - 2.0 * q @ index.normalized_train.T
    )
    np.maximum(sq, 0.0, out=sq)
    kth = np.partition(sq, index.k - 1, axis=1)[:, index.k - 1]
    return -np.sqrt(kth)
