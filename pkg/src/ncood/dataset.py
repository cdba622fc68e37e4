"""Feature sets, the linear classifier head, and statistics fit on training data.

The head is the map ``h -> argmax_c w_c . h + b_c``. All scoring statistics
(global mean, class means, within-class covariance, per-class scales) are
estimated once on labelled training features and reused unchanged at test
time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, FitError
from .tensor_store import Tensor, read_bundle


@dataclass
class FeatureSet:
    """N x D penultimate-layer activations with optional class labels."""

    features: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ContractError(f"features must be 2-D, got shape {self.features.shape}")
        if self.features.shape[1] < 1:
            raise ContractError("feature width must be >= 1")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise ContractError(
                    f"labels shape {self.labels.shape} does not match N={self.features.shape[0]}"
                )
            if self.labels.size and self.labels.min() < 0:
                raise ContractError("labels must be non-negative class indices")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class ClassifierHead:
    """C x D weight rows plus a length-C bias."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[0] < 2:
            raise ContractError(
                f"head weights must be C x D with C >= 2, got shape {self.weights.shape}"
            )
        if self.bias.shape != (self.weights.shape[0],):
            raise ContractError(
                f"bias shape {self.bias.shape} does not match C={self.weights.shape[0]}"
            )
        norms = np.linalg.norm(self.weights, axis=1)
        if np.any(norms == 0.0):
            zero = int(np.flatnonzero(norms == 0.0)[0])
            raise ContractError(f"weight row {zero} is all-zero; head rows must have nonzero norm")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class TrainStats:
    """Everything fit on labelled training features.

    ``lambda_c[c]`` is the per-class scale ``|mu_c - mu_G| / |w_c|`` relating
    centered class means to weight rows; ``mean_feature`` is the
    coordinate-wise training mean used for importance-based weight masking.
    """

    mu_G: np.ndarray
    class_means: np.ndarray
    class_counts: np.ndarray
    sigma_W: np.ndarray
    lambda_c: np.ndarray
    mean_feature: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.mean_feature is None:
            self.mean_feature = self.mu_G.copy()

    @property
    def n_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]


def compute_train_stats(train: FeatureSet, head: ClassifierHead) -> TrainStats:
    """Fit global mean, class means, within-class covariance, and scales.

    Every class in ``[0, C)`` must have at least one sample. The covariance
    uses the 1/N normalization (an average over samples, not an unbiased
    estimator).
    """
    if train.labels is None:
        raise ContractError("training features must carry labels to fit statistics")
    if train.dim != head.dim:
        raise ContractError(
            f"feature width {train.dim} does not match head width {head.dim}"
        )
    C = head.n_classes
    if train.labels.size and train.labels.max() >= C:
        raise ContractError(
            f"label {int(train.labels.max())} out of range for {C}-class head"
        )
    X, y = train.features, train.labels
    counts = np.bincount(y, minlength=C)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise FitError(f"class {int(empty[0])} has no training samples")

    mu_G = X.mean(axis=0)
    class_means = np.zeros((C, train.dim))
    for c in range(C):
        class_means[c] = X[y == c].mean(axis=0)

    centered = X - class_means[y]
    sigma_W = centered.T @ centered / X.shape[0]

    w_norms = np.linalg.norm(head.weights, axis=1)
    lambda_c = np.linalg.norm(class_means - mu_G, axis=1) / w_norms

    return TrainStats(
        mu_G=mu_G,
        class_means=class_means,
        class_counts=counts.astype(np.int64),
        sigma_W=sigma_W,
        lambda_c=lambda_c,
        mean_feature=mu_G.copy(),
    )


def compute_logits(head: ClassifierHead, features: np.ndarray) -> np.ndarray:
    """Entry (i, c) = w_c . h_i + b_c."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ContractError(f"features must be 2-D, got shape {features.shape}")
    if features.shape[1] != head.dim:
        raise ContractError(
            f"feature width {features.shape[1]} does not match head width {head.dim}"
        )
    return features @ head.weights.T + head.bias


def predict_classes(head: ClassifierHead, features: np.ndarray) -> np.ndarray:
    """Argmax over class logits; ties break toward the lowest class index."""
    logits = compute_logits(head, features)
    if logits.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmax(logits, axis=1).astype(np.int64)


def feature_set_from_bundle(manifest_path, name: str | None = None) -> FeatureSet:
    """Load a feature bundle (roles ``features`` and optional ``labels``)."""
    manifest, tensors = read_bundle(manifest_path)
    if "features" not in tensors:
        raise ContractError(f"bundle {manifest_path} has no 'features' tensor")
    labels = tensors["labels"].to_array() if "labels" in tensors else None
    return FeatureSet(
        features=tensors["features"].to_array(),
        labels=labels,
        name=name if name is not None else manifest.dataset_name,
    )


def head_from_bundle(manifest_path) -> ClassifierHead:
    """Load a classifier head (roles ``weights`` and ``bias``)."""
    _, tensors = read_bundle(manifest_path)
    for role in ("weights", "bias"):
        if role not in tensors:
            raise ContractError(f"bundle {manifest_path} has no {role!r} tensor")
    return ClassifierHead(
        weights=tensors["weights"].to_array(), bias=tensors["bias"].to_array()
    )


def stats_to_tensors(stats: TrainStats) -> dict[str, Tensor]:
    """Tensor roles used to persist training statistics as a bundle."""
    return {
        "mu_G": Tensor.from_array(stats.mu_G, "f64"),
        "class_means": Tensor.from_array(stats.class_means, "f64"),
        "class_counts": Tensor.from_array(stats.class_counts, "i64"),
        "sigma_W": Tensor.from_array(stats.sigma_W, "f64"),
        "lambda_c": Tensor.from_array(stats.lambda_c, "f64"),
        "mean_feature": Tensor.from_array(stats.mean_feature, "f64"),
    }


def stats_from_bundle(manifest_path) -> TrainStats:
    """Inverse of :func:`stats_to_tensors` through a bundle on disk."""
    _, tensors = read_bundle(manifest_path)
    required = ("mu_G", "class_means", "sigma_W", "lambda_c", "mean_feature")
    for role in required:
        if role not in tensors:
            raise ContractError(f"stats bundle {manifest_path} has no {role!r} tensor")
    counts = (
        tensors["class_counts"].to_array()
        if "class_counts" in tensors
        else np.zeros(tensors["class_means"].shape[0], dtype=np.int64)
    )
    return TrainStats(
        mu_G=tensors["mu_G"].to_array(),
        class_means=tensors["class_means"].to_array(),
        class_counts=counts,
        sigma_W=tensors["sigma_W"].to_array(),
        lambda_c=tensors["lambda_c"].to_array(),
        mean_feature=tensors["mean_feature"].to_array(),
    )
