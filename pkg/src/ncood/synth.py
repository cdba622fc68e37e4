"""Synthetic feature worlds with maximally separated class geometry.

ID clusters sit at a common scale along the rows of a simplex equiangular
tight frame (equal norms, pairwise cosine -1/(C-1)), which also serves as
the classifier head. OOD points are placed near the origin, in random
directions at ID-like radius, or inside a class cone near the origin --
the configuration that a pure projection score cannot separate.

Generation uses numpy's PCG64 generator, seeded per (seed, stream), so
every world is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ClassifierHead, FeatureSet
from .errors import ContractError
from .tensor_store import Tensor, bundle_manifest_for, write_bundle

OOD_MODES = ("near_origin", "random_direction", "in_cone_near_origin")

_STREAM_FRAME = 0
_STREAM_ID = 1
_STREAM_OOD = 2


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream)]))


@dataclass(frozen=True)
class EtfFrame:
    """C equal-norm vectors with pairwise cosine -1/(C-1)."""

    vectors: np.ndarray
    norm: float

    @property
    def n_classes(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class SynthSpec:
    """Geometry of one synthetic world."""

    n_classes: int
    dim: int
    n_per_class: int
    scale: float = 5.0
    noise_sigma: float = 0.5
    ood_mode: str = "near_origin"
    n_ood: int = 0
    seed: int = 0
    origin_frac: float = 0.3  # OOD radius as a fraction of the ID radius

    def __post_init__(self):
        if self.dim < self.n_classes:
            raise ContractError(
                f"dim {self.dim} must be >= n_classes {self.n_classes} for the "
                "frame construction"
            )
        if self.n_per_class < 0 or self.n_ood < 0:
            raise ContractError("sample counts must be >= 0")
        if self.scale <= 0:
            raise ContractError(f"scale must be > 0, got {self.scale}")
        if self.noise_sigma < 0:
            raise ContractError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.ood_mode not in OOD_MODES:
            raise ContractError(
                f"ood_mode must be one of {OOD_MODES}, got {self.ood_mode!r}"
            )
        if not 0 < self.origin_frac:
            raise ContractError(f"origin_frac must be > 0, got {self.origin_frac}")


def simplex_etf(n_classes: int, dim: int, norm: float = 1.0, seed: int = 0) -> EtfFrame:
    """Construct a simplex frame of ``n_classes`` vectors embedded in ``dim`` dims.

    Rows are ``norm * sqrt(C/(C-1)) * (I - 11^T/C)`` mapped through a seeded
    orthonormal embedding, so all invariants hold for any seed.
    """
    C, D = n_classes, dim
    if C < 2:
        raise ContractError(f"need at least 2 classes, got {C}")
    if D < C:
        raise ContractError(f"dim {D} must be >= n_classes {C}")
    if norm <= 0:
        raise ContractError(f"norm must be > 0, got {norm}")
    simplex = np.sqrt(C / (C - 1.0)) * (np.eye(C) - np.ones((C, C)) / C)
    rng = _rng(seed, _STREAM_FRAME)
    q, _ = np.linalg.qr(rng.standard_normal((D, C)))
    vectors = norm * simplex @ q.T
    return EtfFrame(vectors=vectors, norm=float(norm))


def gen_id_features(frame: EtfFrame, spec: SynthSpec) -> tuple[FeatureSet, ClassifierHead]:
    """ID features at ``scale * w_c`` plus isotropic noise, with matching head."""
    rng = _rng(spec.seed, _STREAM_ID)
    C, D = frame.n_classes, frame.dim
    n = spec.n_per_class
    labels = np.repeat(np.arange(C, dtype=np.int64), n)
    noise = rng.standard_normal((C * n, D))
    features = spec.scale * frame.vectors[labels] + spec.noise_sigma * noise
    head = ClassifierHead(weights=frame.vectors.copy(), bias=np.zeros(C))
    return FeatureSet(features=features, labels=labels, name="synth-id"), head


def gen_ood_features(frame: EtfFrame, spec: SynthSpec) -> FeatureSet:
    """OOD features per the spec's mode; see the module docstring."""
    rng = _rng(spec.seed, _STREAM_OOD)
    D = frame.dim
    n = spec.n_ood
    id_radius = spec.scale * frame.norm
    if spec.ood_mode == "near_origin":
        # isotropic normal with expected radius origin_frac * id_radius
        sigma = spec.origin_frac * id_radius / np.sqrt(D)
        features = sigma * rng.standard_normal((n, D))
    elif spec.ood_mode == "random_direction":
        z = rng.standard_normal((n, D))
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        features = id_radius * z / norms
    else:  # in_cone_near_origin: shrunk ID-like samples along a random class
        classes = rng.integers(0, frame.n_classes, size=n)
        noise = rng.standard_normal((n, D))
        features = spec.origin_frac * (
            spec.scale * frame.vectors[classes] + spec.noise_sigma * noise
        )
    return FeatureSet(features=features, name=f"synth-ood-{spec.ood_mode}")


def feature_set_to_tensors(fs: FeatureSet) -> dict[str, Tensor]:
    tensors = {"features": Tensor.from_array(fs.features, "f64")}
    if fs.labels is not None:
        tensors["labels"] = Tensor.from_array(fs.labels, "i64")
    return tensors


def write_feature_bundle(fs: FeatureSet, dir, head: ClassifierHead | None = None,
                         metadata: dict[str, str] | None = None):
    """Persist a feature set (and optionally the head) as an NCT1 bundle."""
    tensors = feature_set_to_tensors(fs)
    if head is not None:
        tensors["weights"] = Tensor.from_array(head.weights, "f64")
        tensors["bias"] = Tensor.from_array(head.bias, "f64")
    manifest = bundle_manifest_for(tensors, dataset_name=fs.name, metadata=metadata)
    return write_bundle(manifest, tensors, dir)
