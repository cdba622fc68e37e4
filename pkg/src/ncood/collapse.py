"""Desk-scale training lab: a small MLP on Gaussian blobs, trained with
hand-derived gradients, instrumented with collapse diagnostics.

Tracks, per epoch: within-class variability relative to between-class
variability, equal-norm and equal-angle convergence of centered class
means, self-duality of class means and head weights, agreement between the
head's decisions and the nearest-class-mean rule, and the mean cosine
between centered features and their label's weight row (the directional
alignment that the within-class collapse plus self-duality jointly force).

Everything runs in float64; training is full-batch gradient descent and is
bit-deterministic given the config seed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields

import numpy as np

from .dataset import ClassifierHead
from .errors import ContractError, GenerationError, TrainingError
from .tensor_store import Tensor

ACTIVATIONS = ("relu", "tanh")

_CENTER_RETRY_BUDGET = 1000

TRACE_COLUMNS = (
    "epoch",
    "train_loss",
    "train_accuracy",
    "nc1",
    "nc2_norm_spread",
    "nc2_angle_gap",
    "nc3_duality_gap",
    "nc4_agreement",
    "theorem1_alignment",
)


@dataclass(frozen=True)
class BlobsDataset:
    """Balanced Gaussian blobs around well-separated class centers."""

    inputs: np.ndarray
    labels: np.ndarray
    class_centers: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.class_centers.shape[0]


@dataclass(frozen=True)
class MlpConfig:
    """Architecture and optimization settings.

    ``layer_widths`` lists the input width followed by the hidden widths;
    the last entry is the penultimate width. The classifier head on top is
    sized by the dataset's class count. ``lr_schedule`` is a list of
    (epoch, rate) pairs; each rate applies from its epoch onward.
    """

    layer_widths: tuple[int, ...]
    activation: str = "tanh"
    epochs: int = 3000
    lr_schedule: tuple[tuple[int, float], ...] = ((0, 0.3),)
    weight_decay: float = 3e-3
    seed: int = 0

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise ContractError("need an input width plus at least one hidden layer")
        if any(w < 1 for w in self.layer_widths):
            raise ContractError(f"layer widths must be >= 1, got {self.layer_widths}")
        if self.activation not in ACTIVATIONS:
            raise ContractError(
                f"activation must be one of {ACTIVATIONS}, got {self.activation!r}"
            )
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if not self.lr_schedule or self.lr_schedule[0][0] != 0:
            raise ContractError("lr_schedule must start at epoch 0")
        if self.weight_decay < 0:
            raise ContractError("weight_decay must be >= 0")

    def rate_at(self, epoch: int) -> float:
        rate = self.lr_schedule[0][1]
        for start, r in self.lr_schedule:
            if epoch >= start:
                rate = r
        return rate


@dataclass
class MlpModel:
    """Hidden linear stack plus a linear classifier head, all float64."""

    weights: list[np.ndarray]  # hidden layers then head
    biases: list[np.ndarray]
    activation: str

    @property
    def head(self) -> ClassifierHead:
        return ClassifierHead(weights=self.weights[-1], bias=self.biases[-1])

    def penultimate(self, X: np.ndarray) -> np.ndarray:
        """Post-activation features immediately before the head."""
        acts, _, _ = _forward_full(self, np.asarray(X, dtype=np.float64))
        return acts[-1]

    def logits(self, X: np.ndarray) -> np.ndarray:
        _, _, logits = _forward_full(self, np.asarray(X, dtype=np.float64))
        return logits


@dataclass(frozen=True)
class NcReport:
    """Collapse diagnostics computed from features, labels, and the head."""

    nc1: float
    nc2_norm_spread: float
    nc2_angle_gap: float
    nc3_duality_gap: float
    nc4_agreement: float
    theorem1_alignment: float


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    nc1: float
    nc2_norm_spread: float
    nc2_angle_gap: float
    nc3_duality_gap: float
    nc4_agreement: float
    theorem1_alignment: float


@dataclass
class TrainTrace:
    records: list[EpochRecord]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def make_blobs(
    n_classes: int,
    d_in: int,
    n_per_class: int,
    center_spread: float,
    noise_sigma: float,
    seed: int,
) -> BlobsDataset:
    """Draw class centers at pairwise distance >= center_spread, then samples.

    Centers are rejection-sampled from an isotropic normal scaled by the
    spread; the budget is bounded, so impossible geometry fails loudly.
    """
    if n_classes < 2:
        raise ContractError(f"need at least 2 classes, got {n_classes}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 10]))
    centers: list[np.ndarray] = []
    tries = 0
    while len(centers) < n_classes:
        if tries >= _CENTER_RETRY_BUDGET:
            raise GenerationError(
                f"could not place {n_classes} centers at spread {center_spread} in "
                f"{tries} tries; increase d_in or reduce the spread"
            )
        candidate = center_spread * rng.standard_normal(d_in)
        tries += 1
        if all(np.linalg.norm(candidate - c) >= center_spread for c in centers):
            centers.append(candidate)
    class_centers = np.stack(centers)
    labels = np.repeat(np.arange(n_classes, dtype=np.int64), n_per_class)
    labels = labels[rng.permutation(labels.size)]
    inputs = class_centers[labels] + noise_sigma * rng.standard_normal(
        (labels.size, d_in)
    )
    return BlobsDataset(inputs=inputs, labels=labels, class_centers=class_centers)


def default_blobs(seed: int = 7) -> BlobsDataset:
    return make_blobs(
        n_classes=4, d_in=16, n_per_class=64, center_spread=10.0, noise_sigma=1.0,
        seed=seed,
    )


def default_mlp_config(seed: int = 7) -> MlpConfig:
    return MlpConfig(
        layer_widths=(16, 64, 32),
        activation="tanh",
        epochs=3000,
        lr_schedule=((0, 0.3),),
        weight_decay=3e-3,
        seed=seed,
    )


def init_model(cfg: MlpConfig, n_classes: int) -> MlpModel:
    """Seeded uniform init in +-sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 11]))
    widths = list(cfg.layer_widths) + [n_classes]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights=weights, biases=biases, activation=cfg.activation)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    return (z > 0.0).astype(np.float64) if kind == "relu" else 1.0 - a * a


def _forward_full(model: MlpModel, X: np.ndarray):
    """Returns (activations including the input, pre-activations, logits)."""
    acts = [X]
    pres = []
    a = X
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        z = a @ W.T + b
        a = _act(z, model.activation)
        pres.append(z)
        acts.append(a)
    logits = a @ model.weights[-1].T + model.biases[-1]
    return acts, pres, logits


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def objective(model: MlpModel, X: np.ndarray, y: np.ndarray, weight_decay: float) -> float:
    """Mean cross-entropy plus 0.5 * weight_decay * sum of squared weights."""
    _, _, logits = _forward_full(model, X)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ce = -log_probs[np.arange(y.size), y].mean()
    reg = 0.5 * weight_decay * sum(float((W**2).sum()) for W in model.weights)
    return float(ce + reg)


def _loss_and_grads(model: MlpModel, X: np.ndarray, y: np.ndarray, weight_decay: float):
    acts, pres, logits = _forward_full(model, X)
    n = X.shape[0]
    probs = _softmax(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ce = -log_probs[np.arange(n), y].mean()
    reg = 0.5 * weight_decay * sum(float((W**2).sum()) for W in model.weights)

    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grads_w = [np.zeros_like(W) for W in model.weights]
    grads_b = [np.zeros_like(b) for b in model.biases]
    grads_w[-1] = delta.T @ acts[-1] + weight_decay * model.weights[-1]
    grads_b[-1] = delta.sum(axis=0)
    upstream = delta @ model.weights[-1]
    for layer in range(len(model.weights) - 2, -1, -1):
        upstream = upstream * _act_grad(pres[layer], acts[layer + 1], model.activation)
        grads_w[layer] = upstream.T @ acts[layer] + weight_decay * model.weights[layer]
        grads_b[layer] = upstream.sum(axis=0)
        if layer > 0:
            upstream = upstream @ model.weights[layer]
    return float(ce + reg), logits, grads_w, grads_b


def nc_metrics(features: np.ndarray, labels: np.ndarray, head: ClassifierHead) -> NcReport:
    """Collapse diagnostics from a feature matrix, its labels, and a head."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ContractError(
            f"features shape {X.shape} does not pair with labels shape {y.shape}"
        )
    C = head.n_classes
    counts = np.bincount(y, minlength=C)
    if np.any(counts == 0):
        raise ContractError(f"class {int(np.flatnonzero(counts == 0)[0])} is empty")
    mu_G = X.mean(axis=0)
    means = np.stack([X[y == c].mean(axis=0) for c in range(C)])
    centered_means = means - mu_G

    within = float(((X - means[y]) ** 2).sum()) / X.shape[0]
    between = float((centered_means**2).sum()) / C
    nc1 = within / between if between > 0 else float("inf")

    radii = np.linalg.norm(centered_means, axis=1)
    mean_radius = radii.mean()
    nc2_norm_spread = float(radii.std() / mean_radius) if mean_radius > 0 else float("inf")

    safe_radii = np.where(radii == 0.0, 1.0, radii)
    unit_means = centered_means / safe_radii[:, None]
    cosines = unit_means @ unit_means.T
    target = -1.0 / (C - 1)
    off_diag = ~np.eye(C, dtype=bool)
    nc2_angle_gap = float(np.abs(cosines[off_diag] - target).max())

    w_norms = np.linalg.norm(head.weights, axis=1, keepdims=True)
    unit_w = head.weights / w_norms
    nc3_duality_gap = float(np.linalg.norm(unit_w - unit_means, axis=1).mean())

    logits = X @ head.weights.T + head.bias
    head_pred = np.argmax(logits, axis=1)
    d2 = ((X[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(d2, axis=1)
    nc4_agreement = float(np.mean(head_pred == nearest))

    g = X - mu_G
    g_norms = np.linalg.norm(g, axis=1)
    w_label = head.weights[y]
    denom = g_norms * np.linalg.norm(w_label, axis=1)
    cos_align = np.zeros(X.shape[0])
    ok = denom > 0
    cos_align[ok] = np.einsum("ij,ij->i", g[ok], w_label[ok]) / denom[ok]
    np.clip(cos_align, -1.0, 1.0, out=cos_align)
    theorem1_alignment = float(cos_align.mean())

    return NcReport(
        nc1=nc1,
        nc2_norm_spread=nc2_norm_spread,
        nc2_angle_gap=nc2_angle_gap,
        nc3_duality_gap=nc3_duality_gap,
        nc4_agreement=nc4_agreement,
        theorem1_alignment=theorem1_alignment,
    )


def train_mlp(cfg: MlpConfig, data: BlobsDataset) -> tuple[MlpModel, TrainTrace]:
    """Full-batch gradient descent with per-epoch collapse diagnostics.

    Each record reflects the model after that epoch's update. Divergence
    (non-finite loss) aborts with the offending epoch.
    """
    if cfg.layer_widths[0] != data.inputs.shape[1]:
        raise ContractError(
            f"input width {cfg.layer_widths[0]} does not match data width "
            f"{data.inputs.shape[1]}"
        )
    X, y = data.inputs, data.labels
    model = init_model(cfg, data.n_classes)
    records: list[EpochRecord] = []
    for epoch in range(cfg.epochs):
        # overflow is detected via the finiteness check, not numpy warnings
        with np.errstate(over="ignore", invalid="ignore"):
            loss, _, grads_w, grads_b = _loss_and_grads(model, X, y, cfg.weight_decay)
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged at epoch {epoch}")
        rate = cfg.rate_at(epoch)
        for W, b, gW, gb in zip(model.weights, model.biases, grads_w, grads_b):
            W -= rate * gW
            b -= rate * gb
        with np.errstate(over="ignore", invalid="ignore"):
            post_loss, logits, _, _ = _loss_and_grads(model, X, y, cfg.weight_decay)
        if not np.isfinite(post_loss):
            raise TrainingError(f"loss diverged at epoch {epoch}")
        accuracy = float(np.mean(np.argmax(logits, axis=1) == y))
        acts, _, _ = _forward_full(model, X)
        report = nc_metrics(acts[-1], y, model.head)
        records.append(
            EpochRecord(
                epoch=epoch,
                train_loss=post_loss,
                train_accuracy=accuracy,
                nc1=report.nc1,
                nc2_norm_spread=report.nc2_norm_spread,
                nc2_angle_gap=report.nc2_angle_gap,
                nc3_duality_gap=report.nc3_duality_gap,
                nc4_agreement=report.nc4_agreement,
                theorem1_alignment=report.theorem1_alignment,
            )
        )
    return model, TrainTrace(records=records)


def _flatten_params(model: MlpModel) -> np.ndarray:
    parts = []
    for W, b in zip(model.weights, model.biases):
        parts.append(W.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def _unflatten_params(model: MlpModel, flat: np.ndarray) -> None:
    offset = 0
    for W, b in zip(model.weights, model.biases):
        W[...] = flat[offset : offset + W.size].reshape(W.shape)
        offset += W.size
        b[...] = flat[offset : offset + b.size].reshape(b.shape)
        offset += b.size


def central_difference(f, x: float, step: float) -> float:
    """(f(x + step) - f(x - step)) / (2 step); exact for quadratics."""
    return (f(x + step) - f(x - step)) / (2.0 * step)


def grad_check(
    cfg: MlpConfig,
    data: BlobsDataset,
    probe_count: int,
    fd_step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Trains per the config first, then probes randomly selected parameters
    of the trained network. The relative-error denominator is floored at
    1e-4: below that scale central differences are dominated by
    cancellation, so agreement is asserted absolutely at 1e-8.
    """
    if probe_count <= 0:
        return 0.0
    model, _ = train_mlp(cfg, data)
    X, y = data.inputs, data.labels
    _, _, grads_w, grads_b = _loss_and_grads(model, X, y, cfg.weight_decay)
    analytic = _flatten_params(
        MlpModel(weights=grads_w, biases=grads_b, activation=cfg.activation)
    )
    theta = _flatten_params(model)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 12]))
    n_probe = min(probe_count, theta.size)
    probes = rng.choice(theta.size, size=n_probe, replace=False)

    def loss_at(idx: int, value: float) -> float:
        saved = theta[idx]
        theta[idx] = value
        _unflatten_params(model, theta)
        out = objective(model, X, y, cfg.weight_decay)
        theta[idx] = saved
        return out

    worst = 0.0
    for idx in probes:
        fd = central_difference(lambda v: loss_at(int(idx), v), theta[idx], fd_step)
        a = analytic[idx]
        rel = abs(a - fd) / max(abs(a), abs(fd), 1e-4)
        worst = max(worst, rel)
    _unflatten_params(model, theta)
    return float(worst)


def trace_to_csv(trace: TrainTrace) -> str:
    """Fixed-column CSV, one row per epoch, 17 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for r in trace.records:
        row = [str(r.epoch)]
        row.extend(f"{getattr(r, name):.17g}" for name in TRACE_COLUMNS[1:])
        writer.writerow(row)
    return buf.getvalue()


def trace_from_csv(text: str) -> TrainTrace:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != TRACE_COLUMNS:
        raise ContractError(f"trace CSV header {header} does not match {TRACE_COLUMNS}")
    records = []
    for row in reader:
        if not row:
            continue
        values = [float(v) for v in row[1:]]
        records.append(EpochRecord(int(row[0]), *values))
    return TrainTrace(records=records)


def model_to_tensors(model: MlpModel) -> dict[str, Tensor]:
    """Per-layer weight/bias tensors for a model export bundle."""
    tensors: dict[str, Tensor] = {}
    n_hidden = len(model.weights) - 1
    for i in range(n_hidden):
        tensors[f"layer{i}.weight"] = Tensor.from_array(model.weights[i], "f64")
        tensors[f"layer{i}.bias"] = Tensor.from_array(model.biases[i], "f64")
    tensors["head.weight"] = Tensor.from_array(model.weights[-1], "f64")
    tensors["head.bias"] = Tensor.from_array(model.biases[-1], "f64")
    return tensors


assert tuple(f.name for f in fields(EpochRecord)) == TRACE_COLUMNS
