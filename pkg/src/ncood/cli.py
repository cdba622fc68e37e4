"""Operator surface: subcommands over NCT1 bundles.

    ncood stats        fit training statistics, persist them as a bundle
    ncood score        score a feature bundle with one detector -> CSV
    ncood eval         AUROC / FPR95 report from score CSVs
    ncood sweep-alpha  pick the filtering strength on a validation pair
    ncood synth        generate a synthetic geometry world as bundles
    ncood collapse     train the blobs MLP, export trace + model

Exit codes: 0 success, 2 usage or contract error, 3 I/O error,
4 numerical failure. All outputs are deterministic given flags and seeds.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import baselines, collapse, metrics, scores, synth
from .dataset import (
    ClassifierHead,
    TrainStats,
    compute_logits,
    compute_train_stats,
    feature_set_from_bundle,
    head_from_bundle,
    predict_classes,
    stats_from_bundle,
    stats_to_tensors,
)
from .detectors import DETECTOR_NAMES
from .errors import (
    ConsistencyError,
    ContractError,
    FitError,
    FormatError,
    GenerationError,
    NcoodError,
    TensorIOError,
    TrainingError,
)
from .tensor_store import bundle_manifest_for, write_bundle

EXIT_CONTRACT = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

DEFAULT_ALPHA_GRID = (0.001, 0.01, 0.1, 1.0)
HIST_BINS = 50


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ContractError, FitError, ConsistencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (TensorIOError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NcoodError as exc:  # any future subclass defaults to contract
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ncood",
        description="Post-hoc OOD scoring from penultimate features and head weights.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("stats", help="fit training statistics into a bundle")
    p.add_argument("--train-bundle", required=True)
    p.add_argument("--head-bundle", help="defaults to the train bundle")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("score", help="score a feature bundle with one detector")
    p.add_argument("--detector", required=True, choices=DETECTOR_NAMES)
    p.add_argument("--features-bundle", required=True)
    p.add_argument("--head-bundle", required=True)
    p.add_argument("--stats-bundle", help="required by ncood/pscore/cosscore/distscore/dice/mahalanobis")
    p.add_argument("--train-bundle", help="required by react/knn")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--filter-norm", choices=scores.FILTER_NORMS, default="l1")
    p.add_argument("--epsilon", type=float, default=1e-12)
    p.add_argument("--react-percentile", type=float, default=90.0)
    p.add_argument("--dice-sparsity", type=float, default=90.0)
    p.add_argument("--ridge", type=float, default=None)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--out", required=True, help="output scores CSV")
    p.add_argument("--hist-out", help="optional 50-bin score histogram CSV")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="AUROC/FPR95 report from score CSVs")
    p.add_argument("--id-scores", required=True)
    p.add_argument("--ood-scores", required=True, nargs="+")
    p.add_argument("--detector-name", default="detector")
    p.add_argument("--out", required=True, help="output report CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-alpha", help="choose filtering strength on a validation pair")
    p.add_argument("--stats-bundle", required=True)
    p.add_argument("--head-bundle", required=True)
    p.add_argument("--id-val-bundle", required=True)
    p.add_argument("--noise-val-bundle", required=True)
    p.add_argument("--grid", default=",".join(str(a) for a in DEFAULT_ALPHA_GRID))
    p.add_argument("--filter-norm", choices=scores.FILTER_NORMS, default="l1")
    p.add_argument("--out", help="optional alpha/AUROC table CSV")
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("synth", help="generate a synthetic geometry world")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--n-per-class", type=int, required=True)
    p.add_argument("--scale", type=float, default=5.0)
    p.add_argument("--noise-sigma", type=float, default=0.5)
    p.add_argument("--ood-mode", choices=synth.OOD_MODES, default="near_origin")
    p.add_argument("--n-ood", type=int, default=0)
    p.add_argument("--origin-frac", type=float, default=0.3)
    p.add_argument("--frame-norm", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory (id/ and ood/ bundles)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("collapse", help="train the blobs MLP and export the trace")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--d-in", type=int, default=16)
    p.add_argument("--n-per-class", type=int, default=64)
    p.add_argument("--spread", type=float, default=10.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--widths", default="64,32", help="hidden widths, comma separated")
    p.add_argument("--activation", choices=collapse.ACTIVATIONS, default="tanh")
    p.add_argument("--epochs", type=int, default=3000)
    p.add_argument("--lr-schedule", default="0:0.3", help="epoch:rate pairs, comma separated")
    p.add_argument("--weight-decay", type=float, default=3e-3)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True, help="output directory (trace.csv, model/)")
    p.set_defaults(func=cmd_collapse)

    return parser


def cmd_stats(args) -> int:
    train = feature_set_from_bundle(args.train_bundle)
    head = head_from_bundle(args.head_bundle or args.train_bundle)
    stats = compute_train_stats(train, head)
    tensors = stats_to_tensors(stats)
    manifest = bundle_manifest_for(
        tensors, dataset_name=train.name, metadata={"kind": "train-stats"}
    )
    path = write_bundle(manifest, tensors, args.out)
    print(f"wrote stats bundle: {path}")
    return 0


def _scores_for_detector(args, X: np.ndarray, head: ClassifierHead) -> np.ndarray:
    name = args.detector

    def need_stats() -> TrainStats:
        if not args.stats_bundle:
            raise ContractError(f"detector {name!r} needs --stats-bundle")
        return stats_from_bundle(args.stats_bundle)

    def need_train():
        if not args.train_bundle:
            raise ContractError(f"detector {name!r} needs --train-bundle")
        return feature_set_from_bundle(args.train_bundle)

    if name == "ncood":
        cfg = scores.NcScoreConfig(args.alpha, args.filter_norm, args.epsilon)
        return scores.nc_score(X, need_stats(), head, cfg)
    if name == "pscore":
        return scores.p_score(X, need_stats(), head, args.epsilon)
    if name == "cosscore":
        return scores.cos_score(X, need_stats(), head, args.epsilon)
    if name == "distscore":
        return scores.dist_score(X, need_stats(), head)
    if name == "msp":
        return baselines.msp_score(compute_logits(head, X))
    if name == "energy":
        return baselines.energy_score(compute_logits(head, X))
    if name == "react":
        clip = baselines.fit_react(need_train(), args.react_percentile)
        return baselines.react_score(X, head, clip)
    if name == "dice":
        mask = baselines.fit_dice(need_stats(), head, args.dice_sparsity)
        return baselines.dice_score(X, head, mask)
    if name == "mahalanobis":
        fit = baselines.mahalanobis_fit_from_stats(need_stats(), args.ridge)
        return baselines.mahalanobis_score(X, fit)
    if name == "knn":
        index = baselines.fit_knn(need_train(), args.k)
        return baselines.knn_score(X, index)
    raise ContractError(f"unknown detector {name!r}; valid: {', '.join(DETECTOR_NAMES)}")


def cmd_score(args) -> int:
    features = feature_set_from_bundle(args.features_bundle)
    head = head_from_bundle(args.head_bundle)
    X = features.features
    score_values = _scores_for_detector(args, X, head)
    predicted = predict_classes(head, X)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "predicted_class", "score"])
        for i, (p, s) in enumerate(zip(predicted, score_values)):
            writer.writerow([i, int(p), f"{s:.17g}"])
    if args.hist_out:
        counts, edges = np.histogram(score_values, bins=HIST_BINS)
        with open(args.hist_out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_left", "bin_right", "count"])
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                writer.writerow([f"{lo:.17g}", f"{hi:.17g}", int(c)])
    print(f"wrote {len(score_values)} scores: {out}")
    return 0


def read_score_csv(path) -> np.ndarray:
    """Parse a score CSV produced by ``ncood score``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise TensorIOError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(text.splitlines())
    header = next(reader, None)
    if header is None or "score" not in header:
        raise ContractError(f"{path}:1: expected a header containing 'score'")
    col = header.index("score")
    values = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            values.append(float(row[col]))
        except (IndexError, ValueError) as exc:
            raise ContractError(f"{path}:{lineno}: malformed score row {row!r}") from exc
    if not values:
        raise ContractError(f"{path}: no score rows found")
    return np.array(values)


def cmd_eval(args) -> int:
    id_scores = read_score_csv(args.id_scores)
    ood_sets = {}
    for path in args.ood_scores:
        name = Path(path).stem
        ood_sets[name] = read_score_csv(path)
    digest = metrics.config_digest(
        {"id": str(args.id_scores), "ood": [str(p) for p in args.ood_scores]}
    )
    reports = metrics.evaluate(args.detector_name, id_scores, ood_sets, digest)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(metrics.reports_to_csv(reports), encoding="utf-8")
    print(metrics.reports_to_table(reports))
    return 0


def sweep_alpha(
    stats: TrainStats,
    head: ClassifierHead,
    id_val: np.ndarray,
    noise_val: np.ndarray,
    grid=DEFAULT_ALPHA_GRID,
    filter_norm: str = "l1",
) -> tuple[float, list[tuple[float, float]]]:
    """AUROC of ID-validation vs noise-validation per alpha; best wins.

    Ties go to the smaller alpha (the grid is evaluated in sorted order and
    a candidate must strictly improve to replace the incumbent).
    """
    if len(grid) == 0:
        raise ContractError("alpha grid must be nonempty")
    table = []
    best_alpha, best_auroc = None, -np.inf
    for alpha in sorted(grid):
        cfg = scores.NcScoreConfig(alpha=alpha, filter_norm=filter_norm)
        id_s = scores.nc_score(id_val, stats, head, cfg)
        noise_s = scores.nc_score(noise_val, stats, head, cfg)
        a = metrics.auroc(id_s, noise_s)
        table.append((alpha, a))
        if a > best_auroc:
            best_alpha, best_auroc = alpha, a
    return best_alpha, table


def cmd_sweep_alpha(args) -> int:
    stats = stats_from_bundle(args.stats_bundle)
    head = head_from_bundle(args.head_bundle)
    id_val = feature_set_from_bundle(args.id_val_bundle).features
    noise_val = feature_set_from_bundle(args.noise_val_bundle).features
    try:
        grid = [float(a) for a in args.grid.split(",") if a.strip()]
    except ValueError as exc:
        raise ContractError(f"--grid must be comma-separated numbers: {exc}") from exc
    chosen, table = sweep_alpha(stats, head, id_val, noise_val, grid, args.filter_norm)
    print("alpha      auroc")
    for alpha, a in table:
        print(f"{alpha:<9g}  {a:.6f}")
    print(f"chosen alpha: {chosen:g}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["alpha", "auroc"])
            for alpha, a in table:
                writer.writerow([f"{alpha:.17g}", f"{a:.17g}"])
    return 0


def cmd_synth(args) -> int:
    spec = synth.SynthSpec(
        n_classes=args.classes,
        dim=args.dim,
        n_per_class=args.n_per_class,
        scale=args.scale,
        noise_sigma=args.noise_sigma,
        ood_mode=args.ood_mode,
        n_ood=args.n_ood,
        seed=args.seed,
        origin_frac=args.origin_frac,
    )
    frame = synth.simplex_etf(args.classes, args.dim, args.frame_norm, seed=args.seed)
    id_set, head = synth.gen_id_features(frame, spec)
    out = Path(args.out)
    meta = {"seed": str(args.seed), "ood_mode": args.ood_mode}
    synth.write_feature_bundle(id_set, out / "id", head=head, metadata=meta)
    print(f"wrote ID bundle: {out / 'id'}")
    if args.n_ood > 0:
        ood_set = synth.gen_ood_features(frame, spec)
        synth.write_feature_bundle(ood_set, out / "ood", metadata=meta)
        print(f"wrote OOD bundle: {out / 'ood'}")
    return 0


def _parse_lr_schedule(text: str):
    schedule = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            epoch, rate = part.split(":")
            schedule.append((int(epoch), float(rate)))
        except ValueError as exc:
            raise ContractError(
                f"--lr-schedule entries must be epoch:rate, got {part!r}"
            ) from exc
    return tuple(schedule)


def cmd_collapse(args) -> int:
    try:
        widths = tuple(int(w) for w in args.widths.split(",") if w.strip())
    except ValueError as exc:
        raise ContractError(f"--widths must be comma-separated ints: {exc}") from exc
    data = collapse.make_blobs(
        n_classes=args.classes,
        d_in=args.d_in,
        n_per_class=args.n_per_class,
        center_spread=args.spread,
        noise_sigma=args.sigma,
        seed=args.seed,
    )
    cfg = collapse.MlpConfig(
        layer_widths=(args.d_in, *widths),
        activation=args.activation,
        epochs=args.epochs,
        lr_schedule=_parse_lr_schedule(args.lr_schedule),
        weight_decay=args.weight_decay,
        seed=args.seed,
    )
    model, trace = collapse.train_mlp(cfg, data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.csv").write_text(collapse.trace_to_csv(trace), encoding="utf-8")
    tensors = collapse.model_to_tensors(model)
    manifest = bundle_manifest_for(
        tensors, dataset_name="collapse-mlp", metadata={"activation": cfg.activation}
    )
    write_bundle(manifest, tensors, out / "model")
    last = trace.records[-1]
    print(
        f"final epoch {last.epoch}: loss={last.train_loss:.6f} "
        f"acc={last.train_accuracy:.4f} nc1={last.nc1:.6f} "
        f"nc2_norm_spread={last.nc2_norm_spread:.6f} "
        f"nc2_angle_gap={last.nc2_angle_gap:.6f} "
        f"nc3_duality_gap={last.nc3_duality_gap:.6f} "
        f"nc4_agreement={last.nc4_agreement:.4f} "
        f"theorem1_alignment={last.theorem1_alignment:.6f}"
    )
    print(f"wrote trace and model: {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
