"""Detection-quality metrics with ID as the positive class.

Scores are oriented so that higher means more in-distribution. AUROC is
the tie-corrected pairwise probability that a random ID sample outscores a
random OOD sample; FPR@TPR is the OOD acceptance rate at the loosest
threshold that still keeps the target fraction of ID samples.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError

EVAL_CSV_COLUMNS = ("detector", "ood_set", "auroc", "fpr95", "n_id", "n_ood")
AVERAGE_ROW_NAME = "Average"


@dataclass(frozen=True)
class EvalReport:
    """AUROC and FPR95 for one (detector, OOD set) pair."""

    detector_name: str
    ood_set_name: str
    auroc: float
    fpr_at_95tpr: float
    n_id: int
    n_ood: int
    config_digest: str = ""


def _check_scores(scores, side: str) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise ContractError(f"{side} scores are empty")
    if not np.all(np.isfinite(scores)):
        raise ContractError(f"{side} scores contain non-finite values")
    return scores


def auroc(id_scores, ood_scores) -> float:
    """Tie-corrected probability that an ID score exceeds an OOD score.

    Rank-based (Mann-Whitney) evaluation: with midranks over the pooled
    scores, the rank sum of the ID side recovers exactly the pairwise sum
    of 1 per win and 0.5 per tie.
    """
    ids = _check_scores(id_scores, "ID")
    oods = _check_scores(ood_scores, "OOD")
    pooled = np.concatenate([ids, oods])
    ranks = rankdata(pooled, method="average")
    id_rank_sum = ranks[: ids.size].sum()
    wins = id_rank_sum - ids.size * (ids.size + 1) / 2.0
    return float(wins / (ids.size * oods.size))


def fpr_at_tpr(id_scores, ood_scores, tpr_target: float = 0.95) -> float:
    """OOD fraction at or above the loosest threshold keeping ``tpr_target`` of ID.

    The threshold is the largest value t with |{id >= t}| / n_id >= target,
    which is the ceil(target * n_id)-th largest ID score.
    """
    ids = _check_scores(id_scores, "ID")
    oods = _check_scores(ood_scores, "OOD")
    if not 0.0 < tpr_target <= 1.0:
        raise ContractError(f"tpr_target must be in (0, 1], got {tpr_target}")
    m = math.ceil(tpr_target * ids.size)
    threshold = np.sort(ids)[::-1][m - 1]
    return float(np.mean(oods >= threshold))


def evaluate(
    detector_name: str,
    id_scores,
    ood_sets: Mapping[str, np.ndarray],
    config_digest: str = "",
) -> list[EvalReport]:
    """One report per OOD set plus an unweighted Average pseudo-row."""
    if not ood_sets:
        raise ContractError("evaluate needs at least one OOD score set")
    ids = _check_scores(id_scores, "ID")
    reports = []
    for name, scores in ood_sets.items():
        oods = _check_scores(scores, f"OOD[{name}]")
        reports.append(
            EvalReport(
                detector_name=detector_name,
                ood_set_name=name,
                auroc=auroc(ids, oods),
                fpr_at_95tpr=fpr_at_tpr(ids, oods, 0.95),
                n_id=ids.size,
                n_ood=oods.size,
                config_digest=config_digest,
            )
        )
    reports.append(
        EvalReport(
            detector_name=detector_name,
            ood_set_name=AVERAGE_ROW_NAME,
            auroc=float(np.mean([r.auroc for r in reports])),
            fpr_at_95tpr=float(np.mean([r.fpr_at_95tpr for r in reports])),
            n_id=ids.size,
            n_ood=int(sum(r.n_ood for r in reports)),
            config_digest=config_digest,
        )
    )
    return reports


def config_digest(config: Mapping) -> str:
    """Short stable digest of a configuration mapping, for provenance."""
    canonical = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def reports_to_csv(reports: list[EvalReport]) -> str:
    """Fixed-column CSV serialization (detector, ood_set, auroc, fpr95, n_id, n_ood)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EVAL_CSV_COLUMNS)
    for r in reports:
        writer.writerow(
            [
                r.detector_name,
                r.ood_set_name,
                f"{r.auroc:.17g}",
                f"{r.fpr_at_95tpr:.17g}",
                r.n_id,
                r.n_ood,
            ]
        )
    return buf.getvalue()


def reports_to_table(reports: list[EvalReport]) -> str:
    """Human-readable aligned table of the same rows as the CSV."""
    headers = ["detector", "ood_set", "auroc", "fpr95", "n_id", "n_ood"]
    rows = [
        [
            r.detector_name,
            r.ood_set_name,
            f"{r.auroc:.4f}",
            f"{r.fpr_at_95tpr:.4f}",
            str(r.n_id),
            str(r.n_ood),
        ]
        for r in reports
    ]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(headers)]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines)
