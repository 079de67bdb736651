"""Threshold-dependent (best F1) and threshold-free (AUROC) evaluation.

Scores are first oriented so that higher always means more anomalous: the
error score passes through unchanged, the probability score is negated (low
predictive probability signals an anomaly). Best F1 scans every candidate
threshold -- midpoints between adjacent distinct scores plus the two infinite
sentinels -- predicting abnormal at ``score >= threshold``. AUROC uses the
rank (Mann-Whitney) formulation with half credit for ties.
"""

from __future__ import annotations

import csv
import hashlib
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import DegenerateLabels, UnlabeledRecord
from .ingest import Label

SCORE_KINDS = ("error", "prob")


@dataclass(slots=True)
class ScoredRecord:
    """One row of the scores CSV (a sequence, or a block for HDFS)."""

    key_hash: str
    group_id: Optional[str]
    label: Label
    s_len: int
    abnormal_error: float
    abnormal_prob: float


@dataclass(slots=True)
class EvalResult:
    best_f1: float
    best_threshold: float
    precision: float
    recall: float
    auroc: float
    tp: int
    fp: int
    tn: int
    fn: int
    n_pos: int
    n_neg: int


def key_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def orient(records: Iterable[ScoredRecord], which: str) -> list[tuple[float, int]]:
    """Map records to (score, label01) with higher score = more anomalous."""
    if which not in SCORE_KINDS:
        raise ValueError(f"which must be one of {SCORE_KINDS}, got {which!r}")
    out: list[tuple[float, int]] = []
    for rec in records:
        if rec.label is Label.UNLABELED:
            raise UnlabeledRecord(f"record {rec.key_hash} has no label")
        value = rec.abnormal_error if which == "error" else -rec.abnormal_prob
        out.append((value, 1 if rec.label is Label.ABNORMAL else 0))
    return out


def _check_both_classes(labels: np.ndarray) -> tuple[int, int]:
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("need at least one positive and one negative label")
    return n_pos, n_neg


def candidate_thresholds(scores: np.ndarray) -> list[float]:
    """Midpoints between adjacent distinct scores, plus -inf and +inf."""
    distinct = np.unique(scores)
    mids = [(a + b) / 2.0 for a, b in zip(distinct, distinct[1:])]
    return [-np.inf, *mids, np.inf]


def best_f1(oriented: list[tuple[float, int]]) -> EvalResult:
    """Maximum F1 over all candidate thresholds (ties favor the smallest).

    Prediction rule: abnormal iff score >= threshold. F1 is 0 when precision
    and recall are both 0. AUROC is filled in by :func:`evaluate`; here it is
    set to nan.
    """
    scores = np.array([s for s, _ in oriented], dtype=np.float64)
    labels = np.array([y for _, y in oriented], dtype=np.int64)
    n_pos, n_neg = _check_both_classes(labels)

    order = np.argsort(scores, kind="mergesort")
    asc_scores = scores[order]
    asc_labels = labels[order]
    # pos_suffix[i] = positives among asc_scores[i:]
    pos_suffix = np.concatenate([np.cumsum(asc_labels[::-1])[::-1], [0]])

    best = None
    for threshold in candidate_thresholds(scores):
        i = bisect_left(asc_scores, threshold)  # first index with score >= threshold
        tp = int(pos_suffix[i])
        predicted_pos = len(scores) - i
        fp = predicted_pos - tp
        fn = n_pos - tp
        tn = n_neg - fp
        denom = 2 * tp + fp + fn
        f1 = (2 * tp / denom) if denom > 0 else 0.0
        if best is None or f1 > best[0] or (f1 == best[0] and threshold < best[1]):
            best = (f1, threshold, tp, fp, tn, fn)

    f1, threshold, tp, fp, tn, fn = best
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return EvalResult(
        best_f1=f1,
        best_threshold=float(threshold),
        precision=precision,
        recall=recall,
        auroc=float("nan"),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        n_pos=n_pos,
        n_neg=n_neg,
    )


def auroc(oriented: list[tuple[float, int]]) -> float:
    """Rank-based AUROC; equals the pairwise statistic with 0.5 per tie."""
    scores = np.array([s for s, _ in oriented], dtype=np.float64)
    labels = np.array([y for _, y in oriented], dtype=np.int64)
    n_pos, n_neg = _check_both_classes(labels)

    order = np.argsort(scores, kind="mergesort")
    asc = scores[order]
    ranks = np.empty(len(asc), dtype=np.float64)
    i = 0
    while i < len(asc):
        j = i
        while j < len(asc) and asc[j] == asc[i]:
            j += 1
        ranks[order[i:j]] = (i + 1 + j) / 2.0  # mean of 1-based ranks i+1..j
        i = j
    rank_sum_pos = float(ranks[labels == 1].sum())
    u_statistic = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u_statistic / (n_pos * n_neg)


def evaluate(records: list[ScoredRecord], which: str) -> EvalResult:
    """Best F1 and AUROC of one score kind against the record labels."""
    oriented = orient(records, which)
    result = best_f1(oriented)
    result.auroc = auroc(oriented)
    return result


def roc_points(oriented: list[tuple[float, int]]) -> list[tuple[float, float, float]]:
    """(fpr, tpr, threshold) at every candidate threshold, for plotting."""
    scores = np.array([s for s, _ in oriented], dtype=np.float64)
    labels = np.array([y for _, y in oriented], dtype=np.int64)
    n_pos, n_neg = _check_both_classes(labels)
    order = np.argsort(scores, kind="mergesort")
    asc_scores = scores[order]
    asc_labels = labels[order]
    pos_suffix = np.concatenate([np.cumsum(asc_labels[::-1])[::-1], [0]])
    points = []
    for threshold in candidate_thresholds(scores):
        i = bisect_left(asc_scores, threshold)
        tp = int(pos_suffix[i])
        fp = (len(scores) - i) - tp
        points.append((fp / n_neg, tp / n_pos, float(threshold)))
    return sorted(points)


# --- file formats -----------------------------------------------------------

SCORES_HEADER = ["key_hash", "group_id", "label", "s_len", "abnormal_error", "abnormal_prob"]


def write_scores_csv(path: str | Path, records: Iterable[ScoredRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORES_HEADER)
        for r in records:
            writer.writerow(
                [r.key_hash, r.group_id or "", r.label.value, r.s_len,
                 repr(r.abnormal_error), repr(r.abnormal_prob)]
            )


def read_scores_csv(path: str | Path) -> list[ScoredRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SCORES_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in reader:
            records.append(
                ScoredRecord(
                    key_hash=row[0],
                    group_id=row[1] or None,
                    label=Label(row[2]),
                    s_len=int(row[3]),
                    abnormal_error=float(row[4]),
                    abnormal_prob=float(row[5]),
                )
            )
    return records


def write_report(path: str | Path, results: dict[str, EvalResult]) -> None:
    """Plain-text report: one ``<score_kind>.<metric> <value>`` line each."""
    lines = []
    for which, r in sorted(results.items()):
        lines.append(f"{which}.auroc {r.auroc:.6f}")
        lines.append(f"{which}.best_f1 {r.best_f1:.6f}")
        lines.append(f"{which}.best_threshold {r.best_threshold!r}")
        lines.append(f"{which}.precision {r.precision:.6f}")
        lines.append(f"{which}.recall {r.recall:.6f}")
        lines.append(f"{which}.confusion tp={r.tp} fp={r.fp} tn={r.tn} fn={r.fn}")
        lines.append(f"{which}.n_pos {r.n_pos}")
        lines.append(f"{which}.n_neg {r.n_neg}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_roc_csv(path: str | Path, points: list[tuple[float, float, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr", "threshold"])
        for fpr, tpr, threshold in points:
            writer.writerow([repr(fpr), repr(tpr), repr(threshold)])
