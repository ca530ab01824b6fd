"""Ground-truth labeling of correspondences and precision/recall/F scoring.

A correspondence is a true inlier when its residual under the ground-truth
transform is strictly below `multiplier * pr`. Two F variants are reported:
`f_paper` = P*R / (P+R) (bounded by 0.5) and the conventional
`f1` = 2*P*R / (P+R).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .compatibility import CorrespondenceSet
from .errors import DimensionMismatchError, InvalidParameterError
from .geometry import PointCloud, RigidTransform, transform_points

DEFAULT_INLIER_MULTIPLIER = 5.0

REPORT_CSV_COLUMNS = ("method", "n_group", "n_inlier_in_group", "n_gt_inlier",
                      "precision", "recall", "f_paper", "f1")


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f_paper: float
    f1: float
    n_group: int
    n_inlier_in_group: int
    n_gt_inlier: int
    method: str = ""
    degenerate: bool = False  # a zero-denominator convention was applied


def label_inliers(corrs: CorrespondenceSet, src: PointCloud, tgt: PointCloud,
                  gt: RigidTransform, pr: float,
                  multiplier: float = DEFAULT_INLIER_MULTIPLIER) -> np.ndarray:
    """Boolean labels: residual under gt strictly below multiplier * pr."""
    if pr <= 0.0 or multiplier <= 0.0:
        raise InvalidParameterError("pr and multiplier must be positive")
    corrs.check_bounds(len(src), len(tgt))
    moved = transform_points(src.points[corrs.src_indices], gt)
    diff = moved - tgt.points[corrs.tgt_indices]
    residual = np.sqrt((diff * diff).sum(axis=1))
    return residual < multiplier * pr


def score(kept: np.ndarray, labels: np.ndarray, method: str = "") -> EvalReport:
    """Precision/recall/F for a keep-mask against ground-truth labels.

    Zero-denominator cases (empty kept set, no true inliers, P+R = 0) report
    0 for the affected metric and set the `degenerate` flag.
    """
    kept = np.asarray(kept, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if kept.shape != labels.shape:
        raise DimensionMismatchError(f"mask length {kept.shape} != labels length {labels.shape}")
    n_group = int(kept.sum())
    n_inlier_in_group = int((kept & labels).sum())
    n_gt_inlier = int(labels.sum())
    degenerate = n_group == 0 or n_gt_inlier == 0
    precision = n_inlier_in_group / n_group if n_group else 0.0
    recall = n_inlier_in_group / n_gt_inlier if n_gt_inlier else 0.0
    if precision + recall > 0.0:
        f_paper = precision * recall / (precision + recall)
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f_paper = f1 = 0.0
        degenerate = True
    return EvalReport(precision, recall, f_paper, f1,
                      n_group, n_inlier_in_group, n_gt_inlier, method, degenerate)


def report_to_text(report: EvalReport) -> str:
    """Line-oriented `key value` rendering."""
    lines = [
        f"method {report.method or '-'}",
        f"n_group {report.n_group}",
        f"n_inlier_in_group {report.n_inlier_in_group}",
        f"n_gt_inlier {report.n_gt_inlier}",
        f"precision {report.precision!r}",
        f"recall {report.recall!r}",
        f"f_paper {report.f_paper!r}",
        f"f1 {report.f1!r}",
    ]
    if report.degenerate:
        lines.append("degenerate true")
    return "\n".join(lines) + "\n"


def reports_to_csv(reports: list[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_CSV_COLUMNS)
    for r in reports:
        writer.writerow([r.method or "-", r.n_group, r.n_inlier_in_group, r.n_gt_inlier,
                         repr(r.precision), repr(r.recall), repr(r.f_paper), repr(r.f1)])
    return buf.getvalue()


def mean_report(reports: list[EvalReport], method: str = "") -> EvalReport:
    """Per-pair averaged P/R/F plus pooled counts across several reports."""
    if not reports:
        raise InvalidParameterError("cannot average zero reports")
    return EvalReport(
        precision=float(np.mean([r.precision for r in reports])),
        recall=float(np.mean([r.recall for r in reports])),
        f_paper=float(np.mean([r.f_paper for r in reports])),
        f1=float(np.mean([r.f1 for r in reports])),
        n_group=sum(r.n_group for r in reports),
        n_inlier_in_group=sum(r.n_inlier_in_group for r in reports),
        n_gt_inlier=sum(r.n_gt_inlier for r in reports),
        method=method or (reports[0].method if reports else ""),
        degenerate=any(r.degenerate for r in reports),
    )
