#!/usr/bin/env python3
""" AJI, global IOU and Dice for instance label maps """

import logging
from enum import Enum
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from cvnuclei.raster import check_label_map, check_same_shape


# Slack for the aji <= iou <= dice check against floating point rounding
BOUND_TOLERANCE = 1e-12
LOG = logging.getLogger(__name__)


class AJIMode(Enum):
    # Formula as printed: one prediction may be the best match of several gts
    LITERAL = "literal"
    # Each prediction is consumed by its first match, in ascending gt order
    USED_FLAG = "used_flag"


class MatchPair(NamedTuple):
    gt_label: int
    pred_label: Optional[int]
    intersection: int
    union: int


class MatchAssignment(NamedTuple):
    pairs: List[MatchPair]
    unmatched_preds: FrozenSet[int]


class MetricReport(NamedTuple):
    aji: float
    iou: float
    dice: float
    assignment: MatchAssignment

    def to_text(self) -> str:
        return f"aji={self.aji:.6f}\niou={self.iou:.6f}\ndice={self.dice:.6f}\n"


class AggregateReport(NamedTuple):
    aji: float
    iou: float
    dice: float
    images: int
    groups: Dict[str, Tuple[float, float, float, int]]


class _OverlapTable(NamedTuple):
    gt_labels: np.ndarray
    pred_labels: np.ndarray
    # intersections[i, j] = |G_i & P_j|
    intersections: np.ndarray
    gt_areas: np.ndarray
    pred_areas: np.ndarray

    def iou_row(self, i: int) -> np.ndarray:
        unions = self.gt_areas[i] + self.pred_areas - self.intersections[i]
        return self.intersections[i] / unions


def _overlap_table(gt: np.ndarray, pred: np.ndarray) -> _OverlapTable:
    """Intersection counts for every (gt, pred) pair in one pass over pixels"""
    check_same_shape(check_label_map(gt), check_label_map(pred))
    gt_labels, gt_index = np.unique(gt.ravel(), return_inverse=True)
    pred_labels, pred_index = np.unique(pred.ravel(), return_inverse=True)
    pairs = gt_index.astype(np.int64) * pred_labels.size + pred_index
    counts = np.bincount(pairs, minlength=gt_labels.size * pred_labels.size)
    counts = counts.reshape(gt_labels.size, pred_labels.size)

    gt_keep = gt_labels != 0
    pred_keep = pred_labels != 0
    return _OverlapTable(
        gt_labels=gt_labels[gt_keep],
        pred_labels=pred_labels[pred_keep],
        intersections=counts[np.ix_(gt_keep, pred_keep)],
        gt_areas=counts[gt_keep].sum(axis=1),
        pred_areas=counts[:, pred_keep].sum(axis=0),
    )


def _assign(table: _OverlapTable, mode: AJIMode) -> MatchAssignment:
    if table.gt_labels.size == 0:
        raise ValueError("AJI is undefined for an all-background ground truth")

    used = np.zeros(table.pred_labels.size, dtype=bool)
    pairs: List[MatchPair] = []
    for i, gt_label in enumerate(table.gt_labels):
        ious = table.iou_row(i) if table.pred_labels.size else np.zeros(0)
        if mode is AJIMode.USED_FLAG:
            ious = np.where(used, -1.0, ious)
        # argmax keeps the first maximum, i.e. the smallest pred label
        best = int(np.argmax(ious)) if ious.size else -1
        if best < 0 or ious[best] <= 0.0:
            pairs.append(MatchPair(int(gt_label), None, 0, int(table.gt_areas[i])))
            continue
        used[best] = True
        intersection = int(table.intersections[i, best])
        union = int(table.gt_areas[i] + table.pred_areas[best]) - intersection
        pairs.append(
            MatchPair(int(gt_label), int(table.pred_labels[best]), intersection, union)
        )

    unmatched = frozenset(int(label) for label in table.pred_labels[~used])
    return MatchAssignment(pairs, unmatched)


def best_match(
    gt: np.ndarray, pred: np.ndarray, mode: AJIMode = AJIMode.LITERAL
) -> MatchAssignment:
    return _assign(_overlap_table(gt, pred), mode)


def _aji_from(table: _OverlapTable, assignment: MatchAssignment) -> float:
    intersection = sum(pair.intersection for pair in assignment.pairs)
    union = sum(pair.union for pair in assignment.pairs)
    unmatched = np.isin(table.pred_labels, list(assignment.unmatched_preds))
    union += int(table.pred_areas[unmatched].sum())
    return intersection / union if union else 0.0


def aji(gt: np.ndarray, pred: np.ndarray, mode: AJIMode = AJIMode.LITERAL) -> float:
    table = _overlap_table(gt, pred)
    return _aji_from(table, _assign(table, mode))


def _foreground_counts(gt: np.ndarray, pred: np.ndarray) -> Tuple[int, int, int]:
    check_same_shape(check_label_map(gt), check_label_map(pred))
    g, p = gt > 0, pred > 0
    return int(np.count_nonzero(g & p)), int(g.sum()), int(p.sum())


def global_iou(gt: np.ndarray, pred: np.ndarray) -> float:
    intersection, g, p = _foreground_counts(gt, pred)
    union = g + p - intersection
    # Both empty counts as a perfect match
    return intersection / union if union else 1.0


def dice(gt: np.ndarray, pred: np.ndarray) -> float:
    intersection, g, p = _foreground_counts(gt, pred)
    return 2 * intersection / (g + p) if g + p else 1.0


def evaluate(
    gt: np.ndarray, pred: np.ndarray, mode: AJIMode = AJIMode.LITERAL
) -> MetricReport:
    table = _overlap_table(gt, pred)
    assignment = _assign(table, mode)
    report = MetricReport(
        aji=_aji_from(table, assignment),
        iou=global_iou(gt, pred),
        dice=dice(gt, pred),
        assignment=assignment,
    )
    if not (
        report.aji <= report.iou + BOUND_TOLERANCE
        and report.iou <= report.dice + BOUND_TOLERANCE
    ):
        raise RuntimeError(f"Metric bound chain violated: {report.to_text()!r}")
    return report


def aggregate(
    reports: Sequence[MetricReport], groups: Optional[Sequence[str]] = None
) -> AggregateReport:
    """Equal weight mean over images, overall and per group"""
    if not reports:
        raise ValueError("No reports to aggregate")
    if groups is not None and len(groups) != len(reports):
        raise ValueError(f"{len(groups)} group names for {len(reports)} reports")

    def _mean(members: Sequence[MetricReport]) -> Tuple[float, float, float, int]:
        return (
            float(np.mean([r.aji for r in members])),
            float(np.mean([r.iou for r in members])),
            float(np.mean([r.dice for r in members])),
            len(members),
        )

    per_group: Dict[str, Tuple[float, float, float, int]] = {}
    if groups is not None:
        for name in sorted(set(groups)):
            per_group[name] = _mean([r for r, g in zip(reports, groups) if g == name])

    mean_aji, mean_iou, mean_dice, count = _mean(reports)
    LOG.debug(f"Aggregated {count} images into {len(per_group)} groups")
    return AggregateReport(mean_aji, mean_iou, mean_dice, count, per_group)
