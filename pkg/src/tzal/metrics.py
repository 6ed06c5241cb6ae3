"""Temporal detection evaluation: tIoU, per-category average precision with
greedy matching, and mAP over threshold grids.

Protocol follows the usual temporal detection setup: predictions are pooled
per category across videos, sorted by descending score (ties: earlier start,
then input order), greedily matched within their own video to the unmatched
ground truth with the highest tIoU, and AP integrates the all-point
interpolated precision envelope.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .featio import AnnotationSet, PredictionSet

log = logging.getLogger("tzal.metrics")

THUMOS_GRID = (0.3, 0.4, 0.5, 0.6, 0.7)
ANET_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def tiou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Temporal intersection over union of two [start, end) intervals."""
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    if union <= 0:
        return 0.0
    return inter / union


def _interpolated_ap(tp_flags: list[bool], num_gt: int) -> float:
    """All-point interpolated AP from per-prediction hit flags (already in
    ranked order). Inspired by the Pascal VOC evaluation tool."""
    tp = np.cumsum([1.0 if f else 0.0 for f in tp_flags])
    fp = np.cumsum([0.0 if f else 1.0 for f in tp_flags])
    rec = tp / num_gt
    prec = tp / np.maximum(tp + fp, 1e-12)
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    changed = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changed + 1] - mrec[changed]) * mpre[changed + 1]))


def average_precision(predictions: list[tuple[str, float, float, float]],
                      ground_truth: list[tuple[str, float, float]],
                      iou_threshold: float) -> float | None:
    """AP for one category.

    predictions: (video_id, start, end, score); ground_truth: (video_id,
    start, end). Returns None when both lists are empty (category undefined),
    0.0 when one side is empty.
    """
    if not ground_truth:
        return None if not predictions else 0.0
    if not predictions:
        return 0.0
    order = sorted(range(len(predictions)),
                   key=lambda i: (-predictions[i][3], predictions[i][1], i))
    gt_by_video: dict[str, list[int]] = {}
    for gi, g in enumerate(ground_truth):
        gt_by_video.setdefault(g[0], []).append(gi)
    matched = [False] * len(ground_truth)
    flags = []
    for pi in order:
        vid, start, end, _ = predictions[pi]
        best_iou, best_gi = 0.0, -1
        for gi in gt_by_video.get(vid, []):
            if matched[gi]:
                continue
            ov = tiou((start, end), (ground_truth[gi][1], ground_truth[gi][2]))
            if ov > best_iou:
                best_iou, best_gi = ov, gi
        if best_gi >= 0 and best_iou >= iou_threshold:
            matched[best_gi] = True
            flags.append(True)
        else:
            flags.append(False)
    return _interpolated_ap(flags, len(ground_truth))


@dataclass
class EvalReport:
    thresholds: list[float]
    map_by_threshold: list[float]
    average_map: float
    per_category: dict[str, list[float]]   # category -> AP at each threshold
    num_videos: int
    num_ground_truth: int


def evaluate(predictions: PredictionSet, ground_truth: AnnotationSet,
             thresholds=THUMOS_GRID) -> EvalReport:
    """Mean AP over the categories present in the ground truth, at each tIoU
    threshold. Categories absent from the ground truth are excluded from the
    mean; predictions for such categories are dropped with a warning."""
    thresholds = [float(t) for t in thresholds]
    categories = sorted({seg.label for ann in ground_truth.values()
                         for seg in ann.segments})
    if not categories:
        raise ValueError("ground truth contains no segments")
    known = set(categories)

    gt_by_cat: dict[str, list] = {c: [] for c in categories}
    for vid, ann in ground_truth.items():
        for seg in ann.segments:
            gt_by_cat[seg.label].append((vid, seg.start_s, seg.end_s))
    pred_by_cat: dict[str, list] = {c: [] for c in categories}
    alien = set()
    for vid, props in predictions.items():
        for p in props:
            if p.label not in known:
                alien.add(p.label)
                continue
            pred_by_cat[p.label].append((vid, p.start_s, p.end_s, p.score))
    if alien:
        log.warning("ignoring predictions for labels with no ground truth: %s",
                    ", ".join(sorted(alien)))

    per_category = {}
    for cat in categories:
        per_category[cat] = [average_precision(pred_by_cat[cat], gt_by_cat[cat], t)
                             for t in thresholds]
    map_by_threshold = [float(np.mean([per_category[c][ti] for c in categories]))
                        for ti in range(len(thresholds))]
    return EvalReport(thresholds=thresholds,
                      map_by_threshold=map_by_threshold,
                      average_map=float(np.mean(map_by_threshold)),
                      per_category=per_category,
                      num_videos=len(ground_truth),
                      num_ground_truth=sum(len(v) for v in gt_by_cat.values()))


def parse_grid(text: str) -> tuple[float, ...]:
    if text == "thumos":
        return THUMOS_GRID
    if text == "anet":
        return ANET_GRID
    try:
        values = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ValueError(f"cannot parse tIoU grid {text!r}") from None
    if not values or any(not 0.0 < v <= 1.0 for v in values):
        raise ValueError(f"tIoU grid values must lie in (0, 1]: {text!r}")
    return values


def format_table(report: EvalReport, per_category: bool = False) -> str:
    """Aligned mAP table, percentages with two decimals."""
    cols = [f"{t:.2f}" for t in report.thresholds] + ["Avg."]
    width = max(8, max(len(c) for c in cols) + 2)
    name_w = max([len("mAP (%)")] + [len(c) for c in report.per_category]) + 2
    lines = ["".join([" " * name_w] + [c.rjust(width) for c in cols])]
    if per_category:
        for cat in report.per_category:
            aps = report.per_category[cat]
            row = [f"{100 * a:.2f}" for a in aps] + [f"{100 * float(np.mean(aps)):.2f}"]
            lines.append("".join([cat.ljust(name_w)] + [c.rjust(width) for c in row]))
    row = [f"{100 * v:.2f}" for v in report.map_by_threshold]
    row.append(f"{100 * report.average_map:.2f}")
    lines.append("".join(["mAP (%)".ljust(name_w)] + [c.rjust(width) for c in row]))
    return "\n".join(lines)


def report_to_json(report: EvalReport, path: str | Path) -> None:
    doc = {
        "thresholds": report.thresholds,
        "map_by_threshold": report.map_by_threshold,
        "average_map": report.average_map,
        "per_category": report.per_category,
        "num_videos": report.num_videos,
        "num_ground_truth": report.num_ground_truth,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
