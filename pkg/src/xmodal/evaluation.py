"""Alignment error rate and average precision, plus dataset-level reports."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .fusion import FusedDetection
from .scene_io import BBox, MatchResult, iou

DEFAULT_AP_IOU = 0.5


def compute_aer(gt_pairs: Sequence[tuple[str, str]], predicted: MatchResult) -> tuple[float, int, int]:
    """Fraction of ground-truth pairs not reproduced exactly by ``predicted``.

    Predicted pairs absent from the ground truth do not enter the denominator.
    """
    if not gt_pairs:
        raise ValueError("AER is undefined without ground-truth pairs")
    predicted_set = set(map(tuple, predicted.pairs))
    mismatched = sum(1 for pair in gt_pairs if tuple(pair) not in predicted_set)
    return mismatched / len(gt_pairs), mismatched, len(gt_pairs)


def _all_points_ap(tp: np.ndarray, n_gt: int) -> float:
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def compute_ap_pooled(
    images: Sequence[tuple[Sequence[FusedDetection], Sequence[BBox]]],
    iou_threshold: float = DEFAULT_AP_IOU,
) -> float:
    """Single-class AP over several images; detections only claim boxes of their own image."""
    if not 0 < iou_threshold < 1:
        raise ValueError("iou_threshold must lie in (0, 1)")
    n_gt = sum(len(gt) for _, gt in images)
    if n_gt == 0:
        raise ValueError("AP is undefined without ground-truth boxes")
    ranked = sorted(
        ((det.score, det.det_id, k, det) for k, (dets, _) in enumerate(images) for det in dets),
        key=lambda item: (-item[0], item[1], item[2]),
    )
    claimed = [[False] * len(gt) for _, gt in images]
    tp = np.zeros(len(ranked))
    for n, (_, _, k, det) in enumerate(ranked):
        gt = images[k][1]
        best, best_iou = -1, iou_threshold
        for g, box in enumerate(gt):
            if claimed[k][g]:
                continue
            v = iou(det.bbox, box)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = g, v
        if best >= 0:
            claimed[k][best] = True
            tp[n] = 1.0
    return _all_points_ap(tp, n_gt)


def compute_ap(
    fused: Sequence[FusedDetection], gt_boxes: Sequence[BBox], iou_threshold: float = DEFAULT_AP_IOU
) -> float:
    return compute_ap_pooled([(fused, gt_boxes)], iou_threshold)


@dataclass
class SceneEval:
    scene_id: str
    matches: MatchResult
    fused: list[FusedDetection]
    gt_boxes: list[BBox]
    gt_pairs: Optional[list[tuple[str, str]]] = None


@dataclass
class EvalReport:
    dataset_id: str
    matcher_id: str
    debate_enabled: bool
    ap: Optional[float]
    aer: Optional[float]
    n_scenes: int
    n_gt_pairs: int
    n_mismatched: int
    frame: str = "THERMAL"
    iou_threshold: float = DEFAULT_AP_IOU

    def to_doc(self) -> dict:
        doc = asdict(self)
        doc = {
            "schema": 1,
            "dataset": doc.pop("dataset_id"),
            "matcher": doc.pop("matcher_id"),
            "debate": doc.pop("debate_enabled"),
            **doc,
        }
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "EvalReport":
        return cls(
            dataset_id=doc["dataset"],
            matcher_id=doc["matcher"],
            debate_enabled=bool(doc["debate"]),
            ap=doc["ap"],
            aer=doc["aer"],
            n_scenes=doc["n_scenes"],
            n_gt_pairs=doc["n_gt_pairs"],
            n_mismatched=doc["n_mismatched"],
            frame=doc.get("frame", "THERMAL"),
            iou_threshold=doc.get("iou_threshold", DEFAULT_AP_IOU),
        )


def aggregate_report(
    scenes: Sequence[SceneEval],
    dataset_id: str = "dataset",
    matcher_id: str = "structural",
    debate_enabled: bool = False,
    iou_threshold: float = DEFAULT_AP_IOU,
    frame: str = "THERMAL",
) -> EvalReport:
    """Pool AER over all ground-truth pairs and AP over all detections."""
    if not scenes:
        raise ValueError("need at least one scene")
    n_total = n_mismatched = 0
    for s in scenes:
        if s.gt_pairs:
            _, mis, tot = compute_aer(s.gt_pairs, s.matches)
            n_total += tot
            n_mismatched += mis
    aer = n_mismatched / n_total if n_total else None
    has_gt = any(s.gt_boxes for s in scenes)
    ap = compute_ap_pooled([(s.fused, s.gt_boxes) for s in scenes], iou_threshold) if has_gt else None
    return EvalReport(
        dataset_id, matcher_id, debate_enabled, ap, aer, len(scenes), n_total, n_mismatched, frame, iou_threshold
    )


def _pct(value: Optional[float]) -> str:
    return "-" if value is None else f"{100.0 * value:.1f}"


def format_table(reports: Sequence[EvalReport]) -> str:
    """Aligned plain-text table with columns Model | LLM Debate | AP | AER."""
    header = ("Model", "LLM Debate", "AP", "AER")
    rows = [(r.matcher_id, "yes" if r.debate_enabled else "no", _pct(r.ap), _pct(r.aer)) for r in reports]
    widths = [max(len(str(row[i])) for row in [header, *rows]) for i in range(4)]

    def fmt(row):
        cells = [str(row[0]).ljust(widths[0]), str(row[1]).ljust(widths[1])]
        cells += [str(c).rjust(w) for c, w in zip(row[2:], widths[2:])]
        return " | ".join(cells).rstrip()

    sep = "-+-".join("-" * w for w in widths)
    lines = [fmt(header), sep, *(fmt(r) for r in rows)]
    if reports:
        lines.append("")
        lines.append(f"dataset={reports[0].dataset_id} frame={reports[0].frame} ap_iou={reports[0].iou_threshold}")
    return "\n".join(lines) + "\n"
