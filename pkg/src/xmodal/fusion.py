"""Late fusion of matched RGB/thermal detections."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

from .scene_io import BBox, MatchResult, Modality, ScenePair, rescale_box

logger = logging.getLogger(__name__)

DEFAULT_TARGET_FRAME = Modality.THERMAL


@dataclass(frozen=True)
class FusedDetection:
    bbox: BBox
    score: float
    sources: tuple[str, ...]

    @property
    def det_id(self) -> str:
        return "+".join(self.sources)


def fuse_scores(s_rgb: float, s_thermal: float) -> float:
    """Conditional-independence fusion ``ab / (ab + (1-a)(1-b))``.

    The 0/1 conflict has a zero denominator and is defined as 0.5.
    """
    for s in (s_rgb, s_thermal):
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"score {s} outside [0, 1]")
    agree = s_rgb * s_thermal
    disagree = (1.0 - s_rgb) * (1.0 - s_thermal)
    denom = agree + disagree
    if denom == 0.0:
        logger.info("conflicting certain scores (%s, %s); fusing to 0.5", s_rgb, s_thermal)
        return 0.5
    return agree / denom


def fuse_boxes(
    b_rgb: BBox,
    b_thermal: BBox,
    s_rgb: float,
    s_thermal: float,
    target_frame: Modality = DEFAULT_TARGET_FRAME,
    size_rgb: Optional[tuple[float, float]] = None,
    size_thermal: Optional[tuple[float, float]] = None,
) -> BBox:
    """Score-weighted corner average in ``target_frame``.

    The other modality's box is first mapped through normalized coordinates;
    with no image sizes the two frames are taken as identical.
    """
    if size_rgb is not None and size_thermal is not None:
        if target_frame is Modality.THERMAL:
            b_rgb = rescale_box(b_rgb, size_rgb, size_thermal)
        else:
            b_thermal = rescale_box(b_thermal, size_thermal, size_rgb)
    total = s_rgb + s_thermal
    if total <= 0:
        wr = wt = 0.5
    else:
        wr, wt = s_rgb / total, s_thermal / total
    if wt == 0.0:
        return b_rgb
    if wr == 0.0:
        return b_thermal
    x1 = wr * b_rgb.x + wt * b_thermal.x
    y1 = wr * b_rgb.y + wt * b_thermal.y
    x2 = wr * b_rgb.x2 + wt * b_thermal.x2
    y2 = wr * b_rgb.y2 + wt * b_thermal.y2
    return BBox.from_corners(x1, y1, x2, y2)


def fuse_scene(
    scene: ScenePair, matches: MatchResult, target_frame: Modality = DEFAULT_TARGET_FRAME
) -> list[FusedDetection]:
    """Fuse every matched pair; pass unmatched detections through in ``target_frame``."""
    rgb = {d.det_id: d for d in scene.rgb_detections}
    thermal = {d.det_id: d for d in scene.thermal_detections}
    target_size = scene.image_size(target_frame)
    out: list[FusedDetection] = []
    used_r: set[str] = set()
    used_t: set[str] = set()
    for r_id, t_id in matches.pairs:
        if r_id not in rgb:
            raise KeyError(f"dangling RGB id {r_id!r} in matches")
        if t_id not in thermal:
            raise KeyError(f"dangling thermal id {t_id!r} in matches")
        r, t = rgb[r_id], thermal[t_id]
        box = fuse_boxes(
            r.bbox, t.bbox, r.confidence, t.confidence, target_frame, scene.image_size_rgb, scene.image_size_thermal
        )
        out.append(FusedDetection(box, fuse_scores(r.confidence, t.confidence), (r_id, t_id)))
        used_r.add(r_id)
        used_t.add(t_id)
    for det in scene.rgb_detections:
        if det.det_id not in used_r:
            box = det.bbox if target_frame is Modality.RGB else rescale_box(det.bbox, scene.image_size_rgb, target_size)
            out.append(FusedDetection(box, det.confidence, (det.det_id,)))
    for det in scene.thermal_detections:
        if det.det_id not in used_t:
            box = det.bbox if target_frame is Modality.THERMAL else rescale_box(
                det.bbox, scene.image_size_thermal, target_size
            )
            out.append(FusedDetection(box, det.confidence, (det.det_id,)))
    return out


def fused_to_doc(scene_id: str, fused: list[FusedDetection], target_frame: Modality) -> dict:
    return {
        "schema": 1,
        "scene_id": scene_id,
        "frame": target_frame.value,
        "detections": [
            {"det_id": f.det_id, "bbox": f.bbox.to_list(), "confidence": f.score, "sources": list(f.sources)}
            for f in fused
        ],
    }


def fused_from_doc(doc: dict) -> tuple[str, Modality, list[FusedDetection]]:
    from .scene_io import SchemaError, _bbox, _check_schema, _num

    _check_schema(doc)
    try:
        frame = Modality(doc["frame"])
        items = [
            FusedDetection(
                _bbox(d["bbox"], f"detections[{i}].bbox"),
                _num(d["confidence"], f"detections[{i}].confidence"),
                tuple(d["sources"]),
            )
            for i, d in enumerate(doc["detections"])
        ]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError("detections", f"malformed fused document: {exc}") from None
    return doc["scene_id"], frame, items
