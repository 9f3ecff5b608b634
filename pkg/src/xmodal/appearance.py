"""Appearance descriptions per detection: ROI crops, prompting and reply parsing."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

from .providers import ChatRequest, ImagePart, Provider, ProviderError, TextPart, call_with_retry
from .scene_io import ATTRIBUTE_KEYS, AppearanceRecord, BBox, DescriptionCache, Detection, ScenePair

logger = logging.getLogger(__name__)

DEFAULT_MARGIN_RATIO = 0.5
DEFAULT_ZOOM = 2.0

DESCRIBE_PROMPT = (
    "You are shown a zoomed-in crop of one person taken from a {modality} camera image "
    "that belongs to a paired RGB/thermal capture. Describe the visible appearance of this "
    "person: what they wear, what they carry, their hair, which way they face, and anything "
    "else that would help recognise them in the other camera.\n"
    "Answer with exactly these labeled lines, one value each:\n"
    "clothing: <value>\n"
    "accessories: <value>\n"
    "hairstyle: <value>\n"
    "facing_direction: <value>\n"
    "other: <value>"
)


@dataclass(frozen=True)
class RoiCrop:
    det_id: str
    crop_box: BBox
    scale_factor: float


def make_roi_crop(
    det: Detection,
    image_size: Sequence[float],
    margin_ratio: float = DEFAULT_MARGIN_RATIO,
    zoom: float = DEFAULT_ZOOM,
) -> RoiCrop:
    """Expand the box by ``margin_ratio * max(w, h)`` per side and clip to the image."""
    if margin_ratio < 0:
        raise ValueError("margin_ratio must be >= 0")
    if zoom <= 1:
        raise ValueError("zoom must be > 1")
    width, height = image_size
    b = det.bbox
    if b.x2 <= 0 or b.y2 <= 0 or b.x >= width or b.y >= height:
        raise ValueError(f"bbox of {det.det_id!r} lies fully outside the image")
    pad = margin_ratio * max(b.w, b.h)
    if pad == 0 and b.x >= 0 and b.y >= 0 and b.x2 <= width and b.y2 <= height:
        return RoiCrop(det.det_id, b, zoom)
    x1 = max(0.0, b.x - pad)
    y1 = max(0.0, b.y - pad)
    x2 = min(float(width), b.x2 + pad)
    y2 = min(float(height), b.y2 + pad)
    return RoiCrop(det.det_id, BBox.from_corners(x1, y1, x2, y2), zoom)


def normalize_value(value: str) -> str:
    return " ".join(value.lower().split())


def normalize_attributes(attributes: dict[str, str]) -> dict[str, str]:
    return {k: normalize_value(v) for k, v in attributes.items()}


_LINE_RE = re.compile(
    r"^\s*(?:[-*]\s*)?(" + "|".join(ATTRIBUTE_KEYS) + r")\s*[:=]\s*(.+?)\s*$",
    re.IGNORECASE,
)


def parse_attribute_reply(text: str) -> dict[str, str]:
    """Extract labeled attribute lines; later duplicates are ignored."""
    attrs: dict[str, str] = {}
    for line in text.splitlines():
        m = _LINE_RE.match(line)
        if m:
            key = m.group(1).lower()
            attrs.setdefault(key, normalize_value(m.group(2)))
    return attrs


def describe_request(
    det: Detection, crop: RoiCrop, scene_id: str, image: Optional[str] = None
) -> ChatRequest:
    modality = "RGB" if det.modality.value == "RGB" else "thermal"
    parts: list = [TextPart(DESCRIBE_PROMPT.format(modality=modality))]
    if image is not None:
        parts.append(ImagePart(image, crop.crop_box, crop.scale_factor))
    c = crop.crop_box
    parts.append(
        TextPart(f"Person {det.det_id}; region x={c.x:.1f} y={c.y:.1f} w={c.w:.1f} h={c.h:.1f}")
    )
    return ChatRequest(
        parts=parts,
        meta={
            "task": "describe",
            "scene_id": scene_id,
            "det_id": det.det_id,
            "modality": det.modality.value,
            "gt_identity": det.gt_identity,
        },
    )


def describe(
    det: Detection,
    crop: RoiCrop,
    provider: Provider,
    scene_id: str = "",
    image: Optional[str] = None,
    attempts: int = 3,
) -> AppearanceRecord:
    """Ask ``provider`` for a description of one detection crop.

    Transport failures are retried. A reply without labeled attribute lines is
    re-requested up to ``attempts`` times, then kept raw with no attributes.
    """
    request = describe_request(det, crop, scene_id, image)
    text = ""
    attrs: dict[str, str] = {}
    for _ in range(attempts):
        text = call_with_retry(provider, request, attempts=attempts)
        attrs = parse_attribute_reply(text)
        if attrs:
            break
    if not attrs:
        logger.warning("%s: reply for %s has no attribute labels; keeping raw text", provider.name, det.det_id)
    return AppearanceRecord(
        det_id=det.det_id,
        modality=det.modality,
        description_text=text.strip() or "(empty reply)",
        attributes=attrs,
        provenance=provider.name,
    )


def describe_all(
    scene: ScenePair,
    providers: Sequence[Provider],
    parallelism: int = 1,
    margin_ratio: float = DEFAULT_MARGIN_RATIO,
) -> DescriptionCache:
    """One record per (detection, provider); order does not depend on scheduling."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    jobs = []
    for modality_dets, size, image in (
        (scene.rgb_detections, scene.image_size_rgb, scene.rgb_image),
        (scene.thermal_detections, scene.image_size_thermal, scene.thermal_image),
    ):
        for det in modality_dets:
            for provider in providers:
                jobs.append((det, size, image, provider))

    def run(job):
        det, size, image, provider = job
        try:
            crop = make_roi_crop(det, size, margin_ratio)
            return describe(det, crop, provider, scene.scene_id, image), None
        except (ProviderError, ValueError) as exc:
            return None, {
                "det_id": det.det_id,
                "modality": det.modality.value,
                "provider": provider.name,
                "error": str(exc),
            }

    if parallelism == 1:
        results = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(run, jobs))
    cache = DescriptionCache(scene.scene_id)
    for rec, failure in results:
        if rec is not None:
            cache.records.append(rec)
        else:
            cache.failures.append(failure)
    return cache
