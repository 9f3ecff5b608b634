"""On-disk data model: scene manifests, description caches and match outputs.

Every document is JSON with a ``"schema": 1`` field. Loaders validate the
whole document and raise :class:`SchemaError` naming the offending field;
they never hand back a partially constructed value.
"""

from __future__ import annotations

import enum
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

SCHEMA_VERSION = 1

ATTRIBUTE_KEYS = ("clothing", "accessories", "hairstyle", "facing_direction", "other")


class SchemaError(ValueError):
    """A document failed validation. ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class Modality(str, enum.Enum):
    RGB = "RGB"
    THERMAL = "THERMAL"

    @property
    def prefix(self) -> str:
        return "RGB" if self is Modality.RGB else "T"


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"bbox {name} must be finite")
        if self.w <= 0 or self.h <= 0:
            raise ValueError("bbox width and height must be positive")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls(x1, y1, x2 - x1, y2 - y1)

    def contains(self, other: "BBox", eps: float = 1e-9) -> bool:
        return (
            self.x <= other.x + eps
            and self.y <= other.y + eps
            and self.x2 >= other.x2 - eps
            and self.y2 >= other.y2 - eps
        )

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


def iou(a: BBox, b: BBox) -> float:
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def rescale_box(box: BBox, src_size: Sequence[float], dst_size: Sequence[float]) -> BBox:
    """Map a box between image frames through normalized coordinates."""
    sx = dst_size[0] / src_size[0]
    sy = dst_size[1] / src_size[1]
    return BBox(box.x * sx, box.y * sy, box.w * sx, box.h * sy)


@dataclass(frozen=True)
class Detection:
    det_id: str
    modality: Modality
    bbox: BBox
    confidence: float
    gt_identity: Optional[str] = None


@dataclass(frozen=True)
class GtBox:
    identity: str
    bbox: BBox


@dataclass
class ScenePair:
    scene_id: str
    image_size_rgb: tuple[int, int]
    image_size_thermal: tuple[int, int]
    rgb_detections: list[Detection] = field(default_factory=list)
    thermal_detections: list[Detection] = field(default_factory=list)
    rgb_image: Optional[str] = None
    thermal_image: Optional[str] = None
    gt_pairs: Optional[list[tuple[str, str]]] = None
    # Noise-free boxes of every person visible in each frame; AP ground truth.
    gt_boxes_rgb: Optional[list[GtBox]] = None
    gt_boxes_thermal: Optional[list[GtBox]] = None

    def detections(self, modality: Modality) -> list[Detection]:
        return self.rgb_detections if modality is Modality.RGB else self.thermal_detections

    def image_size(self, modality: Modality) -> tuple[int, int]:
        return self.image_size_rgb if modality is Modality.RGB else self.image_size_thermal

    def gt_boxes(self, modality: Modality) -> list[BBox]:
        """Ground-truth boxes in ``modality``'s frame.

        Falls back to the identity-tagged detections when the manifest carries
        no explicit ground-truth boxes.
        """
        explicit = self.gt_boxes_rgb if modality is Modality.RGB else self.gt_boxes_thermal
        if explicit is not None:
            return [g.bbox for g in explicit]
        return [d.bbox for d in self.detections(modality) if d.gt_identity is not None]


@dataclass
class AppearanceRecord:
    det_id: str
    modality: Modality
    description_text: str
    attributes: dict[str, str]
    provenance: str
    transcript_ref: Optional[str] = None

    def __post_init__(self):
        unknown = set(self.attributes) - set(ATTRIBUTE_KEYS)
        if unknown:
            raise ValueError(f"unknown attribute keys: {sorted(unknown)}")
        if not self.description_text:
            raise ValueError("description_text must be non-empty")


@dataclass
class DescriptionCache:
    scene_id: str
    records: list[AppearanceRecord] = field(default_factory=list)
    failures: list[dict[str, str]] = field(default_factory=list)

    def select(self, modality: Modality, provider: Optional[str] = None) -> dict[str, AppearanceRecord]:
        """Records of one modality keyed by det_id (first match per det_id)."""
        out: dict[str, AppearanceRecord] = {}
        for rec in self.records:
            if rec.modality is modality and (provider is None or rec.provenance == provider):
                out.setdefault(rec.det_id, rec)
        return out

    def by_provider(self, modality: Modality, det_id: str) -> dict[str, AppearanceRecord]:
        return {
            r.provenance: r for r in self.records if r.modality is modality and r.det_id == det_id
        }


@dataclass
class MatchResult:
    scene_id: str
    pairs: list[tuple[str, str]]
    rationale: str = ""
    unmatched_rgb: list[str] = field(default_factory=list)
    unmatched_thermal: list[str] = field(default_factory=list)

    @classmethod
    def from_pairs(cls, scene: ScenePair, pairs: Iterable[tuple[str, str]], rationale: str = "") -> "MatchResult":
        pairs = list(pairs)
        used_r = {r for r, _ in pairs}
        used_t = {t for _, t in pairs}
        return cls(
            scene_id=scene.scene_id,
            pairs=pairs,
            rationale=rationale,
            unmatched_rgb=[d.det_id for d in scene.rgb_detections if d.det_id not in used_r],
            unmatched_thermal=[d.det_id for d in scene.thermal_detections if d.det_id not in used_t],
        )

    def validate_against(self, scene: ScenePair) -> None:
        """Check the partial-bijection and exact-partition invariants."""
        for side, dets, idx, unmatched in (
            ("rgb", scene.rgb_detections, 0, self.unmatched_rgb),
            ("thermal", scene.thermal_detections, 1, self.unmatched_thermal),
        ):
            ids = [d.det_id for d in dets]
            paired = [p[idx] for p in self.pairs]
            if len(set(paired)) != len(paired):
                raise SchemaError("pairs", f"duplicate {side} id in pairs")
            known = set(ids)
            for k, det_id in enumerate(paired):
                if det_id not in known:
                    raise SchemaError(f"pairs[{k}]", f"dangling {side} id {det_id!r}")
            for det_id in unmatched:
                if det_id not in known:
                    raise SchemaError(f"unmatched_{side}", f"dangling {side} id {det_id!r}")
            if sorted(paired + list(unmatched)) != sorted(ids):
                raise SchemaError(
                    f"unmatched_{side}", f"pairs and unmatched_{side} do not partition the {side} detections"
                )


# ---------------------------------------------------------------------------
# validation helpers


def _req(doc: dict, key: str, path: str) -> Any:
    if not isinstance(doc, dict):
        raise SchemaError(path, "expected an object")
    if key not in doc:
        raise SchemaError(f"{path}.{key}" if path else key, "missing required field")
    return doc[key]


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _str(value: Any, path: str) -> str:
    if not isinstance(value, str) or not value:
        raise SchemaError(path, "expected a non-empty string")
    return value


def _num(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(path, "expected a number")
    value = float(value)
    if not math.isfinite(value):
        raise SchemaError(path, "expected a finite number")
    return value


def _size(value: Any, path: str) -> tuple[int, int]:
    if not isinstance(value, list) or len(value) != 2:
        raise SchemaError(path, "expected [width, height]")
    w, h = value
    if isinstance(w, bool) or isinstance(h, bool) or not isinstance(w, int) or not isinstance(h, int):
        raise SchemaError(path, "image size must be integers")
    if w <= 0 or h <= 0:
        raise SchemaError(path, "image size must be positive")
    return (w, h)


def _bbox(value: Any, path: str) -> BBox:
    if not isinstance(value, list) or len(value) != 4:
        raise SchemaError(path, "expected [x, y, w, h]")
    x, y, w, h = (_num(v, f"{path}[{i}]") for i, v in enumerate(value))
    if w <= 0 or h <= 0:
        raise SchemaError(path, "bbox width and height must be positive")
    return BBox(x, y, w, h)


def _check_schema(doc: Any) -> None:
    if not isinstance(doc, dict):
        raise SchemaError("", "document must be a JSON object")
    if doc.get("schema") != SCHEMA_VERSION:
        raise SchemaError("schema", f"unsupported schema version {doc.get('schema')!r}")


def _modality(value: Any, path: str) -> Modality:
    try:
        return Modality(value)
    except ValueError:
        raise SchemaError(path, f"unknown modality {value!r}") from None


def _detections(items: Any, modality: Modality, path: str) -> list[Detection]:
    if not isinstance(items, list):
        raise SchemaError(path, "expected a list")
    out: list[Detection] = []
    seen: set[str] = set()
    for i, item in enumerate(items):
        p = f"{path}[{i}]"
        det_id = _str(_req(item, "det_id", p), f"{p}.det_id")
        if det_id in seen:
            raise SchemaError(f"{p}.det_id", f"duplicate det_id {det_id!r}")
        seen.add(det_id)
        conf = _num(_req(item, "confidence", p), f"{p}.confidence")
        if not 0.0 <= conf <= 1.0:
            raise SchemaError(f"{p}.confidence", "confidence out of range")
        gt = item.get("gt_identity")
        if gt is not None:
            gt = _str(gt, f"{p}.gt_identity")
        out.append(Detection(det_id, modality, _bbox(_req(item, "bbox", p), f"{p}.bbox"), conf, gt))
    return out


def _gt_boxes(items: Any, path: str) -> Optional[list[GtBox]]:
    if items is None:
        return None
    if not isinstance(items, list):
        raise SchemaError(path, "expected a list")
    return [
        GtBox(
            _str(_req(item, "identity", f"{path}[{i}]"), f"{path}[{i}].identity"),
            _bbox(_req(item, "bbox", f"{path}[{i}]"), f"{path}[{i}].bbox"),
        )
        for i, item in enumerate(items)
    ]


def _pair_list(items: Any, path: str) -> list[tuple[str, str]]:
    if not isinstance(items, list):
        raise SchemaError(path, "expected a list of pairs")
    out = []
    for i, pair in enumerate(items):
        if not isinstance(pair, list) or len(pair) != 2:
            raise SchemaError(f"{path}[{i}]", "expected [rgb_id, thermal_id]")
        out.append((_str(pair[0], f"{path}[{i}][0]"), _str(pair[1], f"{path}[{i}][1]")))
    return out


def _id_list(items: Any, path: str) -> list[str]:
    if not isinstance(items, list):
        raise SchemaError(path, "expected a list")
    return [_str(v, f"{path}[{i}]") for i, v in enumerate(items)]


def validate_scene(scene: ScenePair) -> None:
    """Raise SchemaError if ``scene`` violates a ScenePair invariant."""
    for side, dets in (("rgb_detections", scene.rgb_detections), ("thermal_detections", scene.thermal_detections)):
        seen: set[str] = set()
        for i, d in enumerate(dets):
            if d.det_id in seen:
                raise SchemaError(f"{side}[{i}].det_id", f"duplicate det_id {d.det_id!r}")
            seen.add(d.det_id)
            if not 0.0 <= d.confidence <= 1.0:
                raise SchemaError(f"{side}[{i}].confidence", "confidence out of range")
    if scene.gt_pairs is None:
        return
    rgb_ids = {d.det_id for d in scene.rgb_detections}
    th_ids = {d.det_id for d in scene.thermal_detections}
    used_r: set[str] = set()
    used_t: set[str] = set()
    for i, (r, t) in enumerate(scene.gt_pairs):
        if r not in rgb_ids:
            raise SchemaError(f"gt_pairs[{i}][0]", f"dangling ground-truth reference {r!r}")
        if t not in th_ids:
            raise SchemaError(f"gt_pairs[{i}][1]", f"dangling ground-truth reference {t!r}")
        if r in used_r or t in used_t:
            raise SchemaError(f"gt_pairs[{i}]", "ground-truth pairs are not a bijection")
        used_r.add(r)
        used_t.add(t)


# ---------------------------------------------------------------------------
# documents


def scene_to_doc(scene: ScenePair) -> dict:
    def dets(items: list[Detection]) -> list[dict]:
        out = []
        for d in items:
            item: dict[str, Any] = {"det_id": d.det_id, "bbox": d.bbox.to_list(), "confidence": d.confidence}
            if d.gt_identity is not None:
                item["gt_identity"] = d.gt_identity
            out.append(item)
        return out

    doc: dict[str, Any] = {
        "schema": SCHEMA_VERSION,
        "scene_id": scene.scene_id,
        "image_size_rgb": list(scene.image_size_rgb),
        "image_size_thermal": list(scene.image_size_thermal),
    }
    if scene.rgb_image is not None:
        doc["rgb_image"] = scene.rgb_image
    if scene.thermal_image is not None:
        doc["thermal_image"] = scene.thermal_image
    doc["rgb_detections"] = dets(scene.rgb_detections)
    doc["thermal_detections"] = dets(scene.thermal_detections)
    if scene.gt_pairs is not None:
        doc["gt_pairs"] = [list(p) for p in scene.gt_pairs]
    for key, boxes in (("gt_boxes_rgb", scene.gt_boxes_rgb), ("gt_boxes_thermal", scene.gt_boxes_thermal)):
        if boxes is not None:
            doc[key] = [{"identity": g.identity, "bbox": g.bbox.to_list()} for g in boxes]
    return doc


def scene_from_doc(doc: Any) -> ScenePair:
    _check_schema(doc)
    scene = ScenePair(
        scene_id=_str(_req(doc, "scene_id", ""), "scene_id"),
        image_size_rgb=_size(_req(doc, "image_size_rgb", ""), "image_size_rgb"),
        image_size_thermal=_size(_req(doc, "image_size_thermal", ""), "image_size_thermal"),
        rgb_detections=_detections(_req(doc, "rgb_detections", ""), Modality.RGB, "rgb_detections"),
        thermal_detections=_detections(_req(doc, "thermal_detections", ""), Modality.THERMAL, "thermal_detections"),
        rgb_image=_str(doc["rgb_image"], "rgb_image") if doc.get("rgb_image") is not None else None,
        thermal_image=_str(doc["thermal_image"], "thermal_image") if doc.get("thermal_image") is not None else None,
        gt_pairs=_pair_list(doc["gt_pairs"], "gt_pairs") if doc.get("gt_pairs") is not None else None,
        gt_boxes_rgb=_gt_boxes(doc.get("gt_boxes_rgb"), "gt_boxes_rgb"),
        gt_boxes_thermal=_gt_boxes(doc.get("gt_boxes_thermal"), "gt_boxes_thermal"),
    )
    validate_scene(scene)
    return scene


def record_to_doc(rec: AppearanceRecord) -> dict:
    doc = {
        "det_id": rec.det_id,
        "modality": rec.modality.value,
        "provider": rec.provenance,
        "description_text": rec.description_text,
        "attributes": dict(rec.attributes),
    }
    if rec.transcript_ref is not None:
        doc["transcript_ref"] = rec.transcript_ref
    return doc


def record_from_doc(item: Any, path: str = "") -> AppearanceRecord:
    attrs = _req(item, "attributes", path)
    if not isinstance(attrs, dict):
        raise SchemaError(_join(path, "attributes"), "expected an object")
    for k, v in attrs.items():
        if k not in ATTRIBUTE_KEYS:
            raise SchemaError(_join(path, f"attributes.{k}"), "unknown attribute key")
        if not isinstance(v, str):
            raise SchemaError(_join(path, f"attributes.{k}"), "expected a string")
    ref = item.get("transcript_ref")
    return AppearanceRecord(
        det_id=_str(_req(item, "det_id", path), _join(path, "det_id")),
        modality=_modality(_req(item, "modality", path), _join(path, "modality")),
        description_text=_str(_req(item, "description_text", path), _join(path, "description_text")),
        attributes=dict(attrs),
        provenance=_str(_req(item, "provider", path), _join(path, "provider")),
        transcript_ref=_str(ref, _join(path, "transcript_ref")) if ref is not None else None,
    )


def descriptions_to_doc(cache: DescriptionCache) -> dict:
    doc: dict[str, Any] = {
        "schema": SCHEMA_VERSION,
        "scene_id": cache.scene_id,
        "records": [record_to_doc(r) for r in cache.records],
    }
    if cache.failures:
        doc["failures"] = [dict(f) for f in cache.failures]
    return doc


def descriptions_from_doc(doc: Any) -> DescriptionCache:
    _check_schema(doc)
    records = _req(doc, "records", "")
    if not isinstance(records, list):
        raise SchemaError("records", "expected a list")
    failures = doc.get("failures", [])
    if not isinstance(failures, list) or not all(isinstance(f, dict) for f in failures):
        raise SchemaError("failures", "expected a list of objects")
    return DescriptionCache(
        scene_id=_str(_req(doc, "scene_id", ""), "scene_id"),
        records=[record_from_doc(r, f"records[{i}]") for i, r in enumerate(records)],
        failures=[dict(f) for f in failures],
    )


def matches_to_doc(m: MatchResult) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "scene_id": m.scene_id,
        "pairs": [list(p) for p in m.pairs],
        "rationale": m.rationale,
        "unmatched_rgb": list(m.unmatched_rgb),
        "unmatched_thermal": list(m.unmatched_thermal),
    }


def matches_from_doc(doc: Any) -> MatchResult:
    _check_schema(doc)
    rationale = doc.get("rationale", "")
    if not isinstance(rationale, str):
        raise SchemaError("rationale", "expected a string")
    m = MatchResult(
        scene_id=_str(_req(doc, "scene_id", ""), "scene_id"),
        pairs=_pair_list(_req(doc, "pairs", ""), "pairs"),
        rationale=rationale,
        unmatched_rgb=_id_list(doc.get("unmatched_rgb", []), "unmatched_rgb"),
        unmatched_thermal=_id_list(doc.get("unmatched_thermal", []), "unmatched_thermal"),
    )
    for idx, side in ((0, "rgb"), (1, "thermal")):
        ids = [p[idx] for p in m.pairs]
        if len(set(ids)) != len(ids):
            raise SchemaError("pairs", f"duplicate {side} id in pairs")
    return m


# ---------------------------------------------------------------------------
# file I/O


def dumps(doc: Any) -> str:
    return json.dumps(doc, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_text_atomic(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` through a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str | os.PathLike, doc: Any) -> None:
    write_text_atomic(path, dumps(doc))


def read_json(path: str | os.PathLike) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"malformed document {os.fspath(path)}: {exc}") from None


def load_scene(path: str | os.PathLike) -> ScenePair:
    return scene_from_doc(read_json(path))


def save_scene(scene: ScenePair, path: str | os.PathLike) -> None:
    validate_scene(scene)
    write_json(path, scene_to_doc(scene))


def load_matches(path: str | os.PathLike) -> MatchResult:
    return matches_from_doc(read_json(path))


def save_matches(matches: MatchResult, path: str | os.PathLike) -> None:
    write_json(path, matches_to_doc(matches))


def load_descriptions(path: str | os.PathLike) -> DescriptionCache:
    return descriptions_from_doc(read_json(path))


def save_descriptions(cache: DescriptionCache, path: str | os.PathLike) -> None:
    write_json(path, descriptions_to_doc(cache))
