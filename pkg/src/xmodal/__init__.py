"""Cross-modal identity alignment for misaligned RGB/thermal pedestrian detections."""

from .scene_io import (
    AppearanceRecord,
    BBox,
    DescriptionCache,
    Detection,
    MatchResult,
    Modality,
    ScenePair,
    SchemaError,
)

__version__ = "0.1.0"

__all__ = [
    "AppearanceRecord",
    "BBox",
    "DescriptionCache",
    "Detection",
    "MatchResult",
    "Modality",
    "ScenePair",
    "SchemaError",
]
