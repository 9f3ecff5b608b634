"""Seeded synthetic RGB/thermal scene pairs with ground-truth identities.

People are placed in a shared normalized world plane and projected into each
camera through an independently sampled similarity transform (scale,
translation) followed by a field-of-view crop, then jittered and randomly
dropped. Only people that survive in both views enter ``gt_pairs``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .scene_io import BBox, Detection, GtBox, Modality, ScenePair, SCHEMA_VERSION, read_json, save_scene, write_json

DEFAULT_VOCAB: dict[str, list[str]] = {
    "clothing": ["red jacket", "blue coat", "black shirt", "white dress", "green hoodie"],
    "hairstyle": ["short", "long", "bald", "ponytail"],
    "accessories": ["backpack", "none", "umbrella", "handbag"],
    "facing_direction": ["left", "right", "toward", "away"],
}

INDEX_FILE = "index.json"


@dataclass
class Misalignment:
    dx_frac: float = 0.0
    dy_frac: float = 0.0
    scale_range: tuple[float, float] = (1.0, 1.0)
    fov_crop_frac: float = 0.0


@dataclass
class DetectionNoise:
    jitter_px: float = 2.0
    drop_prob: dict[str, float] = field(default_factory=lambda: {"RGB": 0.05, "THERMAL": 0.05})
    confidence_beta: tuple[float, float] = (5.0, 1.5)


@dataclass
class SynthConfig:
    seed: int = 0
    n_scenes: int = 100
    persons_per_scene: tuple[int, int] = (4, 6)
    image_size_rgb: tuple[int, int] = (640, 480)
    image_size_thermal: tuple[int, int] = (640, 512)
    misalignment: Misalignment = field(default_factory=Misalignment)
    detection_noise: DetectionNoise = field(default_factory=DetectionNoise)
    attribute_vocab: dict[str, list[str]] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_VOCAB.items()})
    hallucination_rate: float = 0.0
    profile: Optional[str] = None

    def validate(self) -> None:
        for name in ("image_size_rgb", "image_size_thermal"):
            w, h = getattr(self, name)
            if w <= 0 or h <= 0:
                raise ValueError(f"{name} yields a zero-area image")
        m = self.misalignment
        for name in ("dx_frac", "dy_frac", "fov_crop_frac"):
            if not 0.0 <= getattr(m, name) <= 1.0:
                raise ValueError(f"misalignment.{name} must lie in [0, 1]")
        if m.fov_crop_frac >= 1.0:
            raise ValueError("misalignment.fov_crop_frac must be < 1")
        lo, hi = m.scale_range
        if lo <= 0 or hi < lo:
            raise ValueError("misalignment.scale_range must be positive and ordered")
        for mod, p in self.detection_noise.drop_prob.items():
            if not 0.0 <= p < 1.0:
                raise ValueError(f"detection_noise.drop_prob[{mod}] must lie in [0, 1)")
        if self.detection_noise.jitter_px < 0:
            raise ValueError("detection_noise.jitter_px must be >= 0")
        if not 0.0 <= self.hallucination_rate <= 1.0:
            raise ValueError("hallucination_rate must lie in [0, 1]")
        lo_n, hi_n = self.persons_per_scene
        if lo_n < 0 or hi_n < lo_n:
            raise ValueError("persons_per_scene must be a non-negative ordered range")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        doc = dict(doc)
        mis = Misalignment(**{**doc.pop("misalignment", {})})
        mis.scale_range = tuple(mis.scale_range)
        noise = DetectionNoise(**{**doc.pop("detection_noise", {})})
        noise.confidence_beta = tuple(noise.confidence_beta)
        cfg = cls(misalignment=mis, detection_noise=noise, **doc)
        cfg.persons_per_scene = tuple(cfg.persons_per_scene)
        cfg.image_size_rgb = tuple(cfg.image_size_rgb)
        cfg.image_size_thermal = tuple(cfg.image_size_thermal)
        return cfg


_PROFILES = {
    "aligned": Misalignment(0.0, 0.0, (1.0, 1.0), 0.0),
    "weak": Misalignment(0.05, 0.05, (0.98, 1.02), 0.0),
    "heavy": Misalignment(0.4, 0.4, (0.8, 1.25), 0.2),
}


def severity_profile(name: str) -> Misalignment:
    try:
        return dataclasses.replace(_PROFILES[name])
    except KeyError:
        raise ValueError(f"unknown severity profile {name!r}; choose from {sorted(_PROFILES)}") from None


def config_for_profile(name: str, seed: int = 0, n_scenes: int = 100, **overrides) -> SynthConfig:
    return SynthConfig(seed=seed, n_scenes=n_scenes, misalignment=severity_profile(name), profile=name, **overrides)


def identity_attributes(identity: str, vocab: Optional[dict[str, list[str]]] = None) -> dict[str, str]:
    """Ground-truth attribute tuple of a synthetic identity (hash-derived, seed-free)."""
    vocab = vocab or DEFAULT_VOCAB
    out = {}
    for key in sorted(vocab):
        values = vocab[key]
        digest = hashlib.sha256(f"{identity}|{key}".encode("utf-8")).digest()
        out[key] = values[int.from_bytes(digest[:8], "big") % len(values)]
    return out


@dataclass
class _View:
    zoom: float
    tx: float
    ty: float


def _sample_view(rng: np.random.Generator, mis: Misalignment) -> _View:
    lo, hi = mis.scale_range
    scale = math.exp(rng.uniform(math.log(lo), math.log(hi))) if hi > lo else lo
    crop = rng.uniform(0.0, mis.fov_crop_frac) if mis.fov_crop_frac > 0 else 0.0
    tx = rng.uniform(-mis.dx_frac / 2, mis.dx_frac / 2) if mis.dx_frac > 0 else 0.0
    ty = rng.uniform(-mis.dy_frac / 2, mis.dy_frac / 2) if mis.dy_frac > 0 else 0.0
    return _View(scale / (1.0 - crop), tx, ty)


def _sample_people(rng: np.random.Generator, n: int, aspect: float) -> list[tuple[float, float, float, float]]:
    people: list[tuple[float, float, float, float]] = []
    for _ in range(n):
        for _attempt in range(200):
            u = rng.uniform(0.1, 0.9)
            v = rng.uniform(0.4, 0.75)
            if all(math.hypot(u - p[0], v - p[1]) > 0.08 for p in people):
                break
        h = rng.uniform(0.18, 0.35)
        w = 0.4 * h * aspect
        people.append((u, v, w, h))
    return people


def _clip_box(x1: float, y1: float, x2: float, y2: float, size: tuple[int, int]) -> Optional[BBox]:
    W, H = size
    x1, x2 = max(0.0, x1), min(float(W), x2)
    y1, y2 = max(0.0, y1), min(float(H), y2)
    if x2 - x1 < 1.0 or y2 - y1 < 1.0:
        return None
    return BBox.from_corners(x1, y1, x2, y2)


def generate_scene(config: SynthConfig, index: int) -> ScenePair:
    rng = np.random.default_rng([config.seed, index])
    scene_id = f"scene_{index:03d}"
    lo, hi = config.persons_per_scene
    n = int(rng.integers(lo, hi + 1))
    aspect = config.image_size_rgb[1] / config.image_size_rgb[0]
    people = _sample_people(rng, n, aspect)
    identities = [f"s{config.seed}/{scene_id}/p{k}" for k in range(n)]
    noise = config.detection_noise
    alpha, beta = noise.confidence_beta

    per_modality: dict[Modality, list[tuple[int, BBox, float]]] = {}
    gt_boxes: dict[Modality, list[GtBox]] = {}
    for modality, size in ((Modality.RGB, config.image_size_rgb), (Modality.THERMAL, config.image_size_thermal)):
        view = _sample_view(rng, config.misalignment)
        W, H = size
        drop_p = noise.drop_prob.get(modality.value, 0.0)
        visible: list[tuple[int, BBox, float]] = []
        gts: list[GtBox] = []
        for k, (u, v, w, h) in enumerate(people):
            # Draw every variate unconditionally so streams do not depend on visibility.
            jitter = rng.normal(0.0, 1.0, size=4) * noise.jitter_px
            dropped = rng.random() < drop_p
            conf = float(rng.beta(alpha, beta))
            cu = (u - 0.5) * view.zoom + 0.5 + view.tx
            cv = (v - 0.5) * view.zoom + 0.5 + view.ty
            if not (0.0 <= cu <= 1.0 and 0.0 <= cv <= 1.0):
                continue
            bw, bh = w * view.zoom * W, h * view.zoom * H
            cx, cy = cu * W, cv * H
            truth = _clip_box(cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2, size)
            if truth is None:
                continue
            gts.append(GtBox(identities[k], truth))
            if dropped:
                continue
            det = _clip_box(
                truth.x + jitter[0], truth.y + jitter[1], truth.x2 + jitter[2], truth.y2 + jitter[3], size
            )
            if det is None:
                continue
            visible.append((k, det, conf))
        order = rng.permutation(len(visible))
        per_modality[modality] = [visible[i] for i in order]
        gt_boxes[modality] = gts

    def to_dets(modality: Modality, prefix: str) -> tuple[list[Detection], dict[int, str]]:
        dets, ids = [], {}
        for j, (k, box, conf) in enumerate(per_modality[modality], start=1):
            det_id = f"{prefix}{j}"
            ids[k] = det_id
            dets.append(Detection(det_id, modality, box, round(conf, 6), identities[k]))
        return dets, ids

    rgb, rgb_ids = to_dets(Modality.RGB, "R")
    thermal, th_ids = to_dets(Modality.THERMAL, "T")
    gt_pairs = [(rgb_ids[k], th_ids[k]) for k in sorted(rgb_ids) if k in th_ids]
    return ScenePair(
        scene_id=scene_id,
        image_size_rgb=tuple(config.image_size_rgb),
        image_size_thermal=tuple(config.image_size_thermal),
        rgb_detections=rgb,
        thermal_detections=thermal,
        gt_pairs=gt_pairs,
        gt_boxes_rgb=gt_boxes[Modality.RGB],
        gt_boxes_thermal=gt_boxes[Modality.THERMAL],
    )


def generate(config: SynthConfig) -> list[ScenePair]:
    config.validate()
    return [generate_scene(config, i) for i in range(config.n_scenes)]


def dataset_id(config: SynthConfig) -> str:
    return f"synth-{config.profile or 'custom'}-seed{config.seed}"


def write_dataset(config: SynthConfig, out_dir: str | os.PathLike) -> list[ScenePair]:
    """Write one manifest per scene plus ``index.json``."""
    scenes = generate(config)
    out = Path(out_dir)
    for scene in scenes:
        save_scene(scene, out / f"{scene.scene_id}.json")
    write_json(
        out / INDEX_FILE,
        {
            "schema": SCHEMA_VERSION,
            "dataset_id": dataset_id(config),
            "config": config.to_dict(),
            "scenes": [f"{s.scene_id}.json" for s in scenes],
        },
    )
    return scenes


def read_index(dataset_dir: str | os.PathLike) -> Optional[dict]:
    path = Path(dataset_dir) / INDEX_FILE
    return read_json(path) if path.is_file() else None
