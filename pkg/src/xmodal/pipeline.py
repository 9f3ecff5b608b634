"""End-to-end orchestration: graphs, descriptions, debate, matching, fusion, evaluation."""

from __future__ import annotations

import dataclasses
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import debate as debate_mod
from .appearance import describe_all
from .config import PipelineConfig
from .evaluation import EvalReport, SceneEval, aggregate_report, format_table
from .fusion import FusedDetection, fuse_scene, fused_to_doc
from .matcher import llm_match, overlap_match, structural_match
from .posgraph import PositionalGraph, build_graph, serialize_graph
from .providers import Provider, build_provider
from .render import render_to_file
from .scene_io import (
    AppearanceRecord,
    DescriptionCache,
    MatchResult,
    Modality,
    ScenePair,
    load_scene,
    save_descriptions,
    save_matches,
    write_json,
    write_text_atomic,
)
from .synthgen import INDEX_FILE, read_index

logger = logging.getLogger(__name__)


@dataclass
class Dataset:
    dataset_id: str
    scenes: list[ScenePair]
    index: Optional[dict] = None

    @property
    def hallucination_rate(self) -> Optional[float]:
        if self.index and "config" in self.index:
            return self.index["config"].get("hallucination_rate")
        return None

    @property
    def vocab(self) -> Optional[dict]:
        if self.index and "config" in self.index:
            return self.index["config"].get("attribute_vocab")
        return None


def load_dataset(dataset_dir: str | os.PathLike) -> Dataset:
    root = Path(dataset_dir)
    index = read_index(root)
    if index is not None:
        files = [root / name for name in index.get("scenes", [])]
        dataset_id = index.get("dataset_id", root.name)
    else:
        files = sorted(p for p in root.glob("*.json") if p.name != INDEX_FILE)
        dataset_id = root.name
    return Dataset(dataset_id, [load_scene(p) for p in files], index)


def build_providers(cfg: PipelineConfig, dataset: Optional[Dataset] = None) -> dict[str, Provider]:
    out = {}
    for spec in cfg.providers:
        spec = dataclasses.replace(spec)
        if spec.kind == "mock":
            if cfg.hallucination_rate is not None:
                spec.hallucination_rate = cfg.hallucination_rate
            elif not spec.hallucination_rate and dataset is not None and dataset.hallucination_rate:
                spec.hallucination_rate = dataset.hallucination_rate
            spec.seed = spec.seed or cfg.mock_seed
        vocab = dataset.vocab if dataset is not None else None
        out[spec.name] = build_provider(spec, cfg.record_dir, cfg.replay_dir, vocab)
    return out


@dataclass
class SceneOutcome:
    scene: ScenePair
    graphs: dict[Modality, PositionalGraph]
    descriptions: dict[Modality, dict[str, AppearanceRecord]]
    matches: MatchResult
    fused: list[FusedDetection]
    raw_cache: Optional[DescriptionCache] = None
    resolved_cache: Optional[DescriptionCache] = None
    transcripts: list = field(default_factory=list)


def build_graphs(scene: ScenePair) -> dict[Modality, PositionalGraph]:
    return {m: build_graph(scene.detections(m), scene.image_size(m)) for m in (Modality.RGB, Modality.THERMAL)}


def describe_scene(
    scene: ScenePair, cfg: PipelineConfig, providers: dict[str, Provider]
) -> tuple[DescriptionCache, DescriptionCache, list]:
    """Raw per-provider cache, resolved one-per-detection cache, debate transcripts."""
    if cfg.debate:
        roster = [providers[n] for n in cfg.provider_names]
        raw = describe_all(scene, roster, parallelism=1, margin_ratio=cfg.margin_ratio)
        resolved, transcripts = debate_mod.resolve_scene(
            scene, raw, roster, providers[cfg.judge], cfg.max_rounds
        )
        return raw, resolved, transcripts
    raw = describe_all(scene, [providers[cfg.describer]], parallelism=1, margin_ratio=cfg.margin_ratio)
    return raw, raw, []


def match_scene(
    scene: ScenePair,
    graphs: dict[Modality, PositionalGraph],
    descriptions: dict[Modality, dict[str, AppearanceRecord]],
    cfg: PipelineConfig,
    providers: dict[str, Provider],
) -> MatchResult:
    if cfg.matcher == "overlap":
        return overlap_match(scene, cfg.iou_thresh)
    rgb_d, th_d = descriptions.get(Modality.RGB), descriptions.get(Modality.THERMAL)
    if cfg.matcher == "llm":
        return llm_match(
            scene, graphs[Modality.RGB], graphs[Modality.THERMAL], rgb_d, th_d,
            providers[cfg.match_provider], cfg.w_pos, cfg.w_attr, cfg.tau,
        )
    return structural_match(
        graphs[Modality.RGB], graphs[Modality.THERMAL], rgb_d, th_d, cfg.w_pos, cfg.w_attr, cfg.tau, scene.scene_id
    )


def process_scene(scene: ScenePair, cfg: PipelineConfig, providers: dict[str, Provider]) -> SceneOutcome:
    graphs = build_graphs(scene)
    raw = resolved = None
    transcripts: list = []
    descriptions: dict[Modality, dict[str, AppearanceRecord]] = {}
    if cfg.matcher != "overlap":
        raw, resolved, transcripts = describe_scene(scene, cfg, providers)
        descriptions = {m: resolved.select(m) for m in (Modality.RGB, Modality.THERMAL)}
    matches = match_scene(scene, graphs, descriptions, cfg, providers)
    matches.validate_against(scene)
    fused = fuse_scene(scene, matches, cfg.fusion_frame)
    return SceneOutcome(scene, graphs, descriptions, matches, fused, raw, resolved, transcripts)


def write_scene_artifacts(outcome: SceneOutcome, cfg: PipelineConfig, out_dir: Path) -> None:
    scene = outcome.scene
    sdir = out_dir / "scenes" / scene.scene_id
    for m, name in ((Modality.RGB, "graph_rgb.txt"), (Modality.THERMAL, "graph_thermal.txt")):
        write_text_atomic(sdir / name, serialize_graph(outcome.graphs[m], outcome.descriptions.get(m)) + "\n")
    if outcome.raw_cache is not None:
        save_descriptions(outcome.raw_cache, sdir / "descriptions.json")
    if outcome.resolved_cache is not None and cfg.debate:
        save_descriptions(outcome.resolved_cache, sdir / "resolved.json")
        write_json(
            sdir / "debate.json",
            {
                "schema": 1,
                "scene_id": scene.scene_id,
                "transcripts": [debate_mod.transcript_to_doc(t) for t in outcome.transcripts],
            },
        )
    save_matches(outcome.matches, sdir / "matches.json")
    write_json(sdir / "fused.json", fused_to_doc(scene.scene_id, outcome.fused, cfg.fusion_frame))
    render_to_file(scene, outcome.matches, out_dir / f"{scene.scene_id}.svg")


def evaluate_outcomes(
    dataset: Dataset, outcomes: list[SceneOutcome], cfg: PipelineConfig
) -> EvalReport:
    scenes = [
        SceneEval(o.scene.scene_id, o.matches, o.fused, o.scene.gt_boxes(cfg.fusion_frame), o.scene.gt_pairs)
        for o in outcomes
    ]
    return aggregate_report(
        scenes, dataset.dataset_id, cfg.matcher, cfg.debate, cfg.ap_iou_thresh, cfg.fusion_frame.value
    )


@dataclass
class RunResult:
    report: Optional[EvalReport]
    outcomes: list[SceneOutcome]
    failures: list[dict[str, str]]


def run_dataset(
    dataset: Dataset,
    cfg: PipelineConfig,
    providers: Optional[dict[str, Provider]] = None,
    out_dir: Optional[str | os.PathLike] = None,
) -> RunResult:
    """Process every scene (isolating failures), write artifacts and the report."""
    cfg.validate()
    if cfg.matcher == "overlap":
        providers = {}
    elif providers is None:
        providers = build_providers(cfg, dataset)

    def work(scene: ScenePair):
        try:
            return process_scene(scene, cfg, providers), None
        except Exception as exc:  # per-scene isolation
            logger.error("scene %s failed: %s", scene.scene_id, exc)
            return None, {"scene_id": scene.scene_id, "error": f"{type(exc).__name__}: {exc}"}

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(work, dataset.scenes))
    else:
        results = [work(s) for s in dataset.scenes]
    outcomes = [o for o, _ in results if o is not None]
    failures = [f for _, f in results if f is not None]
    report = evaluate_outcomes(dataset, outcomes, cfg) if outcomes else None

    if out_dir is not None:
        out = Path(out_dir)
        for o in outcomes:
            write_scene_artifacts(o, cfg, out)
        write_report(out, report, failures)
    return RunResult(report, outcomes, failures)


def write_report(out: Path, report: Optional[EvalReport], failures: list[dict[str, str]]) -> None:
    doc = report.to_doc() if report is not None else {"schema": 1}
    doc["failures"] = failures
    write_json(out / "report.json", doc)
    text = format_table([report]) if report is not None else "no scene succeeded\n"
    if failures:
        text += "\nfailed scenes:\n" + "".join(f"  {f['scene_id']}: {f['error']}\n" for f in failures)
    write_text_atomic(out / "report.txt", text)
