"""Command-line entry point: ``xmodal <subcommand> ...``.

Exit codes: 0 success, 1 some scenes failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import debate as debate_mod
from .appearance import describe_all
from .config import MATCHERS, ConfigError, PipelineConfig, load_config
from .evaluation import SceneEval, aggregate_report
from .fusion import fuse_scene, fused_to_doc
from .pipeline import (
    Dataset,
    build_graphs,
    build_providers,
    load_dataset,
    match_scene,
    run_dataset,
    write_report,
)
from .providers import ProviderSpec
from .render import render_to_file
from .scene_io import (
    Modality,
    SchemaError,
    load_descriptions,
    load_matches,
    load_scene,
    save_descriptions,
    save_matches,
    write_json,
    write_text_atomic,
)
from .posgraph import serialize_graph
from .synthgen import DetectionNoise, config_for_profile, write_dataset

logger = logging.getLogger("xmodal")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


def _add_pipeline_flags(p: argparse.ArgumentParser, matcher: bool = True) -> None:
    g = p.add_argument_group("pipeline")
    g.add_argument("--config", help="INI configuration file")
    g.add_argument("--providers", help="comma-separated provider roster (default gpt4,gemini,claude2)")
    g.add_argument("--provider-kind", choices=("mock", "http"), help="kind for every roster provider")
    g.add_argument("--judge")
    g.add_argument("--describer", help="provider used when debate is off")
    g.add_argument("--debate", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--max-rounds", type=int)
    g.add_argument("--margin-ratio", type=float)
    g.add_argument("--hallucination", type=float, help="mock providers: per-attribute corruption rate")
    g.add_argument("--mock-seed", type=int)
    g.add_argument("--record", metavar="DIR", help="store provider replies as fixtures")
    g.add_argument("--replay", metavar="DIR", help="serve provider replies only from fixtures")
    g.add_argument("--jobs", type=int)
    if matcher:
        g.add_argument("--matcher", choices=MATCHERS)
        g.add_argument("--match-provider")
        g.add_argument("--w-pos", type=float)
        g.add_argument("--w-attr", type=float)
        g.add_argument("--tau", type=float)
        g.add_argument("--iou-thresh", type=float, help="overlap matcher IoU threshold")
    g.add_argument("--frame", choices=("RGB", "THERMAL"), help="fusion/evaluation frame")


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "providers", None):
        cfg.providers = [ProviderSpec(n.strip()) for n in args.providers.split(",") if n.strip()]
    if getattr(args, "provider_kind", None):
        for spec in cfg.providers:
            spec.kind = args.provider_kind
    simple = {
        "judge": "judge",
        "describer": "describer",
        "debate": "debate",
        "max_rounds": "max_rounds",
        "margin_ratio": "margin_ratio",
        "hallucination": "hallucination_rate",
        "mock_seed": "mock_seed",
        "record": "record_dir",
        "replay": "replay_dir",
        "jobs": "jobs",
        "matcher": "matcher",
        "match_provider": "match_provider",
        "w_pos": "w_pos",
        "w_attr": "w_attr",
        "tau": "tau",
        "iou_thresh": "iou_thresh",
        "ap_iou_thresh": "ap_iou_thresh",
    }
    for arg, attr in simple.items():
        value = getattr(args, arg, None)
        if value is not None:
            setattr(cfg, attr, value)
    if getattr(args, "frame", None):
        cfg.fusion_frame = Modality(args.frame)
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    overrides = {}
    if args.hallucination is not None:
        overrides["hallucination_rate"] = args.hallucination
    if args.persons:
        overrides["persons_per_scene"] = tuple(args.persons)
    if args.no_noise:
        overrides["detection_noise"] = DetectionNoise(jitter_px=0.0, drop_prob={"RGB": 0.0, "THERMAL": 0.0})
    cfg = config_for_profile(args.profile, seed=args.seed, n_scenes=args.n_scenes, **overrides)
    scenes = write_dataset(cfg, args.out)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return EXIT_OK


def cmd_graph(args) -> int:
    scene = load_scene(args.scene)
    graphs = build_graphs(scene)
    out = Path(args.out)
    for m, name in ((Modality.RGB, "graph_rgb.txt"), (Modality.THERMAL, "graph_thermal.txt")):
        write_text_atomic(out / name, serialize_graph(graphs[m]) + "\n")
    print(f"wrote graphs for {scene.scene_id} to {out}")
    return EXIT_OK


def _dataset_for(scene_path: str) -> Dataset:
    from .synthgen import read_index

    scene = load_scene(scene_path)
    return Dataset(scene.scene_id, [scene], read_index(Path(scene_path).parent))


def cmd_describe(args) -> int:
    cfg = _config_from_args(args)
    cfg.validate()
    dataset = _dataset_for(args.scene)
    providers = build_providers(cfg, dataset)
    names = cfg.provider_names if cfg.debate or args.all_providers else [cfg.describer]
    cache = describe_all(dataset.scenes[0], [providers[n] for n in names], cfg.jobs, cfg.margin_ratio)
    save_descriptions(cache, args.out)
    print(f"wrote {len(cache.records)} records ({len(cache.failures)} failures) to {args.out}")
    return EXIT_PARTIAL if cache.failures else EXIT_OK


def cmd_debate(args) -> int:
    cfg = _config_from_args(args)
    cfg.validate()
    dataset = _dataset_for(args.scene)
    providers = build_providers(cfg, dataset)
    cache = load_descriptions(args.descriptions)
    roster = [providers[n] for n in cfg.provider_names]
    resolved, transcripts = debate_mod.resolve_scene(
        dataset.scenes[0], cache, roster, providers[cfg.judge], cfg.max_rounds, cfg.jobs
    )
    save_descriptions(resolved, args.out)
    transcripts_path = args.transcripts or str(Path(args.out).with_suffix("")) + ".debate.json"
    write_json(
        transcripts_path,
        {
            "schema": 1,
            "scene_id": cache.scene_id,
            "transcripts": [debate_mod.transcript_to_doc(t) for t in transcripts],
        },
    )
    print(f"resolved {len(resolved.records)} records, {len(transcripts)} debates")
    return EXIT_OK


def cmd_match(args) -> int:
    cfg = _config_from_args(args)
    cfg.validate()
    dataset = _dataset_for(args.scene)
    scene = dataset.scenes[0]
    graphs = build_graphs(scene)
    descriptions = {}
    if args.descriptions:
        cache = load_descriptions(args.descriptions)
        descriptions = {m: cache.select(m) for m in (Modality.RGB, Modality.THERMAL)}
    providers = build_providers(cfg, dataset) if cfg.matcher == "llm" else {}
    matches = match_scene(scene, graphs, descriptions, cfg, providers)
    save_matches(matches, args.out)
    print(f"{len(matches.pairs)} pairs written to {args.out}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    scene = load_scene(args.scene)
    matches = load_matches(args.matches)
    matches.validate_against(scene)
    frame = Modality(args.frame)
    fused = fuse_scene(scene, matches, frame)
    write_json(args.out, fused_to_doc(scene.scene_id, fused, frame))
    print(f"{len(fused)} fused detections written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    dataset = load_dataset(args.dataset)
    frame = Modality(args.frame)
    art = Path(args.artifacts)
    scenes = []
    for scene in dataset.scenes:
        matches = load_matches(art / "scenes" / scene.scene_id / "matches.json")
        matches.validate_against(scene)
        fused = fuse_scene(scene, matches, frame)
        scenes.append(SceneEval(scene.scene_id, matches, fused, scene.gt_boxes(frame), scene.gt_pairs))
    report = aggregate_report(scenes, dataset.dataset_id, args.label, args.debate_label, args.iou_thresh, frame.value)
    write_report(Path(args.out), report, [])
    print((Path(args.out) / "report.txt").read_text(), end="")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    cfg.validate()
    dataset = load_dataset(args.dataset)
    result = run_dataset(dataset, cfg, out_dir=args.out)
    print((Path(args.out) / "report.txt").read_text(), end="")
    return EXIT_PARTIAL if result.failures else EXIT_OK


def cmd_render(args) -> int:
    scene = load_scene(args.scene)
    matches = load_matches(args.matches)
    render_to_file(scene, matches, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xmodal", description="Cross-modal RGB/thermal pedestrian alignment")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-scenes", type=int, default=100)
    p.add_argument("--profile", choices=("aligned", "weak", "heavy"), default="heavy")
    p.add_argument("--persons", type=int, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--hallucination", type=float, help="rate recorded for mock providers")
    p.add_argument("--no-noise", action="store_true", help="no jitter, no dropped detections")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("graph", help="build and serialize positional graphs of one scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("describe", help="describe every detection of one scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--all-providers", action="store_true", help="query the whole roster even without debate")
    _add_pipeline_flags(p, matcher=False)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("debate", help="resolve disagreeing descriptions by debate")
    p.add_argument("--scene", required=True)
    p.add_argument("--descriptions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--transcripts")
    _add_pipeline_flags(p, matcher=False)
    p.set_defaults(func=cmd_debate)

    p = sub.add_parser("match", help="match RGB and thermal detections of one scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--descriptions")
    p.add_argument("--out", required=True)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("fuse", help="fuse matched detections")
    p.add_argument("--scene", required=True)
    p.add_argument("--matches", required=True)
    p.add_argument("--frame", choices=("RGB", "THERMAL"), default="THERMAL")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="score a directory of match outputs")
    p.add_argument("--dataset", required=True)
    p.add_argument("--artifacts", required=True, help="run directory holding scenes/<id>/matches.json")
    p.add_argument("--frame", choices=("RGB", "THERMAL"), default="THERMAL")
    p.add_argument("--iou-thresh", type=float, default=0.5, help="AP IoU threshold")
    p.add_argument("--label", default="structural", help="model name for the report")
    p.add_argument("--debate-label", action="store_true", help="mark the report as debate-enabled")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="run the whole pipeline over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ap-iou-thresh", type=float, help="AP IoU threshold")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("render", help="render an SVG overlay of one scene's matches")
    p.add_argument("--scene", required=True)
    p.add_argument("--matches", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemaError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
