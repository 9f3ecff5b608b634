"""Cross-provider agreement check, debate rounds and judge adjudication."""

from __future__ import annotations

import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .appearance import normalize_attributes, parse_attribute_reply
from .providers import ChatRequest, Provider, ProviderError, TextPart, call_with_retry
from .scene_io import (
    ATTRIBUTE_KEYS,
    AppearanceRecord,
    DescriptionCache,
    Modality,
    SchemaError,
    ScenePair,
    record_from_doc,
    record_to_doc,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_ROUNDS = 1

DEBATER_PROMPT = (
    "You sit on a panel of experts who each describe the visual appearance of the same "
    "person. Read the panel's opinions below, say briefly where you agree or disagree, "
    "and finish with your current description as labeled lines "
    "(clothing, accessories, hairstyle, facing_direction, other)."
)

JUDGE_PROMPT = (
    "You are the judge of a panel of {n} debaters discussing one person's visual "
    "description. When the discussion below is finished, decide which description is "
    "best supported by it and state that final description as labeled lines "
    "(clothing, accessories, hairstyle, facing_direction, other)."
)

_BLOCK_RE = re.compile(r"^\[(?P<speaker>[^\]|]+?) \| (?P<label>initial|round \d+)\]$")


@dataclass
class DebateTranscript:
    det_id: str
    modality: Modality
    initial_opinions: dict[str, AppearanceRecord]
    rounds: list[tuple[int, dict[str, str]]]
    verdict: AppearanceRecord
    judge: str
    consensus_short_circuit: bool
    notes: list[str] = field(default_factory=list)

    @property
    def ref(self) -> str:
        return transcript_ref(self.modality, self.det_id)


def transcript_ref(modality: Modality, det_id: str) -> str:
    return f"{modality.value}/{det_id}"


def check_consensus(opinions: Mapping[str, AppearanceRecord]) -> bool:
    """True iff every opinion has the same normalized attribute map."""
    if len(opinions) < 2:
        raise ValueError("consensus needs at least two opinions")
    maps = [normalize_attributes(rec.attributes) for rec in opinions.values()]
    return all(m == maps[0] for m in maps[1:])


def majority_attributes(maps: Mapping[str, Mapping[str, str]], tiebreak: Optional[str] = None) -> dict[str, str]:
    """Per-attribute plurality vote; ties keep ``tiebreak``'s own value.

    A missing key votes for absence. When ``tiebreak`` is not a voter the
    lexicographically smallest voter breaks ties.
    """
    if not maps:
        return {}
    norm = {name: normalize_attributes(dict(m)) for name, m in maps.items()}
    breaker = tiebreak if tiebreak in norm else min(norm)
    keys = [k for k in ATTRIBUTE_KEYS if any(k in m for m in norm.values())]
    out: dict[str, str] = {}
    for key in keys:
        counts = Counter(m.get(key) for m in norm.values())
        ranked = counts.most_common()
        if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
            value = norm[breaker].get(key)
        else:
            value = ranked[0][0]
        if value is not None:
            out[key] = value
    return out


def format_attribute_lines(attributes: Mapping[str, str]) -> str:
    return "\n".join(f"{k}: {attributes[k]}" for k in ATTRIBUTE_KEYS if k in attributes)


def format_history(history: Sequence[tuple[str, str, str]]) -> str:
    return "\n\n".join(f"[{speaker} | {label}]\n{text.strip()}" for speaker, label, text in history)


def parse_history(text: str) -> list[tuple[str, str, str]]:
    """Split text produced by :func:`format_history` back into blocks."""
    blocks: list[tuple[str, str, list[str]]] = []
    for line in text.splitlines():
        m = _BLOCK_RE.match(line.strip())
        if m:
            blocks.append((m.group("speaker"), m.group("label"), []))
        elif blocks:
            blocks[-1][2].append(line)
    return [(s, label, "\n".join(body).strip()) for s, label, body in blocks]


def latest_opinions(history: Sequence[tuple[str, str, str]]) -> dict[str, dict[str, str]]:
    """Most recent parseable attribute map per speaker."""
    out: dict[str, dict[str, str]] = {}
    for speaker, _, body in history:
        attrs = parse_attribute_reply(body)
        if attrs:
            out[speaker] = attrs
    return out


def _opinion_block(rec: AppearanceRecord) -> str:
    lines = format_attribute_lines(normalize_attributes(rec.attributes))
    return lines or rec.description_text


def run_debate(
    opinions: Mapping[str, AppearanceRecord],
    debaters: Sequence[Provider],
    judge: Provider,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
    context: Optional[dict] = None,
) -> DebateTranscript:
    """Debate a set of disagreeing opinions and let ``judge`` decide.

    When the opinions already agree the transcript is short-circuited with no
    rounds and no judge call.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    if not opinions:
        raise ValueError("run_debate needs at least one opinion")
    first = next(iter(opinions.values()))
    det_id, modality = first.det_id, first.modality
    meta = {"scene_id": "", "det_id": det_id, "modality": modality.value, **(context or {})}

    if len(opinions) >= 2 and check_consensus(opinions):
        agreeing = min(opinions)
        src = opinions[agreeing]
        verdict = AppearanceRecord(
            det_id, modality, src.description_text, dict(src.attributes), agreeing,
            transcript_ref(modality, det_id),
        )
        return DebateTranscript(det_id, modality, dict(opinions), [], verdict, judge.name, True)

    history: list[tuple[str, str, str]] = [
        (name, "initial", _opinion_block(rec)) for name, rec in opinions.items()
    ]
    rounds: list[tuple[int, dict[str, str]]] = []
    notes: list[str] = []
    for r in range(1, max_rounds + 1):
        shared = format_history(history)
        rebuttals: dict[str, str] = {}
        for debater in debaters:
            request = ChatRequest(
                system_text=DEBATER_PROMPT,
                parts=[TextPart(shared), TextPart(f"You are {debater.name}. Round {r}: give your rebuttal.")],
                meta={**meta, "task": "debate", "speaker": debater.name, "round": r},
            )
            try:
                rebuttals[debater.name] = call_with_retry(debater, request)
            except ProviderError as exc:
                notes.append(f"round {r}: {debater.name} failed: {exc}")
        rounds.append((r, rebuttals))
        history.extend((name, f"round {r}", text) for name, text in rebuttals.items())
        current = latest_opinions(history)
        if len(current) >= 2 and len({tuple(sorted(m.items())) for m in current.values()}) == 1:
            notes.append(f"consensus reached after round {r}")
            break

    final_maps = latest_opinions(history)
    request = ChatRequest(
        system_text=JUDGE_PROMPT.format(n=len(debaters)),
        parts=[TextPart(format_history(history)), TextPart("The debate is over. Give your verdict.")],
        meta={**meta, "task": "judge", "speaker": judge.name},
    )
    reply = ""
    try:
        reply = call_with_retry(judge, request)
    except ProviderError as exc:
        notes.append(f"judge {judge.name} failed: {exc}")
    attrs = parse_attribute_reply(reply)
    if attrs:
        text = reply.strip()
    else:
        attrs = majority_attributes(final_maps, tiebreak=judge.name)
        notes.append("judge reply unparseable; verdict by majority vote over final-round opinions")
        text = format_attribute_lines(attrs) or reply.strip() or "(no verdict)"
    verdict = AppearanceRecord(det_id, modality, text, attrs, "judge", transcript_ref(modality, det_id))
    return DebateTranscript(det_id, modality, dict(opinions), rounds, verdict, judge.name, False, notes)


def resolve_scene(
    scene: ScenePair,
    cache: DescriptionCache,
    debaters: Sequence[Provider],
    judge: Provider,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
    parallelism: int = 1,
) -> tuple[DescriptionCache, list[DebateTranscript]]:
    """One record per detection: consensus, single opinion, or debate verdict."""
    jobs = []
    for modality in (Modality.RGB, Modality.THERMAL):
        for det in scene.detections(modality):
            jobs.append((modality, det.det_id, cache.by_provider(modality, det.det_id)))

    def run(job):
        modality, det_id, opinions = job
        if not opinions:
            return None, None
        if len(opinions) == 1:
            return next(iter(opinions.values())), None
        transcript = run_debate(
            opinions, debaters, judge, max_rounds, context={"scene_id": scene.scene_id}
        )
        return transcript.verdict, transcript

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    resolved = DescriptionCache(scene.scene_id)
    transcripts = []
    for record, transcript in results:
        if record is not None:
            resolved.records.append(record)
        if transcript is not None:
            transcripts.append(transcript)
    return resolved, transcripts


def transcript_to_doc(t: DebateTranscript) -> dict:
    return {
        "det_id": t.det_id,
        "modality": t.modality.value,
        "opinions": {name: record_to_doc(rec) for name, rec in t.initial_opinions.items()},
        "rounds": [{"round": r, "rebuttals": dict(texts)} for r, texts in t.rounds],
        "verdict": record_to_doc(t.verdict),
        "judge": t.judge,
        "consensus_short_circuit": t.consensus_short_circuit,
        "notes": list(t.notes),
    }


def transcript_from_doc(doc: dict, path: str = "") -> DebateTranscript:
    try:
        return DebateTranscript(
            det_id=doc["det_id"],
            modality=Modality(doc["modality"]),
            initial_opinions={
                name: record_from_doc(rec, f"{path}.opinions.{name}") for name, rec in doc["opinions"].items()
            },
            rounds=[(int(r["round"]), dict(r["rebuttals"])) for r in doc["rounds"]],
            verdict=record_from_doc(doc["verdict"], f"{path}.verdict"),
            judge=doc["judge"],
            consensus_short_circuit=bool(doc["consensus_short_circuit"]),
            notes=list(doc.get("notes", [])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(path, f"malformed transcript: {exc}") from None
