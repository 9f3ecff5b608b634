"""RGB-to-thermal identity matching.

Three matchers share the MatchResult output:

* ``llm_match`` prompts a language model with both annotated graphs and
  parses its ``Matching result: (...)`` answer.
* ``structural_match`` solves a min-cost assignment on position, path-order
  and attribute cues. It is the offline matcher and the LLM fallback.
* ``overlap_match`` pairs boxes by IoU, i.e. assumes the images are aligned.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .appearance import normalize_attributes
from .posgraph import GraphEdge, GraphNode, ParsedGraph, PositionalGraph, serialize_graph
from .providers import ChatRequest, Provider, TextPart, call_with_retry
from .scene_io import AppearanceRecord, MatchResult, Modality, ScenePair, iou, rescale_box

logger = logging.getLogger(__name__)

DEFAULT_W_POS = 1.0
DEFAULT_W_ATTR = 1.0
DEFAULT_TAU = 1.5
DEFAULT_IOU_THRESHOLD = 0.5
REPROMPT_SUFFIX = "Answer strictly in the required format."
MAX_REPROMPTS = 2

RGB_HEADER = "### RGB graph"
THERMAL_HEADER = "### Thermal graph"

MATCH_INSTRUCTIONS = (
    "You will receive two labeled scene graphs, one from an RGB image and one from a thermal "
    "image of the same scene. The two cameras are not calibrated, so the same person can sit at "
    "very different pixel positions in the two images. Each NODE line is one detected person: "
    "pos is the box center as a fraction of image width and height, attrs is an appearance "
    "description. EDGE lines join neighbouring people into a path and give their pixel distance. "
    "Use the relative layout of the people and their appearance to decide which RGB person is "
    "the same individual as which thermal person. A person may be missing from one image; leave "
    "such people out of the result. RGB_personK and T_personK refer to the K-th node of each "
    "graph (you may also use the node labels directly)."
)

FORMAT_STANZA = (
    "Reply in exactly this form:\n"
    "Rationale: <your reasoning>\n"
    "Matching result: (RGB_person1 : T_person1, RGB_person2 : T_person2, ...)"
)


class MatchParseError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        super().__init__(f"{message} (line {line}, column {column})")


@dataclass
class CostMatrix:
    rows: list[str]
    cols: list[str]
    cost: np.ndarray

    def __post_init__(self):
        self.cost = np.asarray(self.cost, dtype=float).reshape(len(self.rows), len(self.cols))
        if not np.all(np.isfinite(self.cost)):
            raise ValueError("cost entries must be finite")
        if np.any(self.cost < 0):
            raise ValueError("cost entries must be >= 0")

    def at(self, row_id: str, col_id: str) -> float:
        return float(self.cost[self.rows.index(row_id), self.cols.index(col_id)])

    def total(self, pairs: Sequence[tuple[str, str]]) -> float:
        return float(sum(self.at(r, c) for r, c in pairs))


def solve_assignment(cm: CostMatrix, tau: float = math.inf) -> list[tuple[str, str]]:
    """Minimum-cost partial assignment; pairs costing more than ``tau`` are dropped.

    Non-square problems are padded to square with ``tau``-cost dummy entries.
    """
    n, m = cm.cost.shape
    if n == 0 or m == 0:
        return []
    if math.isfinite(tau):
        size = max(n, m)
        padded = np.full((size, size), float(tau))
        padded[:n, :m] = cm.cost
        rows, cols = linear_sum_assignment(padded)
    else:
        rows, cols = linear_sum_assignment(cm.cost)
    pairs = []
    for i, j in sorted(zip(rows.tolist(), cols.tolist())):
        if i < n and j < m and cm.cost[i, j] <= tau:
            pairs.append((cm.rows[i], cm.cols[j]))
    return pairs


def attribute_dissimilarity(a: Optional[Mapping[str, str]], b: Optional[Mapping[str, str]]) -> float:
    """Fraction of attribute keys on which two descriptions disagree.

    Keys present on only one side count as disagreement. Without attributes on
    both sides there is no evidence and the result is 0.
    """
    if not a or not b:
        return 0.0
    na, nb = normalize_attributes(dict(a)), normalize_attributes(dict(b))
    keys = set(na) | set(nb)
    return sum(na.get(k) != nb.get(k) for k in keys) / len(keys)


def _attr_maps(descriptions: Optional[Mapping[str, AppearanceRecord]]) -> dict[str, dict[str, str]]:
    return {k: dict(v.attributes) for k, v in (descriptions or {}).items()}


def structural_cost_matrix(
    rgb_graph: PositionalGraph,
    thermal_graph: PositionalGraph,
    rgb_attrs: Optional[Mapping[str, Mapping[str, str]]] = None,
    thermal_attrs: Optional[Mapping[str, Mapping[str, str]]] = None,
    w_pos: float = DEFAULT_W_POS,
    w_attr: float = DEFAULT_W_ATTR,
) -> CostMatrix:
    if w_pos < 0 or w_attr < 0 or (w_pos == 0 and w_attr == 0):
        raise ValueError("weights must be >= 0 and not both zero")
    rgb_attrs = rgb_attrs or {}
    thermal_attrs = thermal_attrs or {}
    rpos = rgb_graph.path_positions()
    tpos = thermal_graph.path_positions()
    cost = np.zeros((len(rgb_graph.nodes), len(thermal_graph.nodes)))
    for i, rn in enumerate(rgb_graph.nodes):
        for j, tn in enumerate(thermal_graph.nodes):
            positional = math.dist(rn.normalized_center, tn.normalized_center) + abs(
                rpos[rn.det_id] - tpos[tn.det_id]
            )
            dissim = attribute_dissimilarity(rgb_attrs.get(rn.det_id), thermal_attrs.get(tn.det_id))
            cost[i, j] = w_pos * positional + w_attr * dissim
    return CostMatrix(
        [n.det_id for n in rgb_graph.nodes], [n.det_id for n in thermal_graph.nodes], cost
    )


def structural_match(
    rgb_graph: PositionalGraph,
    thermal_graph: PositionalGraph,
    rgb_descriptions: Optional[Mapping[str, AppearanceRecord]] = None,
    thermal_descriptions: Optional[Mapping[str, AppearanceRecord]] = None,
    w_pos: float = DEFAULT_W_POS,
    w_attr: float = DEFAULT_W_ATTR,
    tau: float = DEFAULT_TAU,
    scene_id: str = "",
) -> MatchResult:
    cm = structural_cost_matrix(
        rgb_graph, thermal_graph, _attr_maps(rgb_descriptions), _attr_maps(thermal_descriptions), w_pos, w_attr
    )
    pairs = solve_assignment(cm, tau)
    used_r = {r for r, _ in pairs}
    used_t = {t for _, t in pairs}
    return MatchResult(
        scene_id=scene_id,
        pairs=pairs,
        rationale=f"structural assignment (w_pos={w_pos}, w_attr={w_attr}, tau={tau}), total cost {cm.total(pairs):.4f}",
        unmatched_rgb=[r for r in cm.rows if r not in used_r],
        unmatched_thermal=[t for t in cm.cols if t not in used_t],
    )


def graph_from_parsed(parsed: ParsedGraph, modality: Modality) -> PositionalGraph:
    """Rebuild a graph from its text form; centers are the normalized positions."""
    nodes = [GraphNode(k, pos, pos) for k, pos in parsed.nodes.items()]
    edges = [GraphEdge(a, b, d) for a, b, d in parsed.edges]
    return PositionalGraph(modality, nodes, edges)


# ---------------------------------------------------------------------------
# LLM prompt and reply grammar


def build_match_prompt(rgb_graph_text: str, thermal_graph_text: str) -> str:
    if not rgb_graph_text.strip() or not thermal_graph_text.strip():
        raise ValueError("both graph serializations must be non-empty")
    return "\n\n".join(
        [
            MATCH_INSTRUCTIONS,
            f"{RGB_HEADER}\n{rgb_graph_text.strip()}",
            f"{THERMAL_HEADER}\n{thermal_graph_text.strip()}",
            FORMAT_STANZA,
        ]
    )


def split_match_prompt(prompt: str) -> tuple[str, str]:
    """Recover the two graph sections from a prompt built by :func:`build_match_prompt`."""
    try:
        after_rgb = prompt.split(RGB_HEADER + "\n", 1)[1]
        rgb_text, rest = after_rgb.split("\n\n" + THERMAL_HEADER + "\n", 1)
        thermal_text = rest.split("\n\n", 1)[0]
    except (IndexError, ValueError):
        raise ValueError("prompt does not contain both graph sections") from None
    return rgb_text, thermal_text


def render_match_reply(
    pairs: Sequence[tuple[str, str]],
    rgb_ids: Sequence[str],
    thermal_ids: Sequence[str],
    rationale: str = "",
) -> str:
    """Render pairs using the ``RGB_personK : T_personK`` labels."""
    rindex = {d: i + 1 for i, d in enumerate(rgb_ids)}
    tindex = {d: i + 1 for i, d in enumerate(thermal_ids)}
    body = ", ".join(f"RGB_person{rindex[r]} : T_person{tindex[t]}" for r, t in pairs)
    return f"Rationale: {rationale or 'none given'}\nMatching result: ({body})"


_MARKER_RE = re.compile(r"^[\s*_#>]*matching\s+result\s*:", re.IGNORECASE)
_RATIONALE_RE = re.compile(r"^[\s*_#>]*rationale\s*:\s*", re.IGNORECASE)
_RGB_LABEL_RE = re.compile(r"^rgb_?person_?(\d+)$", re.IGNORECASE)
_T_LABEL_RE = re.compile(r"^(?:t|thermal)_?person_?(\d+)$", re.IGNORECASE)


def _resolve(token: str, ids: Sequence[str], label_re: re.Pattern, side: str, line: int, col: int) -> str:
    compact = re.sub(r"\s+", "", token)
    if compact in ids:
        return compact
    m = label_re.match(compact)
    if m:
        k = int(m.group(1))
        if 1 <= k <= len(ids):
            return ids[k - 1]
    raise MatchParseError(f"unknown {side} id {token.strip()!r}", line, col)


def parse_match_reply(
    text: str, rgb_ids: Sequence[str], thermal_ids: Sequence[str]
) -> tuple[str, list[tuple[str, str]]]:
    """Parse ``Rationale: ... / Matching result: (a : b, ...)``.

    Returns the rationale and pairs as det_ids. Raises MatchParseError on a
    missing marker, malformed pair, unknown id or repeated id.
    """
    lines = text.splitlines()
    marker_line = None
    for i, line in enumerate(lines):
        if _MARKER_RE.match(line):
            marker_line = i
            break
    if marker_line is None:
        raise MatchParseError("missing 'Matching result:' marker", len(lines), 0)

    rationale_lines = [ln for ln in lines[:marker_line]]
    rationale = "\n".join(rationale_lines).strip()
    rationale = _RATIONALE_RE.sub("", rationale, count=1).strip()

    head = _MARKER_RE.match(lines[marker_line])
    start_col = head.end()
    while start_col < len(lines[marker_line]) and lines[marker_line][start_col] in "*_":
        start_col += 1  # closing markdown emphasis around the marker
    body = "\n".join([lines[marker_line][start_col:]] + lines[marker_line + 1 :]).strip()
    if body.startswith("("):
        close = body.find(")")
        if close < 0:
            raise MatchParseError("unterminated pair list", marker_line + 1, start_col)
        body = body[1:close]
    body = body.strip()

    pairs: list[tuple[str, str]] = []
    seen_r: set[str] = set()
    seen_t: set[str] = set()
    if not body:
        return rationale, pairs
    col = start_col
    for chunk in body.split(","):
        if not chunk.strip():
            col += len(chunk) + 1
            continue
        if ":" not in chunk:
            raise MatchParseError(f"malformed pair {chunk.strip()!r}", marker_line + 1, col)
        left, right = chunk.split(":", 1)
        r = _resolve(left, rgb_ids, _RGB_LABEL_RE, "RGB", marker_line + 1, col)
        t = _resolve(right, thermal_ids, _T_LABEL_RE, "thermal", marker_line + 1, col)
        if r in seen_r:
            raise MatchParseError(f"duplicate RGB id {r!r}", marker_line + 1, col)
        if t in seen_t:
            raise MatchParseError(f"duplicate thermal id {t!r}", marker_line + 1, col)
        seen_r.add(r)
        seen_t.add(t)
        pairs.append((r, t))
        col += len(chunk) + 1
    return rationale, pairs


def llm_match(
    scene: ScenePair,
    rgb_graph: PositionalGraph,
    thermal_graph: PositionalGraph,
    rgb_descriptions: Optional[Mapping[str, AppearanceRecord]],
    thermal_descriptions: Optional[Mapping[str, AppearanceRecord]],
    provider: Provider,
    w_pos: float = DEFAULT_W_POS,
    w_attr: float = DEFAULT_W_ATTR,
    tau: float = DEFAULT_TAU,
) -> MatchResult:
    """Prompt ``provider``; after two failed re-prompts fall back to structural matching."""
    rgb_ids = [d.det_id for d in scene.rgb_detections]
    thermal_ids = [d.det_id for d in scene.thermal_detections]
    if not rgb_ids or not thermal_ids:
        return MatchResult.from_pairs(scene, [], "no detections in one modality; nothing to match")

    prompt = build_match_prompt(
        serialize_graph(rgb_graph, rgb_descriptions), serialize_graph(thermal_graph, thermal_descriptions)
    )
    last_error: Optional[MatchParseError] = None
    for attempt in range(MAX_REPROMPTS + 1):
        text = prompt if attempt == 0 else f"{prompt}\n\n{REPROMPT_SUFFIX}"
        request = ChatRequest(
            parts=[TextPart(text)], meta={"task": "match", "scene_id": scene.scene_id, "attempt": attempt}
        )
        reply = call_with_retry(provider, request)
        try:
            rationale, pairs = parse_match_reply(reply, rgb_ids, thermal_ids)
        except MatchParseError as exc:
            logger.warning("%s: unparseable match reply for %s: %s", provider.name, scene.scene_id, exc)
            last_error = exc
            continue
        return MatchResult.from_pairs(scene, pairs, rationale)

    fallback = structural_match(
        rgb_graph, thermal_graph, rgb_descriptions, thermal_descriptions, w_pos, w_attr, tau, scene.scene_id
    )
    fallback.rationale = (
        f"fallback to structural matcher after {MAX_REPROMPTS + 1} unparseable replies "
        f"({last_error}); {fallback.rationale}"
    )
    return fallback


def overlap_match(scene: ScenePair, iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> MatchResult:
    """Greedy descending-IoU pairing, thermal boxes mapped into the RGB frame."""
    if not 0 < iou_threshold < 1:
        raise ValueError("iou_threshold must lie in (0, 1)")
    candidates = []
    for r in scene.rgb_detections:
        for t in scene.thermal_detections:
            mapped = rescale_box(t.bbox, scene.image_size_thermal, scene.image_size_rgb)
            v = iou(r.bbox, mapped)
            if v >= iou_threshold:
                candidates.append((-v, r.det_id, t.det_id))
    candidates.sort()
    used_r: set[str] = set()
    used_t: set[str] = set()
    pairs = []
    for _, r, t in candidates:
        if r in used_r or t in used_t:
            continue
        used_r.add(r)
        used_t.add(t)
        pairs.append((r, t))
    return MatchResult.from_pairs(scene, pairs, f"greedy IoU overlap pairing at threshold {iou_threshold}")
