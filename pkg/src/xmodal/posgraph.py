"""Per-modality positional graphs over detection centers.

Edges come from a Kruskal pass over all pairwise center distances with an
extra rejection rule: an edge is skipped when either endpoint already has two
edges. On a complete geometric graph this always ends as a single path
through every node.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .scene_io import ATTRIBUTE_KEYS, AppearanceRecord, Detection, Modality


@dataclass(frozen=True)
class GraphNode:
    det_id: str
    center: tuple[float, float]
    normalized_center: tuple[float, float]


@dataclass(frozen=True)
class GraphEdge:
    a: str
    b: str
    length: float

    @property
    def endpoints(self) -> tuple[str, str]:
        return (self.a, self.b)


@dataclass
class PositionalGraph:
    modality: Modality
    nodes: list[GraphNode] = field(default_factory=list)
    edges: list[GraphEdge] = field(default_factory=list)

    def node(self, det_id: str) -> GraphNode:
        for n in self.nodes:
            if n.det_id == det_id:
                return n
        raise KeyError(det_id)

    @property
    def total_length(self) -> float:
        return sum(e.length for e in self.edges)

    def degrees(self) -> dict[str, int]:
        deg = {n.det_id: 0 for n in self.nodes}
        for e in self.edges:
            deg[e.a] += 1
            deg[e.b] += 1
        return deg

    def path_order(self) -> list[str]:
        """Node ids along the path, oriented so the id sequence is lexicographically minimal."""
        if not self.nodes:
            return []
        adj: dict[str, list[str]] = {n.det_id: [] for n in self.nodes}
        for e in self.edges:
            adj[e.a].append(e.b)
            adj[e.b].append(e.a)
        ends = sorted(k for k, v in adj.items() if len(v) <= 1)
        walks = []
        for start in ends:
            seq, prev, cur = [start], None, start
            while True:
                nxt = [v for v in adj[cur] if v != prev]
                if not nxt:
                    break
                prev, cur = cur, nxt[0]
                seq.append(cur)
            walks.append(seq)
        return min(walks)

    def path_positions(self) -> dict[str, float]:
        """Normalized ordinal position (0..1) of each node along the path."""
        order = self.path_order()
        if len(order) <= 1:
            return {k: 0.0 for k in order}
        return {k: i / (len(order) - 1) for i, k in enumerate(order)}


class _DisjointSet:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


def build_graph(detections: Sequence[Detection], image_size: Sequence[float]) -> PositionalGraph:
    """Build the degree-capped spanning path for one modality's detections."""
    modality = detections[0].modality if detections else Modality.RGB
    width, height = image_size
    nodes: list[GraphNode] = []
    seen: set[str] = set()
    for det in detections:
        if det.det_id in seen:
            raise ValueError(f"duplicate det_id {det.det_id!r}")
        if det.modality is not modality:
            raise ValueError("detections must all come from one modality")
        seen.add(det.det_id)
        cx, cy = det.bbox.center
        nodes.append(GraphNode(det.det_id, (cx, cy), (cx / width, cy / height)))

    candidates = []
    for u, v in itertools.combinations(nodes, 2):
        a, b = sorted((u.det_id, v.det_id))
        length = math.dist(u.center, v.center)
        candidates.append((length, a, b))
    candidates.sort()

    dsu = _DisjointSet(seen)
    degree = {k: 0 for k in seen}
    edges: list[GraphEdge] = []
    for length, a, b in candidates:
        if len(edges) == len(nodes) - 1:
            break
        if degree[a] >= 2 or degree[b] >= 2:
            continue
        if not dsu.union(a, b):
            continue
        degree[a] += 1
        degree[b] += 1
        edges.append(GraphEdge(a, b, length))
    return PositionalGraph(modality, nodes, edges)


def format_attributes(attributes: Mapping[str, str]) -> str:
    return "; ".join(f"{k}={attributes[k]}" for k in ATTRIBUTE_KEYS if k in attributes)


def serialize_graph(
    graph: PositionalGraph, descriptions: Optional[Mapping[str, AppearanceRecord]] = None
) -> str:
    descriptions = descriptions or {}
    ids = {n.det_id for n in graph.nodes}
    for det_id in descriptions:
        if det_id not in ids:
            raise KeyError(f"description for unknown node {det_id!r}")
    lines = []
    for n in graph.nodes:
        nx, ny = n.normalized_center
        line = f"NODE {n.det_id} pos=({nx:.3f},{ny:.3f})"
        rec = descriptions.get(n.det_id)
        if rec is not None and rec.attributes:
            line += f" attrs={{{format_attributes(rec.attributes)}}}"
        lines.append(line)
    for e in graph.edges:
        lines.append(f"EDGE {e.a}-{e.b} dist={e.length:.1f}")
    return "\n".join(lines)


_NODE_RE = re.compile(r"^NODE (\S+) pos=\((-?[\d.]+),(-?[\d.]+)\)(?: attrs=\{(.*)\})?$")
_EDGE_RE = re.compile(r"^EDGE (\S+) dist=([\d.]+)$")


@dataclass
class ParsedGraph:
    nodes: dict[str, tuple[float, float]]
    attributes: dict[str, dict[str, str]]
    edges: list[tuple[str, str, float]]


def parse_graph_text(text: str) -> ParsedGraph:
    """Inverse of :func:`serialize_graph` up to rounding; ignores other lines."""
    nodes: dict[str, tuple[float, float]] = {}
    attrs: dict[str, dict[str, str]] = {}
    edges: list[tuple[str, str, float]] = []
    for raw in text.splitlines():
        line = raw.strip()
        m = _NODE_RE.match(line)
        if m:
            det_id = m.group(1)
            nodes[det_id] = (float(m.group(2)), float(m.group(3)))
            attrs[det_id] = {}
            if m.group(4):
                for item in m.group(4).split(";"):
                    k, _, v = item.partition("=")
                    if k.strip():
                        attrs[det_id][k.strip()] = v.strip()
            continue
        m = _EDGE_RE.match(line)
        if m:
            # Node ids may contain '-', so split on the id set once nodes are known.
            endpoints = m.group(1)
            for det_id in nodes:
                if endpoints.startswith(det_id + "-") and endpoints[len(det_id) + 1 :] in nodes:
                    edges.append((det_id, endpoints[len(det_id) + 1 :], float(m.group(2))))
                    break
    return ParsedGraph(nodes, attrs, edges)
