"""Deterministic offline stand-in for a vision-language provider.

The mock reads the routing hints in ``ChatRequest.meta`` and answers each task
the way a well-behaved model would:

* ``describe``: echoes the synthetic identity's attributes, corrupting each
  one with probability ``hallucination_rate`` (seeded per request).
* ``debate``: restates its own latest opinion from the history.
* ``judge``: per-attribute majority over the debaters' latest opinions.
* ``match``: re-parses both graphs from the prompt and runs the structural matcher.
"""

from __future__ import annotations

import hashlib
import random
from typing import Optional

from .debate import format_attribute_lines, latest_opinions, majority_attributes, parse_history
from .providers import ChatRequest, Provider, ProviderError
from .synthgen import DEFAULT_VOCAB, identity_attributes


def _rng(*parts: object) -> random.Random:
    digest = hashlib.sha256("|".join(map(str, parts)).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


class MockProvider(Provider):
    def __init__(
        self,
        name: str = "mock",
        seed: int = 0,
        hallucination_rate: float = 0.0,
        vocab: Optional[dict[str, list[str]]] = None,
    ):
        if not 0.0 <= hallucination_rate <= 1.0:
            raise ValueError("hallucination_rate must lie in [0, 1]")
        self.name = name
        self.seed = seed
        self.hallucination_rate = hallucination_rate
        self.vocab = vocab or DEFAULT_VOCAB

    def complete(self, request: ChatRequest) -> str:
        task = request.meta.get("task")
        if task == "describe":
            return self._describe(request.meta)
        if task == "debate":
            return self._debate(request)
        if task == "judge":
            return self._judge(request)
        if task == "match":
            return self._match(request)
        raise ProviderError(f"{self.name}: mock provider cannot handle task {task!r}")

    def attributes_for(self, scene_id: str, det_id: str, gt_identity: Optional[str], modality: str = "") -> dict[str, str]:
        """Possibly corrupted attributes; a pure function of its arguments and the seed."""
        if gt_identity is None:
            return {"other": "unidentified person"}
        truth = identity_attributes(gt_identity, self.vocab)
        out = {}
        for key, value in truth.items():
            rng = _rng(self.seed, self.name, scene_id, modality, det_id, gt_identity, key)
            if rng.random() < self.hallucination_rate:
                wrong = [v for v in self.vocab[key] if v != value]
                if wrong:
                    value = rng.choice(wrong)
            out[key] = value
        return out

    def _describe(self, meta: dict) -> str:
        attrs = self.attributes_for(meta.get("scene_id", ""), meta.get("det_id", ""), meta.get("gt_identity"), meta.get("modality", ""))
        summary = ", ".join(attrs.values())
        return f"A pedestrian ({summary}).\n{format_attribute_lines(attrs)}"

    def _debate(self, request: ChatRequest) -> str:
        history = parse_history(request.text)
        mine = latest_opinions(history).get(self.name)
        if mine is None:
            meta = request.meta
            mine = self.attributes_for(meta.get("scene_id", ""), meta.get("det_id", ""), meta.get("gt_identity"), meta.get("modality", ""))
        return f"I keep my description.\n{format_attribute_lines(mine)}"

    def _judge(self, request: ChatRequest) -> str:
        opinions = latest_opinions(parse_history(request.text))
        verdict = majority_attributes(opinions, tiebreak=self.name)
        return f"Verdict by majority of the panel.\n{format_attribute_lines(verdict)}"

    def _match(self, request: ChatRequest) -> str:
        from .matcher import graph_from_parsed, render_match_reply, solve_assignment, split_match_prompt, structural_cost_matrix
        from .posgraph import parse_graph_text
        from .scene_io import Modality

        rgb_text, thermal_text = split_match_prompt(request.text)
        rgb_p, th_p = parse_graph_text(rgb_text), parse_graph_text(thermal_text)
        rgb_g = graph_from_parsed(rgb_p, Modality.RGB)
        th_g = graph_from_parsed(th_p, Modality.THERMAL)
        cm = structural_cost_matrix(rgb_g, th_g, rgb_p.attributes, th_p.attributes)
        pairs = solve_assignment(cm, tau=1.5)
        return render_match_reply(
            pairs, list(rgb_p.nodes), list(th_p.nodes), "matched by layout and appearance similarity"
        )
