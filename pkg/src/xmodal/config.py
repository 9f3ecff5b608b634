"""Pipeline configuration: INI file plus command-line overrides.

Example file::

    [pipeline]
    matcher = structural        ; llm | structural | overlap
    debate = true
    max_rounds = 1
    judge = gpt4
    describer = gpt4            ; provider used when debate is off
    match_provider = gpt4       ; provider answering the llm matcher
    fusion_frame = THERMAL
    ap_iou_thresh = 0.5
    margin_ratio = 0.5
    jobs = 4

    [matcher]
    w_pos = 1.0
    w_attr = 1.0
    tau = 1.5
    iou_thresh = 0.5

    [providers]
    roster = gpt4, gemini, claude2

    [providers.gpt4]
    kind = http                 ; http | mock
    endpoint = https://example.invalid/v1/chat/completions
    model = gpt-4o

Credentials are never read from the file; live adapters take them from the
``XMODAL_<NAME>_KEY`` environment variable.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from typing import Optional

from .debate import DEFAULT_MAX_ROUNDS
from .matcher import DEFAULT_IOU_THRESHOLD, DEFAULT_TAU, DEFAULT_W_ATTR, DEFAULT_W_POS
from .providers import DEFAULT_JUDGE, DEFAULT_PROVIDERS, ProviderSpec
from .scene_io import Modality

MATCHERS = ("llm", "structural", "overlap")
_SECRET_KEYS = {"key", "api_key", "apikey", "token", "secret", "password"}


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    providers: list[ProviderSpec] = field(default_factory=lambda: [ProviderSpec(n) for n in DEFAULT_PROVIDERS])
    judge: str = DEFAULT_JUDGE
    describer: str = DEFAULT_JUDGE
    match_provider: str = DEFAULT_JUDGE
    matcher: str = "structural"
    w_pos: float = DEFAULT_W_POS
    w_attr: float = DEFAULT_W_ATTR
    tau: float = DEFAULT_TAU
    iou_thresh: float = DEFAULT_IOU_THRESHOLD
    debate: bool = False
    max_rounds: int = DEFAULT_MAX_ROUNDS
    margin_ratio: float = 0.5
    fusion_frame: Modality = Modality.THERMAL
    ap_iou_thresh: float = 0.5
    jobs: int = 1
    record_dir: Optional[str] = None
    replay_dir: Optional[str] = None
    # Mock-only knobs; None means "take it from the dataset index".
    hallucination_rate: Optional[float] = None
    mock_seed: int = 0

    @property
    def provider_names(self) -> list[str]:
        return [p.name for p in self.providers]

    def provider(self, name: str) -> ProviderSpec:
        for p in self.providers:
            if p.name == name:
                return p
        raise ConfigError(f"provider {name!r} is not registered")

    def validate(self) -> None:
        names = self.provider_names
        if len(set(names)) != len(names):
            raise ConfigError("duplicate provider names in roster")
        if self.matcher not in MATCHERS:
            raise ConfigError(f"matcher must be one of {MATCHERS}")
        needed = [("judge", self.judge), ("describer", self.describer)]
        if self.matcher == "llm":
            needed.append(("match_provider", self.match_provider))
        if self.matcher != "overlap":
            for role, name in needed:
                if name not in names:
                    raise ConfigError(f"{role} {name!r} is not in the provider roster {names}")
        if self.debate and self.matcher != "overlap" and len(names) < 2:
            raise ConfigError("debate needs at least two providers")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.w_pos < 0 or self.w_attr < 0 or (self.w_pos == 0 and self.w_attr == 0):
            raise ConfigError("weights must be >= 0 and not both zero")
        if not 0 < self.iou_thresh < 1 or not 0 < self.ap_iou_thresh < 1:
            raise ConfigError("IoU thresholds must lie in (0, 1)")
        if self.margin_ratio < 0:
            raise ConfigError("margin_ratio must be >= 0")
        if self.hallucination_rate is not None and not 0 <= self.hallucination_rate <= 1:
            raise ConfigError("hallucination rate must lie in [0, 1]")
        if self.record_dir and self.replay_dir:
            raise ConfigError("--record and --replay are mutually exclusive")
        for p in self.providers:
            if p.kind not in ("mock", "http"):
                raise ConfigError(f"provider {p.name!r}: unknown kind {p.kind!r}")
            if p.kind == "http" and not p.endpoint:
                raise ConfigError(f"provider {p.name!r}: providers.{p.name}.endpoint is required")
        for d in (self.replay_dir,):
            if d and not os.path.isdir(d):
                raise ConfigError(f"replay directory {d!r} does not exist")


def _bool(value: str, key: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _typed(section: configparser.SectionProxy, key: str, kind, name: str):
    raw = section.get(key)
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}.{key}: cannot parse {raw!r}") from None


def load_config(path: str | os.PathLike, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {os.fspath(path)}: {exc}") from None
    cfg = base or PipelineConfig()

    for section in parser.sections():
        for key in parser[section]:
            if key.lower() in _SECRET_KEYS:
                raise ConfigError(f"{section}.{key}: credentials belong in XMODAL_<NAME>_KEY, not in config files")

    if parser.has_section("pipeline"):
        s = parser["pipeline"]
        for key in s:
            if key in ("matcher", "judge", "describer", "match_provider"):
                setattr(cfg, key, s[key].strip())
            elif key == "debate":
                cfg.debate = _bool(s[key], "pipeline.debate")
            elif key in ("max_rounds", "jobs"):
                setattr(cfg, key, _typed(s, key, int, "pipeline"))
            elif key in ("ap_iou_thresh", "margin_ratio"):
                setattr(cfg, key, _typed(s, key, float, "pipeline"))
            elif key == "fusion_frame":
                try:
                    cfg.fusion_frame = Modality(s[key].strip().upper())
                except ValueError:
                    raise ConfigError(f"pipeline.fusion_frame: unknown frame {s[key]!r}") from None
            else:
                raise ConfigError(f"pipeline.{key}: unknown key")
    if parser.has_section("matcher"):
        s = parser["matcher"]
        for key in s:
            if key not in ("w_pos", "w_attr", "tau", "iou_thresh"):
                raise ConfigError(f"matcher.{key}: unknown key")
            setattr(cfg, key, _typed(s, key, float, "matcher"))
    if parser.has_section("providers"):
        roster = [n.strip() for n in parser["providers"].get("roster", "").split(",") if n.strip()]
        if roster:
            cfg.providers = [ProviderSpec(n) for n in roster]
    for section in parser.sections():
        if not section.startswith("providers."):
            continue
        name = section.split(".", 1)[1]
        try:
            spec = cfg.provider(name)
        except ConfigError:
            raise ConfigError(f"[{section}] configures a provider missing from providers.roster") from None
        s = parser[section]
        for key in s:
            if key in ("kind", "endpoint", "model"):
                setattr(spec, key, s[key].strip())
            elif key == "seed":
                spec.seed = _typed(s, key, int, section)
            elif key == "hallucination_rate":
                spec.hallucination_rate = _typed(s, key, float, section)
            else:
                raise ConfigError(f"{section}.{key}: unknown key")
    return cfg
