"""Run configuration: flat ``key = value`` text files plus CLI overrides.

Every knob of every component lives here with its desk-scale default, so a
single file fully records an experiment.  Unknown keys are rejected rather
than silently ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

from .neural_core import EncoderConfig, OptimizerConfig
from .ranker import TruncationLimits
from .retrieval import Bm25Params, PrfConfig
from .selector import SelectionMode
from .text_pipeline import TokenizerConfig


@dataclass
class RunConfig:
    seed: int = 0

    tokenizer_lowercase: bool = True
    tokenizer_strip_punctuation: bool = True
    tokenizer_mode: str = "word"
    stopword_path: str = "default"  # "default", "none", or a file path

    bm25_k1: float = 1.2
    bm25_b: float = 0.75

    prf_posts: int = 10
    prf_terms: int = 10
    prf_mode: str = "frequency"
    prf_query_budget: int = 64

    vocab_min_freq: int = 1
    vocab_max_size: int = 50000

    encoder_layers: int = 2
    encoder_heads: int = 2
    encoder_dim: int = 64
    encoder_ff_dim: int = 128
    encoder_max_len: int = 256
    encoder_dropout: float = 0.1

    context_budget: int = 96
    response_budget: int = 32

    batch_size: int = 16
    pretrain_steps: int = 200
    episodes: int = 50
    discount: float = 0.3
    reward_sample_rate: float = 0.05
    ranker_lr: float = 1e-3
    policy_lr: float = 1e-3
    linear_decay: bool = False
    use_future_reward: bool = True
    use_baseline: bool = False

    selection_mode: str = "rl"
    rule_top_m: int = -1  # -1 keeps every term
    gumbel_temperature: float = 1.0

    def tokenizer(self) -> TokenizerConfig:
        stop = None if self.stopword_path == "none" else self.stopword_path
        return TokenizerConfig(
            lowercase=self.tokenizer_lowercase,
            strip_punctuation=self.tokenizer_strip_punctuation,
            mode=self.tokenizer_mode,
            stopword_path=stop,
        )

    def bm25(self) -> Bm25Params:
        return Bm25Params(k1=self.bm25_k1, b=self.bm25_b)

    def prf(self) -> PrfConfig:
        return PrfConfig(
            posts_to_retrieve=self.prf_posts,
            terms_to_extract=self.prf_terms,
            extraction_mode=self.prf_mode,
            query_token_budget=self.prf_query_budget,
        )

    def encoder(self) -> EncoderConfig:
        return EncoderConfig(
            layers=self.encoder_layers,
            heads=self.encoder_heads,
            dim=self.encoder_dim,
            ff_dim=self.encoder_ff_dim,
            max_len=self.encoder_max_len,
            dropout=self.encoder_dropout,
        )

    def limits(self) -> TruncationLimits:
        return TruncationLimits(
            context_budget=self.context_budget, response_budget=self.response_budget
        )

    def ranker_optimizer(self, total_steps: int = 0) -> OptimizerConfig:
        return OptimizerConfig(
            learning_rate=self.ranker_lr,
            linear_decay=self.linear_decay,
            total_steps=total_steps if self.linear_decay else 0,
        )

    def mode(self, kind: Optional[str] = None) -> SelectionMode:
        kind = kind or self.selection_mode
        if kind == "rl":
            kind = "rl_greedy"
        top_m = None if self.rule_top_m < 0 else self.rule_top_m
        return SelectionMode(kind=kind, temperature=self.gumbel_temperature, rule_top_m=top_m)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise KeyError(f"unknown config key: {key!r}")
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key!r}: expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_text(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    """Parse ``key = value`` lines over *base* (defaults when omitted)."""
    config = base or RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        setattr(config, key, _parse_value(key, raw))
    return config


def load_config(path: Optional[str] = None, overrides: Optional[list[str]] = None) -> RunConfig:
    """Config from an optional file plus ``key=value`` override strings."""
    config = RunConfig()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            config = parse_config_text(fh.read(), config)
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override {item!r}: expected key=value")
        key, _, raw = item.partition("=")
        setattr(config, key.strip(), _parse_value(key.strip(), raw))
    return config
