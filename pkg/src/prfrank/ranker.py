"""Input assembly and the neural response ranker.

The assembled sequence is

    [CLS] u_1 [EOT] u_2 [EOT] ... u_m [SEP] r [SEP] t_1 [SEP] t_2 ...

with segment 0 for the context side (through the first [SEP]) and segment 1
for the response and every expansion term.  The encoder's position-0 output
feeds a sigmoid scoring head; training minimizes mean binary cross-entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data_model import DialogContext, LabeledExample, ResponseCandidate
from .neural_core import (
    EncoderConfig,
    OptimizerConfig,
    ParameterStore,
    clamp_prob,
    encoder_backward_batch,
    encoder_forward_batch,
    init_encoder_params,
    load_checkpoint,
    optimizer_step,
    pad_batch,
    save_checkpoint,
    sigmoid,
)
from .selector import SelectedTerms
from .text_pipeline import CLS_ID, EOT_ID, SEP_ID, Vocabulary, encode


@dataclass(frozen=True)
class TruncationLimits:
    context_budget: int = 96
    response_budget: int = 32


@dataclass
class RankerInput:
    """Encoded sequence ready for the encoder."""

    ids: np.ndarray
    segments: np.ndarray
    scales: np.ndarray
    # (selected-term index, start, end) spans over term token positions
    term_spans: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def length(self) -> int:
        return int(self.ids.shape[0])


@dataclass
class Prediction:
    value: float  # clamped into (0, 1)

    def __post_init__(self):
        self.value = float(min(max(self.value, 1e-7), 1.0 - 1e-7))


@dataclass
class RankerModel:
    store: ParameterStore
    encoder: EncoderConfig
    vocab: Vocabulary
    limits: TruncationLimits = TruncationLimits()

    @classmethod
    def create(
        cls,
        vocab: Vocabulary,
        encoder: EncoderConfig = EncoderConfig(),
        limits: TruncationLimits = TruncationLimits(),
        seed: int = 0,
    ) -> "RankerModel":
        store = init_encoder_params(len(vocab), encoder, seed)
        return cls(store=store, encoder=encoder, vocab=vocab, limits=limits)

    def save(self, path: str) -> None:
        extra = {
            "encoder": {
                "layers": self.encoder.layers,
                "heads": self.encoder.heads,
                "dim": self.encoder.dim,
                "ff_dim": self.encoder.ff_dim,
                "max_len": self.encoder.max_len,
                "dropout": self.encoder.dropout,
            },
            "limits": {
                "context_budget": self.limits.context_budget,
                "response_budget": self.limits.response_budget,
            },
            "vocab": self.vocab.tokens()[5:],  # reserved ids are implicit
        }
        save_checkpoint(self.store, path, extra=extra)

    @classmethod
    def load(cls, path: str) -> "RankerModel":
        store, extra = load_checkpoint(path)
        vocab = Vocabulary(extra["vocab"])
        encoder = EncoderConfig(**extra["encoder"])
        limits = TruncationLimits(**extra["limits"])
        return cls(store=store, encoder=encoder, vocab=vocab, limits=limits)


def _truncate_context(turns: list[list[int]], budget: int) -> list[list[int]]:
    def cost(ts):
        return sum(len(t) for t in ts) + max(0, len(ts) - 1)

    kept = list(turns)
    while len(kept) > 1 and cost(kept) > budget:
        kept = kept[1:]  # oldest turn goes first
    if len(kept) == 1 and len(kept[0]) > budget:
        kept = [kept[0][-budget:]]
    return kept


def assemble_input(
    context: DialogContext,
    response: ResponseCandidate,
    terms: SelectedTerms,
    vocab: Vocabulary,
    limits: TruncationLimits,
    max_len: int,
) -> RankerInput:
    """Build the ranker input sequence under the given budgets.

    The context keeps its most recent turns, the response keeps its leading
    tokens, and terms are appended in selector order until one no longer
    fits; a term is never split across the boundary.
    """
    turns = [encode(u.tokens, vocab) for u in context.utterances]
    turns = _truncate_context(turns, limits.context_budget)
    response_ids = encode(response.tokens, vocab)[: limits.response_budget]

    ids: list[int] = [CLS_ID]
    for i, turn in enumerate(turns):
        if i > 0:
            ids.append(EOT_ID)
        ids.extend(turn)
    ids.append(SEP_ID)
    seg_boundary = len(ids)  # context segment includes its closing [SEP]
    ids.extend(response_ids)
    ids.append(SEP_ID)

    gates = terms.gates
    term_spans: list[tuple[int, int, int]] = []
    for idx, term in enumerate(terms.terms):
        term_ids = encode([term], vocab)
        extra = len(term_ids) + (1 if term_spans else 0)
        if len(ids) + extra > max_len:
            break
        if term_spans:
            ids.append(SEP_ID)
        start = len(ids)
        ids.extend(term_ids)
        term_spans.append((idx, start, len(ids)))

    if len(ids) > max_len:
        raise ValueError(f"assembled length {len(ids)} exceeds max_len {max_len}")

    ids_arr = np.asarray(ids, dtype=np.int64)
    segments = np.zeros(len(ids), dtype=np.int64)
    segments[seg_boundary:] = 1
    scale_arr = np.ones(len(ids), dtype=np.float64)
    if gates is not None:
        for term_idx, start, end in term_spans:
            scale_arr[start:end] = gates[term_idx]
    return RankerInput(ids=ids_arr, segments=segments, scales=scale_arr, term_spans=term_spans)


def _pack_inputs(inputs: Sequence[RankerInput]):
    ids, lengths = pad_batch([x.ids for x in inputs], pad_value=0)
    segments, _ = pad_batch([x.segments for x in inputs], pad_value=0)
    width = ids.shape[1]
    scales = np.ones((len(inputs), width))
    for i, x in enumerate(inputs):
        scales[i, : x.length] = x.scales
    return ids, lengths, segments, scales


def forward_batch(
    model: RankerModel,
    inputs: Sequence[RankerInput],
    train: bool = False,
    dropout_rng: Optional[np.random.Generator] = None,
):
    """Unclamped probabilities plus the cache for the backward pass."""
    ids, lengths, segments, scales = _pack_inputs(inputs)
    cls_vecs, cache = encoder_forward_batch(
        ids, lengths, segments, model.store, model.encoder,
        scales=scales, train=train, dropout_rng=dropout_rng,
    )
    logits = cls_vecs @ model.store["head/W"] + model.store["head/b"]
    probs = sigmoid(logits)
    return probs, dict(cls_vecs=cls_vecs, encoder_cache=cache, lengths=lengths)


def forward_input(
    model: RankerModel,
    x: RankerInput,
    train: bool = False,
    dropout_rng: Optional[np.random.Generator] = None,
):
    probs, cache = forward_batch(model, [x], train=train, dropout_rng=dropout_rng)
    return float(probs[0]), cache


def score(model: RankerModel, x: RankerInput) -> Prediction:
    """Evaluation-mode ranking score in (0, 1)."""
    prob, _ = forward_input(model, x, train=False)
    return Prediction(value=prob)


def score_batch(model: RankerModel, inputs: Sequence[RankerInput]) -> list[Prediction]:
    """Evaluation-mode scores for a batch of assembled inputs."""
    if not inputs:
        return []
    probs, _ = forward_batch(model, inputs, train=False)
    return [Prediction(value=float(p)) for p in probs]


def batch_loss(preds: Sequence[Prediction], labels: Sequence[int]) -> float:
    """Mean binary cross-entropy over the batch."""
    if len(preds) != len(labels):
        raise ValueError("predictions/labels length mismatch")
    if not preds:
        raise ValueError("empty batch")
    total = 0.0
    for pred, y in zip(preds, labels):
        p = pred.value
        total += -(y * math.log(p) + (1 - y) * math.log(1.0 - p))
    return total / len(preds)


def batch_loss_and_grads(
    model: RankerModel,
    inputs: Sequence[RankerInput],
    labels: Sequence[int],
    train: bool = False,
    dropout_rng: Optional[np.random.Generator] = None,
):
    """Mean BCE loss, parameter gradients, and per-input scale gradients.

    The composite dLoss/dlogit = (p - y) / B form keeps the gradient stable
    even when the clamped probability saturates.
    """
    if not inputs:
        raise ValueError("empty batch")
    if len(inputs) != len(labels):
        raise ValueError("inputs/labels length mismatch")
    batch = len(inputs)
    store = model.store
    probs, cache = forward_batch(model, inputs, train=train, dropout_rng=dropout_rng)
    y = np.asarray(labels, dtype=np.float64)
    clamped = clamp_prob(probs)
    total_loss = float(np.mean(-(y * np.log(clamped) + (1.0 - y) * np.log(1.0 - clamped))))

    d_logits = (probs - y) / batch
    cls_vecs = cache["cls_vecs"]
    grads: dict[str, np.ndarray] = {
        "head/W": cls_vecs.T @ d_logits,
        "head/b": np.asarray(d_logits.sum()),
    }
    d_cls = np.outer(d_logits, store["head/W"])
    enc_grads, d_scales = encoder_backward_batch(d_cls, cache["encoder_cache"], store, model.encoder)
    for name, g in enc_grads.items():
        grads[name] = g
    scale_grads = [d_scales[i, : x.length] for i, x in enumerate(inputs)]
    return total_loss, grads, scale_grads


def assemble_batch(
    model: RankerModel, batch: Sequence[tuple[LabeledExample, SelectedTerms]]
) -> tuple[list[RankerInput], list[int]]:
    inputs = [
        assemble_input(ex.context, ex.response, terms, model.vocab, model.limits, model.encoder.max_len)
        for ex, terms in batch
    ]
    labels = [ex.label for ex, _ in batch]
    return inputs, labels


def ranker_train_step(
    model: RankerModel,
    batch: Sequence[tuple[LabeledExample, SelectedTerms]],
    opt: OptimizerConfig,
    dropout_rng: Optional[np.random.Generator] = None,
) -> float:
    """One optimizer step against the batch loss; returns the pre-update loss."""
    if not batch:
        raise ValueError("empty batch")
    inputs, labels = assemble_batch(model, batch)
    loss, grads, _ = batch_loss_and_grads(model, inputs, labels, train=True, dropout_rng=dropout_rng)
    optimizer_step(model.store, grads, opt)
    return loss
