"""Ranking metrics and whole-model evaluation over candidate groups.

Groups are ranked by score descending with candidate_id as the
deterministic tie-break.  Groups without a positive candidate cannot be
scored and are excluded (with a count), mirroring how zero-positive
contexts are filtered out of the source data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

from .data_model import Dataset
from .ranker import RankerModel, assemble_input, score_batch
from .selector import (
    PolicyNetwork,
    SelectedTerms,
    SelectionMode,
    apply_selection,
    gumbel_greedy,
    policy_probs,
    rule_select,
    select_actions,
    soft_gate,
    state_of,
)
from .text_pipeline import encode

logger = logging.getLogger(__name__)


@dataclass
class RankedGroup:
    """Candidates of one context, sorted by (score desc, candidate_id asc)."""

    entries: list[tuple[float, int]]  # (score, label) after sorting

    @classmethod
    def from_scored(cls, scored: Sequence[tuple[str, float, int]]) -> "RankedGroup":
        ordered = sorted(scored, key=lambda e: (-e[1], e[0]))
        return cls(entries=[(s, y) for _, s, y in ordered])

    @property
    def positives(self) -> int:
        return sum(y for _, y in self.entries)


@dataclass
class MetricsReport:
    recall_at_1: float
    recall_at_2: float
    recall_at_5: float
    mean_average_precision: float
    precision_at_1: float
    group_count: int

    def as_dict(self) -> dict:
        return {
            "recall@1": self.recall_at_1,
            "recall@2": self.recall_at_2,
            "recall@5": self.recall_at_5,
            "map": self.mean_average_precision,
            "precision@1": self.precision_at_1,
            "groups": self.group_count,
        }

    def as_table(self) -> str:
        header = f"{'metric':<14}{'value':>10}"
        rows = [header, "-" * len(header)]
        for key, value in self.as_dict().items():
            if key == "groups":
                rows.append(f"{key:<14}{value:>10d}")
            else:
                rows.append(f"{key:<14}{value:>10.4f}")
        return "\n".join(rows)


def recall_at_k(group: RankedGroup, k: int) -> float:
    """Fraction of the group's positives found in the top *k*."""
    if k < 1:
        raise ValueError("k must be >= 1")
    total = group.positives
    if total == 0:
        raise ValueError("unratable group: no positive candidate")
    hits = sum(y for _, y in group.entries[:k])
    return hits / total


def precision_at_1(group: RankedGroup) -> float:
    if not group.entries:
        raise ValueError("empty group")
    return float(group.entries[0][1])


def average_precision(group: RankedGroup) -> float:
    total = group.positives
    if total == 0:
        raise ValueError("unratable group: no positive candidate")
    hits = 0
    ap = 0.0
    for rank, (_, y) in enumerate(group.entries, start=1):
        if y:
            hits += 1
            ap += hits / rank
    return ap / total


def mean_average_precision(groups: Sequence[RankedGroup]) -> float:
    if not groups:
        raise ValueError("no groups")
    return sum(average_precision(g) for g in groups) / len(groups)


def summarize(groups: Sequence[RankedGroup]) -> MetricsReport:
    if not groups:
        raise ValueError("no ratable groups")
    n = len(groups)
    return MetricsReport(
        recall_at_1=sum(recall_at_k(g, 1) for g in groups) / n,
        recall_at_2=sum(recall_at_k(g, 2) for g in groups) / n,
        recall_at_5=sum(recall_at_k(g, 5) for g in groups) / n,
        mean_average_precision=mean_average_precision(groups),
        precision_at_1=sum(precision_at_1(g) for g in groups) / n,
        group_count=n,
    )


def select_terms_for_eval(
    model: RankerModel,
    policy: Optional[PolicyNetwork],
    mode: SelectionMode,
    response_tokens: list[str],
    prf_terms: list[str],
) -> tuple[SelectedTerms, list[int], list[float]]:
    """Deterministic test-time selection for one candidate.

    RL modes run greedily; gumbel takes the noise-free argmax; gate modes
    keep every term with its learned scalar weight.  Returns the selection
    plus the per-term actions and select probabilities for export.
    """
    from .data_model import PrfTermSet

    table = model.store["emb/token"]
    term_set = PrfTermSet(terms=list(prf_terms))
    k = len(prf_terms)
    if mode.kind == "none" or k == 0:
        return SelectedTerms(terms=[]), [0] * k, [0.0] * k
    if mode.kind == "rule":
        selected = rule_select(term_set, mode.rule_top_m)
        kept = len(selected.terms)
        return selected, [1] * kept + [0] * (k - kept), [1.0] * kept + [0.0] * (k - kept)

    response_ids = encode(response_tokens, model.vocab)
    if not response_ids:
        response_ids = [1]  # [UNK] stand-in for a blank response
    states = [
        state_of(response_ids, encode([t], model.vocab), table) for t in prf_terms
    ]
    if mode.kind in ("rl_sample", "rl_greedy"):
        if policy is None:
            raise ValueError("rl modes need a policy")
        greedy = SelectionMode(kind="rl_greedy")
        actions = select_actions(policy, states, greedy)
        p_sel = [policy_probs(policy, s)[0] for s in states]
        return apply_selection(term_set, actions), actions, p_sel
    if mode.kind in ("gate_tanh", "gate_sigmoid"):
        gate_mode = "tanh" if mode.kind == "gate_tanh" else "sigmoid"
        gates = [
            soft_gate(s, model.store["gate/w"], model.store["gate/b"], gate_mode)[0]
            for s in states
        ]
        return (
            SelectedTerms(terms=list(prf_terms), gates=gates),
            [1] * k,
            [float(g) for g in gates],
        )
    if mode.kind == "gumbel":
        weights, bias = model.store["gumbel/W"], model.store["gumbel/b"]
        actions = [gumbel_greedy(s, weights, bias) for s in states]
        gates = [float(a) for a in actions]
        return (
            SelectedTerms(terms=list(prf_terms), gates=gates),
            actions,
            gates,
        )
    raise ValueError(f"unsupported evaluation mode: {mode.kind!r}")


def evaluate(
    model: RankerModel,
    policy: Optional[PolicyNetwork],
    mode: SelectionMode,
    dataset: Dataset,
    split: str = "test",
    selection_log: Optional[list] = None,
) -> MetricsReport:
    """Score every candidate group of *split* and aggregate the metrics."""
    examples = dataset.split(split)
    if not examples:
        raise ValueError(f"empty split: {split!r}")
    by_context: dict[str, list] = {}
    for ex in examples:
        by_context.setdefault(ex.context.context_id, []).append(ex)
    ranked: list[RankedGroup] = []
    skipped = 0
    for context_id in sorted(by_context):
        inputs, meta = [], []
        for ex in by_context[context_id]:
            prf_terms = list(ex.prf_candidates.terms) if ex.prf_candidates else []
            selected, actions, p_sel = select_terms_for_eval(
                model, policy, mode, ex.response.tokens, prf_terms
            )
            inputs.append(
                assemble_input(
                    ex.context, ex.response, selected, model.vocab, model.limits,
                    model.encoder.max_len,
                )
            )
            meta.append((ex, prf_terms, actions, p_sel))
        preds = score_batch(model, inputs)
        scored = []
        for pred, (ex, prf_terms, actions, p_sel) in zip(preds, meta):
            scored.append((ex.response.candidate_id, pred.value, ex.label))
            if selection_log is not None:
                from .data_model import PrfTermSet
                from .selector import export_selection_record

                selection_log.append(
                    export_selection_record(
                        ex.response.candidate_id, PrfTermSet(terms=prf_terms), actions, p_sel
                    )
                )
        group = RankedGroup.from_scored(scored)
        if group.positives == 0:
            skipped += 1
            continue
        ranked.append(group)
    if skipped:
        logger.warning("excluded %d group(s) without a positive candidate", skipped)
    if not ranked:
        raise ValueError("no ratable groups in split")
    return summarize(ranked)
