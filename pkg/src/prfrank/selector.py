"""PRF term selection: the learned two-action policy and its competitors.

The reinforced selector builds one state vector per candidate term from the
term's pooled embedding and an attention-weighted view of the response,
then samples select/drop actions from a linear-softmax policy.  The
baseline mechanisms (keep-all rule, tanh/sigmoid soft gates, straight
through Gumbel sampling) share the same state machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data_model import PrfTermSet
from .neural_core import (
    ParameterStore,
    attention_pool,
    attention_pool_backward,
    embed,
    max_pool,
    max_pool_backward,
    sigmoid,
    softmax,
)

SELECTION_MODES = ("none", "rl_sample", "rl_greedy", "rule", "gate_tanh", "gate_sigmoid", "gumbel")


@dataclass(frozen=True)
class SelectionMode:
    """Which selection mechanism to run and its mode-specific knobs."""

    kind: str = "rl_greedy"
    temperature: float = 1.0  # gumbel only
    rule_top_m: Optional[int] = None  # rule only; None keeps every term

    def __post_init__(self):
        if self.kind not in SELECTION_MODES:
            raise ValueError(f"unknown selection mode: {self.kind!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class SelectorState:
    """State vector for one term: pooled term embedding + attended response."""

    vector: np.ndarray
    cache: Optional[dict] = None


@dataclass
class PolicyNetwork:
    """Linear two-way policy: softmax(weights^T state + bias).

    Zero initialization gives the uniform policy, so exploration starts
    unbiased.  Column 0 is "select", column 1 is "drop".
    """

    weights: np.ndarray  # (d, 2)
    bias: np.ndarray  # (2,)

    @classmethod
    def zeros(cls, dim: int) -> "PolicyNetwork":
        return cls(weights=np.zeros((dim, 2)), bias=np.zeros(2))

    def copy(self) -> "PolicyNetwork":
        return PolicyNetwork(self.weights.copy(), self.bias.copy())


@dataclass
class SelectedTerms:
    """Ordered subset of a PrfTermSet, with gate scalars for soft modes."""

    terms: list[str] = field(default_factory=list)
    gates: Optional[list[float]] = None  # parallel to terms; soft/gumbel modes only

    def __len__(self) -> int:
        return len(self.terms)


def state_of(
    response_ids: list[int], term_ids: list[int], table: np.ndarray, want_cache: bool = False
) -> SelectorState:
    """State = max-pooled term embedding + attention over response embeddings."""
    if not term_ids:
        raise ValueError("empty term")
    if not response_ids:
        raise ValueError("empty response")
    term_vecs = embed(term_ids, table)
    response_vecs = embed(response_ids, table)
    pooled = max_pool(term_vecs)
    attended = attention_pool(pooled, response_vecs)
    cache = None
    if want_cache:
        cache = dict(
            response_ids=np.asarray(response_ids, dtype=np.int64),
            term_ids=np.asarray(term_ids, dtype=np.int64),
            term_vecs=term_vecs,
            response_vecs=response_vecs,
            pooled=pooled,
        )
    return SelectorState(vector=pooled + attended, cache=cache)


def state_backward(d_state: np.ndarray, cache: dict, d_table: np.ndarray) -> None:
    """Accumulate d(state)/d(embedding table) into *d_table* in place."""
    d_pooled_direct = d_state  # s = pooled + attended
    d_query, d_keys = attention_pool_backward(d_state, cache["pooled"], cache["response_vecs"])
    d_pooled = d_pooled_direct + d_query
    d_term_vecs = max_pool_backward(d_pooled, cache["term_vecs"])
    np.add.at(d_table, cache["term_ids"], d_term_vecs)
    np.add.at(d_table, cache["response_ids"], d_keys)
    d_table[0, :] = 0.0


def policy_probs(policy: PolicyNetwork, state: SelectorState) -> tuple[float, float]:
    """(p_select, p_drop) from the two-way softmax."""
    logits = policy.weights.T @ state.vector + policy.bias
    p = softmax(logits)
    return float(p[0]), float(p[1])


def policy_logprob_grad(policy: PolicyNetwork, state: SelectorState, action: int):
    """log pi(action|state) and its gradient w.r.t. the policy parameters."""
    logits = policy.weights.T @ state.vector + policy.bias
    p = softmax(logits)
    taken = 0 if action == 1 else 1  # action 1 = select = column 0
    logp = float(np.log(max(p[taken], 1e-300)))
    indicator = np.zeros(2)
    indicator[taken] = 1.0
    dlogits = indicator - p
    return logp, np.outer(state.vector, dlogits), dlogits


def select_actions(
    policy: PolicyNetwork,
    states: list[SelectorState],
    mode: SelectionMode,
    rng: Optional[np.random.Generator] = None,
) -> list[int]:
    """Per-term select(1)/drop(0) decisions under the given mode.

    ``rl_sample`` draws Bernoulli(p_select); ``rl_greedy`` selects at
    p_select >= 0.5 (ties select).  An empty state list yields an empty
    action vector.
    """
    if mode.kind == "rl_sample":
        if rng is None:
            raise ValueError("rl_sample needs an rng")
        return [1 if rng.random() < policy_probs(policy, s)[0] else 0 for s in states]
    if mode.kind == "rl_greedy":
        return [1 if policy_probs(policy, s)[0] >= 0.5 else 0 for s in states]
    raise ValueError(f"select_actions does not handle mode {mode.kind!r}")


def apply_selection(terms: PrfTermSet, actions: list[int]) -> SelectedTerms:
    """Filter the term set by its action vector, preserving order."""
    if len(actions) != len(terms.terms):
        raise ValueError("actions/terms length mismatch")
    return SelectedTerms(terms=[t for t, a in zip(terms.terms, actions) if a == 1])


def rule_select(terms: PrfTermSet, top_m: Optional[int] = None) -> SelectedTerms:
    """Keep the first *top_m* terms by extraction rank; None keeps all."""
    if top_m is None:
        return SelectedTerms(terms=list(terms.terms))
    if top_m < 0:
        raise ValueError("top_m must be >= 0")
    return SelectedTerms(terms=list(terms.terms[:top_m]))


def soft_gate(
    state: SelectorState, gate_w: np.ndarray, gate_b: np.ndarray, mode: str
) -> tuple[float, dict]:
    """Scalar gate tanh/sigmoid(w . s + b); returns (gate, backprop cache)."""
    if gate_w.shape != state.vector.shape:
        raise ValueError("gate/state dimension mismatch")
    z = float(gate_w @ state.vector + gate_b)
    if mode == "tanh":
        g = float(np.tanh(z))
        dg_dz = 1.0 - g * g
    elif mode == "sigmoid":
        g = float(sigmoid(z))
        dg_dz = g * (1.0 - g)
    else:
        raise ValueError(f"unknown gate mode: {mode!r}")
    return g, dict(dg_dz=dg_dz, state=state)


def soft_gate_backward(d_gate: float, cache: dict, gate_w: np.ndarray):
    """Gradients of the gate scalar w.r.t. (w, b, state vector)."""
    dz = d_gate * cache["dg_dz"]
    state = cache["state"]
    return dz * state.vector, np.asarray(dz), dz * gate_w


def gumbel_select(
    state: SelectorState,
    weights: np.ndarray,
    bias: np.ndarray,
    temperature: float,
    rng: np.random.Generator,
) -> tuple[int, np.ndarray, dict]:
    """Straight-through Gumbel-softmax draw for one term.

    Returns (hard action, relaxed weights, cache).  The hard action is the
    argmax of the noisy relaxed distribution; gradients flow through the
    relaxed weights.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = weights.T @ state.vector + bias
    uniform = rng.random(2)
    noise = -np.log(-np.log(np.clip(uniform, 1e-12, 1.0 - 1e-12)))
    relaxed = softmax((logits + noise) / temperature)
    action = 1 if int(np.argmax(relaxed)) == 0 else 0  # column 0 = select
    cache = dict(relaxed=relaxed, state=state, temperature=temperature)
    return action, relaxed, cache


def gumbel_greedy(state: SelectorState, weights: np.ndarray, bias: np.ndarray) -> int:
    """Noise-free evaluation-time decision: argmax of the clean logits."""
    logits = weights.T @ state.vector + bias
    return 1 if int(np.argmax(logits)) == 0 else 0


def gumbel_backward(d_select_weight: float, cache: dict, weights: np.ndarray):
    """Gradients for the straight-through path.

    *d_select_weight* is the loss gradient w.r.t. the relaxed "select"
    weight.  Returns (d_weights, d_bias, d_state).
    """
    relaxed = cache["relaxed"]
    dout = np.array([d_select_weight, 0.0])
    inner = float(dout @ relaxed)
    dlogits = relaxed * (dout - inner) / cache["temperature"]
    d_weights = np.outer(cache["state"].vector, dlogits)
    d_bias = dlogits
    d_state = weights @ dlogits
    return d_weights, d_bias, d_state


def export_selection_record(
    candidate_id: str, terms: PrfTermSet, actions: list[int], p_selects: list[float]
) -> dict:
    """JSON-ready record of one selection decision for case-study tooling."""
    return {
        "candidate_id": candidate_id,
        "terms": list(terms.terms),
        "actions": [int(a) for a in actions],
        "p_select": [float(p) for p in p_selects],
    }
