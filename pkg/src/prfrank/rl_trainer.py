"""Reward computation, REINFORCE updates, and the joint training loop.

The joint procedure alternates, batch by batch, between (1) sampling
select/drop actions for every candidate expansion term, (2) updating the
ranker on the batch with the surviving terms, and (3) measuring the reward
as the drop in ranker loss on a held-out reward set.  At the end of each
episode the per-batch rewards are folded into discounted future totals and
the policy takes one ascent step per stored batch, after which the episode
history is cleared.

Randomness is split into per-purpose streams (see ``seeding``) so that the
ranker-facing streams (shuffling, dropout) are identical whether or not the
selector is active.  Freezing the policy to always-drop therefore
reproduces plain ranker training bit for bit.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .config import RunConfig
from .data_model import Dataset, LabeledExample, PrfTermSet
from .neural_core import OptimizerConfig, optimizer_step
from .ranker import (
    RankerModel,
    assemble_input,
    batch_loss_and_grads,
    ranker_train_step,
    score_batch,
)
from .seeding import component_rng
from .selector import (
    PolicyNetwork,
    SelectedTerms,
    SelectionMode,
    SelectorState,
    apply_selection,
    gumbel_backward,
    gumbel_select,
    policy_logprob_grad,
    rule_select,
    select_actions,
    soft_gate,
    soft_gate_backward,
    state_backward,
    state_of,
)
from .text_pipeline import UNK_ID, build_vocab, encode

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpisodeConfig:
    """Joint-training schedule; desk-scale defaults."""

    episodes: int = 50
    discount: float = 0.3
    reward_sample_rate: float = 0.05
    policy_lr: float = 1e-3
    ranker_lr: float = 1e-3
    pretrain_steps: int = 200
    batch_size: int = 16
    seed: int = 0
    use_future_reward: bool = True  # ablation flag: raw immediate rewards instead
    use_baseline: bool = False  # optional running-mean variance reduction, off for fidelity
    freeze_policy_drop: bool = False  # degenerate mode for the equivalence check
    linear_decay: bool = False

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if not 0.0 < self.reward_sample_rate <= 1.0:
            raise ValueError("reward_sample_rate must lie in (0, 1]")

    @classmethod
    def from_run(cls, cfg: RunConfig, **kwargs) -> "EpisodeConfig":
        base = dict(
            episodes=cfg.episodes,
            discount=cfg.discount,
            reward_sample_rate=cfg.reward_sample_rate,
            policy_lr=cfg.policy_lr,
            ranker_lr=cfg.ranker_lr,
            pretrain_steps=cfg.pretrain_steps,
            batch_size=cfg.batch_size,
            seed=cfg.seed,
            use_future_reward=cfg.use_future_reward,
            use_baseline=cfg.use_baseline,
            linear_decay=cfg.linear_decay,
        )
        base.update(kwargs)
        return cls(**base)


@dataclass
class RewardRecord:
    batch_index: int
    immediate: float
    future_total: float = 0.0


@dataclass
class RewardSet:
    examples: list[LabeledExample]
    episode: int


@dataclass
class HistoryEntry:
    batch_index: int
    term_states: list[list[SelectorState]]  # per example, per term
    actions: list[list[int]]
    reward: float = 0.0


@dataclass
class EpisodeHistory:
    entries: list[HistoryEntry] = field(default_factory=list)

    def append(self, entry: HistoryEntry) -> None:
        self.entries.append(entry)

    def clear(self) -> None:
        self.entries.clear()

    def __len__(self) -> int:
        return len(self.entries)


def sample_reward_set(
    valid: Sequence[LabeledExample], rate: float, rng: np.random.Generator, episode: int = 0
) -> RewardSet:
    """Uniform sample without replacement, size max(1, round(rate * |valid|))."""
    if not valid:
        raise ValueError("empty validation split")
    size = max(1, int(round(rate * len(valid))))
    idx = rng.choice(len(valid), size=size, replace=False)
    return RewardSet(examples=[valid[i] for i in idx], episode=episode)


def compute_reward(prev_loss: float, cur_loss: float) -> float:
    """Delta loss: positive when the reward-set loss decreased."""
    if not (math.isfinite(prev_loss) and math.isfinite(cur_loss)):
        raise FloatingPointError("non-finite loss in reward computation")
    return prev_loss - cur_loss


def future_rewards(immediates: Sequence[float], discount: float) -> list[float]:
    """Discounted suffix sums: out[b] = sum_k discount^k * immediates[b+k]."""
    if not immediates:
        raise ValueError("empty reward list")
    out = [0.0] * len(immediates)
    acc = 0.0
    for i in reversed(range(len(immediates))):
        acc = immediates[i] + discount * acc
        out[i] = acc
    return out


class RunningMeanBaseline:
    """Exponential running mean of rewards; subtracting it reduces variance."""

    def __init__(self, momentum: float = 0.9):
        self.momentum = momentum
        self.value = 0.0
        self.primed = False

    def advantage(self, reward: float) -> float:
        adv = reward - self.value if self.primed else reward
        if self.primed:
            self.value = self.momentum * self.value + (1.0 - self.momentum) * reward
        else:
            self.value = reward
            self.primed = True
        return adv


def policy_gradient_update(
    policy: PolicyNetwork,
    history: EpisodeHistory,
    discount: float,
    lr: float,
    use_future_reward: bool = True,
    baseline: Optional[RunningMeanBaseline] = None,
) -> PolicyNetwork:
    """REINFORCE ascent, one update per stored batch in order.

    Each batch contributes lr * (1/B) * sum_i r_i * grad log pi(a_i|s_i),
    where r_i is the batch's discounted future total (or the raw immediate
    reward when *use_future_reward* is off) and B is the batch size.  The
    optional running-mean baseline is subtracted from each batch reward.
    """
    if not history.entries:
        raise ValueError("empty episode history")
    immediates = [e.reward for e in history.entries]
    totals = future_rewards(immediates, discount) if use_future_reward else list(immediates)
    for entry, reward in zip(history.entries, totals):
        if baseline is not None:
            reward = baseline.advantage(reward)
        if reward == 0.0:
            continue
        batch = max(1, len(entry.term_states))
        dW = np.zeros_like(policy.weights)
        db = np.zeros_like(policy.bias)
        for states, actions in zip(entry.term_states, entry.actions):
            for state, action in zip(states, actions):
                _, gw, gb = policy_logprob_grad(policy, state, action)
                dW += reward * gw
                db += reward * gb
        if not (np.all(np.isfinite(dW)) and np.all(np.isfinite(db))):
            raise FloatingPointError("non-finite policy gradient")
        policy.weights += lr * dW / batch
        policy.bias += lr * db / batch
    return policy


# ---------------------------------------------------------------------------
# shared training plumbing
# ---------------------------------------------------------------------------


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[list[int]]:
    order = rng.permutation(n)
    return [list(order[i : i + batch_size]) for i in range(0, n, batch_size)]


def _term_states(
    model: RankerModel, example: LabeledExample, want_cache: bool = False
) -> tuple[list[SelectorState], PrfTermSet]:
    terms = example.prf_candidates or PrfTermSet(terms=[])
    table = model.store["emb/token"]
    response_ids = encode(example.response.tokens, model.vocab) or [UNK_ID]
    states = [
        state_of(response_ids, encode([t], model.vocab), table, want_cache=want_cache)
        for t in terms.terms
    ]
    return states, terms


def reward_set_loss(model: RankerModel, policy: Optional[PolicyNetwork], reward_set: RewardSet,
                    freeze_drop: bool = False) -> float:
    """Mean BCE on the reward set with greedy (test-time) selection."""
    inputs, labels = [], []
    greedy = SelectionMode(kind="rl_greedy")
    for ex in reward_set.examples:
        if freeze_drop or policy is None:
            selected = SelectedTerms(terms=[])
        else:
            states, terms = _term_states(model, ex)
            actions = select_actions(policy, states, greedy) if states else []
            selected = apply_selection(terms, actions)
        inputs.append(assemble_input(ex.context, ex.response, selected, model.vocab, model.limits,
                                     model.encoder.max_len))
        labels.append(ex.label)
    preds = score_batch(model, inputs)
    total = 0.0
    for pred, y in zip(preds, labels):
        total += -(y * math.log(pred.value) + (1 - y) * math.log(1.0 - pred.value))
    return total / len(preds)


def build_model(dataset: Dataset, cfg: RunConfig) -> RankerModel:
    """Vocabulary from the train split (text plus PRF terms), fresh params."""

    def token_streams():
        for ex in dataset.train:
            for utt in ex.context.utterances:
                yield utt.tokens
            yield ex.response.tokens
            if ex.prf_candidates is not None:
                yield list(ex.prf_candidates.terms)

    vocab = build_vocab(token_streams(), min_freq=cfg.vocab_min_freq, max_size=cfg.vocab_max_size)
    return RankerModel.create(vocab, cfg.encoder(), cfg.limits(), seed=cfg.seed)


def pretrain_ranker(
    model: RankerModel,
    train: Sequence[LabeledExample],
    steps: int,
    opt: OptimizerConfig,
    shuffle_rng: np.random.Generator,
    dropout_rng: np.random.Generator,
    batch_size: int = 16,
) -> RankerModel:
    """Ranker-only warmup: *steps* batches with no expansion terms."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if not train and steps > 0:
        raise ValueError("empty training split")
    done = 0
    empty = SelectedTerms(terms=[])
    while done < steps:
        for batch_idx in _epoch_batches(len(train), batch_size, shuffle_rng):
            if done >= steps:
                break
            batch = [(train[i], empty) for i in batch_idx]
            ranker_train_step(model, batch, opt, dropout_rng=dropout_rng)
            done += 1
    return model


@dataclass
class TrainLogEntry:
    episode: int
    batch: int
    train_loss: float
    reward: float
    future_reward: float
    select_rate: float

    def as_dict(self) -> dict:
        return {
            "episode": self.episode,
            "batch": self.batch,
            "train_loss": self.train_loss,
            "reward": self.reward,
            "future_reward": self.future_reward,
            "select_rate": self.select_rate,
        }


def write_training_log(entries: Sequence[TrainLogEntry], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry.as_dict()) + "\n")


def train_joint(
    dataset: Dataset,
    config: EpisodeConfig,
    model: Optional[RankerModel] = None,
    run_config: Optional[RunConfig] = None,
    probe: Optional[Callable] = None,
) -> tuple[RankerModel, PolicyNetwork, list[TrainLogEntry]]:
    """The full joint procedure over a PRF-expanded dataset.

    Per episode: shuffle the batch sequence, resample the reward set, then
    for each batch sample actions, update the ranker on the selected
    expansions, measure the delta-loss reward, and store the triple.  After
    the last batch the stored rewards become discounted future totals, the
    policy updates batch by batch, and the history is emptied.
    """
    if not dataset.train:
        raise ValueError("empty training split")
    if not dataset.valid:
        raise ValueError("empty validation split (needed for the reward set)")
    run_config = run_config or RunConfig(seed=config.seed)
    if model is None:
        model = build_model(dataset, run_config)
    policy = PolicyNetwork(model.store["policy/W"], model.store["policy/b"])

    pre_shuffle = component_rng(config.seed, "pretrain_shuffle")
    shuffle_rng = component_rng(config.seed, "shuffle")
    dropout_rng = component_rng(config.seed, "dropout")
    policy_rng = component_rng(config.seed, "policy")
    reward_rng = component_rng(config.seed, "reward_set")

    batches_per_episode = math.ceil(len(dataset.train) / config.batch_size)
    total_steps = config.pretrain_steps + config.episodes * batches_per_episode
    opt = OptimizerConfig(
        learning_rate=config.ranker_lr,
        linear_decay=config.linear_decay,
        total_steps=total_steps if config.linear_decay else 0,
    )

    pretrain_ranker(
        model, dataset.train, config.pretrain_steps, opt,
        shuffle_rng=pre_shuffle, dropout_rng=dropout_rng, batch_size=config.batch_size,
    )

    sample_mode = SelectionMode(kind="rl_sample")
    history = EpisodeHistory()
    baseline = RunningMeanBaseline() if config.use_baseline else None
    log: list[TrainLogEntry] = []
    train = dataset.train
    for episode in range(1, config.episodes + 1):
        batches = _epoch_batches(len(train), config.batch_size, shuffle_rng)
        reward_set = sample_reward_set(dataset.valid, config.reward_sample_rate, reward_rng, episode)
        prev_loss = reward_set_loss(model, policy, reward_set, config.freeze_policy_drop)
        episode_rows = []
        for batch_no, batch_idx in enumerate(batches, start=1):
            term_states: list[list[SelectorState]] = []
            actions: list[list[int]] = []
            batch: list[tuple[LabeledExample, SelectedTerms]] = []
            selected_count = 0
            term_count = 0
            for i in batch_idx:
                ex = train[i]
                states, terms = _term_states(model, ex)
                if config.freeze_policy_drop:
                    acts = [0] * len(states)
                else:
                    acts = select_actions(policy, states, sample_mode, policy_rng) if states else []
                term_states.append(states)
                actions.append(acts)
                selected_count += sum(acts)
                term_count += len(acts)
                batch.append((ex, apply_selection(terms, acts)))
            train_loss = ranker_train_step(model, batch, opt, dropout_rng=dropout_rng)
            cur_loss = reward_set_loss(model, policy, reward_set, config.freeze_policy_drop)
            reward = compute_reward(prev_loss, cur_loss)
            prev_loss = cur_loss
            history.append(HistoryEntry(batch_no, term_states, actions, reward))
            episode_rows.append(
                TrainLogEntry(
                    episode=episode,
                    batch=batch_no,
                    train_loss=train_loss,
                    reward=reward,
                    future_reward=0.0,
                    select_rate=selected_count / term_count if term_count else 0.0,
                )
            )
        totals = future_rewards([e.reward for e in history.entries], config.discount)
        for row, total in zip(episode_rows, totals):
            row.future_reward = total
        if not config.freeze_policy_drop:
            policy_gradient_update(
                policy, history, config.discount, config.policy_lr,
                config.use_future_reward, baseline,
            )
        history.clear()
        log.extend(episode_rows)
        logger.info(
            "episode %d/%d: mean reward %+.5f, select rate %.3f",
            episode, config.episodes,
            float(np.mean([r.reward for r in episode_rows])),
            float(np.mean([r.select_rate for r in episode_rows])),
        )
        if probe is not None:
            probe(episode, model, policy)
    return model, policy, log


def train_ranker_only(
    dataset: Dataset,
    config: EpisodeConfig,
    model: Optional[RankerModel] = None,
    run_config: Optional[RunConfig] = None,
) -> tuple[RankerModel, list[TrainLogEntry]]:
    """Plain ranker training: the joint loop with the selector removed.

    Consumes the shuffle and dropout streams exactly as ``train_joint``
    does, so a frozen always-drop joint run lands on the same checkpoint.
    """
    if not dataset.train:
        raise ValueError("empty training split")
    run_config = run_config or RunConfig(seed=config.seed)
    if model is None:
        model = build_model(dataset, run_config)

    pre_shuffle = component_rng(config.seed, "pretrain_shuffle")
    shuffle_rng = component_rng(config.seed, "shuffle")
    dropout_rng = component_rng(config.seed, "dropout")

    batches_per_episode = math.ceil(len(dataset.train) / config.batch_size)
    total_steps = config.pretrain_steps + config.episodes * batches_per_episode
    opt = OptimizerConfig(
        learning_rate=config.ranker_lr,
        linear_decay=config.linear_decay,
        total_steps=total_steps if config.linear_decay else 0,
    )
    pretrain_ranker(
        model, dataset.train, config.pretrain_steps, opt,
        shuffle_rng=pre_shuffle, dropout_rng=dropout_rng, batch_size=config.batch_size,
    )
    empty = SelectedTerms(terms=[])
    log: list[TrainLogEntry] = []
    train = dataset.train
    for episode in range(1, config.episodes + 1):
        batches = _epoch_batches(len(train), config.batch_size, shuffle_rng)
        for batch_no, batch_idx in enumerate(batches, start=1):
            batch = [(train[i], empty) for i in batch_idx]
            loss = ranker_train_step(model, batch, opt, dropout_rng=dropout_rng)
            log.append(TrainLogEntry(episode, batch_no, loss, 0.0, 0.0, 0.0))
    return model, log


def gated_loss_and_grads(
    model: RankerModel,
    examples: Sequence[LabeledExample],
    mode: SelectionMode,
    train: bool = False,
    dropout_rng: Optional[np.random.Generator] = None,
    gumbel_rng: Optional[np.random.Generator] = None,
    gumbel_relaxed: bool = False,
) -> tuple[float, dict, float]:
    """Loss and full gradients for the gate and straight-through baselines.

    Terms stay in the sequence with their token embeddings scaled by the
    gate value (hard 0/1 for Gumbel); gradients flow from the scale back
    into the gate parameters and, through the state vectors, into the
    embedding table.  *gumbel_relaxed* scales by the relaxed weight instead
    of the hard action, which makes the loss differentiable end to end for
    finite-difference validation.
    """
    store = model.store
    inputs = []
    per_example = []  # (states, caches) bookkeeping for the backward pass
    select_total, term_total = 0.0, 0
    for ex in examples:
        states, terms = _term_states(model, ex, want_cache=True)
        gates: list[float] = []
        caches = []
        for state in states:
            if mode.kind in ("gate_tanh", "gate_sigmoid"):
                gate_mode = "tanh" if mode.kind == "gate_tanh" else "sigmoid"
                g, cache = soft_gate(state, store["gate/w"], store["gate/b"], gate_mode)
                gates.append(g)
                caches.append(cache)
                select_total += 1
            else:  # gumbel
                action, relaxed, cache = gumbel_select(
                    state, store["gumbel/W"], store["gumbel/b"], mode.temperature, gumbel_rng
                )
                gates.append(float(relaxed[0]) if gumbel_relaxed else float(action))
                caches.append(cache)
                select_total += action
            term_total += 1
        selected = SelectedTerms(terms=list(terms.terms), gates=gates)
        x = assemble_input(ex.context, ex.response, selected, model.vocab, model.limits,
                           model.encoder.max_len)
        inputs.append(x)
        per_example.append((states, caches))

    labels = [ex.label for ex in examples]
    loss, grads, scale_grads = batch_loss_and_grads(
        model, inputs, labels, train=train, dropout_rng=dropout_rng
    )

    def acc(name, value):
        if name in grads:
            grads[name] += value
        else:
            grads[name] = np.array(value, dtype=np.float64)

    for x, d_scales, (states, caches) in zip(inputs, scale_grads, per_example):
        for term_idx, start, end in x.term_spans:
            d_gate = float(d_scales[start:end].sum())
            state = states[term_idx]
            cache = caches[term_idx]
            if mode.kind in ("gate_tanh", "gate_sigmoid"):
                dw, db, d_state = soft_gate_backward(d_gate, cache, store["gate/w"])
                acc("gate/w", dw)
                acc("gate/b", db)
            else:
                dW, db, d_state = gumbel_backward(d_gate, cache, store["gumbel/W"])
                acc("gumbel/W", dW)
                acc("gumbel/b", db)
            state_backward(d_state, state.cache, grads["emb/token"])
    rate = select_total / term_total if term_total else 0.0
    return loss, grads, rate


def _gated_batch_step(
    model: RankerModel,
    examples: Sequence[LabeledExample],
    mode: SelectionMode,
    opt: OptimizerConfig,
    dropout_rng: np.random.Generator,
    gumbel_rng: Optional[np.random.Generator] = None,
) -> tuple[float, float]:
    loss, grads, rate = gated_loss_and_grads(
        model, examples, mode, train=True, dropout_rng=dropout_rng, gumbel_rng=gumbel_rng
    )
    optimizer_step(model.store, grads, opt)
    return loss, rate


def train_supervised(
    dataset: Dataset,
    mode: SelectionMode,
    config: EpisodeConfig,
    model: Optional[RankerModel] = None,
    run_config: Optional[RunConfig] = None,
) -> tuple[RankerModel, list[TrainLogEntry]]:
    """Rule and gate/Gumbel baselines: same schedule, no reinforcement.

    ``rule`` feeds the rank-filtered terms as plain tokens; the gate modes
    train their scalar gates end to end through the ranker loss.
    """
    if mode.kind not in ("rule", "gate_tanh", "gate_sigmoid", "gumbel"):
        raise ValueError(f"train_supervised does not handle mode {mode.kind!r}")
    if not dataset.train:
        raise ValueError("empty training split")
    run_config = run_config or RunConfig(seed=config.seed)
    if model is None:
        model = build_model(dataset, run_config)

    pre_shuffle = component_rng(config.seed, "pretrain_shuffle")
    shuffle_rng = component_rng(config.seed, "shuffle")
    dropout_rng = component_rng(config.seed, "dropout")
    gumbel_rng = component_rng(config.seed, "gumbel")

    batches_per_episode = math.ceil(len(dataset.train) / config.batch_size)
    total_steps = config.pretrain_steps + config.episodes * batches_per_episode
    opt = OptimizerConfig(
        learning_rate=config.ranker_lr,
        linear_decay=config.linear_decay,
        total_steps=total_steps if config.linear_decay else 0,
    )
    pretrain_ranker(
        model, dataset.train, config.pretrain_steps, opt,
        shuffle_rng=pre_shuffle, dropout_rng=dropout_rng, batch_size=config.batch_size,
    )
    log: list[TrainLogEntry] = []
    train = dataset.train
    for episode in range(1, config.episodes + 1):
        batches = _epoch_batches(len(train), config.batch_size, shuffle_rng)
        for batch_no, batch_idx in enumerate(batches, start=1):
            examples = [train[i] for i in batch_idx]
            if mode.kind == "rule":
                batch = []
                kept = total = 0
                for ex in examples:
                    terms = ex.prf_candidates or PrfTermSet(terms=[])
                    selected = rule_select(terms, mode.rule_top_m)
                    kept += len(selected.terms)
                    total += len(terms.terms)
                    batch.append((ex, selected))
                loss = ranker_train_step(model, batch, opt, dropout_rng=dropout_rng)
                rate = kept / total if total else 0.0
            else:
                loss, rate = _gated_batch_step(model, examples, mode, opt, dropout_rng, gumbel_rng)
            log.append(TrainLogEntry(episode, batch_no, loss, 0.0, 0.0, rate))
    return model, log


TRAINERS: dict[str, Callable] = {
    "none": train_ranker_only,
    "rule": train_supervised,
    "gate_tanh": train_supervised,
    "gate_sigmoid": train_supervised,
    "gumbel": train_supervised,
    "rl": train_joint,
}


def train_mode(
    dataset: Dataset, kind: str, run_config: RunConfig, episode_config: Optional[EpisodeConfig] = None
) -> tuple[RankerModel, Optional[PolicyNetwork], list[TrainLogEntry]]:
    """Train one selection mode end to end; returns (model, policy, log)."""
    episode_config = episode_config or EpisodeConfig.from_run(run_config)
    if kind == "rl":
        model, policy, log = train_joint(dataset, episode_config, run_config=run_config)
        return model, policy, log
    if kind == "none":
        model, log = train_ranker_only(dataset, episode_config, run_config=run_config)
        return model, None, log
    mode = run_config.mode(kind)
    model, log = train_supervised(dataset, mode, episode_config, run_config=run_config)
    policy = PolicyNetwork(model.store["policy/W"], model.store["policy/b"]) if kind == "rl" else None
    return model, policy, log
