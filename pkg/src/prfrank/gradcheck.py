"""Finite-difference validation of every analytic gradient in the package.

Each suite builds a small random instance, defines the training loss as a
pure function of the parameter store, and compares the hand-written
backward pass against central differences on sampled coordinates.  Dropout
is disabled so the loss is a deterministic function of the parameters; the
Gumbel suite runs its relaxed (differentiable) forward, since the
straight-through estimator is intentionally not the true gradient of the
hard forward.
"""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .neural_core import ParameterStore, grad_check
from .ranker import batch_loss_and_grads, assemble_batch
from .rl_trainer import build_model, gated_loss_and_grads
from .selector import PolicyNetwork, SelectedTerms, SelectionMode, SelectorState, policy_logprob_grad
from .seeding import component_rng
from .synth import make_synth_dataset

DEFAULT_TOLERANCE = 1e-4


def _tiny_setup(seed: int, batch: int = 2):
    dataset = make_synth_dataset(
        n_contexts=6, candidates_per_context=2, terms_per_candidate=3,
        noise_ratio=0.34, seed=seed,
    )
    cfg = RunConfig(seed=seed, encoder_dropout=0.0, encoder_max_len=64)
    model = build_model(dataset, cfg)
    examples = dataset.train[:batch]
    return model, examples


def check_ranker_gradients(sample: int = 120, seed: int = 0) -> float:
    """Cross-entropy loss through the scoring head and the full encoder."""
    model, examples = _tiny_setup(seed)
    batch = [(ex, SelectedTerms(terms=list(ex.prf_candidates.terms))) for ex in examples]
    inputs, labels = assemble_batch(model, batch)

    def loss_fn(store: ParameterStore, want_grads: bool):
        loss, grads, _ = batch_loss_and_grads(model, inputs, labels, train=False)
        return (loss, grads) if want_grads else (loss, None)

    rng = component_rng(seed, "gradcheck")
    return grad_check(loss_fn, model.store, sample=sample, rng=rng)


def check_policy_gradients(sample: int = 100, seed: int = 0) -> float:
    """Log-probability of sampled actions w.r.t. the policy parameters."""
    rng = component_rng(seed, "gradcheck")
    dim = 16
    store = ParameterStore(seed=seed)
    store.add("policy/W", rng.normal(0.0, 0.5, size=(dim, 2)))
    store.add("policy/b", rng.normal(0.0, 0.5, size=2))
    states = [SelectorState(vector=rng.normal(0.0, 1.0, size=dim)) for _ in range(8)]
    actions = [int(a) for a in rng.integers(0, 2, size=8)]

    def loss_fn(s: ParameterStore, want_grads: bool):
        policy = PolicyNetwork(s["policy/W"], s["policy/b"])
        total = 0.0
        dW = np.zeros_like(policy.weights)
        db = np.zeros_like(policy.bias)
        for state, action in zip(states, actions):
            logp, gw, gb = policy_logprob_grad(policy, state, action)
            total += logp
            dW += gw
            db += gb
        if want_grads:
            return total, {"policy/W": dW, "policy/b": db}
        return total, None

    return grad_check(loss_fn, store, sample=sample, rng=rng,
                      param_names=["policy/W", "policy/b"])


def check_gate_gradients(kind: str, sample: int = 120, seed: int = 0) -> float:
    """Ranker loss through the scalar gates and the state representation."""
    model, examples = _tiny_setup(seed)
    mode = SelectionMode(kind=kind)

    def loss_fn(store: ParameterStore, want_grads: bool):
        # fresh fixed-seed noise per call keeps the gumbel loss deterministic
        gumbel_rng = np.random.default_rng(12345) if kind == "gumbel" else None
        loss, grads, _ = gated_loss_and_grads(
            model, examples, mode, train=False,
            gumbel_rng=gumbel_rng, gumbel_relaxed=(kind == "gumbel"),
        )
        return (loss, grads) if want_grads else (loss, None)

    focus = ["gate/w", "gate/b"] if kind != "gumbel" else ["gumbel/W", "gumbel/b"]
    rng = component_rng(seed, "gradcheck")
    return grad_check(loss_fn, model.store, sample=sample, rng=rng,
                      param_names=focus + ["emb/token", "head/W"])


def run_all(sample: int = 120, seed: int = 0) -> dict[str, float]:
    """All gradient suites; maps suite name to max relative error."""
    return {
        "ranker": check_ranker_gradients(sample, seed),
        "policy": check_policy_gradients(sample, seed),
        "gate_tanh": check_gate_gradients("gate_tanh", sample, seed),
        "gate_sigmoid": check_gate_gradients("gate_sigmoid", sample, seed),
        "gumbel_relaxed": check_gate_gradients("gumbel", sample, seed),
    }
