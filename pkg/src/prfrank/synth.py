"""Synthetic oracle task for end-to-end checks of the selection pipeline.

Construction: candidate responses are drawn from a label-free chatter
vocabulary, so without expansion the ranking task is pure chance.  Each
candidate's PRF set mixes label-predictive marker terms (drawn from a
positive-marker pool for positives, a negative-marker pool for negatives)
with junk terms that carry no signal.  A selector that keeps markers and
drops junk makes the task solvable; feeding everything lets junk displace
markers whenever the input budget is tight.

Marker tokens never appear in contexts or responses, only in PRF sets, so
all label signal flows through the expansion path.
"""

from __future__ import annotations

import numpy as np

from .data_model import (
    Dataset,
    DialogContext,
    ExternalPost,
    LabeledExample,
    PrfTermSet,
    ResponseCandidate,
    Utterance,
)
from .seeding import component_rng

CHATTER = [f"word{i:02d}" for i in range(40)]
POSITIVE_MARKERS = [f"posmark{i}" for i in range(8)]
NEGATIVE_MARKERS = [f"negmark{i}" for i in range(8)]
JUNK = [f"junk{i:02d}" for i in range(16)]


def _utterance(rng: np.random.Generator, length: int) -> Utterance:
    words = [CHATTER[i] for i in rng.integers(0, len(CHATTER), size=length)]
    text = " ".join(words)
    return Utterance(text=text, tokens=words)


def make_synth_dataset(
    n_contexts: int = 500,
    candidates_per_context: int = 10,
    terms_per_candidate: int = 4,
    noise_ratio: float = 0.5,
    noise_first: bool = False,
    turns_per_context: int = 2,
    utterance_len: int = 4,
    response_len: int = 6,
    seed: int = 0,
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
) -> Dataset:
    """Build the oracle dataset in memory, already tokenized.

    *noise_ratio* is the junk fraction of each PRF set.  With *noise_first*
    the junk terms take the leading extraction ranks, which maximizes how
    much they displace markers under a tight input budget.
    """
    if not 0.0 <= noise_ratio <= 1.0:
        raise ValueError("noise_ratio must lie in [0, 1]")
    rng = component_rng(seed, "synth")
    n_noise = int(round(noise_ratio * terms_per_candidate))
    n_pred = terms_per_candidate - n_noise
    if n_pred > len(POSITIVE_MARKERS) or n_noise > len(JUNK):
        raise ValueError("terms_per_candidate too large for the marker pools")

    n_train = int(round(split_fractions[0] * n_contexts))
    n_valid = int(round(split_fractions[1] * n_contexts))

    dataset = Dataset()
    for ctx_no in range(n_contexts):
        if ctx_no < n_train:
            split = "train"
        elif ctx_no < n_train + n_valid:
            split = "valid"
        else:
            split = "test"
        context_id = f"ctx{ctx_no:05d}"
        context = DialogContext(
            context_id=context_id,
            utterances=[_utterance(rng, utterance_len) for _ in range(turns_per_context)],
        )
        positive_at = int(rng.integers(candidates_per_context))
        for cand_no in range(candidates_per_context):
            label = 1 if cand_no == positive_at else 0
            words = [CHATTER[i] for i in rng.integers(0, len(CHATTER), size=response_len)]
            response = ResponseCandidate(
                candidate_id=f"{context_id}-c{cand_no}",
                text=" ".join(words),
                tokens=words,
            )
            marker_pool = POSITIVE_MARKERS if label == 1 else NEGATIVE_MARKERS
            predictive = [
                marker_pool[i] for i in rng.choice(len(marker_pool), size=n_pred, replace=False)
            ]
            junk = [JUNK[i] for i in rng.choice(len(JUNK), size=n_noise, replace=False)]
            terms = junk + predictive
            if not noise_first:
                order = rng.permutation(len(terms))
                terms = [terms[i] for i in order]
            example = LabeledExample(
                context=context,
                response=response,
                label=label,
                prf_candidates=PrfTermSet(terms=terms, candidate_id=response.candidate_id),
            )
            dataset.split(split).append(example)
            dataset.groups.setdefault((split, context_id), []).append(example)
    return dataset


def make_synth_corpus(n_posts: int = 200, post_len: int = 12, seed: int = 0) -> list[ExternalPost]:
    """Companion external corpus: chatter posts salted with marker tokens.

    Gives the BM25/PRF pipeline something deterministic to retrieve when
    the expansion path itself is under test.
    """
    rng = component_rng(seed + 1, "synth")
    pools = CHATTER + POSITIVE_MARKERS + NEGATIVE_MARKERS + JUNK
    posts = []
    for doc_id in range(n_posts):
        words = [pools[i] for i in rng.integers(0, len(pools), size=post_len)]
        posts.append(ExternalPost(doc_id=doc_id, text=" ".join(words), tokens=list(words)))
    return posts
