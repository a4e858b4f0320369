"""BM25 retrieval over the external post corpus and PRF term extraction.

Candidate expansion works response by response: the response text is the
query, the top retrieved posts form a pseudo-relevant set, a unigram
language model over that set yields the candidate expansion terms.  The
whole pipeline is deterministic, so offline expansion caches and on-the-fly
recomputation agree exactly.

BM25 uses the non-negative IDF variant

    IDF(t) = ln(1 + (N - df + 0.5) / (df + 0.5))

so that top-K truncation never has to reason about negative scores.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from typing import Optional

from .data_model import Dataset, ExternalPost, PrfTermSet
from .text_pipeline import TokenizerConfig, tokenize

logger = logging.getLogger(__name__)

INDEX_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 <= 0:
            raise ValueError("k1 must be positive")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must lie in [0, 1]")


@dataclass(frozen=True)
class PrfConfig:
    """PRF knobs: how many posts to retrieve and how many terms to keep."""

    posts_to_retrieve: int = 10
    terms_to_extract: int = 10
    extraction_mode: str = "frequency"  # or "idf"
    query_token_budget: int = 64

    def __post_init__(self):
        if self.posts_to_retrieve < 1 or self.terms_to_extract < 1:
            raise ValueError("posts_to_retrieve and terms_to_extract must be >= 1")
        if self.extraction_mode not in ("frequency", "idf"):
            raise ValueError(f"unknown extraction mode: {self.extraction_mode!r}")


class InvertedIndex:
    """Term postings plus a forward map, enough to score and to build PRF LMs.

    postings: term -> [(doc_id, term_frequency)] sorted by doc_id
    doc_terms: doc_id -> {term: term_frequency}
    """

    def __init__(self, postings, doc_lengths, doc_terms, params: Bm25Params):
        self.postings: dict[str, list[tuple[int, int]]] = postings
        self.doc_lengths: dict[int, int] = doc_lengths
        self.doc_terms: dict[int, dict[str, int]] = doc_terms
        self.params = params
        self.doc_count = len(doc_lengths)
        self.avg_doc_length = sum(doc_lengths.values()) / self.doc_count

    def idf(self, term: str) -> float:
        import math

        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def _tf_part(self, tf: int, doc_id: int) -> float:
        k1, b = self.params.k1, self.params.b
        norm = k1 * (1.0 - b + b * self.doc_lengths[doc_id] / self.avg_doc_length)
        return tf * (k1 + 1.0) / (tf + norm)

    def save(self, path: str) -> None:
        payload = {
            "format_version": INDEX_FORMAT_VERSION,
            "params": {"k1": self.params.k1, "b": self.params.b},
            "doc_lengths": {str(d): n for d, n in sorted(self.doc_lengths.items())},
            "doc_terms": {
                str(d): dict(sorted(terms.items())) for d, terms in sorted(self.doc_terms.items())
            },
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False)

    @classmethod
    def load(cls, path: str) -> "InvertedIndex":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        version = payload.get("format_version")
        if version != INDEX_FORMAT_VERSION:
            raise ValueError(f"unsupported index format version: {version!r}")
        doc_terms = {int(d): dict(t) for d, t in payload["doc_terms"].items()}
        doc_lengths = {int(d): int(n) for d, n in payload["doc_lengths"].items()}
        postings = _postings_from_doc_terms(doc_terms)
        params = Bm25Params(**payload["params"])
        return cls(postings, doc_lengths, doc_terms, params)


def _postings_from_doc_terms(doc_terms: dict[int, dict[str, int]]) -> dict[str, list[tuple[int, int]]]:
    postings: dict[str, list[tuple[int, int]]] = {}
    for doc_id in sorted(doc_terms):
        for term, tf in doc_terms[doc_id].items():
            postings.setdefault(term, []).append((doc_id, tf))
    return postings


def build_index(posts: list[ExternalPost], params: Bm25Params = Bm25Params()) -> InvertedIndex:
    """Index the corpus; duplicate doc_ids and empty corpora are errors."""
    if not posts:
        raise ValueError("empty corpus")
    doc_terms: dict[int, dict[str, int]] = {}
    doc_lengths: dict[int, int] = {}
    for post in posts:
        if post.doc_id in doc_terms:
            raise ValueError(f"duplicate doc_id {post.doc_id}")
        counts: dict[str, int] = {}
        for tok in post.tokens:
            counts[tok] = counts.get(tok, 0) + 1
        doc_terms[post.doc_id] = counts
        doc_lengths[post.doc_id] = len(post.tokens)
    postings = _postings_from_doc_terms(doc_terms)
    return InvertedIndex(postings, doc_lengths, doc_terms, params)


def bm25_score(index: InvertedIndex, query_tokens: list[str], doc_id: int) -> float:
    """Score one document against the query token list.

    Repeated query tokens contribute once per occurrence, matching the
    accumulation order used by :func:`retrieve_top_k` bit for bit.
    """
    if doc_id not in index.doc_lengths:
        raise KeyError(f"unknown doc_id {doc_id}")
    score = 0.0
    terms = index.doc_terms[doc_id]
    for tok in query_tokens:
        tf = terms.get(tok)
        if tf is None:
            continue
        score += index.idf(tok) * index._tf_part(tf, doc_id)
    return score


def retrieve_top_k(index: InvertedIndex, query_tokens: list[str], top_k: int) -> list[tuple[int, float]]:
    """Top *top_k* documents by BM25, descending score, ties by doc_id asc.

    Only documents with positive scores are returned.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    scores: dict[int, float] = {}
    for tok in query_tokens:
        posting = index.postings.get(tok)
        if not posting:
            continue
        idf = index.idf(tok)
        for doc_id, tf in posting:
            scores[doc_id] = scores.get(doc_id, 0.0) + idf * index._tf_part(tf, doc_id)
    ranked = sorted(
        ((d, s) for d, s in scores.items() if s > 0.0),
        key=lambda item: (-item[1], item[0]),
    )
    return ranked[:top_k]


@dataclass
class TermLanguageModel:
    """Maximum-likelihood unigram model over the retrieved posts."""

    probabilities: dict[str, float]
    total_count: int


def build_term_lm(posts: list[ExternalPost]) -> TermLanguageModel:
    """Unigram ML estimate over the concatenated tokens of *posts*."""
    counts: dict[str, int] = {}
    total = 0
    for post in posts:
        for tok in post.tokens:
            counts[tok] = counts.get(tok, 0) + 1
            total += 1
    if total == 0:
        raise ValueError("no PRF evidence")
    probs = {t: c / total for t, c in counts.items()}
    return TermLanguageModel(probabilities=probs, total_count=total)


def _lm_from_doc_ids(index: InvertedIndex, doc_ids: list[int]) -> TermLanguageModel:
    counts: dict[str, int] = {}
    total = 0
    for doc_id in doc_ids:
        for term, tf in index.doc_terms[doc_id].items():
            counts[term] = counts.get(term, 0) + tf
            total += tf
    if total == 0:
        raise ValueError("no PRF evidence")
    probs = {t: c / total for t, c in counts.items()}
    return TermLanguageModel(probabilities=probs, total_count=total)


def extract_prf_terms(
    lm: TermLanguageModel, config: PrfConfig, index: Optional[InvertedIndex] = None
) -> PrfTermSet:
    """Pick the top terms from the feedback language model.

    ``frequency`` ranks by probability; ``idf`` ranks by IDF-weighted
    probability and needs the index.  Ties break lexicographically.
    """
    if config.extraction_mode == "idf":
        if index is None:
            raise ValueError("idf extraction mode requires the index")
        weight = {t: index.idf(t) * p for t, p in lm.probabilities.items()}
    else:
        weight = lm.probabilities
    ranked = sorted(weight, key=lambda t: (-weight[t], t))
    return PrfTermSet(terms=ranked[: config.terms_to_extract])


def expand_response(
    response_tokens: list[str], index: InvertedIndex, config: PrfConfig
) -> PrfTermSet:
    """PRF terms for one response; empty set when retrieval finds nothing."""
    query = response_tokens[: config.query_token_budget]
    hits = retrieve_top_k(index, query, config.posts_to_retrieve)
    if not hits:
        return PrfTermSet(terms=[])
    try:
        lm = _lm_from_doc_ids(index, [doc_id for doc_id, _ in hits])
    except ValueError:
        return PrfTermSet(terms=[])
    return extract_prf_terms(lm, config, index)


def expand_all_responses(
    dataset: Dataset,
    index: InvertedIndex,
    config: PrfConfig,
    tokenizer: Optional[TokenizerConfig] = None,
) -> Dataset:
    """New dataset with prf_candidates filled for every example.

    Expansion is a pure function of the response text, so identical
    responses share one computation.  Responses with no retrievable
    evidence get an empty term set and a logged warning.
    """
    tokenizer = tokenizer or TokenizerConfig(stopword_path="default")
    cache: dict[str, PrfTermSet] = {}
    empty = 0

    def terms_for(text: str) -> PrfTermSet:
        nonlocal empty
        if text not in cache:
            cache[text] = expand_response(tokenize(text, tokenizer), index, config)
            if not cache[text].terms:
                empty += 1
        return cache[text]

    out = Dataset()
    for split in ("train", "valid", "test"):
        for ex in dataset.split(split):
            base = terms_for(ex.response.text)
            terms = PrfTermSet(terms=list(base.terms), candidate_id=ex.response.candidate_id)
            new_ex = replace(ex, prf_candidates=terms)
            out.split(split).append(new_ex)
            out.groups.setdefault((split, ex.context.context_id), []).append(new_ex)
    if empty:
        logger.warning("no PRF evidence for %d distinct response(s); term sets left empty", empty)
    return out
