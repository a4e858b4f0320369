"""Dialog dataset and external corpus ingestion.

Datasets are JSON-lines, one labeled (context, candidate) pair per line:

    {"context_id": str, "candidate_id": str, "context": [str, ...],
     "response": str, "label": 0|1, "split": "train"|"valid"|"test",
     "prf_terms": [str, ...]}   # prf_terms optional

The external corpus uses one ``{"doc_id": int, "text": str}`` record per
line.  Loaded datasets are plain immutable-by-convention containers and are
safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

from .text_pipeline import TokenizerConfig, tokenize

SPLITS = ("train", "valid", "test")


@dataclass
class Utterance:
    text: str
    tokens: list[str]


@dataclass
class DialogContext:
    context_id: str
    utterances: list[Utterance]


@dataclass
class ResponseCandidate:
    candidate_id: str
    text: str
    tokens: list[str]


@dataclass
class PrfTermSet:
    """Ordered candidate expansion terms for one response.

    Order is the extraction rank; terms are unique single tokens.
    """

    terms: list[str]
    candidate_id: str = ""

    def __post_init__(self):
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("PRF terms must be unique")

    def __len__(self) -> int:
        return len(self.terms)


@dataclass
class LabeledExample:
    context: DialogContext
    response: ResponseCandidate
    label: int
    prf_candidates: Optional[PrfTermSet] = None


@dataclass
class Dataset:
    train: list[LabeledExample] = field(default_factory=list)
    valid: list[LabeledExample] = field(default_factory=list)
    test: list[LabeledExample] = field(default_factory=list)
    # (split, context_id) -> examples in file order
    groups: dict[tuple[str, str], list[LabeledExample]] = field(default_factory=dict)

    def split(self, name: str) -> list[LabeledExample]:
        if name not in SPLITS:
            raise ValueError(f"unknown split: {name!r}")
        return getattr(self, name)

    def all_examples(self) -> list[LabeledExample]:
        return self.train + self.valid + self.test


@dataclass
class ExternalPost:
    doc_id: int
    text: str
    tokens: list[str]


def _parse_record(record: dict, tokenizer: TokenizerConfig, lineno: int) -> tuple[str, LabeledExample]:
    for key in ("context_id", "candidate_id", "context", "response", "label", "split"):
        if key not in record:
            raise ValueError(f"line {lineno}: missing field {key!r}")
    label = record["label"]
    if label not in (0, 1):
        raise ValueError(f"line {lineno}: invalid label {label!r}")
    split = record["split"]
    if split not in SPLITS:
        raise ValueError(f"line {lineno}: invalid split {split!r}")
    if not isinstance(record["context"], list) or not record["context"]:
        raise ValueError(f"line {lineno}: context must be a non-empty list")
    utterances = [Utterance(text=t, tokens=tokenize(t, tokenizer)) for t in record["context"]]
    context = DialogContext(context_id=str(record["context_id"]), utterances=utterances)
    response = ResponseCandidate(
        candidate_id=str(record["candidate_id"]),
        text=record["response"],
        tokens=tokenize(record["response"], tokenizer),
    )
    prf = None
    if record.get("prf_terms") is not None:
        prf = PrfTermSet(terms=list(record["prf_terms"]), candidate_id=response.candidate_id)
    return split, LabeledExample(context=context, response=response, label=int(label), prf_candidates=prf)


def load_dataset(path: str, tokenizer: TokenizerConfig) -> Dataset:
    """Load a JSON-lines dataset, tokenizing everything up front.

    Raises ``ValueError`` with the offending line number for malformed
    records and for duplicate (context_id, candidate_id) pairs.
    """
    dataset = Dataset()
    seen: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            split, example = _parse_record(record, tokenizer, lineno)
            key = (example.context.context_id, example.response.candidate_id)
            if key in seen:
                raise ValueError(f"line {lineno}: duplicate (context_id, candidate_id) {key}")
            seen.add(key)
            dataset.split(split).append(example)
            dataset.groups.setdefault((split, example.context.context_id), []).append(example)
    return dataset


def save_dataset(dataset: Dataset, path: str) -> None:
    """Serialize back to the JSON-lines format, including any PRF terms."""
    with open(path, "w", encoding="utf-8") as fh:
        for split in SPLITS:
            for ex in dataset.split(split):
                record = {
                    "context_id": ex.context.context_id,
                    "candidate_id": ex.response.candidate_id,
                    "context": [u.text for u in ex.context.utterances],
                    "response": ex.response.text,
                    "label": ex.label,
                    "split": split,
                }
                if ex.prf_candidates is not None:
                    record["prf_terms"] = list(ex.prf_candidates.terms)
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def group_ranked_candidates(
    dataset: Dataset, split: str
) -> list[tuple[DialogContext, list[tuple[ResponseCandidate, int]]]]:
    """Candidate groups for one split, sorted by context_id.

    Within-group order is the file order; callers must not rely on it.
    """
    examples = dataset.split(split)
    by_context: dict[str, list[LabeledExample]] = {}
    for ex in examples:
        by_context.setdefault(ex.context.context_id, []).append(ex)
    out = []
    for cid in sorted(by_context):
        group = by_context[cid]
        out.append((group[0].context, [(ex.response, ex.label) for ex in group]))
    return out


def load_posts(path: str, tokenizer: TokenizerConfig) -> list[ExternalPost]:
    """Load the external QA post corpus; doc_ids must be unique."""
    posts = []
    seen: set[int] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            if "doc_id" not in record or "text" not in record:
                raise ValueError(f"line {lineno}: corpus record needs doc_id and text")
            doc_id = int(record["doc_id"])
            if doc_id in seen:
                raise ValueError(f"line {lineno}: duplicate doc_id {doc_id}")
            seen.add(doc_id)
            posts.append(ExternalPost(doc_id=doc_id, text=record["text"], tokens=tokenize(record["text"], tokenizer)))
    return posts


def with_prf_terms(example: LabeledExample, terms: PrfTermSet) -> LabeledExample:
    """Copy of *example* with prf_candidates replaced."""
    return replace(example, prf_candidates=terms)
