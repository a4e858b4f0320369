"""Tokenization, vocabulary construction and integer encoding.

Shared by the retrieval side (BM25 queries, term counting) and the neural
side (ranker / selector inputs).  The word tokenizer splits on maximal runs
of alphanumeric characters, which doubles as punctuation removal and keeps
the pipeline free of language-specific resources.
"""

from __future__ import annotations

import importlib.resources
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
EOT_TOKEN = "[EOT]"

# Fixed reserved layout: ids 0..4 in this order.
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN, EOT_TOKEN)

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SEP_ID = 3
EOT_ID = 4


def load_stopwords(path: Optional[str] = None) -> frozenset[str]:
    """Load a stopword list: UTF-8, one token per line, ``#`` comments ignored.

    When *path* is ``None`` the bundled English function-word list is used.
    """
    if path is None:
        text = (
            importlib.resources.files("prfrank.data")
            .joinpath("stopwords_en.txt")
            .read_text(encoding="utf-8")
        )
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    words = set()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        words.add(line)
    return frozenset(words)


@dataclass(frozen=True)
class TokenizerConfig:
    """How raw text becomes tokens.

    ``mode`` is ``"word"`` (split on maximal alphanumeric runs) or
    ``"character"``.  ``stopword_path`` of ``"default"`` loads the bundled
    list; ``None`` disables stopword removal entirely.
    """

    lowercase: bool = True
    strip_punctuation: bool = True
    mode: str = "word"
    stopword_path: Optional[str] = None
    stopwords: frozenset[str] = field(default=frozenset(), compare=False)

    def __post_init__(self):
        if self.mode not in ("word", "character"):
            raise ValueError(f"unknown tokenizer mode: {self.mode!r}")
        if self.stopword_path is not None and not self.stopwords:
            path = None if self.stopword_path == "default" else self.stopword_path
            object.__setattr__(self, "stopwords", load_stopwords(path))


def _word_split(text: str, strip_punctuation: bool) -> list[str]:
    if strip_punctuation:
        tokens, run = [], []
        for ch in text:
            if ch.isalnum():
                run.append(ch)
            elif run:
                tokens.append("".join(run))
                run = []
        if run:
            tokens.append("".join(run))
        return tokens
    return text.split()


def tokenize(text: str, config: TokenizerConfig) -> list[str]:
    """Deterministically tokenize *text*; empty input yields an empty list."""
    if config.lowercase:
        text = text.lower()
    if config.mode == "word":
        tokens = _word_split(text, config.strip_punctuation)
    else:
        tokens = [ch for ch in text if not ch.isspace()]
        if config.strip_punctuation:
            tokens = [ch for ch in tokens if ch.isalnum()]
    if config.stopwords:
        tokens = [t for t in tokens if t not in config.stopwords]
    return tokens


class Vocabulary:
    """Immutable token-to-id mapping with the reserved ids at 0..4."""

    def __init__(self, tokens: Iterable[str]):
        self._token_to_id: dict[str, int] = {}
        for tok in RESERVED_TOKENS:
            self._token_to_id[tok] = len(self._token_to_id)
        for tok in tokens:
            if tok in self._token_to_id:
                raise ValueError(f"duplicate token in vocabulary: {tok!r}")
            self._token_to_id[tok] = len(self._token_to_id)
        self._id_to_token = {i: t for t, i in self._token_to_id.items()}

    def __len__(self) -> int:
        return len(self._token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        return self._id_to_token[token_id]

    def tokens(self) -> list[str]:
        """All tokens in id order, reserved ids first."""
        return [self._id_to_token[i] for i in range(len(self))]


def build_vocab(
    corpus: Iterator[list[str]], min_freq: int = 1, max_size: int = 50000
) -> Vocabulary:
    """Rank tokens by (frequency desc, token asc) and truncate to *max_size*.

    *max_size* counts the five reserved ids.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    if max_size <= len(RESERVED_TOKENS):
        raise ValueError("max_size must exceed the reserved id count")
    counts: Counter[str] = Counter()
    for tokens in corpus:
        counts.update(tokens)
    ranked = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(ranked[: max_size - len(RESERVED_TOKENS)])


def encode(tokens: list[str], vocab: Vocabulary) -> list[int]:
    """Map tokens to ids; unknown tokens become ``UNK_ID``."""
    return [vocab.id_of(t) for t in tokens]


def decode(ids: list[int], vocab: Vocabulary) -> list[str]:
    return [vocab.token_of(i) for i in ids]
