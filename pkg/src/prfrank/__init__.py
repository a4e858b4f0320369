"""Response expansion with pseudo-relevance feedback for conversational
response ranking: BM25 term retrieval, a reinforced term selector, a small
trainable ranking encoder, baseline selection mechanisms, and an
evaluation harness."""

__version__ = "0.1.0"
