"""Sentence-encoding quality metric and the inference-timing benchmark.

The quality metric is a class-weighted average of intra-class cosine
similarity: classes are weighted by the normalized inverse of their size,
and a class's score is each member's mean cosine similarity to the other
members of the class. Higher is better.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from . import pooling
from .contrastive import SentenceEncoder, tokenize_texts, _embed_batch
from .errors import EmptyClass, UnknownClass, ZeroVector


@dataclass
class LabeledEmbeddings:
    """Unit-normalized embedding matrix [N, H] with class ids in 0..K-1."""

    embeddings: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        self.embeddings = np.asarray(self.embeddings, np.float64)
        self.labels = np.asarray(self.labels, np.int64)
        if self.embeddings.ndim != 2 or self.labels.shape != (self.embeddings.shape[0],):
            raise ValueError("expected embeddings [N, H] and labels [N]")
        counts = np.bincount(self.labels, minlength=self.num_classes)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels must lie in 0..K-1")
        if (counts == 0).any():
            missing = int(np.flatnonzero(counts == 0)[0])
            raise EmptyClass(f"class {missing} has no members")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if (norms == 0).any():
            raise ZeroVector("embedding rows must have nonzero norm")
        # Normalize defensively; pre-normalization scale is absorbed here.
        self.embeddings = self.embeddings / norms[:, None]


def class_weights(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Normalized inverse-count class weights (sum to 1)."""
    counts = np.bincount(np.asarray(labels, np.int64), minlength=num_classes)
    if (counts == 0).any():
        missing = int(np.flatnonzero(counts == 0)[0])
        raise EmptyClass(f"class {missing} has no members")
    w = 1.0 / counts
    return w / w.sum()


def intra_class_similarity(
    le: LabeledEmbeddings, k: int, include_self: bool = False
) -> float:
    """Mean over class members of their mean cosine to the class's others.

    A singleton class scores 1.0 by convention. With ``include_self`` the
    inner mean also counts each member's self-similarity of 1.
    """
    if not 0 <= k < le.num_classes:
        raise UnknownClass(f"class id {k} outside 0..{le.num_classes - 1}")
    members = le.embeddings[le.labels == k]
    m = members.shape[0]
    if m == 1 and not include_self:
        return 1.0
    gram = members @ members.T
    if include_self:
        return float(gram.sum() / (m * m))
    return float((gram.sum() - np.trace(gram)) / (m * (m - 1)))


def d_avg(le: LabeledEmbeddings, include_self: bool = False) -> float:
    """Class-weighted average of intra-class similarities."""
    weights = class_weights(le.labels, le.num_classes)
    sims = np.array(
        [intra_class_similarity(le, k, include_self) for k in range(le.num_classes)]
    )
    return float(weights @ sims)


def d_avg_report(
    le: LabeledEmbeddings,
    include_self: bool = False,
    class_names: list[str] | None = None,
) -> dict:
    """Per-class breakdown plus the aggregate, in the JSON report shape."""
    counts = np.bincount(le.labels, minlength=le.num_classes)
    w = 1.0 / counts
    w_hat = w / w.sum()
    per_class = []
    for k in range(le.num_classes):
        per_class.append(
            {
                "class": class_names[k] if class_names else k,
                "count": int(counts[k]),
                "w": float(w[k]),
                "w_hat": float(w_hat[k]),
                "d": intra_class_similarity(le, k, include_self),
            }
        )
    return {
        "per_class": per_class,
        "d_avg": float(sum(row["w_hat"] * row["d"] for row in per_class)),
        "include_self": include_self,
    }


# ---------------------------------------------------------------------------
# Timing benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimingReport:
    mean: float
    std: float
    min: float
    q1: float
    q2: float
    q3: float

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "min": self.min,
            "q1": self.q1,
            "q2": self.q2,
            "q3": self.q3,
        }


def quartiles(samples: np.ndarray) -> tuple[float, float, float]:
    """Q1/Q2/Q3 via linear interpolation between order statistics."""
    q = np.percentile(np.asarray(samples, np.float64), [25, 50, 75],
                      method="linear")
    return float(q[0]), float(q[1]), float(q[2])


def summarize_timings(samples_ms: np.ndarray) -> TimingReport:
    arr = np.asarray(samples_ms, np.float64)
    q1, q2, q3 = quartiles(arr)
    return TimingReport(
        mean=float(arr.mean()),
        std=float(arr.std()),
        min=float(arr.min()),
        q1=q1,
        q2=q2,
        q3=q3,
    )


def timing_bench(
    se: SentenceEncoder, texts: list[str], repetitions: int = 5
) -> dict[str, TimingReport]:
    """Per-text wall-clock timing of tokenization and embedding generation.

    Tokenization covers producing input ids and the attention mask;
    embedding generation covers the forward pass plus attention-aware mean
    pooling. One warmup pass per text is excluded from the statistics;
    times use a monotonic clock and are reported in milliseconds.
    """
    if not texts:
        raise ValueError("texts must be non-empty")
    max_len = se.cfg.max_position_embeddings
    tok_samples = []
    emb_samples = []
    for text in texts:
        # warmup (also provides the tokenized form for the embedding task)
        seqs = tokenize_texts(se.tokenizer, [text], max_len)
        _embed_batch(se.params, se.cfg, seqs, pooling.MEAN_WITH_ATTENTION)
        for _ in range(repetitions):
            t0 = time.perf_counter()
            seqs = tokenize_texts(se.tokenizer, [text], max_len)
            t1 = time.perf_counter()
            _embed_batch(se.params, se.cfg, seqs, pooling.MEAN_WITH_ATTENTION)
            t2 = time.perf_counter()
            tok_samples.append((t1 - t0) * 1e3)
            emb_samples.append((t2 - t1) * 1e3)
    return {
        "tokenization": summarize_timings(np.asarray(tok_samples)),
        "embedding_generation": summarize_timings(np.asarray(emb_samples)),
    }
