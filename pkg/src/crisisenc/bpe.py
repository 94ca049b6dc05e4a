"""Byte-level BPE: training, encoding/decoding, block packing, vocab diff.

Token ids are laid out as: special tokens 0..4 (pad, unk, cls, sep, mask),
the 256 raw bytes at 5..260, and merge products from 261 upward. Every
valid UTF-8 string round-trips exactly through encode/decode because all
256 byte values are always in the vocabulary.

Texts are pre-tokenized into word-like chunks before merging (a merge
never crosses a chunk or tweet boundary), which keeps learned tokens
word-bounded the way byte-level BPE tokenizers conventionally do.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import _accel
from .errors import EmptyCorpus, IdOutOfRange

SPECIAL_TOKENS = ("<pad>", "<unk>", "<cls>", "<sep>", "<mask>")
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
NUM_SPECIALS = len(SPECIAL_TOKENS)
BYTE_OFFSET = NUM_SPECIALS  # byte value b lives at id b + 5
MIN_VOCAB = 256 + NUM_SPECIALS

VOCAB_FILE = "vocab.json"
MERGES_FILE = "merges.txt"

_SENTINEL = np.int32(-1)

# Word-ish chunking: a chunk is an optionally space-prefixed letter run,
# digit run, or symbol run; residual whitespace stands alone. Chunks
# concatenate back to the original text, preserving reversibility.
_PRETOKEN_RE = re.compile(
    r" ?[A-Za-z]+| ?[0-9]+| ?[^\sA-Za-z0-9]+|\s+(?!\S)|\s+"
)


def _bytes_to_unicode() -> dict[int, str]:
    """Bijective byte -> printable-character map used for token strings."""
    visible = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("\xa1"), ord("\xac") + 1))
        + list(range(ord("\xae"), ord("\xff") + 1))
    )
    byte_values = visible[:]
    chars = visible[:]
    n = 0
    for b in range(256):
        if b not in visible:
            byte_values.append(b)
            chars.append(256 + n)
            n += 1
    return {b: chr(c) for b, c in zip(byte_values, chars)}

_BYTE_TO_CHAR = _bytes_to_unicode()
_CHAR_TO_BYTE = {c: b for b, c in _BYTE_TO_CHAR.items()}


def token_string(token_bytes: bytes) -> str:
    return "".join(_BYTE_TO_CHAR[b] for b in token_bytes)


def token_bytes_from_string(token: str) -> bytes:
    return bytes(_CHAR_TO_BYTE[c] for c in token)


@dataclass
class TokenizerModel:
    """Trained byte-level BPE model.

    ``vocab`` maps token string -> id (a bijection onto 0..V-1); ``merges``
    is the ordered list of merge rules as token-string pairs.
    """

    vocab: dict[str, int]
    merges: list[tuple[str, str]]
    special_tokens: tuple[str, ...] = SPECIAL_TOKENS
    _merge_tables: tuple[np.ndarray, np.ndarray, np.ndarray] | None = field(
        default=None, repr=False, compare=False
    )
    _id_to_bytes: list[bytes | None] | None = field(
        default=None, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        self.validate()

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def validate(self) -> None:
        ids = sorted(self.vocab.values())
        if ids != list(range(len(self.vocab))):
            raise ValueError("vocab ids must be a bijection onto 0..V-1")
        for tok, tid in zip(self.special_tokens, range(NUM_SPECIALS)):
            if self.vocab.get(tok) != tid:
                raise ValueError(f"special token {tok!r} must have id {tid}")
        for a, b in self.merges:
            if a + b not in self.vocab:
                raise ValueError(f"merge output {a + b!r} missing from vocab")

    # -- derived lookup tables --------------------------------------------

    def _bytes_table(self) -> list[bytes | None]:
        if self._id_to_bytes is None:
            table: list[bytes | None] = [None] * len(self.vocab)
            for tok, tid in self.vocab.items():
                if tid < NUM_SPECIALS:
                    continue
                table[tid] = token_bytes_from_string(tok)
            self._id_to_bytes = table
        return self._id_to_bytes

    def _merge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self._merge_tables is None:
            keys = np.empty(len(self.merges), np.int64)
            new_ids = np.empty(len(self.merges), np.int32)
            for rank, (a, b) in enumerate(self.merges):
                keys[rank] = _accel.pack_pair(self.vocab[a], self.vocab[b])
                new_ids[rank] = self.vocab[a + b]
            order = np.argsort(keys)
            self._merge_tables = (
                keys[order],
                np.arange(len(self.merges), dtype=np.int64)[order],
                new_ids[order],
            )
        return self._merge_tables


def _chunk_ids(text: str) -> list[np.ndarray]:
    """Byte ids of each pre-token chunk (merges never cross chunks)."""
    chunks = _PRETOKEN_RE.findall(text)
    out = []
    for chunk in chunks:
        raw = np.frombuffer(chunk.encode("utf-8"), dtype=np.uint8)
        out.append(raw.astype(np.int32) + BYTE_OFFSET)
    return out


def _flat_with_sentinels(per_chunk: list[np.ndarray]) -> np.ndarray:
    if not per_chunk:
        return np.empty(0, np.int32)
    parts: list[np.ndarray] = []
    sep = np.array([_SENTINEL], np.int32)
    for i, chunk in enumerate(per_chunk):
        if i:
            parts.append(sep)
        parts.append(chunk)
    return np.concatenate(parts)


def train_bpe(corpus: Iterable[str], vocab_size: int) -> TokenizerModel:
    """Train a byte-level BPE model with ``vocab_size`` total entries.

    Merges are selected greedily by descending pair frequency; frequency
    ties prefer the pair whose (byte-string, byte-string) tuple sorts
    lexicographically smaller, so training is fully deterministic. Fewer
    than ``vocab_size`` entries result when no adjacent pairs remain.
    """
    if vocab_size < MIN_VOCAB:
        raise ValueError(f"vocab_size must be >= {MIN_VOCAB}, got {vocab_size}")

    per_chunk: list[np.ndarray] = []
    for tweet in corpus:
        per_chunk.extend(_chunk_ids(tweet))
    flat = _flat_with_sentinels(per_chunk)
    if flat.size == 0:
        raise EmptyCorpus("corpus contains no trainable bytes")

    token_bytes: list[bytes | None] = [None] * NUM_SPECIALS
    token_bytes += [bytes([b]) for b in range(256)]

    merges_ids: list[tuple[int, int]] = []
    next_id = MIN_VOCAB
    while next_id < vocab_size:
        keys, counts = _accel.pair_counts(flat)
        if keys.size == 0:
            break
        top = counts.max()
        cand = keys[counts == top]
        if cand.size == 1:
            best = int(cand[0])
        else:
            best = min(
                (int(k) for k in cand),
                key=lambda k: (
                    token_bytes[k >> 32],
                    token_bytes[k & 0xFFFFFFFF],
                ),
            )
        a, b = _accel.unpack_pair(best)
        flat = _accel.merge_pair(flat, a, b, next_id)
        merges_ids.append((a, b))
        token_bytes.append(token_bytes[a] + token_bytes[b])  # type: ignore[operator]
        next_id += 1

    vocab: dict[str, int] = {tok: i for i, tok in enumerate(SPECIAL_TOKENS)}
    for tid in range(NUM_SPECIALS, next_id):
        vocab[token_string(token_bytes[tid])] = tid  # type: ignore[arg-type]
    merges = [
        (token_string(token_bytes[a]), token_string(token_bytes[b]))  # type: ignore[arg-type]
        for a, b in merges_ids
    ]
    return TokenizerModel(vocab=vocab, merges=merges)


def encode(model: TokenizerModel, text: str) -> list[int]:
    """Token ids for ``text``; decode(encode(text)) always recovers text."""
    if not text:
        return []
    per_chunk = _chunk_ids(text)
    flat = _flat_with_sentinels(per_chunk)
    keys, ranks, new_ids = model._merge_arrays()
    merged = _accel.apply_merges(flat, keys, ranks, new_ids)
    return merged[merged >= 0].tolist()


def decode(model: TokenizerModel, ids: Sequence[int]) -> str:
    """Inverse of :func:`encode`; special-token ids contribute no bytes."""
    table = model._bytes_table()
    vocab_size = len(table)
    parts: list[bytes] = []
    for tid in ids:
        tid = int(tid)
        if tid < 0 or tid >= vocab_size:
            raise IdOutOfRange(f"id {tid} outside vocabulary of size {vocab_size}")
        chunk = table[tid]
        if chunk is not None:
            parts.append(chunk)
    return b"".join(parts).decode("utf-8", errors="replace")


@dataclass(frozen=True)
class TokenBlock:
    """Fixed-length packed token window with its attention mask."""

    ids: np.ndarray
    attention_mask: np.ndarray

    def __post_init__(self) -> None:
        if self.ids.shape != self.attention_mask.shape:
            raise ValueError("ids and attention_mask must have equal length")
        if not np.isin(self.attention_mask, (0, 1)).all():
            raise ValueError("attention mask entries must be 0 or 1")


def corpus_token_stream(model: TokenizerModel, tweets: Iterable[str]) -> Iterator[int]:
    """Flat pre-training token stream: each tweet as cls + ids + sep."""
    for tweet in tweets:
        yield CLS_ID
        yield from encode(model, tweet)
        yield SEP_ID


def pack_blocks(ids: Iterable[int], block_len: int = 128) -> list[TokenBlock]:
    """Chunk a flat token stream into full blocks of ``block_len``.

    The trailing partial block is dropped; every emitted block carries an
    all-ones attention mask.
    """
    if block_len < 2:
        raise ValueError("block_len must be >= 2")
    arr = np.fromiter(ids, dtype=np.int32)
    n_blocks = arr.size // block_len
    blocks = []
    ones = np.ones(block_len, np.int8)
    for i in range(n_blocks):
        blocks.append(
            TokenBlock(
                ids=arr[i * block_len : (i + 1) * block_len].copy(),
                attention_mask=ones.copy(),
            )
        )
    return blocks


def vocab_intersection(a: TokenizerModel, b: TokenizerModel) -> tuple[int, int]:
    """(shared token count, tokens only in ``a``), special tokens excluded."""
    sa = set(a.vocab) - set(a.special_tokens)
    sb = set(b.vocab) - set(b.special_tokens)
    return len(sa & sb), len(sa - sb)


def save_tokenizer(model: TokenizerModel, directory: str) -> None:
    """Write ``vocab.json`` and ``merges.txt`` under ``directory``."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, VOCAB_FILE), "w", encoding="utf-8") as fh:
        json.dump(model.vocab, fh, ensure_ascii=False, indent=0, sort_keys=False)
        fh.write("\n")
    with open(os.path.join(directory, MERGES_FILE), "w", encoding="utf-8") as fh:
        for a, b in model.merges:
            fh.write(f"{a} {b}\n")


def load_tokenizer(directory: str) -> TokenizerModel:
    with open(os.path.join(directory, VOCAB_FILE), encoding="utf-8") as fh:
        vocab = {str(k): int(v) for k, v in json.load(fh).items()}
    merges: list[tuple[str, str]] = []
    with open(os.path.join(directory, MERGES_FILE), encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            a, b = line.split(" ")
            merges.append((a, b))
    return TokenizerModel(vocab=vocab, merges=merges)
