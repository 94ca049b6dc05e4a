"""Tweet normalization, the minimum-token filter, and corpus statistics.

The normalization pipeline applies six rules in a fixed order chosen so
that HTML entities are decoded before URL matching (a decoded ``&amp;``
cannot corrupt a URL span):

    HTML-decode -> URL replace -> mention replace -> emoji textualize
    -> whitespace collapse -> encoding normalization

The whole pipeline is idempotent: running it on its own output is a
no-op.
"""

from __future__ import annotations

import html
import os
import re
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Iterator

from ._emoji import SINGLE_CODEPOINT_NAMES, is_emoji_codepoint
from .errors import IrreparableEncoding

URL_TOKEN = "HTTPURL"
MENTION_TOKEN = "@USER"

# http(s) scheme or bare www. prefix, up to the next whitespace.
_URL_RE = re.compile(r"(?:https?://|www\.)\S+")
# @ followed by 1-15 ASCII word characters (platform handle limit); longer
# runs are not handles and are left untouched.
_MENTION_RE = re.compile(r"@\w{1,15}(?!\w)", re.ASCII)
_WHITESPACE_RE = re.compile(r"\s+")
_ENTITY_RE = re.compile(r"&(?:#\d+|#x[0-9a-fA-F]+|[a-zA-Z][a-zA-Z0-9]*);")
# Terminal punctuation followed by whitespace or end of string.
_SENTENCE_SPLIT_RE = re.compile(r"[.!?]+(?=\s|$)")


def _decode_entities(text: str) -> str:
    # Iterate to a fixpoint: double-escaped input like "&amp;amp;" must not
    # leave entity sequences in the output.
    for _ in range(10):
        decoded = html.unescape(text)
        if decoded == text:
            return text
        text = decoded
    return text


def _textualize_emoji(text: str) -> str:
    if not any(is_emoji_codepoint(ord(ch)) for ch in text):
        return text
    parts = []
    for ch in text:
        cp = ord(ch)
        if cp in SINGLE_CODEPOINT_NAMES:
            parts.append(f":{SINGLE_CODEPOINT_NAMES[cp]}:")
        elif is_emoji_codepoint(cp):
            continue  # unknown emoji / modifier: drop
        else:
            parts.append(ch)
    return "".join(parts)


def _normalize_encoding(text: str) -> str:
    # Strip surrogates, control and format characters; they are encoding
    # artifacts in scraped tweets. Strip before NFC so normalization never
    # sees lone surrogates; collapse again because stripping can leave
    # doubled spaces.
    cleaned = "".join(
        ch for ch in text if ch == " " or not unicodedata.category(ch).startswith("C")
    )
    cleaned = unicodedata.normalize("NFC", cleaned)
    return _WHITESPACE_RE.sub(" ", cleaned).strip()


def preprocess_tweet(raw: str | bytes) -> str:
    """Normalize one raw tweet into its clean form.

    Accepts ``bytes`` (must be valid UTF-8, otherwise
    :class:`IrreparableEncoding`) or ``str``. The result contains no URLs,
    @-mentions, HTML entities, emoji, newlines, or doubled spaces.
    """
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise IrreparableEncoding(f"undecodable input bytes: {exc}") from exc
    text = _decode_entities(raw)
    text = _URL_RE.sub(URL_TOKEN, text)
    text = _MENTION_RE.sub(MENTION_TOKEN, text)
    text = _textualize_emoji(text)
    text = _WHITESPACE_RE.sub(" ", text).strip()
    return _normalize_encoding(text)


def passes_length_filter(text: str, min_tokens: int = 10) -> bool:
    """True iff the whitespace token count strictly exceeds ``min_tokens``."""
    return len(text.split()) > min_tokens


def count_sentences(text: str) -> int:
    """Sentences per the terminal-punctuation boundary rule."""
    return sum(1 for chunk in _SENTENCE_SPLIT_RE.split(text) if chunk.strip())


@dataclass(frozen=True)
class CorpusStats:
    token_count: int
    sentence_count: int
    unique_token_count: int

    def to_dict(self) -> dict:
        return {
            "tokens": self.token_count,
            "sentences": self.sentence_count,
            "unique_tokens": self.unique_token_count,
        }


class StatsAccumulator:
    """Shardable corpus-statistics accumulator with an associative merge."""

    def __init__(self) -> None:
        self.token_count = 0
        self.sentence_count = 0
        self._unique: set[str] = set()

    def add(self, tweet: str) -> None:
        tokens = tweet.split()
        self.token_count += len(tokens)
        self.sentence_count += count_sentences(tweet)
        self._unique.update(tokens)

    def merge(self, other: "StatsAccumulator") -> "StatsAccumulator":
        self.token_count += other.token_count
        self.sentence_count += other.sentence_count
        self._unique |= other._unique
        return self

    def finalize(self) -> CorpusStats:
        return CorpusStats(self.token_count, self.sentence_count, len(self._unique))


def max_workers() -> int:
    """Worker cap from the CT_THREADS environment variable."""
    raw = os.environ.get("CT_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
            if n >= 1:
                return n
        except ValueError:
            pass
    return os.cpu_count() or 1


def corpus_stats(corpus: Iterable[str], workers: int | None = None) -> CorpusStats:
    """Token / sentence / unique-token counts over a clean-tweet stream.

    With ``workers > 1`` (default: CT_THREADS) the corpus is sharded and
    accumulated in parallel; the merge is associative so the result does
    not depend on sharding.
    """
    tweets = corpus if isinstance(corpus, list) else list(corpus)
    n_workers = max_workers() if workers is None else workers
    if n_workers <= 1 or len(tweets) < 2 * n_workers:
        acc = StatsAccumulator()
        for tweet in tweets:
            acc.add(tweet)
        return acc.finalize()

    def shard_stats(shard: list[str]) -> StatsAccumulator:
        acc = StatsAccumulator()
        for tweet in shard:
            acc.add(tweet)
        return acc

    size = (len(tweets) + n_workers - 1) // n_workers
    shards = [tweets[i : i + size] for i in range(0, len(tweets), size)]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        accs = list(pool.map(shard_stats, shards))
    total = accs[0]
    for acc in accs[1:]:
        total.merge(acc)
    return total.finalize()


# --- corpus file I/O (one tweet per line; literal newlines escaped as \n) ---

def read_raw_corpus(path: str) -> Iterator[str]:
    """Yield raw tweets from a one-per-line UTF-8 file.

    A producer-escaped ``\\n`` sequence is unescaped back to a newline.
    Raises :class:`IrreparableEncoding` on undecodable lines.
    """
    with open(path, "rb") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip(b"\r\n")
            try:
                text = line.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise IrreparableEncoding(f"{path}:{lineno}: {exc}") from exc
            yield text.replace("\\n", "\n")


def write_clean_corpus(path: str, tweets: Iterable[str]) -> int:
    """Write clean tweets one per line; returns the number written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for tweet in tweets:
            fh.write(tweet)
            fh.write("\n")
            n += 1
    return n
