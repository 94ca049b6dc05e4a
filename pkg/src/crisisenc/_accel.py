"""Hot inner loops of the byte-level BPE machinery.

Two interchangeable implementations are provided for each kernel: a scalar
loop compiled with numba's ``@njit`` and a vectorized pure-numpy fallback.
The active set is chosen at import time: numba is used when importable
unless the environment variable ``CT_DISABLE_NUMBA`` is set to a truthy
value. Both stacks are importable side by side (``numba_impl`` /
``numpy_impl``) so tests can assert parity and ``benchmarks/`` can time
them against each other.

Token sequences are int32 arrays. A ``-1`` sentinel separates merge
segments (pre-tokenized chunks / tweets); no pair may span a sentinel.
A pair ``(a, b)`` of non-negative ids is packed into one int64 key as
``(a << 32) | b``.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

_KEY_SHIFT = 32
_KEY_MASK = (1 << 32) - 1

_EMPTY_I64 = np.empty(0, np.int64)


def pack_pair(a: int, b: int) -> int:
    return (int(a) << _KEY_SHIFT) | int(b)


def unpack_pair(key: int) -> tuple[int, int]:
    return int(key) >> _KEY_SHIFT, int(key) & _KEY_MASK


# ---------------------------------------------------------------------------
# Loop kernels (numba-compatible source)
# ---------------------------------------------------------------------------

def _pair_counts_loop(flat):
    """Counts of adjacent id pairs, skipping pairs that touch a sentinel.

    Returns (sorted unique packed keys, counts).
    """
    n = flat.shape[0]
    if n < 2:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    keys = np.empty(n - 1, np.int64)
    m = 0
    for i in range(n - 1):
        a = flat[i]
        b = flat[i + 1]
        if a >= 0 and b >= 0:
            keys[m] = (np.int64(a) << 32) | np.int64(b)
            m += 1
    if m == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    srt = np.sort(keys[:m])
    uniq = np.empty(m, np.int64)
    counts = np.empty(m, np.int64)
    u = 0
    uniq[0] = srt[0]
    counts[0] = 1
    for i in range(1, m):
        if srt[i] == uniq[u]:
            counts[u] += 1
        else:
            u += 1
            uniq[u] = srt[i]
            counts[u] = 1
    return uniq[: u + 1], counts[: u + 1]


def _merge_pair_loop(flat, a, b, new_id):
    """Replace every left-to-right occurrence of (a, b) with new_id."""
    n = flat.shape[0]
    out = np.empty(n, flat.dtype)
    i = 0
    m = 0
    while i < n:
        if i < n - 1 and flat[i] == a and flat[i + 1] == b:
            out[m] = new_id
            i += 2
        else:
            out[m] = flat[i]
            i += 1
        m += 1
    return out[:m]


def _apply_merges_loop(ids, sorted_keys, ranks, new_ids):
    """Greedy BPE encoding: repeatedly apply the lowest-rank known merge.

    ``sorted_keys`` is ascending; ``ranks``/``new_ids`` are parallel to it.
    Sentinel positions never match (their packed keys are negative).
    """
    out = ids.astype(np.int32)
    n_merges = sorted_keys.shape[0]
    if n_merges == 0:
        return out
    while out.shape[0] >= 2:
        best_rank = np.int64(-1)
        best_a = np.int32(-1)
        best_b = np.int32(-1)
        best_new = np.int32(-1)
        for i in range(out.shape[0] - 1):
            key = (np.int64(out[i]) << 32) | np.int64(out[i + 1])
            j = np.searchsorted(sorted_keys, key)
            if j < n_merges and sorted_keys[j] == key:
                if best_rank < 0 or ranks[j] < best_rank:
                    best_rank = ranks[j]
                    best_a = out[i]
                    best_b = out[i + 1]
                    best_new = new_ids[j]
        if best_rank < 0:
            break
        nxt = np.empty(out.shape[0], np.int32)
        i = 0
        m = 0
        n = out.shape[0]
        while i < n:
            if i < n - 1 and out[i] == best_a and out[i + 1] == best_b:
                nxt[m] = best_new
                i += 2
            else:
                nxt[m] = out[i]
                i += 1
            m += 1
        out = nxt[:m]
    return out


# ---------------------------------------------------------------------------
# Vectorized numpy fallbacks
# ---------------------------------------------------------------------------

def _pair_counts_numpy(flat):
    if flat.shape[0] < 2:
        return _EMPTY_I64.copy(), _EMPTY_I64.copy()
    a = flat[:-1].astype(np.int64)
    b = flat[1:].astype(np.int64)
    valid = (a >= 0) & (b >= 0)
    keys = (a[valid] << _KEY_SHIFT) | b[valid]
    if keys.size == 0:
        return _EMPTY_I64.copy(), _EMPTY_I64.copy()
    uniq, counts = np.unique(keys, return_counts=True)
    return uniq, counts.astype(np.int64)


def _merge_pair_numpy(flat, a, b, new_id):
    if flat.shape[0] < 2:
        return flat.copy()
    cand = np.flatnonzero((flat[:-1] == a) & (flat[1:] == b))
    if cand.size == 0:
        return flat.copy()
    if a == b:
        # Overlapping candidates (e.g. "aaa"): keep every other position
        # within each run of consecutive candidates, mirroring the
        # left-to-right scan of the loop kernel.
        run_start = np.empty(cand.size, bool)
        run_start[0] = True
        run_start[1:] = np.diff(cand) > 1
        start = cand[run_start][np.cumsum(run_start) - 1]
        cand = cand[((cand - start) % 2) == 0]
    out = flat.copy()
    out[cand] = new_id
    return np.delete(out, cand + 1)


def _apply_merges_numpy(ids, sorted_keys, ranks, new_ids):
    out = ids.astype(np.int32)
    if sorted_keys.shape[0] == 0:
        return out
    while out.shape[0] >= 2:
        keys = (out[:-1].astype(np.int64) << _KEY_SHIFT) | out[1:].astype(np.int64)
        pos = np.searchsorted(sorted_keys, keys)
        pos = np.minimum(pos, sorted_keys.shape[0] - 1)
        hit = sorted_keys[pos] == keys
        if not hit.any():
            break
        hit_pos = pos[hit]
        j = hit_pos[np.argmin(ranks[hit_pos])]
        a = int(sorted_keys[j]) >> _KEY_SHIFT
        b = int(sorted_keys[j]) & _KEY_MASK
        out = _merge_pair_numpy(out, a, b, new_ids[j])
    return out


# ---------------------------------------------------------------------------
# Implementation selection
# ---------------------------------------------------------------------------

numpy_impl = SimpleNamespace(
    name="numpy",
    pair_counts=_pair_counts_numpy,
    merge_pair=_merge_pair_numpy,
    apply_merges=_apply_merges_numpy,
)

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_impl = None
else:
    numba_impl = SimpleNamespace(
        name="numba",
        pair_counts=njit(cache=True)(_pair_counts_loop),
        merge_pair=njit(cache=True)(_merge_pair_loop),
        apply_merges=njit(cache=True)(_apply_merges_loop),
    )

_disabled = os.environ.get("CT_DISABLE_NUMBA", "").strip().lower() in {
    "1", "true", "yes", "on",
}

NUMBA_ENABLED = numba_impl is not None and not _disabled

_active = numba_impl if NUMBA_ENABLED else numpy_impl

pair_counts = _active.pair_counts
merge_pair = _active.merge_pair
apply_merges = _active.apply_merges
