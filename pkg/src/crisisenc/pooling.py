"""Sentence pooling strategies over per-token encoder outputs."""

from __future__ import annotations

import numpy as np

from .errors import AllMasked

MEAN_WITH_ATTENTION = "mean_with_attention"
CLS = "cls"
MAX = "max"
MEAN_WITHOUT_ATTENTION = "mean_without_attention"

STRATEGIES = (MEAN_WITH_ATTENTION, CLS, MAX, MEAN_WITHOUT_ATTENTION)

# CLI spelling -> canonical strategy name.
CLI_NAMES = {
    "mean": MEAN_WITH_ATTENTION,
    "cls": CLS,
    "max": MAX,
    "mean-noattn": MEAN_WITHOUT_ATTENTION,
}


def _check_strategy(strategy: str) -> None:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown pooling strategy {strategy!r}")


def pool(token_embs: np.ndarray, mask: np.ndarray, strategy: str) -> np.ndarray:
    """Reduce token embeddings [L, H] to one sentence vector [H].

    mean_with_attention and max consider only mask==1 rows (AllMasked if
    there are none); cls returns row 0 regardless of the mask;
    mean_without_attention averages every row.
    """
    _check_strategy(strategy)
    token_embs = np.asarray(token_embs)
    mask = np.asarray(mask)
    if token_embs.ndim != 2 or mask.shape != (token_embs.shape[0],):
        raise ValueError("expected token_embs [L, H] and mask [L]")
    if strategy == CLS:
        return token_embs[0].copy()
    if strategy == MEAN_WITHOUT_ATTENTION:
        return token_embs.mean(axis=0)
    attended = mask == 1
    if not attended.any():
        raise AllMasked(f"{strategy} pooling requires at least one attended row")
    rows = token_embs[attended]
    if strategy == MAX:
        return rows.max(axis=0)
    return rows.mean(axis=0)


def pool_batch(hidden: np.ndarray, mask: np.ndarray, strategy: str) -> np.ndarray:
    """Batched pooling: [B, L, H] with mask [B, L] -> [B, H]."""
    _check_strategy(strategy)
    if strategy == CLS:
        return hidden[:, 0, :].copy()
    if strategy == MEAN_WITHOUT_ATTENTION:
        return hidden.mean(axis=1)
    counts = mask.sum(axis=1)
    if (counts == 0).any():
        raise AllMasked(f"{strategy} pooling requires at least one attended row")
    m = mask[:, :, None].astype(hidden.dtype)
    if strategy == MAX:
        neg = np.asarray(-np.inf, hidden.dtype)
        return np.where(m == 1, hidden, neg).max(axis=1)
    return (hidden * m).sum(axis=1) / counts[:, None].astype(hidden.dtype)


def mean_attention_pool_backward(
    dout: np.ndarray, mask: np.ndarray, dtype=None
) -> np.ndarray:
    """Gradient of mean_with_attention pooling back to [B, L, H].

    Only the attention-aware mean is differentiated here because it is the
    strategy fixed for training.
    """
    counts = mask.sum(axis=1).astype(dout.dtype)
    m = mask[:, :, None].astype(dout.dtype)
    return m * (dout / counts[:, None])[:, None, :]
