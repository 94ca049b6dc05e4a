"""Contrastive sentence-encoder training and unit-normalized encoding.

Two objectives are implemented over cosine similarities divided by a
temperature: the in-batch-negatives ranking loss, and its extension where
an explicit hard negative per example joins every denominator. Both treat
every other positive in the batch as a negative for a given anchor; the
hard-negative variant additionally sums the similarity terms of all hard
negatives in the batch, exactly as the per-example objective is written.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from . import pooling
from .bpe import CLS_ID, SEP_ID, PAD_ID, TokenizerModel, encode, load_tokenizer, save_tokenizer
from .errors import (
    DivergedLoss,
    EmptyInput,
    ObjectiveDatasetMismatch,
    ZeroVector,
)
from .mlm import adamw_step, init_adamw, lr_schedule
from .textprep import preprocess_tweet

OBJECTIVE_MNR = "mnr"
OBJECTIVE_MNR_HARD = "mnr_hard"

SENTENCE_ENCODER_META = "sentence_encoder.json"
SENTENCE_ENCODER_CKPT = "encoder.ctxf"


def _normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ZeroVector("cosine similarity undefined for zero-norm rows")
    return x / norms, norms


def _contrastive_core(r, r_pos, r_neg, temperature, want_grads):
    """Shared value/gradient path for both objectives.

    Logits are cosine similarities over temperature: the positive block
    [N, N] alone, or with the hard-negative block appended to [N, 2N].
    The per-example loss is cross-entropy against the diagonal target.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    r = np.asarray(r, np.float64)
    r_pos = np.asarray(r_pos, np.float64)
    n = r.shape[0]
    if n < 1 or r_pos.shape != r.shape:
        raise ValueError("anchors and positives must share a non-empty [N, H] shape")
    rh, rn = _normalize_rows(r)
    ph, pn = _normalize_rows(r_pos)
    blocks = [rh @ ph.T]
    if r_neg is not None:
        r_neg = np.asarray(r_neg, np.float64)
        if r_neg.shape != r.shape:
            raise ValueError("hard negatives must share the [N, H] shape")
        nh, nn = _normalize_rows(r_neg)
        blocks.append(rh @ nh.T)
    logits = np.concatenate(blocks, axis=1) / temperature

    m = logits.max(-1, keepdims=True)
    e = np.exp(logits - m)
    lse = m[:, 0] + np.log(e.sum(-1))
    diag = np.arange(n)
    loss = float(np.mean(lse - logits[diag, diag]))
    if not want_grads:
        return loss, None

    probs = e / e.sum(-1, keepdims=True)
    dlogits = probs
    dlogits[diag, diag] -= 1.0
    dlogits /= n * temperature

    ds_pos = dlogits[:, :n]
    drh = ds_pos @ ph
    dph = ds_pos.T @ rh
    if r_neg is not None:
        ds_neg = dlogits[:, n:]
        drh += ds_neg @ nh
        dnh = ds_neg.T @ rh

    def through_norm(dxhat, xhat, norms):
        return (dxhat - xhat * (dxhat * xhat).sum(1, keepdims=True)) / norms

    out = [loss, through_norm(drh, rh, rn), through_norm(dph, ph, pn)]
    if r_neg is not None:
        out.append(through_norm(dnh, nh, nn))
    return tuple(out)


def mnr_loss(r: np.ndarray, r_pos: np.ndarray, temperature: float) -> float:
    """Ranking loss with in-batch negatives over an [N, H] anchor/positive pair."""
    loss, _ = _contrastive_core(r, r_pos, None, temperature, want_grads=False)
    return loss


def mnr_hard_loss(
    r: np.ndarray, r_pos: np.ndarray, r_neg: np.ndarray, temperature: float
) -> float:
    """Ranking loss whose denominators also sum every hard-negative term."""
    loss, _ = _contrastive_core(r, r_pos, r_neg, temperature, want_grads=False)
    return loss


def mnr_loss_grads(r, r_pos, temperature):
    """(loss, d/dr, d/dr_pos) with normalization handled inside."""
    return _contrastive_core(r, r_pos, None, temperature, want_grads=True)


def mnr_hard_loss_grads(r, r_pos, r_neg, temperature):
    """(loss, d/dr, d/dr_pos, d/dr_neg)."""
    return _contrastive_core(r, r_pos, r_neg, temperature, want_grads=True)


# ---------------------------------------------------------------------------
# Sentence encoder bundle
# ---------------------------------------------------------------------------

@dataclass
class SentenceEncoder:
    """Encoder params + config + tokenizer + the pooling strategy in use."""

    params: dict[str, np.ndarray]
    cfg: enc.EncoderConfig
    tokenizer: TokenizerModel
    pooling_strategy: str = pooling.MEAN_WITH_ATTENTION

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        enc.save_checkpoint(
            {k: v.astype(np.float32) for k, v in self.params.items()},
            self.cfg,
            os.path.join(directory, SENTENCE_ENCODER_CKPT),
        )
        save_tokenizer(self.tokenizer, directory)
        with open(os.path.join(directory, SENTENCE_ENCODER_META), "w",
                  encoding="utf-8") as fh:
            json.dump({"pooling_strategy": self.pooling_strategy}, fh)
            fh.write("\n")

    @classmethod
    def load(cls, directory: str) -> "SentenceEncoder":
        params, cfg = enc.load_checkpoint(
            os.path.join(directory, SENTENCE_ENCODER_CKPT)
        )
        tokenizer = load_tokenizer(directory)
        with open(os.path.join(directory, SENTENCE_ENCODER_META),
                  encoding="utf-8") as fh:
            meta = json.load(fh)
        return cls(params, cfg, tokenizer, meta["pooling_strategy"])


def tokenize_texts(
    tokenizer: TokenizerModel,
    texts: list[str],
    max_len: int,
    preprocess: bool = True,
) -> list[list[int]]:
    """cls + body + sep id sequences, body truncated to fit ``max_len``."""
    out = []
    for text in texts:
        clean = preprocess_tweet(text) if preprocess else text
        if not clean:
            raise EmptyInput("text is empty after preprocessing")
        body = encode(tokenizer, clean)[: max_len - 2]
        out.append([CLS_ID, *body, SEP_ID])
    return out


def _embed_batch(params, cfg, sequences, strategy, train_mode=False, rng=None):
    batch = enc.batch_from_sequences(sequences, PAD_ID)
    hidden, tape = enc.forward(params, cfg, batch, train_mode=train_mode, rng=rng)
    pooled = pooling.pool_batch(hidden, batch.attention_mask, strategy)
    return pooled, hidden, tape, batch


def encode_sentences(
    se: SentenceEncoder,
    texts: list[str],
    strategy: str | None = None,
    batch_size: int = 32,
    preprocess: bool = True,
) -> np.ndarray:
    """Unit-normalized sentence embeddings, one row per input text."""
    if not texts:
        raise EmptyInput("no texts to encode")
    strategy = strategy or se.pooling_strategy
    sequences = tokenize_texts(
        se.tokenizer, texts, se.cfg.max_position_embeddings, preprocess
    )
    rows = []
    for start in range(0, len(sequences), batch_size):
        pooled, _, _, _ = _embed_batch(
            se.params, se.cfg, sequences[start : start + batch_size], strategy
        )
        rows.append(pooled)
    emb = np.concatenate(rows, axis=0)
    normalized, _ = _normalize_rows(emb.astype(np.float64))
    return normalized


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class ContrastiveHyper:
    """Training hyperparameters; defaults record the full-scale recipe."""

    objective: str = OBJECTIVE_MNR_HARD
    temperature: float = 0.05
    batch_size: int = 512
    epochs: int = 20
    learning_rate: float = 2e-5
    warmup_frac: float = 0.01
    weight_decay: float = 0.01
    seed: int = 0


def _check_dataset(dataset, objective):
    if objective not in (OBJECTIVE_MNR, OBJECTIVE_MNR_HARD):
        raise ValueError(f"unknown objective {objective!r}")
    if not dataset:
        raise EmptyInput("contrastive dataset is empty")
    width = {len(row) for row in dataset}
    if objective == OBJECTIVE_MNR and width != {2}:
        raise ObjectiveDatasetMismatch("pair objective requires (anchor, positive) rows")
    if objective == OBJECTIVE_MNR_HARD and width != {3}:
        raise ObjectiveDatasetMismatch(
            "hard-negative objective requires (anchor, positive, negative) rows"
        )


def train_encoder(
    pretrained_params: dict[str, np.ndarray],
    cfg: enc.EncoderConfig,
    tokenizer: TokenizerModel,
    dataset: list[tuple[str, ...]],
    hyper: ContrastiveHyper,
) -> SentenceEncoder:
    """Fine-tune all encoder parameters with a contrastive objective.

    Pooling is the attention-aware mean, fixed at training time. The
    learning rate warms up over the first 1% of steps (by default) and
    decays linearly afterwards.
    """
    _check_dataset(dataset, hyper.objective)
    use_hard = hyper.objective == OBJECTIVE_MNR_HARD
    max_len = cfg.max_position_embeddings
    columns = list(zip(*dataset))
    tokenized = [tokenize_texts(tokenizer, list(col), max_len) for col in columns]

    params = enc.clone_params(pretrained_params)
    rng = np.random.default_rng(hyper.seed)
    state = init_adamw(params, weight_decay=hyper.weight_decay)
    n = len(dataset)
    steps_per_epoch = math.ceil(n / hyper.batch_size)
    total_steps = hyper.epochs * steps_per_epoch

    step = 0
    for _epoch in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            sel = order[start : start + hyper.batch_size]
            streams = [[tok[i] for i in sel] for tok in tokenized]
            pooled = []
            ctx = []
            for seqs in streams:
                p, hidden, tape, batch = _embed_batch(
                    params, cfg, seqs, pooling.MEAN_WITH_ATTENTION,
                    train_mode=True, rng=rng,
                )
                pooled.append(p)
                ctx.append((hidden, tape, batch))
            if use_hard:
                loss, *dpooled = mnr_hard_loss_grads(
                    pooled[0], pooled[1], pooled[2], hyper.temperature
                )
            else:
                loss, *dpooled = mnr_loss_grads(
                    pooled[0], pooled[1], hyper.temperature
                )
            if not math.isfinite(loss):
                raise DivergedLoss("contrastive loss diverged")
            grads = enc.zero_grads(params)
            for dp, (hidden, tape, batch) in zip(dpooled, ctx):
                d_hidden = pooling.mean_attention_pool_backward(
                    dp.astype(hidden.dtype), batch.attention_mask
                )
                g = enc.backward(tape, d_hidden)
                for name in grads:
                    grads[name] += g[name]
            step += 1
            lr = lr_schedule(step, total_steps, hyper.learning_rate,
                             hyper.warmup_frac)
            params, state = adamw_step(params, grads, state, lr)

    return SentenceEncoder(params, cfg, tokenizer, pooling.MEAN_WITH_ATTENTION)


def read_pair_tsv(path: str) -> list[tuple[str, str]]:
    """TSV rows ``anchor<TAB>positive``."""
    return _read_tsv(path, 2)  # type: ignore[return-value]


def read_triplet_tsv(path: str) -> list[tuple[str, str, str]]:
    """TSV rows ``anchor<TAB>positive<TAB>negative``."""
    return _read_tsv(path, 3)  # type: ignore[return-value]


def _read_tsv(path: str, width: int) -> list[tuple[str, ...]]:
    rows: list[tuple[str, ...]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = tuple(line.split("\t"))
            if len(parts) != width:
                raise ValueError(
                    f"{path}:{lineno}: expected {width} tab-separated fields"
                )
            rows.append(parts)
    return rows
