"""Masked-language-model pre-training: masking, loss, AdamW, schedule, loop.

The loop emits three checkpoints: the model after epoch 1, the model at
its minimum validation loss, and the model after the final epoch.
Validation blocks are masked once up front with a seed-derived generator
so per-epoch losses are comparable and the whole run is reproducible.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from .bpe import NUM_SPECIALS, MASK_ID, TokenBlock
from .errors import DivergedLoss, NoMaskedPositions, ShapeMismatch

IGNORE_INDEX = -100


@dataclass(frozen=True)
class MaskingPolicy:
    """Token-masking policy: selection probability and replacement split."""

    mask_prob: float = 0.15
    mask_token_frac: float = 0.8
    random_token_frac: float = 0.1
    keep_frac: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ValueError("mask_prob must lie in [0, 1]")
        total = self.mask_token_frac + self.random_token_frac + self.keep_frac
        if abs(total - 1.0) > 1e-9:
            raise ValueError("replacement fractions must sum to 1")


def apply_masking(
    block: TokenBlock,
    policy: MaskingPolicy,
    rng: np.random.Generator,
    vocab_size: int,
) -> tuple[TokenBlock, np.ndarray]:
    """Independently mask non-special positions of one block.

    Returns the masked block and per-position labels holding the original
    id at selected positions and IGNORE_INDEX elsewhere. Special-token and
    padded positions are never selected. Random replacements are drawn
    from the non-special id range.
    """
    ids = block.ids
    L = ids.shape[0]
    candidates = (block.attention_mask == 1) & (ids >= NUM_SPECIALS)
    selected = candidates & (rng.random(L) < policy.mask_prob)

    branch = rng.random(L)
    random_ids = rng.integers(NUM_SPECIALS, vocab_size, L, dtype=np.int64)

    masked = ids.astype(np.int64).copy()
    use_mask = selected & (branch < policy.mask_token_frac)
    use_random = (
        selected
        & ~use_mask
        & (branch < policy.mask_token_frac + policy.random_token_frac)
    )
    masked[use_mask] = MASK_ID
    masked[use_random] = random_ids[use_random]

    labels = np.full(L, IGNORE_INDEX, np.int64)
    labels[selected] = ids[selected]
    return (
        TokenBlock(ids=masked.astype(np.int32), attention_mask=block.attention_mask),
        labels,
    )


def mlm_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean natural-log cross-entropy of selected positions [N, V] vs [N]."""
    if logits.shape[0] == 0:
        raise NoMaskedPositions("no selected positions to score")
    m = logits.max(-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(-1))
    picked = logits[np.arange(logits.shape[0]), labels]
    return float(np.mean(lse - picked))


def mlm_loss_grad(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss plus d(loss)/d(logits) = (softmax - onehot) / N."""
    if logits.shape[0] == 0:
        raise NoMaskedPositions("no selected positions to score")
    n = logits.shape[0]
    m = logits.max(-1, keepdims=True)
    e = np.exp(logits - m)
    probs = e / e.sum(-1, keepdims=True)
    lse = m[:, 0] + np.log(e.sum(-1))
    picked = logits[np.arange(n), labels]
    loss = float(np.mean(lse - picked))
    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


# ---------------------------------------------------------------------------
# AdamW with decoupled weight decay
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


def init_adamw(
    params: dict[str, np.ndarray],
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> OptimizerState:
    return OptimizerState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        weight_decay=weight_decay,
    )


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One bias-corrected AdamW update with decoupled weight decay."""
    if set(params) != set(grads):
        raise ShapeMismatch("params and grads hold different tensor names")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_params = {}
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeMismatch(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        update = m_hat / (np.sqrt(v_hat) + state.eps)
        new_params[name] = (
            theta - lr * update - lr * state.weight_decay * theta
        ).astype(theta.dtype)
    return new_params, state


def lr_schedule(step: int, total_steps: int, peak: float, warmup_frac: float) -> float:
    """Linear 0 -> peak over the warmup span, then linear peak -> 0."""
    if not 0 <= step <= total_steps:
        raise ValueError("step must lie in [0, total_steps]")
    if not 0.0 < warmup_frac < 1.0:
        raise ValueError("warmup_frac must lie in (0, 1)")
    warmup_steps = warmup_frac * total_steps
    if step <= warmup_steps:
        return peak * step / warmup_steps if warmup_steps else 0.0
    return peak * (total_steps - step) / (total_steps - warmup_steps)


# ---------------------------------------------------------------------------
# Full MLM objective over one batch
# ---------------------------------------------------------------------------

def mlm_batch_loss(
    params: dict[str, np.ndarray],
    cfg: enc.EncoderConfig,
    masked_ids: np.ndarray,
    attention_mask: np.ndarray,
    labels: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    compute_grads: bool = True,
) -> tuple[float, dict[str, np.ndarray] | None, int]:
    """MLM loss of one [B, L] batch; optionally its parameter gradients.

    Returns (loss, grads or None, number of selected positions).
    """
    batch = enc.EncodedBatch(ids=masked_ids, attention_mask=attention_mask)
    hidden, tape = enc.forward(params, cfg, batch, train_mode=train_mode, rng=rng)
    rows, cols = np.nonzero(labels != IGNORE_INDEX)
    if rows.size == 0:
        raise NoMaskedPositions("batch holds no masked positions")
    selected_hidden = hidden[rows, cols]
    target = labels[rows, cols]
    logits, head_cache = enc.mlm_head_forward(params, cfg, selected_hidden)
    if not compute_grads:
        return mlm_loss(logits, target), None, rows.size
    loss, dlogits = mlm_loss_grad(logits, target)
    grads = enc.zero_grads(params)
    d_selected = enc.mlm_head_backward(params, head_cache, dlogits, grads)
    d_hidden = np.zeros_like(hidden)
    d_hidden[rows, cols] = d_selected
    encoder_grads = enc.backward(tape, d_hidden)
    for name in grads:
        grads[name] += encoder_grads[name]
    return loss, grads, rows.size


# ---------------------------------------------------------------------------
# Pre-training loop
# ---------------------------------------------------------------------------

@dataclass
class PretrainHyper:
    """Desk-scale defaults; batch-8k-style runs are configured, not default."""

    epochs: int = 10
    micro_batch: int = 16
    accumulation_steps: int = 2
    peak_lr: float = 4e-4
    warmup_frac: float = 0.05
    mask_prob: float = 0.15
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    checkpoint_dir: str | None = None


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    cfg: enc.EncoderConfig
    epoch: int
    val_loss: float


@dataclass
class CheckpointSet:
    one_look: Checkpoint
    best_loss: Checkpoint
    complete: Checkpoint
    loss_history: list[tuple[int, float]] = field(default_factory=list)


def _stack_blocks(blocks: list[TokenBlock]) -> tuple[np.ndarray, np.ndarray]:
    ids = np.stack([b.ids for b in blocks]).astype(np.int32)
    mask = np.stack([b.attention_mask for b in blocks]).astype(np.int8)
    return ids, mask


def _mask_blocks(ids, mask, policy, rng, vocab_size):
    masked = np.empty_like(ids)
    labels = np.empty(ids.shape, np.int64)
    for i in range(ids.shape[0]):
        blk, lab = apply_masking(
            TokenBlock(ids=ids[i], attention_mask=mask[i]), policy, rng, vocab_size
        )
        masked[i] = blk.ids
        labels[i] = lab
    return masked, labels


def validation_loss(
    params, cfg, masked_ids, mask, labels, micro_batch: int = 32
) -> float:
    """Pooled mean cross-entropy over all selected validation positions."""
    total = 0.0
    count = 0
    for start in range(0, masked_ids.shape[0], micro_batch):
        sl = slice(start, start + micro_batch)
        loss, _, n = mlm_batch_loss(
            params, cfg, masked_ids[sl], mask[sl], labels[sl], compute_grads=False
        )
        total += loss * n
        count += n
    if count == 0:
        raise NoMaskedPositions("validation blocks hold no masked positions")
    return total / count


def pretrain(
    corpus_blocks: list[TokenBlock],
    val_blocks: list[TokenBlock],
    cfg: enc.EncoderConfig,
    hyper: PretrainHyper,
) -> CheckpointSet:
    """Run the masked-language-model pre-training loop.

    loss_history starts with an epoch-0 entry measuring the randomly
    initialized model, then one entry per training epoch. Raises
    DivergedLoss if any recorded loss is non-finite.
    """
    if not corpus_blocks or not val_blocks:
        raise ValueError("train and validation blocks must be non-empty")
    policy = MaskingPolicy(mask_prob=hyper.mask_prob)
    train_ids, train_mask = _stack_blocks(corpus_blocks)
    val_ids, val_mask = _stack_blocks(val_blocks)

    params = enc.init_params(cfg, hyper.seed)
    loop_rng = np.random.default_rng((hyper.seed, 1))
    val_rng = np.random.default_rng((hyper.seed, 2))
    val_masked, val_labels = _mask_blocks(val_ids, val_mask, policy, val_rng,
                                          cfg.vocab_size)

    n_train = train_ids.shape[0]
    micro_per_epoch = math.ceil(n_train / hyper.micro_batch)
    steps_per_epoch = math.ceil(micro_per_epoch / hyper.accumulation_steps)
    total_steps = hyper.epochs * steps_per_epoch

    state = init_adamw(params, beta1=hyper.beta1, beta2=hyper.beta2,
                       weight_decay=hyper.weight_decay)
    initial = validation_loss(params, cfg, val_masked, val_mask, val_labels)
    history: list[tuple[int, float]] = [(0, initial)]
    best = Checkpoint(enc.clone_params(params), cfg, 0, initial)
    one_look: Checkpoint | None = None

    opt_step = 0
    for epoch in range(1, hyper.epochs + 1):
        order = loop_rng.permutation(n_train)
        micro_slices = [
            order[i : i + hyper.micro_batch]
            for i in range(0, n_train, hyper.micro_batch)
        ]
        for gstart in range(0, len(micro_slices), hyper.accumulation_steps):
            group = micro_slices[gstart : gstart + hyper.accumulation_steps]
            acc_grads = enc.zero_grads(params)
            for sel in group:
                m_ids, m_labels = _mask_blocks(
                    train_ids[sel], train_mask[sel], policy, loop_rng, cfg.vocab_size
                )
                loss, grads, _ = mlm_batch_loss(
                    params, cfg, m_ids, train_mask[sel], m_labels,
                    train_mode=True, rng=loop_rng,
                )
                if not math.isfinite(loss):
                    raise DivergedLoss(f"training loss diverged at epoch {epoch}")
                for name in acc_grads:
                    acc_grads[name] += grads[name]
            inv = 1.0 / len(group)
            for name in acc_grads:
                acc_grads[name] *= inv
            opt_step += 1
            lr = lr_schedule(opt_step, total_steps, hyper.peak_lr, hyper.warmup_frac)
            params, state = adamw_step(params, acc_grads, state, lr)

        vloss = validation_loss(params, cfg, val_masked, val_mask, val_labels)
        if not math.isfinite(vloss):
            raise DivergedLoss(f"validation loss diverged at epoch {epoch}")
        history.append((epoch, vloss))
        if epoch == 1:
            one_look = Checkpoint(enc.clone_params(params), cfg, 1, vloss)
        if vloss < best.val_loss:
            best = Checkpoint(enc.clone_params(params), cfg, epoch, vloss)

    complete = Checkpoint(params, cfg, hyper.epochs, history[-1][1])
    assert one_look is not None
    result = CheckpointSet(one_look, best, complete, history)
    if hyper.checkpoint_dir:
        write_checkpoint_set(result, hyper.checkpoint_dir)
    return result


def write_checkpoint_set(result: CheckpointSet, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    for name, ckpt in (
        ("one_look", result.one_look),
        ("best_loss", result.best_loss),
        ("complete", result.complete),
    ):
        enc.save_checkpoint(
            {k: v.astype(np.float32) for k, v in ckpt.params.items()},
            ckpt.cfg,
            os.path.join(directory, f"{name}.ctxf"),
        )
    with open(os.path.join(directory, "loss_history.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "val_loss"])
        for epoch, loss in result.loss_history:
            writer.writerow([epoch, f"{loss:.6f}"])
