"""Miniature BERT-style encoder with explicit reverse-mode gradients.

The forward pass records every intermediate needed for an exact backward
pass on a tape; no autodiff framework is involved. All math follows the
dtype of the parameter tensors, so tests can run the whole graph in
float64 for finite-difference comparisons while checkpoints stay float32.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
from scipy.special import erf

from .errors import (
    AllMasked,
    CorruptCheckpoint,
    IdOutOfRange,
    SequenceTooLong,
    StaleTape,
    VersionMismatch,
)

INIT_STD = 0.02

CHECKPOINT_MAGIC = b"CTXF"
CHECKPOINT_VERSION = 1


@dataclass
class EncoderConfig:
    """Architecture configuration (field names follow the usual convention)."""

    hidden_size: int = 64
    num_hidden_layers: int = 2
    num_attention_heads: int = 4
    intermediate_size: int = 256
    max_position_embeddings: int = 130
    vocab_size: int = 2005
    hidden_dropout_prob: float = 0.1
    attention_probs_dropout_prob: float = 0.1
    layer_norm_eps: float = 1e-5
    hidden_act: str = "gelu"

    def __post_init__(self) -> None:
        if self.hidden_act != "gelu":
            raise ValueError("only gelu activation is supported")
        for name in (
            "hidden_size",
            "num_hidden_layers",
            "num_attention_heads",
            "intermediate_size",
            "max_position_embeddings",
            "vocab_size",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.hidden_size % self.num_attention_heads:
            raise ValueError("hidden_size must be divisible by num_attention_heads")
        for name in ("hidden_dropout_prob", "attention_probs_dropout_prob"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.layer_norm_eps <= 0:
            raise ValueError("layer_norm_eps must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_attention_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        return cls(**data)


@dataclass(frozen=True)
class EncodedBatch:
    """Token-id matrix [B, L] with a binary attention mask of equal shape."""

    ids: np.ndarray
    attention_mask: np.ndarray

    def __post_init__(self) -> None:
        if self.ids.shape != self.attention_mask.shape or self.ids.ndim != 2:
            raise ValueError("ids and attention_mask must share a 2-D shape")
        if not np.isin(self.attention_mask, (0, 1)).all():
            raise ValueError("attention mask entries must be 0 or 1")


def batch_from_sequences(
    sequences: Sequence[Sequence[int]], pad_id: int, max_len: int | None = None
) -> EncodedBatch:
    """Right-pad variable-length id sequences into an EncodedBatch."""
    if max_len is None:
        max_len = max((len(s) for s in sequences), default=0)
    max_len = max(max_len, 1)
    ids = np.full((len(sequences), max_len), pad_id, np.int32)
    mask = np.zeros((len(sequences), max_len), np.int8)
    for i, seq in enumerate(sequences):
        n = min(len(seq), max_len)
        ids[i, :n] = seq[:n]
        mask[i, :n] = 1
    return EncodedBatch(ids=ids, attention_mask=mask)


# ---------------------------------------------------------------------------
# Parameter construction
# ---------------------------------------------------------------------------

def param_names(cfg: EncoderConfig) -> list[str]:
    names = ["embed.token", "embed.position", "embed.ln.g", "embed.ln.b"]
    for i in range(cfg.num_hidden_layers):
        p = f"layer{i}"
        names += [
            f"{p}.attn.wq", f"{p}.attn.bq",
            f"{p}.attn.wk", f"{p}.attn.bk",
            f"{p}.attn.wv", f"{p}.attn.bv",
            f"{p}.attn.wo", f"{p}.attn.bo",
            f"{p}.attn.ln.g", f"{p}.attn.ln.b",
            f"{p}.ffn.w1", f"{p}.ffn.b1",
            f"{p}.ffn.w2", f"{p}.ffn.b2",
            f"{p}.ffn.ln.g", f"{p}.ffn.ln.b",
        ]
    # Output side of the MLM objective; the decoder projection is tied to
    # the token embedding matrix, so only dense/norm/bias tensors appear.
    names += ["head.dense.w", "head.dense.b", "head.ln.g", "head.ln.b", "head.bias"]
    return names


def init_params(cfg: EncoderConfig, seed: int) -> dict[str, np.ndarray]:
    """Fresh float32 parameters: weights ~ N(0, 0.02), biases 0, LN (1, 0).

    Weight tensors are drawn in a fixed order so identical (cfg, seed)
    yield byte-identical parameters.
    """
    rng = np.random.default_rng(seed)
    H, I = cfg.hidden_size, cfg.intermediate_size

    def normal(*shape):
        return rng.normal(0.0, INIT_STD, size=shape).astype(np.float32)

    params: dict[str, np.ndarray] = {
        "embed.token": normal(cfg.vocab_size, H),
        "embed.position": normal(cfg.max_position_embeddings, H),
        "embed.ln.g": np.ones(H, np.float32),
        "embed.ln.b": np.zeros(H, np.float32),
    }
    for i in range(cfg.num_hidden_layers):
        p = f"layer{i}"
        params[f"{p}.attn.wq"] = normal(H, H)
        params[f"{p}.attn.bq"] = np.zeros(H, np.float32)
        params[f"{p}.attn.wk"] = normal(H, H)
        params[f"{p}.attn.bk"] = np.zeros(H, np.float32)
        params[f"{p}.attn.wv"] = normal(H, H)
        params[f"{p}.attn.bv"] = np.zeros(H, np.float32)
        params[f"{p}.attn.wo"] = normal(H, H)
        params[f"{p}.attn.bo"] = np.zeros(H, np.float32)
        params[f"{p}.attn.ln.g"] = np.ones(H, np.float32)
        params[f"{p}.attn.ln.b"] = np.zeros(H, np.float32)
        params[f"{p}.ffn.w1"] = normal(H, I)
        params[f"{p}.ffn.b1"] = np.zeros(I, np.float32)
        params[f"{p}.ffn.w2"] = normal(I, H)
        params[f"{p}.ffn.b2"] = np.zeros(H, np.float32)
        params[f"{p}.ffn.ln.g"] = np.ones(H, np.float32)
        params[f"{p}.ffn.ln.b"] = np.zeros(H, np.float32)
    params["head.dense.w"] = normal(H, H)
    params["head.dense.b"] = np.zeros(H, np.float32)
    params["head.ln.g"] = np.ones(H, np.float32)
    params["head.ln.b"] = np.zeros(H, np.float32)
    params["head.bias"] = np.zeros(cfg.vocab_size, np.float32)
    return params


def zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def clone_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in params.items()}


# ---------------------------------------------------------------------------
# Primitive ops with explicit backward rules
# ---------------------------------------------------------------------------

def gelu(x: np.ndarray) -> np.ndarray:
    """Exact erf formulation: 0.5 x (1 + erf(x / sqrt(2)))."""
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return cdf + x * pdf


def _layernorm_fwd(x, g, b, eps):
    mu = x.mean(-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return xhat * g + b, (xhat, inv_std)


def _layernorm_bwd(dy, cache, g):
    xhat, inv_std = cache
    dxhat = dy * g
    dg = (dy * xhat).sum(tuple(range(dy.ndim - 1)))
    db = dy.sum(tuple(range(dy.ndim - 1)))
    mean_dxhat = dxhat.mean(-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(-1, keepdims=True)
    dx = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv_std
    return dx, dg, db


def _dropout_fwd(x, p, train_mode, rng):
    if not train_mode or p == 0.0:
        return x, None
    keep = rng.random(x.shape) >= p
    scale = 1.0 / (1.0 - p)
    return x * keep * scale, (keep, scale)


def _dropout_bwd(dy, cache):
    if cache is None:
        return dy
    keep, scale = cache
    return dy * keep * scale


def _split_heads(x, n_heads):
    b, l, h = x.shape
    return x.reshape(b, l, n_heads, h // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, nh, l, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, nh * hd)


def _flat_sum(x):
    return x.sum(axis=(0, 1))


def _weight_grad(inp, dout):
    # inp [B,L,P], dout [B,L,Q] -> [P,Q]
    return np.tensordot(inp, dout, axes=([0, 1], [0, 1]))


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

class Tape:
    """Recorded intermediates of one forward pass; consumed by backward()."""

    def __init__(self, params, cfg, batch, train_mode):
        self.params = params
        self.cfg = cfg
        self.batch = batch
        self.train_mode = train_mode
        self.embed_cache = None
        self.layer_caches: list[dict] = []
        self.consumed = False


def forward(
    params: dict[str, np.ndarray],
    cfg: EncoderConfig,
    batch: EncodedBatch,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, Tape]:
    """Run the encoder; returns token embeddings [B, L, H] and the tape.

    Masked-out key positions receive an additive -inf pre-softmax bias, so
    they carry exactly zero attention weight and cannot influence attended
    positions.
    """
    ids, mask = batch.ids, batch.attention_mask
    B, L = ids.shape
    if L > cfg.max_position_embeddings:
        raise SequenceTooLong(
            f"sequence length {L} exceeds max_position_embeddings "
            f"{cfg.max_position_embeddings}"
        )
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise IdOutOfRange("token ids outside [0, vocab_size)")
    if (mask.sum(axis=1) == 0).any():
        raise AllMasked("every sequence needs at least one attended position")
    dropout_active = train_mode and (
        cfg.hidden_dropout_prob > 0 or cfg.attention_probs_dropout_prob > 0
    )
    if dropout_active and rng is None:
        raise ValueError("train_mode with dropout requires an rng")

    dtype = params["embed.token"].dtype
    eps = cfg.layer_norm_eps
    tape = Tape(params, cfg, batch, train_mode)

    # -inf additive bias on masked keys; exp() maps it to exactly 0.
    key_bias = np.where(
        mask[:, None, None, :] == 1,
        np.asarray(0.0, dtype),
        np.asarray(-np.inf, dtype),
    )

    emb = params["embed.token"][ids] + params["embed.position"][:L][None, :, :]
    y0, ln_cache = _layernorm_fwd(emb, params["embed.ln.g"], params["embed.ln.b"], eps)
    x, drop_cache = _dropout_fwd(y0, cfg.hidden_dropout_prob, train_mode, rng)
    tape.embed_cache = {"ln": ln_cache, "drop": drop_cache}

    scale = 1.0 / np.sqrt(cfg.head_dim)
    for i in range(cfg.num_hidden_layers):
        p = f"layer{i}"
        q = x @ params[f"{p}.attn.wq"] + params[f"{p}.attn.bq"]
        k = x @ params[f"{p}.attn.wk"] + params[f"{p}.attn.bk"]
        v = x @ params[f"{p}.attn.wv"] + params[f"{p}.attn.bv"]
        qh = _split_heads(q, cfg.num_attention_heads)
        kh = _split_heads(k, cfg.num_attention_heads)
        vh = _split_heads(v, cfg.num_attention_heads)

        scores = qh @ kh.transpose(0, 1, 3, 2) * scale + key_bias
        scores_max = scores.max(-1, keepdims=True)
        exp_scores = np.exp(scores - scores_max)
        probs = exp_scores / exp_scores.sum(-1, keepdims=True)
        probs_d, attn_drop = _dropout_fwd(
            probs, cfg.attention_probs_dropout_prob, train_mode, rng
        )

        ctx = _merge_heads(probs_d @ vh)
        attn_out = ctx @ params[f"{p}.attn.wo"] + params[f"{p}.attn.bo"]
        attn_out_d, drop1 = _dropout_fwd(
            attn_out, cfg.hidden_dropout_prob, train_mode, rng
        )
        y1, ln1 = _layernorm_fwd(
            x + attn_out_d, params[f"{p}.attn.ln.g"], params[f"{p}.attn.ln.b"], eps
        )

        f1 = y1 @ params[f"{p}.ffn.w1"] + params[f"{p}.ffn.b1"]
        a1 = gelu(f1)
        f2 = a1 @ params[f"{p}.ffn.w2"] + params[f"{p}.ffn.b2"]
        f2_d, drop2 = _dropout_fwd(f2, cfg.hidden_dropout_prob, train_mode, rng)
        y2, ln2 = _layernorm_fwd(
            y1 + f2_d, params[f"{p}.ffn.ln.g"], params[f"{p}.ffn.ln.b"], eps
        )

        tape.layer_caches.append(
            {
                "x": x, "qh": qh, "kh": kh, "vh": vh,
                "probs": probs, "probs_d": probs_d, "attn_drop": attn_drop,
                "ctx": ctx, "drop1": drop1, "y1": y1, "f1": f1, "a1": a1,
                "drop2": drop2, "ln1": ln1, "ln2": ln2,
            }
        )
        x = y2

    return x, tape


def backward(tape: Tape, upstream_grad: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of every parameter for the recorded forward pass.

    Tensors outside the encoder path (the MLM head) come back as zeros.
    The tape is single-use; a second call raises StaleTape.
    """
    if tape.consumed:
        raise StaleTape("tape has already been used by backward()")
    tape.consumed = True

    params, cfg = tape.params, tape.cfg
    ids = tape.batch.ids
    B, L = ids.shape
    grads = zero_grads(params)
    scale = 1.0 / np.sqrt(cfg.head_dim)

    dx = upstream_grad
    for i in reversed(range(cfg.num_hidden_layers)):
        p = f"layer{i}"
        c = tape.layer_caches[i]

        dr2, dg2, db2 = _layernorm_bwd(dx, c["ln2"], params[f"{p}.ffn.ln.g"])
        grads[f"{p}.ffn.ln.g"] += dg2
        grads[f"{p}.ffn.ln.b"] += db2
        dy1 = dr2.copy()
        df2 = _dropout_bwd(dr2, c["drop2"])

        grads[f"{p}.ffn.w2"] += _weight_grad(c["a1"], df2)
        grads[f"{p}.ffn.b2"] += _flat_sum(df2)
        da1 = df2 @ params[f"{p}.ffn.w2"].T
        df1 = da1 * gelu_grad(c["f1"])
        grads[f"{p}.ffn.w1"] += _weight_grad(c["y1"], df1)
        grads[f"{p}.ffn.b1"] += _flat_sum(df1)
        dy1 += df1 @ params[f"{p}.ffn.w1"].T

        dr1, dg1, db1 = _layernorm_bwd(dy1, c["ln1"], params[f"{p}.attn.ln.g"])
        grads[f"{p}.attn.ln.g"] += dg1
        grads[f"{p}.attn.ln.b"] += db1
        dx = dr1.copy()
        dao = _dropout_bwd(dr1, c["drop1"])

        grads[f"{p}.attn.wo"] += _weight_grad(c["ctx"], dao)
        grads[f"{p}.attn.bo"] += _flat_sum(dao)
        dctx = _split_heads(dao @ params[f"{p}.attn.wo"].T, cfg.num_attention_heads)

        dprobs_d = dctx @ c["vh"].transpose(0, 1, 3, 2)
        dvh = c["probs_d"].transpose(0, 1, 3, 2) @ dctx
        dprobs = _dropout_bwd(dprobs_d, c["attn_drop"])
        # softmax backward; masked keys have probs == 0, so no gradient
        # reaches them and the -inf bias never enters the arithmetic.
        probs = c["probs"]
        dscores = probs * (dprobs - (dprobs * probs).sum(-1, keepdims=True))
        dqh = dscores @ c["kh"] * scale
        dkh = dscores.transpose(0, 1, 3, 2) @ c["qh"] * scale

        dq = _merge_heads(dqh)
        dk = _merge_heads(dkh)
        dv = _merge_heads(dvh)
        x_in = c["x"]
        grads[f"{p}.attn.wq"] += _weight_grad(x_in, dq)
        grads[f"{p}.attn.bq"] += _flat_sum(dq)
        grads[f"{p}.attn.wk"] += _weight_grad(x_in, dk)
        grads[f"{p}.attn.bk"] += _flat_sum(dk)
        grads[f"{p}.attn.wv"] += _weight_grad(x_in, dv)
        grads[f"{p}.attn.bv"] += _flat_sum(dv)
        dx += (
            dq @ params[f"{p}.attn.wq"].T
            + dk @ params[f"{p}.attn.wk"].T
            + dv @ params[f"{p}.attn.wv"].T
        )

    ec = tape.embed_cache
    dy0 = _dropout_bwd(dx, ec["drop"])
    de, dg0, db0 = _layernorm_bwd(dy0, ec["ln"], params["embed.ln.g"])
    grads["embed.ln.g"] += dg0
    grads["embed.ln.b"] += db0
    H = cfg.hidden_size
    np.add.at(grads["embed.token"], ids.reshape(-1), de.reshape(-1, H))
    grads["embed.position"][:L] += de.sum(0)
    return grads


# ---------------------------------------------------------------------------
# MLM head (dense -> gelu -> layernorm -> tied decoder)
# ---------------------------------------------------------------------------

def mlm_head_forward(params, cfg, hidden_rows):
    """Vocabulary logits for selected hidden rows [N, H] -> [N, V]."""
    z = hidden_rows @ params["head.dense.w"] + params["head.dense.b"]
    a = gelu(z)
    y, ln_cache = _layernorm_fwd(a, params["head.ln.g"], params["head.ln.b"],
                                 cfg.layer_norm_eps)
    logits = y @ params["embed.token"].T + params["head.bias"]
    return logits, (hidden_rows, z, y, ln_cache)


def mlm_head_backward(params, cache, dlogits, grads):
    """Accumulate head gradients into ``grads``; returns d(hidden_rows)."""
    hidden_rows, z, y, ln_cache = cache
    grads["head.bias"] += dlogits.sum(0)
    grads["embed.token"] += dlogits.T @ y  # tied decoder weight
    dy = dlogits @ params["embed.token"]
    da, dg, db = _layernorm_bwd(dy, ln_cache, params["head.ln.g"])
    grads["head.ln.g"] += dg
    grads["head.ln.b"] += db
    dz = da * gelu_grad(z)
    grads["head.dense.w"] += hidden_rows.T @ dz
    grads["head.dense.b"] += dz.sum(0)
    return dz @ params["head.dense.w"].T


# ---------------------------------------------------------------------------
# Checkpoint persistence
# ---------------------------------------------------------------------------

def _write_checkpoint(fh, params, cfg) -> None:
    cfg_bytes = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    fh.write(CHECKPOINT_MAGIC)
    fh.write(struct.pack("<I", CHECKPOINT_VERSION))
    fh.write(struct.pack("<I", len(cfg_bytes)))
    fh.write(cfg_bytes)
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        name_bytes = name.encode("utf-8")
        fh.write(struct.pack("<H", len(name_bytes)))
        fh.write(name_bytes)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def save_checkpoint(params: dict[str, np.ndarray], cfg: EncoderConfig, path: str) -> None:
    """Binary checkpoint; load(save(x)) is bit-identical for float32 params."""
    buf = io.BytesIO()
    _write_checkpoint(buf, params, cfg)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CorruptCheckpoint(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], EncoderConfig]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CorruptCheckpoint("bad magic bytes")
        version = struct.unpack("<I", _read_exact(fh, 4, "version"))[0]
        if version != CHECKPOINT_VERSION:
            raise VersionMismatch(f"unsupported checkpoint version {version}")
        cfg_len = struct.unpack("<I", _read_exact(fh, 4, "config length"))[0]
        try:
            cfg = EncoderConfig.from_dict(
                json.loads(_read_exact(fh, cfg_len, "config").decode("utf-8"))
            )
        except (ValueError, TypeError) as exc:
            raise CorruptCheckpoint(f"invalid config block: {exc}") from exc
        params: dict[str, np.ndarray] = {}
        while True:
            head = fh.read(2)
            if not head:
                break
            if len(head) != 2:
                raise CorruptCheckpoint("truncated tensor header")
            name_len = struct.unpack("<H", head)[0]
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            rank = struct.unpack("<B", _read_exact(fh, 1, "tensor rank"))[0]
            dims = struct.unpack(
                f"<{rank}Q", _read_exact(fh, 8 * rank, "tensor dims")
            )
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            raw = _read_exact(fh, 4 * count, f"tensor data for {name}")
            params[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    return params, cfg
