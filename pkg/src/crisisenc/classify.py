"""Classification fine-tuning: stratified splits, training with early
stopping on validation macro-F1, prediction, and the F1 metric itself."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from . import pooling
from .bpe import TokenizerModel
from .contrastive import _embed_batch, tokenize_texts
from .errors import (
    ClassTooSmall,
    DivergedLoss,
    EmptyInput,
    LengthMismatch,
)
from .mlm import adamw_step, init_adamw

HEAD_W = "classifier.w"
HEAD_B = "classifier.b"


@dataclass
class LabeledDataset:
    texts: list[str]
    labels: np.ndarray
    class_names: list[str]

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, np.int64)
        if len(self.texts) != self.labels.shape[0]:
            raise ValueError("texts and labels must have equal length")
        c = len(self.class_names)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= c):
            raise ValueError("labels must lie in 0..C-1")

    def __len__(self) -> int:
        return len(self.texts)

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(
            [self.texts[i] for i in indices],
            self.labels[indices],
            self.class_names,
        )


def read_labeled_tsv(path: str) -> LabeledDataset:
    """TSV with a header row, then ``text<TAB>label_name`` rows."""
    texts: list[str] = []
    names: list[str] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise EmptyInput(f"{path} is empty")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                text, label = line.split("\t")
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: expected 2 fields") from exc
            texts.append(text)
            names.append(label)
    class_names = sorted(set(names))
    index = {name: i for i, name in enumerate(class_names)}
    labels = np.array([index[n] for n in names], np.int64)
    return LabeledDataset(texts, labels, class_names)


def stratified_split(
    dataset: LabeledDataset,
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 42,
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Per-class split into train/val/test at the given ratios.

    Class allocations use largest-remainder rounding, so every class
    matches its exact proportions within one sample. The partition is
    exact and deterministic for a given seed.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    for k in range(len(dataset.class_names)):
        members = np.flatnonzero(dataset.labels == k)
        if members.size < 3:
            raise ClassTooSmall(
                f"class {dataset.class_names[k]!r} has {members.size} samples; "
                "need at least 3"
            )
        members = members[rng.permutation(members.size)]
        exact = [members.size * r for r in ratios]
        counts = [int(x) for x in exact]
        remainder = members.size - sum(counts)
        order = sorted(range(3), key=lambda i: (-(exact[i] - counts[i]), i))
        for i in order[:remainder]:
            counts[i] += 1
        a, b = counts[0], counts[0] + counts[1]
        parts[0].append(members[:a])
        parts[1].append(members[a:b])
        parts[2].append(members[b:])
    out = []
    for bucket in parts:
        idx = np.sort(np.concatenate(bucket)) if bucket else np.empty(0, np.int64)
        out.append(dataset.subset(idx))
    return out[0], out[1], out[2]


def f1_macro(y_true, y_pred, num_classes: int) -> float:
    """Macro-averaged F1 from the per-class precision/recall definitions.

    A class with zero precision+recall contributes F1 = 0; the average
    runs over all ``num_classes`` classes.
    """
    y_true = np.asarray(y_true, np.int64)
    y_pred = np.asarray(y_pred, np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1 or y_true.size == 0:
        raise LengthMismatch("y_true and y_pred must be equal-length 1-D, non-empty")
    if y_true.min() < 0 or y_true.max() >= num_classes or \
       y_pred.min() < 0 or y_pred.max() >= num_classes:
        raise ValueError("class ids must lie in 0..num_classes-1")
    confusion = np.bincount(
        y_true * num_classes + y_pred, minlength=num_classes * num_classes
    ).reshape(num_classes, num_classes)
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2 * precision * recall / np.where(pr > 0, pr, 1.0), 0.0)
    return float(f1.mean())


# ---------------------------------------------------------------------------
# Fine-tuning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EarlyStopConfig:
    patience: int = 5
    threshold: float = 1e-4
    max_epochs: int = 30

    def __post_init__(self) -> None:
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")


@dataclass
class FinetuneHyper:
    batch_size: int = 32
    learning_rate: float = 1e-5
    weight_decay: float = 0.01
    seed: int = 0


@dataclass
class TextClassifier:
    """Encoder + linear head over the attention-aware mean-pooled output."""

    params: dict[str, np.ndarray]
    cfg: enc.EncoderConfig
    tokenizer: TokenizerModel
    class_names: list[str]
    val_history: list[float] = field(default_factory=list)


def _softmax_xent_grad(logits, labels):
    n = logits.shape[0]
    m = logits.max(-1, keepdims=True)
    e = np.exp(logits - m)
    probs = e / e.sum(-1, keepdims=True)
    lse = m[:, 0] + np.log(e.sum(-1))
    loss = float(np.mean(lse - logits[np.arange(n), labels]))
    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def _classifier_logits(params, cfg, sequences, train_mode=False, rng=None):
    pooled, hidden, tape, batch = _embed_batch(
        params, cfg, sequences, pooling.MEAN_WITH_ATTENTION,
        train_mode=train_mode, rng=rng,
    )
    logits = pooled @ params[HEAD_W] + params[HEAD_B]
    return logits, pooled, hidden, tape, batch


def finetune(
    pretrained_params: dict[str, np.ndarray],
    cfg: enc.EncoderConfig,
    tokenizer: TokenizerModel,
    dataset: LabeledDataset,
    early_stop: EarlyStopConfig = EarlyStopConfig(),
    hyper: FinetuneHyper = FinetuneHyper(),
    splits: tuple[LabeledDataset, LabeledDataset, LabeledDataset] | None = None,
) -> TextClassifier:
    """Fine-tune the full encoder plus a fresh linear head.

    Training stops once validation macro-F1 fails to improve by more than
    the threshold for ``patience`` consecutive epochs; the classifier
    keeps the final (last-epoch) parameters, not the best ones.
    """
    num_classes = len(dataset.class_names)
    if num_classes < 2:
        raise ValueError("need at least two classes")
    train, val, _test = splits if splits is not None else stratified_split(dataset)

    rng = np.random.default_rng(hyper.seed)
    params = enc.clone_params(pretrained_params)
    params[HEAD_W] = rng.normal(
        0.0, enc.INIT_STD, (cfg.hidden_size, num_classes)
    ).astype(pretrained_params["embed.token"].dtype)
    params[HEAD_B] = np.zeros(num_classes, params[HEAD_W].dtype)

    max_len = cfg.max_position_embeddings
    train_seqs = tokenize_texts(tokenizer, train.texts, max_len)
    val_seqs = tokenize_texts(tokenizer, val.texts, max_len)
    state = init_adamw(params, weight_decay=hyper.weight_decay)

    def val_score() -> float:
        preds = _predict_sequences(params, cfg, val_seqs)
        return f1_macro(val.labels, preds, num_classes)

    best = -math.inf
    bad_epochs = 0
    history: list[float] = []
    n = len(train_seqs)
    for _epoch in range(early_stop.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            sel = order[start : start + hyper.batch_size]
            seqs = [train_seqs[i] for i in sel]
            labels = train.labels[sel]
            logits, pooled, hidden, tape, batch = _classifier_logits(
                params, cfg, seqs, train_mode=True, rng=rng
            )
            loss, dlogits = _softmax_xent_grad(logits, labels)
            if not math.isfinite(loss):
                raise DivergedLoss("fine-tuning loss diverged")
            grads = enc.zero_grads(params)
            grads[HEAD_W] += pooled.T @ dlogits
            grads[HEAD_B] += dlogits.sum(0)
            dpooled = dlogits @ params[HEAD_W].T
            d_hidden = pooling.mean_attention_pool_backward(
                dpooled.astype(hidden.dtype), batch.attention_mask
            )
            g = enc.backward(tape, d_hidden)
            for name in g:
                grads[name] += g[name]
            params, state = adamw_step(params, grads, state, hyper.learning_rate)
        score = val_score()
        history.append(score)
        if score > best + early_stop.threshold:
            best = score
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= early_stop.patience:
                break
    return TextClassifier(params, cfg, tokenizer, dataset.class_names, history)


def _predict_sequences(params, cfg, sequences, batch_size: int = 64) -> np.ndarray:
    preds = []
    for start in range(0, len(sequences), batch_size):
        logits, *_ = _classifier_logits(
            params, cfg, sequences[start : start + batch_size]
        )
        preds.append(np.argmax(logits, axis=1))  # argmax ties -> lowest id
    return np.concatenate(preds)


def predict(clf: TextClassifier, texts: list[str]) -> np.ndarray:
    """Class ids for ``texts`` in input order."""
    if not texts:
        raise EmptyInput("no texts to classify")
    seqs = tokenize_texts(clf.tokenizer, texts, clf.cfg.max_position_embeddings)
    return _predict_sequences(clf.params, clf.cfg, seqs)


def early_stop_trace(scores: list[float], config: EarlyStopConfig) -> int:
    """Number of epochs a run would execute for a scripted score sequence.

    Mirrors the stopping rule used by :func:`finetune`; exposed so the
    rule itself is testable without training.
    """
    best = -math.inf
    bad = 0
    for epoch, score in enumerate(scores[: config.max_epochs], start=1):
        if score > best + config.threshold:
            best = score
            bad = 0
        else:
            bad += 1
            if bad >= config.patience:
                return epoch
    return min(len(scores), config.max_epochs)


def repeat_finetune(
    pretrained_params,
    cfg,
    tokenizer,
    dataset: LabeledDataset,
    early_stop: EarlyStopConfig = EarlyStopConfig(),
    hyper: FinetuneHyper = FinetuneHyper(),
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
    split_seed: int = 42,
    dataset_name: str = "dataset",
) -> dict:
    """Repeat fine-tuning across seeds; report test macro-F1 mean with a
    95% confidence interval (1.96 * sample std / sqrt(n))."""
    splits = stratified_split(dataset, seed=split_seed)
    _train, _val, test = splits
    scores = []
    for seed in seeds:
        run_hyper = FinetuneHyper(
            batch_size=hyper.batch_size,
            learning_rate=hyper.learning_rate,
            weight_decay=hyper.weight_decay,
            seed=seed,
        )
        clf = finetune(
            pretrained_params, cfg, tokenizer, dataset,
            early_stop=early_stop, hyper=run_hyper, splits=splits,
        )
        preds = predict(clf, test.texts)
        scores.append(f1_macro(test.labels, preds, len(dataset.class_names)))
    arr = np.asarray(scores, np.float64)
    ci = 1.96 * arr.std(ddof=1) / math.sqrt(arr.size) if arr.size > 1 else 0.0
    return {
        "dataset": dataset_name,
        "seeds": list(seeds),
        "f1_per_seed": [float(s) for s in scores],
        "mean": float(arr.mean()),
        "ci95": float(ci),
    }
