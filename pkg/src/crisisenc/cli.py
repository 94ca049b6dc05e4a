"""Command-line interface.

Exit codes: 0 success, 1 usage error (synopsis on stderr), 2 runtime
error. All file outputs are written atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import bpe, classify, contrastive, evalmetrics, mlm, pooling, textprep
from . import encoder as enc
from .errors import UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we own the exit codes
        raise UsageError(message)


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_json(path: str, payload: dict) -> None:
    _atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def _emit_json(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if out:
        _atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_preprocess(args) -> int:
    kept = []
    for raw in textprep.read_raw_corpus(args.infile):
        clean = textprep.preprocess_tweet(raw)
        if textprep.passes_length_filter(clean, args.min_tokens):
            kept.append(clean)
    _atomic_write_text(args.out, "".join(t + "\n" for t in kept))
    sys.stderr.write(f"kept {len(kept)} tweets\n")
    return 0


def _cmd_stats(args) -> int:
    tweets = [line for line in textprep.read_raw_corpus(args.infile)]
    stats = textprep.corpus_stats(tweets)
    _emit_json(stats.to_dict(), args.out)
    return 0


def _cmd_train_tokenizer(args) -> int:
    corpus = list(textprep.read_raw_corpus(args.infile))
    model = bpe.train_bpe(corpus, args.vocab_size)
    bpe.save_tokenizer(model, args.out_dir)
    sys.stderr.write(f"trained vocabulary of {model.vocab_size} tokens\n")
    return 0


def _cmd_pack(args) -> int:
    tokenizer = bpe.load_tokenizer(args.tokenizer)
    tweets = textprep.read_raw_corpus(args.infile)
    stream = bpe.corpus_token_stream(tokenizer, tweets)
    blocks = bpe.pack_blocks(stream, args.block_len)
    ids = np.stack([b.ids for b in blocks]) if blocks else np.empty((0, args.block_len), np.int32)
    mask = np.stack([b.attention_mask for b in blocks]) if blocks else np.empty((0, args.block_len), np.int8)
    directory = os.path.dirname(os.path.abspath(args.out)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".npz")
    os.close(fd)
    try:
        np.savez(tmp, ids=ids, attention_mask=mask)
        os.replace(tmp, args.out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    sys.stderr.write(f"packed {ids.shape[0]} blocks of {args.block_len}\n")
    return 0


def _load_blocks(path: str) -> list[bpe.TokenBlock]:
    with np.load(path) as data:
        ids = data["ids"]
        mask = data["attention_mask"]
    return [
        bpe.TokenBlock(ids=ids[i].astype(np.int32), attention_mask=mask[i].astype(np.int8))
        for i in range(ids.shape[0])
    ]


_PRETRAIN_CONFIG_KEYS = (
    "epochs", "micro_batch", "accumulation_steps", "peak_lr",
    "warmup_frac", "mask_prob", "seed", "checkpoint_dir",
)


def _cmd_pretrain(args) -> int:
    settings: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(_PRETRAIN_CONFIG_KEYS)
        if unknown:
            raise UsageError(f"unknown pretrain config keys: {sorted(unknown)}")
        settings.update(loaded)
    for key in _PRETRAIN_CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if not settings.get("checkpoint_dir"):
        raise UsageError("checkpoint_dir is required (config key or --checkpoint-dir)")

    tokenizer = bpe.load_tokenizer(args.tokenizer)
    cfg_fields: dict = {"vocab_size": tokenizer.vocab_size}
    if args.model_config:
        with open(args.model_config, encoding="utf-8") as fh:
            cfg_fields.update(json.load(fh))
    cfg = enc.EncoderConfig(**cfg_fields)

    hyper = mlm.PretrainHyper(**settings)
    train_blocks = _load_blocks(args.train)
    val_blocks = _load_blocks(args.val)
    result = mlm.pretrain(train_blocks, val_blocks, cfg, hyper)
    best_epoch = result.best_loss.epoch
    sys.stderr.write(
        f"initial loss {result.loss_history[0][1]:.4f}, "
        f"best {result.best_loss.val_loss:.4f} at epoch {best_epoch}, "
        f"final {result.complete.val_loss:.4f}\n"
    )
    return 0


def _cmd_train_encoder(args) -> int:
    params, cfg = enc.load_checkpoint(args.checkpoint)
    tokenizer = bpe.load_tokenizer(args.tokenizer)
    objective = {"mnr": contrastive.OBJECTIVE_MNR,
                 "mnr-hard": contrastive.OBJECTIVE_MNR_HARD}[args.objective]
    if objective == contrastive.OBJECTIVE_MNR:
        dataset: list[tuple[str, ...]] = contrastive.read_pair_tsv(args.data)
    else:
        dataset = contrastive.read_triplet_tsv(args.data)
    hyper = contrastive.ContrastiveHyper(
        objective=objective,
        temperature=args.temperature,
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.lr,
        seed=args.seed,
    )
    se = contrastive.train_encoder(params, cfg, tokenizer, dataset, hyper)
    se.save(args.out_dir)
    sys.stderr.write(f"sentence encoder saved to {args.out_dir}\n")
    return 0


def _cmd_finetune(args) -> int:
    params, cfg = enc.load_checkpoint(args.checkpoint)
    tokenizer = bpe.load_tokenizer(args.tokenizer)
    dataset = classify.read_labeled_tsv(args.data)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    report = classify.repeat_finetune(
        params, cfg, tokenizer, dataset,
        early_stop=classify.EarlyStopConfig(
            patience=args.patience, threshold=args.threshold,
            max_epochs=args.max_epochs,
        ),
        hyper=classify.FinetuneHyper(
            batch_size=args.batch_size, learning_rate=args.lr
        ),
        seeds=seeds,
        dataset_name=os.path.basename(args.data),
    )
    _emit_json(report, args.out)
    return 0


def _read_labels_file(path: str) -> tuple[np.ndarray, list[str]]:
    with open(path, encoding="utf-8") as fh:
        raw = [line.rstrip("\n") for line in fh if line.strip()]
    names = sorted(set(raw))
    index = {n: i for i, n in enumerate(names)}
    return np.array([index[r] for r in raw], np.int64), names


def _cmd_evaluate_davg(args) -> int:
    embeddings = np.loadtxt(args.embeddings, delimiter="\t", ndmin=2)
    labels, names = _read_labels_file(args.labels)
    le = evalmetrics.LabeledEmbeddings(embeddings, labels, len(names))
    report = evalmetrics.d_avg_report(le, include_self=args.include_self,
                                      class_names=names)
    _emit_json(report, args.out)
    return 0


def _cmd_bench(args) -> int:
    se = contrastive.SentenceEncoder.load(args.encoder_dir)
    se.pooling_strategy = pooling.CLI_NAMES[args.pooling]
    with open(args.texts, encoding="utf-8") as fh:
        texts = [line.rstrip("\n") for line in fh if line.strip()]
    reports = evalmetrics.timing_bench(se, texts, args.repetitions)
    _emit_json({task: r.to_dict() for task, r in reports.items()}, args.out)
    return 0


def _cmd_vocab_diff(args) -> int:
    a = bpe.load_tokenizer(args.a)
    b = bpe.load_tokenizer(args.b)
    intersection, unique_in_a = bpe.vocab_intersection(a, b)
    _emit_json({"intersection": intersection, "unique_in_a": unique_in_a}, args.out)
    return 0


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="crisisenc",
                     description="Crisis-tweet encoder toolkit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("preprocess", help="normalize and filter a raw corpus")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-tokens", type=int, default=10)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("stats", help="corpus statistics as JSON")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("train-tokenizer", help="train the byte-level BPE model")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--vocab-size", type=int, default=64000)
    p.set_defaults(func=_cmd_train_tokenizer)

    p = sub.add_parser("pack", help="tokenize a corpus into fixed blocks")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--block-len", type=int, default=128)
    p.set_defaults(func=_cmd_pack)

    p = sub.add_parser("pretrain", help="masked-LM pre-training")
    p.add_argument("--train", required=True, help="training blocks (.npz)")
    p.add_argument("--val", required=True, help="validation blocks (.npz)")
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--model-config", help="JSON encoder architecture overrides")
    p.add_argument("--epochs", type=int)
    p.add_argument("--micro-batch", dest="micro_batch", type=int)
    p.add_argument("--accumulation-steps", dest="accumulation_steps", type=int)
    p.add_argument("--peak-lr", dest="peak_lr", type=float)
    p.add_argument("--warmup-frac", dest="warmup_frac", type=float)
    p.add_argument("--mask-prob", dest="mask_prob", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-dir", dest="checkpoint_dir")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("train-encoder", help="contrastive sentence-encoder training")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--data", required=True, help="pair or triplet TSV")
    p.add_argument("--objective", choices=("mnr", "mnr-hard"), default="mnr-hard")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--temperature", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=2e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train_encoder)

    p = sub.add_parser("finetune", help="classification fine-tuning over seeds")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--data", required=True, help="labeled TSV with header")
    p.add_argument("--out", help="results JSON path (default: stdout)")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--max-epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("evaluate-davg", help="embedding quality metric")
    p.add_argument("--embeddings", required=True, help="TSV, one row per sentence")
    p.add_argument("--labels", required=True, help="one label per line")
    p.add_argument("--include-self", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_evaluate_davg)

    p = sub.add_parser("bench", help="tokenization/embedding timing report")
    p.add_argument("--encoder-dir", required=True)
    p.add_argument("--texts", required=True)
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--pooling", choices=sorted(pooling.CLI_NAMES), default="mean")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("vocab-diff", help="vocabulary intersection of two tokenizers")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_vocab_diff)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("a subcommand is required")
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        sys.stderr.write(parser.format_usage())
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
