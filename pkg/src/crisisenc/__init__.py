"""Crisis-tweet encoder toolkit: normalization, byte-level BPE, a miniature
masked-LM encoder with exact manual gradients, contrastive sentence-encoder
training, classification fine-tuning, and embedding-quality evaluation."""

from . import (  # noqa: F401
    bpe,
    classify,
    contrastive,
    encoder,
    errors,
    evalmetrics,
    mlm,
    pooling,
    textprep,
)

__version__ = "0.1.0"
