"""Exception types shared across the toolkit."""


class CrisisEncError(Exception):
    """Base class for all toolkit errors."""


# --- text preprocessing ---

class IrreparableEncoding(CrisisEncError, ValueError):
    """Input bytes cannot be decoded/normalized to UTF-8."""


# --- tokenizer ---

class EmptyCorpus(CrisisEncError, ValueError):
    """Tokenizer training corpus contains no trainable bytes."""


class IdOutOfRange(CrisisEncError, ValueError):
    """A token id falls outside the model's vocabulary."""


# --- encoder ---

class SequenceTooLong(CrisisEncError, ValueError):
    """Batch sequence length exceeds max_position_embeddings."""


class AllMasked(CrisisEncError, ValueError):
    """An attention mask row has no attended positions."""


class StaleTape(CrisisEncError, RuntimeError):
    """backward() was called on a tape that has already been consumed."""


class CorruptCheckpoint(CrisisEncError, ValueError):
    """Checkpoint file is truncated or structurally invalid."""


class VersionMismatch(CrisisEncError, ValueError):
    """Checkpoint header declares an unsupported format version."""


# --- training ---

class NoMaskedPositions(CrisisEncError, ValueError):
    """MLM loss requested over zero selected positions."""


class ShapeMismatch(CrisisEncError, ValueError):
    """Parameter and gradient tensors disagree in name or shape."""


class DivergedLoss(CrisisEncError, RuntimeError):
    """Training loss became NaN or infinite."""


class ZeroVector(CrisisEncError, ValueError):
    """Cosine similarity is undefined for a zero-norm embedding row."""


class ObjectiveDatasetMismatch(CrisisEncError, ValueError):
    """Contrastive dataset shape does not match the selected objective."""


class EmptyInput(CrisisEncError, ValueError):
    """An operation received no usable input texts."""


# --- classification / evaluation ---

class ClassTooSmall(CrisisEncError, ValueError):
    """A class has too few samples for a stratified split."""


class LengthMismatch(CrisisEncError, ValueError):
    """Prediction and label vectors differ in length."""


class EmptyClass(CrisisEncError, ValueError):
    """A class id in 0..K-1 has no members."""


class UnknownClass(CrisisEncError, ValueError):
    """Requested class id is outside 0..K-1."""


# --- CLI ---

class UsageError(CrisisEncError, ValueError):
    """Command line was malformed; synopsis should be printed."""
