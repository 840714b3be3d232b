"""Exception hierarchy shared across the package.

Every error raised on a documented contract boundary derives from
``GlossRecError`` so the CLI can map any failure to a one-line diagnostic
and a nonzero exit code.
"""


class GlossRecError(Exception):
    """Base class for all library errors."""


# tensor / graph

class ShapeMismatchError(GlossRecError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(GlossRecError):
    """An operation produced (or received) NaN or an unexpected infinity."""


class NotScalarError(GlossRecError):
    """backward() was started from a non-scalar tensor."""


class GraphConsumedError(GlossRecError):
    """backward() was called twice on the same graph root."""


# model components

class EmptySequenceError(GlossRecError):
    """A sequence operation received zero time steps."""


class UnknownGlossError(GlossRecError):
    """A gloss id or token is outside the vocabulary."""


class NotNormalizedError(GlossRecError):
    """Rows expected to be probability vectors do not sum to one."""


# CTC

class EmptyTargetError(GlossRecError):
    """CTC target sequence is empty."""


class InfeasibleTargetError(GlossRecError):
    """Too few frames to emit the target under CTC collapse rules."""


class EnumerationTooLargeError(GlossRecError):
    """Brute-force path enumeration would exceed the instance-size guard."""


# objectives

class NonPositiveSigmaError(GlossRecError):
    """Gaussian scale parameter must be strictly positive."""


class LengthMismatchError(GlossRecError):
    """Paired sequences have different lengths."""


class BatchMismatchError(GlossRecError):
    """Pooled feature batches disagree in batch size or width."""


class AllMaskedError(GlossRecError):
    """A sample has no unmasked time step to pool over."""


class NegativeWeightError(GlossRecError):
    """Loss weights must be nonnegative."""


# metrics

class EmptyReferenceError(GlossRecError):
    """WER is undefined over an empty reference corpus."""


# corpus / files

class InvalidConfigError(GlossRecError):
    """A configuration value is out of its documented range."""


class AnnotationParseError(GlossRecError):
    """Malformed annotation line; message names the offending line."""


class BadMagicError(GlossRecError):
    """Binary file does not start with the expected magic bytes."""


class TruncatedFileError(GlossRecError):
    """Binary file ended before the declared payload was complete."""


# pipeline

class CorpusMissingError(GlossRecError):
    """Required corpus files are absent."""


class CheckpointIncompatibleError(GlossRecError):
    """Checkpoint entries are missing or shaped differently than the model."""


class SplitMissingError(GlossRecError):
    """Requested split contains no samples."""


class SampleMissingError(GlossRecError):
    """Requested sample id is not in the corpus."""
