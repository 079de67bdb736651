"""Exception hierarchy shared across the pipeline.

Three coarse categories drive CLI exit codes: configuration problems,
data problems, and model/cache binding problems. Everything derives from
``LogmaskError`` so callers can catch the whole family at once.
"""


class LogmaskError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(LogmaskError):
    """Invalid or inconsistent configuration (bad field, missing path)."""


class DataError(LogmaskError):
    """Malformed or unusable input data."""


# --- ingest ---------------------------------------------------------------

class MissingLabelFile(DataError):
    pass


class MalformedLabelRow(DataError):
    pass


class NoNormalRecords(DataError):
    pass


# --- tokenizer ------------------------------------------------------------

class EmptyCorpus(DataError):
    pass


class InvalidTokenId(DataError):
    pass


# --- model ----------------------------------------------------------------

class SequenceTooLong(DataError):
    pass


class ShapeMismatch(LogmaskError):
    pass


class NoMaskedPositions(DataError):
    pass


class DivergedLoss(LogmaskError):
    """Training loss became non-finite."""


# --- scorer / cache -------------------------------------------------------

class VocabMismatch(LogmaskError):
    """Sequence was encoded under a different vocabulary than the model's."""


class EmptyValues(DataError):
    pass


class EmptyGroup(DataError):
    pass


class CheckpointMismatch(LogmaskError):
    """Cache or sequence is bound to a different checkpoint than the one in use."""


class CorruptCacheFile(DataError):
    pass


class CorruptCheckpoint(DataError):
    pass


# --- evaluation -----------------------------------------------------------

class DegenerateLabels(DataError):
    """Metric needs both classes but got only one."""


class UnlabeledRecord(DataError):
    pass


# --- synthetic generator --------------------------------------------------

class EmptyGrammar(ConfigError):
    pass


class OverwriteRefused(ConfigError):
    """Output already exists and no overwrite flag was given."""
