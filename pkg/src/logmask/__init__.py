"""Parser-free system-log anomaly detection.

Train a small masked-token language model on normal logs only, then score
test logs by masking each position in turn and aggregating the top-k
prediction errors and predictive probabilities into two abnormal scores.
"""

__version__ = "0.1.0"

from .ingest import Label, LogRecord, NormalizationRuleSet, Source, default_rules, normalize_line
from .model import ForwardOutput, ModelConfig
from .scorer import PositionScore, ScoringContext, SequenceScore
from .tokenizer import TokenSequence, Vocab, encode, decode, train_wordpiece

__all__ = [
    "Label",
    "LogRecord",
    "NormalizationRuleSet",
    "Source",
    "default_rules",
    "normalize_line",
    "ForwardOutput",
    "ModelConfig",
    "PositionScore",
    "ScoringContext",
    "SequenceScore",
    "TokenSequence",
    "Vocab",
    "encode",
    "decode",
    "train_wordpiece",
    "__version__",
]
