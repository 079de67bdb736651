"""Test-phase anomaly scoring.

For one encoded sequence, every content position is masked in turn and the
model is run on each variant (batched internally, identical results). Each
position yields a prediction error (cross-entropy of the true token) and a
predictive probability (the distribution's maximum). A sequence's abnormal
scores are the mean of the k largest errors and the mean of the k smallest
probabilities; large error / small probability means unfamiliar context.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint
from .errors import EmptyGroup, EmptyValues, VocabMismatch
from .model import ModelConfig, Params, check_params, forward_batch, log_softmax
from .tokenizer import MASK_ID, TokenSequence, Vocab, encode

DEFAULT_TOP_K = 5


class Direction(Enum):
    LARGEST = "largest"
    SMALLEST = "smallest"


@dataclass(slots=True)
class PositionScore:
    position: int  # index into the id sequence (CLS at 0)
    error: float  # -ln p(true token) at the masked position
    prob: float  # max of the predicted distribution at the masked position


@dataclass(slots=True)
class SequenceScore:
    abnormal_error: float
    abnormal_prob: float
    s_len: int
    key: str


@dataclass
class ScoringContext:
    """Binds one checkpoint + vocabulary and counts model work.

    ``forward_passes`` counts masked variants evaluated (one per variant row,
    regardless of batching), which is the unit the dedup cache saves.
    """

    params: Params
    config: ModelConfig
    vocab: Vocab
    checkpoint_sha256: str
    k: int = DEFAULT_TOP_K
    mask_mode: str = "token"  # "token" or "key"
    variant_batch_size: int = 128
    forward_passes: int = 0
    sequences_scored: int = 0
    truncated_sequences: int = 0

    def __post_init__(self) -> None:
        check_params(self.params, self.config)
        if self.mask_mode not in ("token", "key"):
            raise ValueError(f"mask_mode must be 'token' or 'key', got {self.mask_mode!r}")

    @classmethod
    def from_checkpoint(
        cls,
        ckpt: Checkpoint,
        vocab: Vocab,
        k: int = DEFAULT_TOP_K,
        mask_mode: str = "token",
    ) -> "ScoringContext":
        if ckpt.vocab_sha256 and ckpt.vocab_sha256 != vocab.sha256:
            raise VocabMismatch("checkpoint was trained with a different vocabulary")
        return cls(
            params=ckpt.params,
            config=ckpt.config,
            vocab=vocab,
            checkpoint_sha256=ckpt.sha256,
            k=k,
            mask_mode=mask_mode,
        )

    def encode(self, text: str) -> TokenSequence:
        seq = encode(text, self.vocab, self.config.max_seq_len)
        if seq.truncated:
            self.truncated_sequences += 1
        return seq


def _variant_groups(ctx: ScoringContext, seq: TokenSequence) -> list[list[int]]:
    """Positions to mask together for each variant (id-sequence indices)."""
    n_content = len(seq.ids) - 2
    if ctx.mask_mode == "key" and seq.word_ids:
        groups: dict[int, list[int]] = {}
        for piece_idx, word_idx in enumerate(seq.word_ids):
            groups.setdefault(word_idx, []).append(piece_idx + 1)
        return [groups[w] for w in sorted(groups)]
    return [[i + 1] for i in range(n_content)]


def score_positions(ctx: ScoringContext, seq: TokenSequence) -> list[PositionScore]:
    """Mask each content position (or whitespace key) in turn and score it."""
    if seq.vocab_sha256 is not None and seq.vocab_sha256 != ctx.vocab.sha256:
        raise VocabMismatch("sequence was encoded under a different vocabulary")
    if seq.s_len < 1:
        raise EmptyValues("sequence has no content positions to score")
    base = np.asarray(seq.ids, dtype=np.int64)
    groups = _variant_groups(ctx, seq)
    scored_at = [g[0] for g in groups]

    variants = np.tile(base, (len(groups), 1))
    for row, positions in enumerate(groups):
        variants[row, positions] = MASK_ID
    attn = np.ones_like(variants, dtype=bool)

    scores: list[PositionScore] = []
    for start in range(0, len(groups), ctx.variant_batch_size):
        chunk = variants[start : start + ctx.variant_batch_size]
        logits, _, _ = forward_batch(
            ctx.params, ctx.config, chunk, attn[: len(chunk)], train_mode=False
        )
        ctx.forward_passes += len(chunk)
        for row in range(len(chunk)):
            pos = scored_at[start + row]
            logp = log_softmax(logits[row, pos])
            true_id = int(base[pos])
            scores.append(
                PositionScore(
                    position=pos,
                    error=float(-logp[true_id]),
                    prob=float(np.exp(logp.max())),
                )
            )
    ctx.sequences_scored += 1
    return scores


def top_k_mean(values: Sequence[float], k: int, direction: Direction) -> float:
    """Mean of the k most extreme values; plain mean when fewer than k."""
    if not values:
        raise EmptyValues("top_k_mean needs at least one value")
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    ordered = sorted(values, reverse=direction is Direction.LARGEST)
    top = ordered[:k]
    return sum(top) / len(top)


def score_sequence(ctx: ScoringContext, seq: TokenSequence, key: str = "") -> SequenceScore:
    """Aggregate per-position scores into the sequence's two abnormal scores."""
    positions = score_positions(ctx, seq)
    errors = [p.error for p in positions]
    probs = [p.prob for p in positions]
    return SequenceScore(
        abnormal_error=top_k_mean(errors, ctx.k, Direction.LARGEST),
        abnormal_prob=top_k_mean(probs, ctx.k, Direction.SMALLEST),
        s_len=len(positions),
        key=key,
    )


def score_text(ctx: ScoringContext, text: str) -> SequenceScore:
    """Encode one normalized line with the bound vocabulary and score it."""
    return score_sequence(ctx, ctx.encode(text), key=text)


def aggregate_group(scores: list[SequenceScore]) -> SequenceScore:
    """Roll member sequence scores up to one group (e.g. HDFS block) score.

    The group is as abnormal as its worst member: max error, min probability.
    """
    if not scores:
        raise EmptyGroup("cannot aggregate an empty group")
    if len(scores) == 1:
        return scores[0]
    return SequenceScore(
        abnormal_error=max(s.abnormal_error for s in scores),
        abnormal_prob=min(s.abnormal_prob for s in scores),
        s_len=sum(s.s_len for s in scores),
        key=scores[0].key,
    )
