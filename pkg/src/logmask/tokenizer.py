"""Subword tokenizer trained from scratch on normalized normal logs.

WordPiece-style vocabulary: merges are scored by pair_count / (left_count *
right_count) and continuation pieces carry the ``##`` marker. Encoding is
greedy longest-match-first per whitespace word, uncased (input is lowercased,
so placeholder words like BLK land in the vocabulary as ``blk``).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .errors import ConfigError, EmptyCorpus, InvalidTokenId

PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
MAX_WORD_CHARS = 100


class Vocab:
    """Immutable token-string <-> id mapping; ids are contiguous from 0."""

    def __init__(self, tokens: list[str]):
        if tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise ConfigError("vocabulary must start with the five special tokens")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("vocabulary contains duplicate tokens")
        self.tokens = list(tokens)
        self.id_of = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.id_of

    @property
    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        """One token per line; the line number is the id."""
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.splitlines())


@dataclass(slots=True)
class TokenSequence:
    """Encoded line: ``[CLS] piece... [SEP]`` with no interior padding.

    ``word_ids[i]`` is the index of the whitespace word that produced content
    piece ``i`` (used by key-level masking); ``s_len`` counts content pieces.
    """

    ids: list[int]
    s_len: int
    word_ids: list[int] = field(default_factory=list)
    truncated: bool = False
    vocab_sha256: Optional[str] = None


def _word_counts(corpus: Iterable[str]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for line in corpus:
        for word in line.lower().split():
            counts[word] = counts.get(word, 0) + 1
    return counts


def train_wordpiece(
    corpus: Iterable[str],
    target_vocab_size: int = 1024,
    min_frequency: int = 2,
    limit_alphabet: Optional[int] = None,
) -> Vocab:
    """Train a WordPiece vocabulary on an iterable of normalized lines.

    Deterministic for a given corpus and parameters: the single-character
    alphabet is admitted by descending frequency and merge-score ties are
    broken lexicographically on the (left, right) pair. ``limit_alphabet``
    caps how many single-character units are admitted, so words built from
    rare characters fall back to UNK instead of consuming merge budget.
    """
    if target_vocab_size <= len(SPECIAL_TOKENS):
        raise ConfigError(f"target_vocab_size must exceed {len(SPECIAL_TOKENS)}")
    counts = _word_counts(corpus)
    if not counts:
        raise EmptyCorpus("tokenizer corpus has no words")

    budget = target_vocab_size - len(SPECIAL_TOKENS)
    unit_freq: dict[str, int] = {}
    for word, n in counts.items():
        units = [word[0]] + ["##" + c for c in word[1:]]
        for u in units:
            unit_freq[u] = unit_freq.get(u, 0) + n
    alphabet_cap = budget if limit_alphabet is None else min(budget, limit_alphabet)
    alphabet = sorted(unit_freq, key=lambda u: (-unit_freq[u], u))[:alphabet_cap]
    vocab_tokens = list(alphabet)
    alphabet_set = set(alphabet)

    # Words containing out-of-alphabet characters would encode to UNK anyway;
    # they contribute nothing to merges.
    splits: list[tuple[list[str], int]] = []
    freq = dict(unit_freq)
    for word, n in counts.items():
        units = [word[0]] + ["##" + c for c in word[1:]]
        if all(u in alphabet_set for u in units):
            splits.append((units, n))

    while len(vocab_tokens) < budget and splits:
        pair_count: dict[tuple[str, str], int] = {}
        for units, n in splits:
            for a, b in zip(units, units[1:]):
                pair_count[(a, b)] = pair_count.get((a, b), 0) + n
        best: tuple[str, str] | None = None
        best_score = 0.0
        for pair, n in pair_count.items():
            if n < min_frequency:
                continue
            score = n / (freq[pair[0]] * freq[pair[1]])
            if best is None or score > best_score or (score == best_score and pair < best):
                best, best_score = pair, score
        if best is None:
            break
        left, right = best
        merged = left + right.removeprefix("##")
        n_merged = pair_count[best]
        vocab_tokens.append(merged)
        freq[merged] = freq.get(merged, 0) + n_merged
        freq[left] -= n_merged
        freq[right] -= n_merged
        for units, _ in splits:
            i = 0
            while i < len(units) - 1:
                if units[i] == left and units[i + 1] == right:
                    units[i : i + 2] = [merged]
                else:
                    i += 1

    return Vocab(SPECIAL_TOKENS + vocab_tokens)


def _segment_word(word: str, vocab: Vocab) -> list[int]:
    """Greedy longest-match-first segmentation; whole word falls back to UNK."""
    if len(word) > MAX_WORD_CHARS:
        return [UNK_ID]
    ids: list[int] = []
    start = 0
    while start < len(word):
        prefix = "##" if start else ""
        end = len(word)
        piece_id = None
        while end > start:
            candidate = prefix + word[start:end]
            if candidate in vocab.id_of:
                piece_id = vocab.id_of[candidate]
                break
            end -= 1
        if piece_id is None:
            return [UNK_ID]
        ids.append(piece_id)
        start = end
    return ids


def encode(text: str, vocab: Vocab, max_seq_len: int) -> TokenSequence:
    """Encode one normalized line to ``[CLS] pieces [SEP]`` (uncased).

    Truncation keeps the first ``max_seq_len - 2`` content pieces and sets
    the ``truncated`` flag.
    """
    if max_seq_len < 3:
        raise ConfigError(f"max_seq_len must be at least 3, got {max_seq_len}")
    piece_ids: list[int] = []
    word_ids: list[int] = []
    for w_idx, word in enumerate(text.lower().split()):
        for pid in _segment_word(word, vocab):
            piece_ids.append(pid)
            word_ids.append(w_idx)
    truncated = len(piece_ids) > max_seq_len - 2
    if truncated:
        piece_ids = piece_ids[: max_seq_len - 2]
        word_ids = word_ids[: max_seq_len - 2]
    return TokenSequence(
        ids=[CLS_ID] + piece_ids + [SEP_ID],
        s_len=len(piece_ids),
        word_ids=word_ids,
        truncated=truncated,
        vocab_sha256=vocab.sha256,
    )


def decode(seq: TokenSequence, vocab: Vocab) -> str:
    """Inverse of :func:`encode` up to UNK and truncation."""
    words: list[str] = []
    for tid in seq.ids:
        if not 0 <= tid < len(vocab):
            raise InvalidTokenId(f"token id {tid} outside vocabulary of size {len(vocab)}")
        if tid in (PAD_ID, CLS_ID, SEP_ID):
            continue
        token = vocab.tokens[tid]
        if token.startswith("##") and words:
            words[-1] += token[2:]
        else:
            words.append(token)
    return " ".join(words)
