"""Dedup inference cache: normalized sequence text -> sequence score.

Log streams are dominated by duplicate lines, so scoring memoizes on the
normalized text: the first occurrence pays for the model evaluation, every
repeat is a dictionary lookup. The cache is bound to one checkpoint hash and
refuses to serve or load entries for any other, making staleness a loud
failure. Unbounded by default; an optional LRU bound is available.
"""

from __future__ import annotations

import os
import threading
from collections import OrderedDict
from pathlib import Path
from typing import Optional

from .errors import CheckpointMismatch, CorruptCacheFile
from .scorer import ScoringContext, SequenceScore, score_text

FORMAT_HEADER = "logmask-cache 1"


class ScoreCache:
    """Memoized sequence scores keyed by normalized text.

    Concurrent lookups of distinct keys may run in parallel; two concurrent
    misses on the same key may both compute (scoring is deterministic, so they
    insert identical values). Counters and the entry map are lock-protected.
    """

    def __init__(self, checkpoint_sha256: str, max_entries: Optional[int] = None):
        self.checkpoint_sha256 = checkpoint_sha256
        self.max_entries = max_entries
        self.entries: OrderedDict[str, SequenceScore] = OrderedDict()
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def lookups(self) -> int:
        return self.hits + self.misses

    def _get(self, key: str) -> Optional[SequenceScore]:
        with self._lock:
            found = self.entries.get(key)
            if found is not None:
                self.hits += 1
                if self.max_entries is not None:
                    self.entries.move_to_end(key)
            return found

    def _put(self, key: str, score: SequenceScore) -> None:
        with self._lock:
            self.misses += 1
            self.entries[key] = score
            if self.max_entries is not None:
                while len(self.entries) > self.max_entries:
                    self.entries.popitem(last=False)


def get_or_score(cache: ScoreCache, seq_text: str, ctx: ScoringContext) -> SequenceScore:
    """Return the memoized score for ``seq_text``, computing it on first sight.

    A hit performs no model evaluation at all.
    """
    if cache.checkpoint_sha256 != ctx.checkpoint_sha256:
        raise CheckpointMismatch(
            "cache is bound to a different checkpoint than the scoring context"
        )
    found = cache._get(seq_text)
    if found is not None:
        return found
    score = score_text(ctx, seq_text)
    cache._put(seq_text, score)
    return score


def persist(cache: ScoreCache, path: str | Path) -> None:
    """Write the cache as line-delimited text (atomic replace)."""
    path = Path(path)
    lines = [FORMAT_HEADER, f"checkpoint {cache.checkpoint_sha256}"]
    for key, s in cache.entries.items():
        lines.append(f"{key}\t{s.abnormal_error!r}\t{s.abnormal_prob!r}\t{s.s_len}")
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def load(path: str | Path, expected_checkpoint_sha256: Optional[str] = None) -> ScoreCache:
    """Read a persisted cache; refuse one bound to a different checkpoint."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if len(lines) < 2 or lines[0] != FORMAT_HEADER:
        raise CorruptCacheFile(f"{path}: not a cache file")
    head, _, checkpoint_sha256 = lines[1].partition(" ")
    if head != "checkpoint" or not checkpoint_sha256:
        raise CorruptCacheFile(f"{path}: missing checkpoint line")
    if (
        expected_checkpoint_sha256 is not None
        and checkpoint_sha256 != expected_checkpoint_sha256
    ):
        raise CheckpointMismatch(
            f"{path}: cache belongs to checkpoint {checkpoint_sha256[:12]}..., "
            f"expected {expected_checkpoint_sha256[:12]}..."
        )
    cache = ScoreCache(checkpoint_sha256)
    for i, line in enumerate(lines[2:], 3):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise CorruptCacheFile(f"{path}:{i}: expected 4 tab-separated fields")
        key, err, prob, s_len = parts
        try:
            cache.entries[key] = SequenceScore(
                abnormal_error=float(err),
                abnormal_prob=float(prob),
                s_len=int(s_len),
                key=key,
            )
        except ValueError as exc:
            raise CorruptCacheFile(f"{path}:{i}: bad numeric field ({exc})") from exc
    return cache
