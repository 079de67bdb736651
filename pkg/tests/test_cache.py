"""Dedup inference cache: memoization, persistence, checkpoint binding."""

import threading

import numpy as np
import pytest

from logmask.cache import ScoreCache, get_or_score, load, persist
from logmask.errors import CheckpointMismatch, CorruptCacheFile
from logmask.scorer import SequenceScore, score_text


@pytest.fixture()
def cache(uniform_ctx):
    return ScoreCache(uniform_ctx.checkpoint_sha256)


class TestMemoization:
    def test_second_lookup_runs_no_forward_passes(self, uniform_ctx, cache):
        get_or_score(cache, "alpha bravo", uniform_ctx)
        before = uniform_ctx.forward_passes
        value = get_or_score(cache, "alpha bravo", uniform_ctx)
        assert uniform_ctx.forward_passes == before
        assert value == cache.entries["alpha bravo"]

    def test_unique_counting(self, uniform_ctx, cache):
        rng = np.random.default_rng(0)
        uniques = [f"alpha bravo line{chr(97 + i)}" for i in range(12)]
        stream = [uniques[rng.integers(12)] for _ in range(1000)]
        for key in uniques:  # ensure all twelve appear
            stream.append(key)
        for key in stream:
            get_or_score(cache, key, uniform_ctx)
        assert cache.misses == 12
        assert cache.hits == len(stream) - 12
        assert cache.lookups == len(stream)

    def test_empty_cache_first_query(self, uniform_ctx, cache):
        get_or_score(cache, "alpha", uniform_ctx)
        assert (cache.misses, cache.hits) == (1, 0)

    def test_transparency_same_scores_as_direct(self, trained_ctx, det_corpus):
        cache = ScoreCache(trained_ctx.checkpoint_sha256)
        lines = det_corpus[:40]
        cached = [get_or_score(cache, t, trained_ctx) for t in lines]
        direct = [score_text(trained_ctx, t) for t in lines]
        for a, b in zip(cached, direct):
            assert a.abnormal_error == b.abnormal_error
            assert a.abnormal_prob == b.abnormal_prob

    def test_checkpoint_mismatch(self, uniform_ctx):
        stale = ScoreCache("different-checkpoint")
        with pytest.raises(CheckpointMismatch):
            get_or_score(stale, "alpha", uniform_ctx)

    def test_lru_bound(self, uniform_ctx):
        cache = ScoreCache(uniform_ctx.checkpoint_sha256, max_entries=3)
        for key in ("alpha", "bravo", "cedar", "delta"):
            get_or_score(cache, key, uniform_ctx)
        assert len(cache) == 3
        assert "alpha" not in cache.entries  # oldest evicted

    def test_counters_consistent_under_threads(self, uniform_ctx):
        cache = ScoreCache(uniform_ctx.checkpoint_sha256)
        keys = ["alpha", "bravo", "cedar", "delta"] * 25

        def worker(chunk):
            for key in chunk:
                get_or_score(cache, key, uniform_ctx)

        threads = [threading.Thread(target=worker, args=(keys[i::4],)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert cache.hits + cache.misses == len(keys)
        assert len(cache) == 4


class TestPersistence:
    def test_round_trip(self, uniform_ctx, cache, tmp_path):
        for key in ("alpha bravo", "cedar delta", "echo"):
            get_or_score(cache, key, uniform_ctx)
        path = tmp_path / "cache.tsv"
        persist(cache, path)
        loaded = load(path)
        assert loaded.checkpoint_sha256 == cache.checkpoint_sha256
        assert loaded.entries.keys() == cache.entries.keys()
        for key, score in cache.entries.items():
            got = loaded.entries[key]
            assert got.abnormal_error == score.abnormal_error  # repr round-trip is exact
            assert got.abnormal_prob == score.abnormal_prob
            assert got.s_len == score.s_len

    def test_large_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        cache = ScoreCache("ck")
        for i in range(10_000):
            key = f"line {i}"
            cache.entries[key] = SequenceScore(
                abnormal_error=float(rng.exponential()),
                abnormal_prob=float(rng.random()),
                s_len=int(rng.integers(1, 40)),
                key=key,
            )
        path = tmp_path / "big.tsv"
        persist(cache, path)
        loaded = load(path)
        assert len(loaded) == 10_000
        for key, score in cache.entries.items():
            got = loaded.entries[key]
            assert abs(got.abnormal_error - score.abnormal_error) <= 1e-12
            assert abs(got.abnormal_prob - score.abnormal_prob) <= 1e-12

    def test_load_rejects_other_checkpoint(self, uniform_ctx, cache, tmp_path):
        get_or_score(cache, "alpha", uniform_ctx)
        path = tmp_path / "cache.tsv"
        persist(cache, path)
        with pytest.raises(CheckpointMismatch):
            load(path, expected_checkpoint_sha256="someone-else")

    def test_corrupt_header(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("not a cache\nwhatever\n")
        with pytest.raises(CorruptCacheFile):
            load(path)

    def test_corrupt_row(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("logmask-cache 1\ncheckpoint abc\nkey\tnot-a-float\t0.5\t3\n")
        with pytest.raises(CorruptCacheFile):
            load(path)

    def test_missing_checkpoint_line(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("logmask-cache 1\nnope abc\n")
        with pytest.raises(CorruptCacheFile):
            load(path)
