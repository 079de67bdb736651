"""WordPiece training, encoding, decoding, and the vocabulary file."""

import numpy as np
import pytest

from logmask.errors import ConfigError, EmptyCorpus, InvalidTokenId
from logmask.tokenizer import (
    CLS_ID,
    MASK_ID,
    PAD_ID,
    SEP_ID,
    SPECIAL_TOKENS,
    UNK_ID,
    TokenSequence,
    Vocab,
    decode,
    encode,
    train_wordpiece,
)


class TestTrainWordpiece:
    def test_whole_words_emerge(self):
        vocab = train_wordpiece(["receiving block BLK"] * 100, 50, 2)
        for word in ("receiving", "block", "blk"):
            assert word in vocab

    def test_minimal_corpus(self):
        vocab = train_wordpiece(["a"] * 10, 6, 2)
        assert vocab.tokens == SPECIAL_TOKENS + ["a"]

    def test_budget_keeps_highest_frequency_char(self):
        # c appears most often; with one free slot only c survives
        vocab = train_wordpiece(["c c c b b a"] * 5, 6, 2)
        assert vocab.tokens == SPECIAL_TOKENS + ["c"]

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            train_wordpiece([], 50, 2)
        with pytest.raises(EmptyCorpus):
            train_wordpiece(["   ", ""], 50, 2)

    def test_size_must_exceed_specials(self):
        with pytest.raises(ConfigError):
            train_wordpiece(["a"], 5, 1)

    def test_vocab_bounded_by_target(self):
        vocab = train_wordpiece(["alpha beta gamma delta"] * 10, 12, 1)
        assert len(vocab) <= 12

    def test_determinism_byte_identical(self, tmp_path):
        corpus = ["receiving block stored", "block deleted fast", "stored block twice"] * 7
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        train_wordpiece(corpus, 64, 2).save(a)
        train_wordpiece(list(corpus), 64, 2).save(b)
        assert a.read_bytes() == b.read_bytes()

    def test_continuation_marker_invariant(self):
        vocab = train_wordpiece(["receiving block blk stored"] * 30, 200, 1)
        for tok in vocab.tokens[len(SPECIAL_TOKENS):]:
            if tok.startswith("##"):
                assert len(tok) > 2
            else:
                assert "##" not in tok

    def test_ids_contiguous_and_specials_first(self):
        vocab = train_wordpiece(["x y z"] * 10, 20, 1)
        assert [vocab.id_of[t] for t in vocab.tokens] == list(range(len(vocab)))
        assert vocab.tokens[:5] == SPECIAL_TOKENS


class TestEncode:
    @pytest.fixture()
    def vocab(self):
        return train_wordpiece(["block blockx blocky"] * 10, 64, 1)

    def test_single_in_vocab_word(self, vocab):
        seq = encode("block", vocab, 16)
        assert seq.ids[0] == CLS_ID and seq.ids[-1] == SEP_ID
        assert seq.s_len == 1
        assert vocab.tokens[seq.ids[1]] == "block"

    def test_greedy_longest_match(self):
        vocab = Vocab(SPECIAL_TOKENS + ["block", "##x", "blo"])
        seq = encode("blockx", vocab, 16)
        assert [vocab.tokens[i] for i in seq.ids[1:-1]] == ["block", "##x"]

    def test_unknown_word_is_unk(self, vocab):
        seq = encode("zzz", vocab, 16)
        assert seq.ids == [CLS_ID, UNK_ID, SEP_ID]

    def test_uncased(self, vocab):
        assert encode("BLOCK", vocab, 16).ids == encode("block", vocab, 16).ids

    def test_truncation(self, vocab):
        seq = encode("block " * 30, vocab, 10)
        assert len(seq.ids) == 10
        assert seq.truncated
        assert seq.ids[-1] == SEP_ID

    def test_word_ids_track_source_words(self):
        vocab = Vocab(SPECIAL_TOKENS + ["block", "##x"])
        seq = encode("block blockx", vocab, 16)
        assert seq.word_ids == [0, 1, 1]

    def test_max_seq_len_validated(self, vocab):
        with pytest.raises(ConfigError):
            encode("block", vocab, 2)

    def test_very_long_word_is_unk(self, vocab):
        seq = encode("b" * 200, vocab, 16)
        assert seq.ids == [CLS_ID, UNK_ID, SEP_ID]


class TestDecode:
    def test_single_token(self):
        vocab = Vocab(SPECIAL_TOKENS + ["block"])
        assert decode(TokenSequence([CLS_ID, 5, SEP_ID], 1), vocab) == "block"

    def test_continuation_join(self):
        vocab = Vocab(SPECIAL_TOKENS + ["block", "##x"])
        assert decode(TokenSequence([CLS_ID, 5, 6, SEP_ID], 2), vocab) == "blockx"

    def test_unk_renders_literally(self):
        vocab = Vocab(SPECIAL_TOKENS + ["block"])
        assert decode(TokenSequence([CLS_ID, UNK_ID, SEP_ID], 1), vocab) == "[UNK]"

    def test_mask_renders_literally(self):
        vocab = Vocab(SPECIAL_TOKENS + ["block"])
        assert decode(TokenSequence([CLS_ID, MASK_ID, SEP_ID], 1), vocab) == "[MASK]"

    def test_invalid_id(self):
        vocab = Vocab(SPECIAL_TOKENS + ["block"])
        with pytest.raises(InvalidTokenId):
            decode(TokenSequence([CLS_ID, 99, SEP_ID], 1), vocab)

    def test_pad_skipped(self):
        vocab = Vocab(SPECIAL_TOKENS + ["block"])
        assert decode(TokenSequence([CLS_ID, 5, SEP_ID, PAD_ID, PAD_ID], 1), vocab) == "block"


class TestRoundTrip:
    def test_fuzz_round_trip(self):
        corpus_words = ["receiving", "block", "stored", "deleted", "fast", "slow",
                        "gateway", "NUM", "IP", "client"]
        vocab = train_wordpiece([" ".join(corpus_words)] * 50, 256, 1)
        rng = np.random.default_rng(42)
        lowered = [w.lower() for w in corpus_words]
        for _ in range(1000):
            line = " ".join(rng.choice(lowered, size=rng.integers(1, 12)))
            assert decode(encode(line, vocab, 64), vocab) == line

    def test_segmentation_totality(self):
        vocab = train_wordpiece(["ab cd ef"] * 10, 64, 1)
        rng = np.random.default_rng(7)
        alphabet = "abcdefghij"
        for _ in range(500):
            word = "".join(rng.choice(list(alphabet), size=rng.integers(1, 15)))
            seq = encode(word, vocab, 32)
            assert seq.s_len >= 1


class TestVocabFile:
    def test_round_trip_lossless(self, tmp_path):
        vocab = train_wordpiece(["receiving block blk"] * 20, 64, 1)
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        loaded = Vocab.load(path)
        assert loaded.tokens == vocab.tokens
        assert loaded.sha256 == vocab.sha256

    def test_line_number_is_id(self, tmp_path):
        vocab = train_wordpiece(["x y"] * 10, 32, 1)
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        lines = path.read_text().splitlines()
        for i, tok in enumerate(lines):
            assert vocab.id_of[tok] == i

    def test_duplicate_rejected(self):
        with pytest.raises(ConfigError):
            Vocab(SPECIAL_TOKENS + ["a", "a"])

    def test_specials_required(self):
        with pytest.raises(ConfigError):
            Vocab(["a", "b"])
