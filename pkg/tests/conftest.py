"""Shared fixtures: a deterministic-context corpus, a small trained model,
and cheap untrained scoring contexts for mechanics-only tests.
"""

from __future__ import annotations

import numpy as np
import pytest

from logmask.model import ModelConfig, init_parameters, parameter_shapes
from logmask.scorer import ScoringContext
from logmask.synthgen import LogGrammar, Template, generate_normal
from logmask.tokenizer import Vocab, encode, train_wordpiece
from logmask.trainer import TrainConfig, train


def context_determined_grammar(seed: int = 5) -> LogGrammar:
    """Five slotless templates with disjoint vocabularies: any visible token
    identifies the template, so every masked token of a template line is
    determined by context. A small salad tail teaches the model to hedge on
    off-template context (which the corruption-monotonicity property needs).
    """
    # template words avoid the letters j/q/x/z so that chatter-only words
    # built from them fall outside a capped tokenizer alphabet (-> UNK)
    words = [
        ["alpha", "bravo", "cedar", "delta", "echo"],
        ["fargo", "golf", "hotel", "india", "lemon"],
        ["kilo", "lima", "mike", "november", "oscar"],
        ["papa", "pluto", "romeo", "sierra", "tango"],
        ["uniform", "victor", "whiskey", "yonder", "yankee"],
    ]
    return LogGrammar(
        templates=[Template(f"t{i}", 0.2, tokens) for i, tokens in enumerate(words)],
        slot_fillers={},
        seed=seed,
        noise_weight=0.12,
        noise_len=5,
        extra_noise_words=["zulu", "jinx", "quaver", "xylem"],
        version="context-determined",
    )


TEMPLATE_LINES = [
    "alpha bravo cedar delta echo",
    "fargo golf hotel india lemon",
    "kilo lima mike november oscar",
    "papa pluto romeo sierra tango",
    "uniform victor whiskey yonder yankee",
]


@pytest.fixture(scope="session")
def det_corpus() -> list[str]:
    grammar = context_determined_grammar()
    return [r.normalized for r in generate_normal(grammar, 600)]


@pytest.fixture(scope="session")
def det_vocab(det_corpus) -> Vocab:
    """Every template word merges into a single token; the rare-letter
    chatter words fall outside the capped alphabet and encode to UNK."""
    template_units = set()
    for tokens in (t.tokens for t in context_determined_grammar().templates):
        for w in tokens:
            template_units.update([w[0], *("##" + c for c in w[1:])])
    return train_wordpiece(
        det_corpus, target_vocab_size=256, min_frequency=1,
        limit_alphabet=len(template_units),
    )


@pytest.fixture(scope="session")
def tiny_model_cfg(det_vocab) -> ModelConfig:
    return ModelConfig(
        n_layers=2,
        n_heads=2,
        d_model=32,
        d_ff=64,
        max_seq_len=16,
        vocab_size=len(det_vocab),
        dropout_rate=0.1,
    )


@pytest.fixture(scope="session")
def tiny_trained(tmp_path_factory, det_corpus, det_vocab, tiny_model_cfg):
    """A model trained 500 steps on the deterministic-context corpus:
    confident on template lines, hedging on off-template context."""
    out = tmp_path_factory.mktemp("tiny_trained")
    corpus = [encode(line, det_vocab, tiny_model_cfg.max_seq_len) for line in det_corpus]
    result = train(
        corpus,
        tiny_model_cfg,
        TrainConfig(steps=500, batch_size=32, learning_rate=3e-3, seed=5),
        out,
        vocab_sha256=det_vocab.sha256,
    )
    return result


@pytest.fixture()
def trained_ctx(tiny_trained, det_vocab, tiny_model_cfg) -> ScoringContext:
    return ScoringContext(
        params=tiny_trained.params,
        config=tiny_model_cfg,
        vocab=det_vocab,
        checkpoint_sha256=tiny_trained.checkpoint_sha256,
    )


@pytest.fixture()
def uniform_ctx(det_vocab) -> ScoringContext:
    """All-zero weights: logits are identically zero, softmax is uniform."""
    cfg = ModelConfig(
        n_layers=1, n_heads=2, d_model=16, d_ff=32, max_seq_len=16,
        vocab_size=len(det_vocab), dropout_rate=0.0,
    )
    params = {name: np.zeros(shape) for name, shape in parameter_shapes(cfg).items()}
    return ScoringContext(
        params=params, config=cfg, vocab=det_vocab, checkpoint_sha256="zeros",
    )


@pytest.fixture()
def random_ctx(det_vocab) -> ScoringContext:
    cfg = ModelConfig(
        n_layers=1, n_heads=2, d_model=16, d_ff=32, max_seq_len=16,
        vocab_size=len(det_vocab), dropout_rate=0.0,
    )
    params = init_parameters(cfg, np.random.default_rng(3))
    return ScoringContext(
        params=params, config=cfg, vocab=det_vocab, checkpoint_sha256="random3",
    )
