"""Masked-token training loop over normal-only sequences.

Each content position is masked independently at ``mask_rate`` (default 0.2)
and always replaced by the MASK token, matching what the scorer does at test
time; the classic 80/10/10 corruption mix is available behind a flag for
ablation. Optimization is Adam with linear warmup then a constant rate.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .checkpoint import save_checkpoint
from .errors import ConfigError, DivergedLoss, NoNormalRecords
from .model import (
    ModelConfig,
    Params,
    forward_batch,
    init_parameters,
    loss_and_grads,
    mlm_loss_batch,
)
from .tokenizer import MASK_ID, PAD_ID, TokenSequence

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int = 32
    learning_rate: float = 1e-4
    warmup_steps: int = -1  # -1 means 10% of steps
    seed: int = 0
    mask_rate: float = 0.2
    checkpoint_every: int = 0  # 0 means final checkpoint only
    holdout_fraction: float = 0.05
    bert_style_corruption: bool = False
    dedup: bool = False

    def __post_init__(self) -> None:
        if self.steps <= 0:
            raise ConfigError(f"steps must be positive, got {self.steps}")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if not 0.0 < self.mask_rate < 1.0:
            raise ConfigError("mask_rate must be in (0, 1)")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must be in [0, 1)")

    @property
    def effective_warmup(self) -> int:
        return self.warmup_steps if self.warmup_steps >= 0 else self.steps // 10


@dataclass(slots=True)
class TrainResult:
    params: Params
    checkpoint_path: Path
    checkpoint_sha256: str
    loss_history: list[tuple[int, float]]
    holdout_loss: Optional[float]
    checkpoint_paths: list[Path]


def apply_mask(
    seq: TokenSequence,
    mask_rate: float,
    rng: np.random.Generator,
    bert_style: bool = False,
    vocab_size: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mask content positions of one sequence.

    Returns (masked_ids, labels, mask_positions); ``labels`` holds the
    original id at masked positions and -1 elsewhere. CLS/SEP (and PAD, which
    never occurs inside a TokenSequence) are never masked. If the independent
    Bernoulli draws select nothing, one content position is forced so every
    sequence contributes loss.
    """
    ids = np.asarray(seq.ids, dtype=np.int64)
    n = len(ids)
    if n < 3:
        raise ConfigError("sequence has no content positions to mask")
    content = np.zeros(n, dtype=bool)
    content[1 : n - 1] = True

    picked = np.zeros(n, dtype=bool)
    picked[1 : n - 1] = rng.random(n - 2) < mask_rate
    if not picked.any():
        picked[1 + rng.integers(n - 2)] = True

    labels = np.full(n, -1, dtype=np.int64)
    labels[picked] = ids[picked]
    masked = ids.copy()
    if bert_style and vocab_size > 0:
        # 80% MASK / 10% random token / 10% keep, drawn per masked position.
        for pos in np.flatnonzero(picked):
            roll = rng.random()
            if roll < 0.8:
                masked[pos] = MASK_ID
            elif roll < 0.9:
                masked[pos] = rng.integers(5, vocab_size)
    else:
        masked[picked] = MASK_ID
    assert not picked[0] and not picked[n - 1]
    return masked, labels, picked


def _pad_batch(
    rows: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    width = max(len(r[0]) for r in rows)
    B = len(rows)
    ids = np.full((B, width), PAD_ID, dtype=np.int64)
    labels = np.full((B, width), -1, dtype=np.int64)
    mask_pos = np.zeros((B, width), dtype=bool)
    attn = np.zeros((B, width), dtype=bool)
    for b, (row_ids, row_labels, row_mask) in enumerate(rows):
        t = len(row_ids)
        ids[b, :t] = row_ids
        labels[b, :t] = row_labels
        mask_pos[b, :t] = row_mask
        attn[b, :t] = True
    return ids, labels, mask_pos, attn


def _holdout_loss(
    params: Params,
    model_cfg: ModelConfig,
    holdout: list[TokenSequence],
    mask_rate: float,
    seed: int,
    batch_size: int,
) -> float:
    rng = np.random.default_rng(seed)
    losses: list[float] = []
    weights: list[int] = []
    for start in range(0, len(holdout), batch_size):
        chunk = holdout[start : start + batch_size]
        rows = [apply_mask(s, mask_rate, rng) for s in chunk]
        ids, labels, mask_pos, attn = _pad_batch(rows)
        logits, _, _ = forward_batch(params, model_cfg, ids, attn, train_mode=False)
        loss, _ = mlm_loss_batch(logits, labels, mask_pos)
        losses.append(loss)
        weights.append(int(mask_pos.sum()))
    return float(np.average(losses, weights=weights))


def train(
    corpus: Iterable[TokenSequence],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    out_dir: str | Path,
    vocab_sha256: str = "",
) -> TrainResult:
    """Run the optimizer for ``train_cfg.steps`` updates and checkpoint.

    Deterministic for a fixed seed: init, shuffling, masking and dropout all
    draw from one seeded generator in a fixed order. Raises ``DivergedLoss``
    if the loss becomes non-finite.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sequences = list(corpus)
    if train_cfg.dedup:
        seen: dict[tuple[int, ...], TokenSequence] = {}
        for s in sequences:
            seen.setdefault(tuple(s.ids), s)
        sequences = list(seen.values())
    if not sequences:
        raise NoNormalRecords("training corpus is empty")

    n_holdout = int(train_cfg.holdout_fraction * len(sequences))
    holdout = sequences[len(sequences) - n_holdout :] if n_holdout else []
    train_set = sequences[: len(sequences) - n_holdout]
    if not train_set:
        raise NoNormalRecords("no sequences left to train on after holdout split")

    rng = np.random.default_rng(train_cfg.seed)
    params = init_parameters(model_cfg, rng)
    m_state = {k: np.zeros_like(v) for k, v in params.items()}
    v_state = {k: np.zeros_like(v) for k, v in params.items()}

    warmup = train_cfg.effective_warmup
    loss_history: list[tuple[int, float]] = []
    checkpoint_paths: list[Path] = []
    step = 0
    while step < train_cfg.steps:
        order = rng.permutation(len(train_set))
        for start in range(0, len(order), train_cfg.batch_size):
            if step >= train_cfg.steps:
                break
            batch = [train_set[i] for i in order[start : start + train_cfg.batch_size]]
            rows = [
                apply_mask(
                    s,
                    train_cfg.mask_rate,
                    rng,
                    bert_style=train_cfg.bert_style_corruption,
                    vocab_size=model_cfg.vocab_size,
                )
                for s in batch
            ]
            ids, labels, mask_pos, attn = _pad_batch(rows)
            loss, grads = loss_and_grads(
                params, model_cfg, ids, attn, labels, mask_pos, train_mode=True, rng=rng
            )
            if not np.isfinite(loss):
                raise DivergedLoss(f"loss became {loss} at step {step}")

            step += 1
            lr = train_cfg.learning_rate
            if warmup > 0 and step <= warmup:
                lr = train_cfg.learning_rate * step / warmup
            b1t = 1.0 - ADAM_BETA1**step
            b2t = 1.0 - ADAM_BETA2**step
            for name, g in grads.items():
                m_state[name] = ADAM_BETA1 * m_state[name] + (1 - ADAM_BETA1) * g
                v_state[name] = ADAM_BETA2 * v_state[name] + (1 - ADAM_BETA2) * g * g
                params[name] = params[name] - lr * (m_state[name] / b1t) / (
                    np.sqrt(v_state[name] / b2t) + ADAM_EPS
                )

            loss_history.append((step, loss))
            if step % 100 == 0 or step == 1:
                log.info("step %d loss %.4f", step, loss)
            if train_cfg.checkpoint_every > 0 and step % train_cfg.checkpoint_every == 0:
                path = out_dir / f"checkpoint_step{step:06d}.ckpt"
                save_checkpoint(path, params, model_cfg, vocab_sha256)
                checkpoint_paths.append(path)

    final_path = out_dir / "model.ckpt"
    digest = save_checkpoint(final_path, params, model_cfg, vocab_sha256)
    checkpoint_paths.append(final_path)

    with open(out_dir / "loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        writer.writerows((s, repr(l)) for s, l in loss_history)

    holdout_loss = None
    if holdout:
        holdout_loss = _holdout_loss(
            params, model_cfg, holdout, train_cfg.mask_rate,
            train_cfg.seed + 1, train_cfg.batch_size,
        )
        log.info("holdout masked loss %.4f (uniform would be %.4f)",
                 holdout_loss, np.log(model_cfg.vocab_size))

    return TrainResult(
        params=params,
        checkpoint_path=final_path,
        checkpoint_sha256=digest,
        loss_history=loss_history,
        holdout_loss=holdout_loss,
        checkpoint_paths=checkpoint_paths,
    )
