"""Stage orchestration: every stage reads and writes documented files, so any
stage can be rerun or swapped independently. The CLI is a thin wrapper around
these functions; the end-to-end synthetic benchmark lives here too.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from . import cache as cache_mod
from .checkpoint import load_checkpoint
from .errors import ConfigError, DataError, OverwriteRefused
from .evaluate import (
    EvalResult,
    ScoredRecord,
    evaluate,
    key_hash,
    orient,
    read_scores_csv,
    roc_points,
    write_report,
    write_roc_csv,
    write_scores_csv,
)
from .ingest import IngestStats, Label, LogRecord, NormalizationRuleSet, Source, default_rules, load_line_labeled
from .model import ModelConfig
from .scorer import ScoringContext, SequenceScore, aggregate_group, score_text
from .synthgen import (
    ALL_KINDS,
    BENCHMARK_ANOMALY_RATE,
    BENCHMARK_TEST_LINES,
    BENCHMARK_TRAIN_LINES,
    AnomalyKind,
    LogGrammar,
    benchmark_grammar,
    generate_normal,
    inject_anomalies,
    write_tagged_log,
)
from .tokenizer import Vocab, encode, train_wordpiece
from .trainer import TrainConfig, TrainResult, train

log = logging.getLogger(__name__)


def ensure_writable(path: str | Path, overwrite: bool) -> Path:
    path = Path(path)
    if path.exists() and not overwrite:
        raise OverwriteRefused(f"{path} exists; pass --overwrite to replace it")
    return path


# --- preprocess --------------------------------------------------------------

@dataclass(slots=True)
class TestRow:
    line_no: int
    group_id: Optional[str]
    label: Label
    text: str


def write_train_file(records: Iterable[LogRecord], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            if rec.label is not Label.NORMAL:
                raise DataError("training stream contains a non-normal record")
            fh.write(rec.normalized + "\n")
            n += 1
    return n


def write_test_file(records: Iterable[LogRecord], path: str | Path) -> int:
    """Tab-separated: line_no, group_id (may be empty), label, normalized text."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(f"{rec.line_no}\t{rec.group_id or ''}\t{rec.label.value}\t{rec.normalized}\n")
            n += 1
    return n


def read_train_file(path: str | Path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def read_test_file(path: str | Path) -> list[TestRow]:
    rows = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"{path}:{i}: expected 4 tab-separated fields")
        rows.append(TestRow(int(parts[0]), parts[1] or None, Label(parts[2]), parts[3]))
    return rows


def write_manifest(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def preprocess_stage(
    train_records: list[LogRecord],
    test_records: list[LogRecord],
    out_dir: str | Path,
    rules: NormalizationRuleSet,
    stats: IngestStats | None = None,
    overwrite: bool = False,
) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_path = ensure_writable(out_dir / "train.txt", overwrite)
    test_path = ensure_writable(out_dir / "test.tsv", overwrite)
    n_train = write_train_file(train_records, train_path)
    n_test = write_test_file(test_records, test_path)
    n_abnormal = sum(1 for r in test_records if r.label is Label.ABNORMAL)
    write_manifest(
        out_dir / "preprocess_manifest.json",
        {
            "train_lines": n_train,
            "test_lines": n_test,
            "test_abnormal": n_abnormal,
            "rules_version": rules.version,
            "stats": vars(stats) if stats else None,
        },
    )
    return train_path, test_path


# --- tokenizer ----------------------------------------------------------------

def train_tokenizer_stage(
    train_path: str | Path,
    vocab_path: str | Path,
    vocab_size: int = 1024,
    min_frequency: int = 2,
    overwrite: bool = False,
) -> Vocab:
    vocab_path = ensure_writable(vocab_path, overwrite)
    vocab = train_wordpiece(read_train_file(train_path), vocab_size, min_frequency)
    vocab.save(vocab_path)
    log.info("trained vocabulary of %d tokens -> %s", len(vocab), vocab_path)
    return vocab


# --- training -------------------------------------------------------------------

def train_stage(
    train_path: str | Path,
    vocab_path: str | Path,
    out_dir: str | Path,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    overwrite: bool = False,
) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ensure_writable(out_dir / "model.ckpt", overwrite)
    vocab = Vocab.load(vocab_path)
    if model_cfg.vocab_size != len(vocab):
        raise ConfigError(
            f"model vocab_size {model_cfg.vocab_size} != vocabulary size {len(vocab)}"
        )
    corpus = (encode(line, vocab, model_cfg.max_seq_len) for line in read_train_file(train_path))
    result = train(corpus, model_cfg, train_cfg, out_dir, vocab_sha256=vocab.sha256)

    from .report import save_loss_curve_figure

    save_loss_curve_figure(out_dir / "loss_curve.png", result.loss_history)
    return result


# --- scoring ---------------------------------------------------------------------

@dataclass(slots=True)
class ScoreStageResult:
    records: list[ScoredRecord]
    hits: int
    misses: int
    forward_passes: int
    truncated_sequences: int


def score_stage(
    test_rows: list[TestRow],
    checkpoint_path: str | Path,
    vocab_path: str | Path,
    scores_path: str | Path,
    cache_path: str | Path | None = None,
    k: int = 5,
    mask_mode: str = "token",
    use_cache: bool = True,
    overwrite: bool = False,
) -> ScoreStageResult:
    """Score test rows against one checkpoint, block-aggregating HDFS groups.

    Sequence rows hash the normalized text into ``key_hash``; group rows hash
    the group id and report the summed ``s_len`` of their members.
    """
    scores_path = ensure_writable(scores_path, overwrite)
    vocab = Vocab.load(vocab_path)
    ckpt = load_checkpoint(checkpoint_path, expected_vocab_sha256=vocab.sha256)
    ctx = ScoringContext.from_checkpoint(ckpt, vocab, k=k, mask_mode=mask_mode)

    score_cache: cache_mod.ScoreCache | None = None
    if use_cache:
        if cache_path is not None and Path(cache_path).exists():
            score_cache = cache_mod.load(cache_path, expected_checkpoint_sha256=ckpt.sha256)
        else:
            score_cache = cache_mod.ScoreCache(ckpt.sha256)

    def score_one(text: str) -> SequenceScore:
        if score_cache is not None:
            return cache_mod.get_or_score(score_cache, text, ctx)
        return score_text(ctx, text)

    sequence_scores: list[tuple[TestRow, SequenceScore]] = []
    for row in test_rows:
        sequence_scores.append((row, score_one(row.text)))

    grouped = any(row.group_id is not None for row, _ in sequence_scores)
    records: list[ScoredRecord] = []
    if grouped:
        by_group: dict[str, list[tuple[TestRow, SequenceScore]]] = {}
        for row, s in sequence_scores:
            if row.group_id is None:
                raise DataError("mixed grouped and ungrouped rows in one scoring run")
            by_group.setdefault(row.group_id, []).append((row, s))
        for group_id, members in by_group.items():
            agg = aggregate_group([s for _, s in members])
            label = (
                Label.ABNORMAL
                if any(r.label is Label.ABNORMAL for r, _ in members)
                else Label.NORMAL
            )
            records.append(
                ScoredRecord(
                    key_hash=key_hash(group_id),
                    group_id=group_id,
                    label=label,
                    s_len=agg.s_len,
                    abnormal_error=agg.abnormal_error,
                    abnormal_prob=agg.abnormal_prob,
                )
            )
    else:
        for row, s in sequence_scores:
            records.append(
                ScoredRecord(
                    key_hash=key_hash(row.text),
                    group_id=None,
                    label=row.label,
                    s_len=s.s_len,
                    abnormal_error=s.abnormal_error,
                    abnormal_prob=s.abnormal_prob,
                )
            )

    write_scores_csv(scores_path, records)
    if score_cache is not None and cache_path is not None:
        cache_mod.persist(score_cache, cache_path)
    return ScoreStageResult(
        records=records,
        hits=score_cache.hits if score_cache else 0,
        misses=score_cache.misses if score_cache else len(sequence_scores),
        forward_passes=ctx.forward_passes,
        truncated_sequences=ctx.truncated_sequences,
    )


# --- evaluation --------------------------------------------------------------------

def eval_stage(
    scores_path: str | Path,
    out_dir: str | Path,
    figures: bool = True,
    overwrite: bool = False,
) -> dict[str, EvalResult]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = ensure_writable(out_dir / "report.txt", overwrite)
    records = read_scores_csv(scores_path)
    results = {which: evaluate(records, which) for which in ("prob", "error")}
    write_report(report_path, results)
    curves = {}
    for which, result in results.items():
        points = roc_points(orient(records, which))
        write_roc_csv(out_dir / f"roc_{which}.csv", points)
        curves[which] = (points, result.auroc)
    if figures:
        from .report import save_roc_figure, save_score_distribution_figure

        save_roc_figure(out_dir / "roc.png", curves)
        save_score_distribution_figure(out_dir / "score_distributions.png", records)
    return results


# --- end-to-end synthetic benchmark ---------------------------------------------------

def benchmark_model_config(vocab_size: int) -> ModelConfig:
    """Desk-scale model used by the synthetic benchmark."""
    return ModelConfig(
        n_layers=2,
        n_heads=4,
        d_model=64,
        d_ff=256,
        max_seq_len=24,
        vocab_size=vocab_size,
        dropout_rate=0.1,
        mask_rate=0.2,
    )


def benchmark_train_config(seed: int = 7, steps: int = 2000) -> TrainConfig:
    return TrainConfig(
        steps=steps,
        batch_size=32,
        learning_rate=1e-3,
        seed=seed,
        mask_rate=0.2,
    )


@dataclass(slots=True)
class E2EResult:
    results: dict[str, EvalResult]
    out_dir: Path
    holdout_loss: Optional[float]
    cache_hits: int
    cache_misses: int
    forward_passes: int
    wall_seconds: float


def run_e2e(
    out_dir: str | Path,
    seed: int = 7,
    kinds: tuple[AnomalyKind, ...] = ALL_KINDS,
    grammar: LogGrammar | None = None,
    train_lines: int = BENCHMARK_TRAIN_LINES,
    test_lines: int = BENCHMARK_TEST_LINES,
    anomaly_rate: float = BENCHMARK_ANOMALY_RATE,
    steps: int = 2000,
    k: int = 5,
    mask_mode: str = "token",
    vocab_size: int = 256,
    figures: bool = True,
    overwrite: bool = True,
) -> E2EResult:
    """Full chain on the synthetic benchmark: synth -> preprocess ->
    tokenizer -> train -> score (cached) -> eval. Deterministic per seed."""
    t0 = time.monotonic()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grammar = grammar if grammar is not None else benchmark_grammar(seed)

    # synth: raw tagged logs on disk, read back through the real loader
    train_drawn = generate_normal(grammar, train_lines)
    test_drawn = generate_normal(grammar, test_lines, start_index=train_lines, with_noise=False)
    test_records, injections = inject_anomalies(grammar, test_drawn, kinds, anomaly_rate)
    synth_dir = out_dir / "synth"
    synth_dir.mkdir(exist_ok=True)
    write_tagged_log(train_drawn, synth_dir / "train.log")
    write_tagged_log(test_records, synth_dir / "test.log")

    rules = default_rules()
    stats = IngestStats()
    train_recs = list(load_line_labeled(synth_dir / "train.log", Source.SYNTHETIC, rules, stats))
    test_recs = list(load_line_labeled(synth_dir / "test.log", Source.SYNTHETIC, rules, stats))
    data_dir = out_dir / "data"
    train_path, test_path = preprocess_stage(
        train_recs, test_recs, data_dir, rules, stats, overwrite=overwrite
    )

    vocab_path = out_dir / "vocab.txt"
    vocab = train_tokenizer_stage(train_path, vocab_path, vocab_size, overwrite=overwrite)

    model_cfg = benchmark_model_config(len(vocab))
    train_cfg = benchmark_train_config(seed, steps=steps)
    model_dir = out_dir / "model"
    train_result = train_stage(
        train_path, vocab_path, model_dir, model_cfg, train_cfg, overwrite=overwrite
    )

    scores_path = out_dir / "scores.csv"
    score_result = score_stage(
        read_test_file(test_path),
        train_result.checkpoint_path,
        vocab_path,
        scores_path,
        cache_path=out_dir / "cache.tsv",
        k=k,
        mask_mode=mask_mode,
        overwrite=overwrite,
    )

    results = eval_stage(scores_path, out_dir, figures=figures, overwrite=overwrite)

    write_manifest(
        out_dir / "effective_config.json",
        {
            "seed": seed,
            "kinds": [kd.value for kd in sorted(set(kinds), key=lambda x: x.value)],
            "grammar_version": grammar.version,
            "train_lines": train_lines,
            "test_lines": test_lines,
            "anomaly_rate": anomaly_rate,
            "injected": len(injections),
            "model": model_cfg.to_dict(),
            "train": {
                "steps": train_cfg.steps,
                "batch_size": train_cfg.batch_size,
                "learning_rate": train_cfg.learning_rate,
                "mask_rate": train_cfg.mask_rate,
                "seed": train_cfg.seed,
            },
            "k": k,
            "mask_mode": mask_mode,
            "vocab_size": len(vocab),
        },
    )
    wall = time.monotonic() - t0
    write_manifest(out_dir / "run_metadata.json", {"wall_seconds": wall})
    return E2EResult(
        results=results,
        out_dir=out_dir,
        holdout_loss=train_result.holdout_loss,
        cache_hits=score_result.hits,
        cache_misses=score_result.misses,
        forward_passes=score_result.forward_passes,
        wall_seconds=wall,
    )
