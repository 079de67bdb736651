"""Command-line interface.

Subcommands mirror the pipeline stages: ``synth``, ``preprocess``,
``train-tokenizer``, ``train``, ``score``, ``eval``, and ``e2e``. Stages talk
to each other only through files, so each can be rerun independently. A JSON
config file (``--config``) supplies defaults that individual flags override;
no environment variables are consulted. Existing outputs are never replaced
without ``--overwrite``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .errors import (
    CheckpointMismatch,
    ConfigError,
    DataError,
    LogmaskError,
    VocabMismatch,
)
from .ingest import (
    IngestStats,
    Label,
    NormalizationRuleSet,
    Source,
    default_rules,
    load_hdfs,
    load_line_labeled,
    split_train_test,
)
from .model import ModelConfig
from .synthgen import (
    ALL_KINDS,
    AnomalyKind,
    benchmark_grammar,
    generate_normal,
    inject_anomalies,
    load_grammar,
    save_grammar,
    write_tagged_log,
)
from .tokenizer import Vocab
from .trainer import TrainConfig

log = logging.getLogger(__name__)

EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
EXIT_MISMATCH = 4
EXIT_OTHER = 5


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        value = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(value, dict):
        raise ConfigError(f"config file {p} must contain a JSON object")
    return value


def _setting(args: argparse.Namespace, cfg: dict, name: str, default):
    """Flag beats config file beats default."""
    flag = getattr(args, name.replace(".", "_"), None)
    if flag is not None:
        return flag
    section = cfg
    for part in name.split("."):
        if not isinstance(section, dict) or part not in section:
            return default
        section = section[part]
    return section


def _resolve_rules(args, cfg) -> NormalizationRuleSet:
    path = _setting(args, cfg, "rules", None)
    return default_rules() if path is None else NormalizationRuleSet.from_file(path)


def _parse_kinds(spec: str) -> tuple[AnomalyKind, ...]:
    if spec == "all":
        return ALL_KINDS
    kinds = []
    for name in spec.split(","):
        try:
            kinds.append(AnomalyKind(name.strip()))
        except ValueError:
            valid = ", ".join(k.value for k in ALL_KINDS)
            raise ConfigError(f"unknown anomaly kind {name!r}; valid: {valid}, or 'all'")
    return tuple(kinds)


def cmd_synth(args: argparse.Namespace, cfg: dict) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = _setting(args, cfg, "seed", 7)
    grammar = load_grammar(args.grammar) if args.grammar else benchmark_grammar(seed)
    train_lines = _setting(args, cfg, "train_lines", 20000)
    test_lines = _setting(args, cfg, "test_lines", 2000)
    rate = _setting(args, cfg, "anomaly_rate", 0.10)
    kinds = _parse_kinds(args.kinds)

    train_log = pipeline.ensure_writable(out_dir / "train.log", args.overwrite)
    test_log = pipeline.ensure_writable(out_dir / "test.log", args.overwrite)
    train_drawn = generate_normal(grammar, train_lines)
    test_drawn = generate_normal(grammar, test_lines, start_index=train_lines, with_noise=False)
    test_records, injections = inject_anomalies(grammar, test_drawn, kinds, rate)
    write_tagged_log(train_drawn, train_log)
    write_tagged_log(test_records, test_log)
    save_grammar(grammar, out_dir / "grammar.txt")
    print(f"wrote {train_lines} train lines -> {train_log}")
    print(f"wrote {test_lines} test lines ({len(injections)} abnormal) -> {test_log}")
    return 0


def cmd_preprocess(args: argparse.Namespace, cfg: dict) -> int:
    rules = _resolve_rules(args, cfg)
    stats = IngestStats()
    out_dir = Path(args.out)

    if args.log_train and args.log_test:
        source = Source(args.source)
        train_records = list(load_line_labeled(args.log_train, source, rules, stats))
        test_records = list(load_line_labeled(args.log_test, source, rules, stats))
        bad = sum(1 for r in train_records if r.label is not Label.NORMAL)
        if bad:
            raise DataError(f"{bad} abnormal lines in the designated training log")
    elif args.log:
        if args.format == "hdfs":
            if not args.labels:
                raise ConfigError("--format hdfs requires --labels")
            records = load_hdfs(args.log, args.labels, rules, stats)
        else:
            records = load_line_labeled(args.log, Source(args.source), rules, stats)
        fraction = _setting(args, cfg, "train_fraction", 0.8)
        train_records, test_records = split_train_test(records, fraction)
    else:
        raise ConfigError("pass either --log, or --log-train with --log-test")

    train_path, test_path = pipeline.preprocess_stage(
        train_records, test_records, out_dir, rules, stats, overwrite=args.overwrite
    )
    print(f"train: {train_path}  test: {test_path}")
    print(f"stats: {vars(stats)}")
    return 0


def cmd_train_tokenizer(args: argparse.Namespace, cfg: dict) -> int:
    vocab = pipeline.train_tokenizer_stage(
        args.train,
        args.vocab,
        vocab_size=_setting(args, cfg, "vocab_size", 1024),
        min_frequency=_setting(args, cfg, "min_frequency", 2),
        overwrite=args.overwrite,
    )
    print(f"vocabulary of {len(vocab)} tokens -> {args.vocab}")
    return 0


def _model_config_from(args, cfg, vocab_len: int) -> ModelConfig:
    return ModelConfig(
        n_layers=_setting(args, cfg, "model.n_layers", 2),
        n_heads=_setting(args, cfg, "model.n_heads", 4),
        d_model=_setting(args, cfg, "model.d_model", 128),
        d_ff=_setting(args, cfg, "model.d_ff", 512),
        max_seq_len=_setting(args, cfg, "model.max_seq_len", 128),
        vocab_size=vocab_len,
        dropout_rate=_setting(args, cfg, "model.dropout_rate", 0.1),
        mask_rate=_setting(args, cfg, "model.mask_rate", 0.2),
    )


def cmd_train(args: argparse.Namespace, cfg: dict) -> int:
    vocab = Vocab.load(args.vocab)
    model_cfg = _model_config_from(args, cfg, len(vocab))
    train_cfg = TrainConfig(
        steps=_setting(args, cfg, "train.steps", 1000),
        batch_size=_setting(args, cfg, "train.batch_size", 32),
        learning_rate=_setting(args, cfg, "train.learning_rate", 1e-4),
        warmup_steps=_setting(args, cfg, "train.warmup_steps", -1),
        seed=_setting(args, cfg, "seed", 0),
        mask_rate=_setting(args, cfg, "train.mask_rate", 0.2),
        checkpoint_every=_setting(args, cfg, "train.checkpoint_every", 0),
    )
    out_dir = Path(args.out)
    result = pipeline.train_stage(
        args.train, args.vocab, out_dir, model_cfg, train_cfg, overwrite=args.overwrite
    )
    pipeline.write_manifest(
        out_dir / "effective_config.json",
        {
            "model": model_cfg.to_dict(),
            "train": {
                "steps": train_cfg.steps,
                "batch_size": train_cfg.batch_size,
                "learning_rate": train_cfg.learning_rate,
                "warmup_steps": train_cfg.effective_warmup,
                "seed": train_cfg.seed,
                "mask_rate": train_cfg.mask_rate,
                "checkpoint_every": train_cfg.checkpoint_every,
            },
            "vocab": str(args.vocab),
            "train_corpus": str(args.train),
        },
    )
    holdout = "n/a" if result.holdout_loss is None else f"{result.holdout_loss:.4f}"
    print(f"checkpoint: {result.checkpoint_path} (sha256 {result.checkpoint_sha256[:12]})")
    print(f"final loss: {result.loss_history[-1][1]:.4f}  holdout loss: {holdout}")
    return 0


def cmd_score(args: argparse.Namespace, cfg: dict) -> int:
    result = pipeline.score_stage(
        pipeline.read_test_file(args.test),
        args.checkpoint,
        args.vocab,
        args.out,
        cache_path=args.cache,
        k=_setting(args, cfg, "k", 5),
        mask_mode=_setting(args, cfg, "mask_mode", "token"),
        use_cache=not args.no_cache,
        overwrite=args.overwrite,
    )
    print(f"scored {len(result.records)} units -> {args.out}")
    print(
        f"cache hits={result.hits} misses={result.misses} "
        f"forward_passes={result.forward_passes} truncated={result.truncated_sequences}"
    )
    return 0


def cmd_eval(args: argparse.Namespace, cfg: dict) -> int:
    results = pipeline.eval_stage(
        args.scores, args.out, figures=not args.no_figures, overwrite=args.overwrite
    )
    for which, r in sorted(results.items()):
        print(
            f"{which}: auroc={r.auroc:.4f} best_f1={r.best_f1:.4f} "
            f"precision={r.precision:.4f} recall={r.recall:.4f}"
        )
    return 0


def cmd_e2e(args: argparse.Namespace, cfg: dict) -> int:
    seed = _setting(args, cfg, "seed", 7)
    result = pipeline.run_e2e(
        args.out,
        seed=seed,
        kinds=_parse_kinds(args.kinds),
        train_lines=_setting(args, cfg, "train_lines", 20000),
        test_lines=_setting(args, cfg, "test_lines", 2000),
        anomaly_rate=_setting(args, cfg, "anomaly_rate", 0.10),
        steps=_setting(args, cfg, "train.steps", 2000),
        k=_setting(args, cfg, "k", 5),
        mask_mode=_setting(args, cfg, "mask_mode", "token"),
        figures=not args.no_figures,
        overwrite=args.overwrite,
    )
    prob, error = result.results["prob"], result.results["error"]
    checks = [
        ("abnormal_prob AUROC >= 0.95", prob.auroc >= 0.95, prob.auroc),
        ("abnormal_prob best F1 >= 0.90", prob.best_f1 >= 0.90, prob.best_f1),
        ("abnormal_error AUROC >= 0.85", error.auroc >= 0.85, error.auroc),
    ]
    print(f"benchmark finished in {result.wall_seconds:.1f}s -> {result.out_dir}")
    print(
        f"cache: {result.cache_misses} unique sequences scored, "
        f"{result.cache_hits} duplicate lookups, {result.forward_passes} forward passes"
    )
    ok = True
    for name, passed, value in checks:
        print(f"{'PASS' if passed else 'FAIL'} {name} (got {value:.4f})")
        ok = ok and passed
    print(f"abnormal_prob auroc={prob.auroc:.4f} vs abnormal_error auroc={error.auroc:.4f}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="logmask",
        description="Parser-free log anomaly detection with a masked-token language model.",
    )
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic benchmark logs")
    p.add_argument("--out", required=True)
    p.add_argument("--grammar", help="grammar file (default: built-in benchmark grammar)")
    p.add_argument("--seed", type=int)
    p.add_argument("--train-lines", type=int, dest="train_lines")
    p.add_argument("--test-lines", type=int, dest="test_lines")
    p.add_argument("--anomaly-rate", type=float, dest="anomaly_rate")
    p.add_argument("--kinds", default="all", help="comma list: unseen-token,slot-violation,order-break")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="normalize raw logs and split train/test")
    p.add_argument("--log", help="single raw log file to split chronologically")
    p.add_argument("--labels", help="HDFS block label CSV")
    p.add_argument("--format", choices=["hdfs", "line-tagged"], default="line-tagged")
    p.add_argument("--source", default="generic",
                   choices=[s.value for s in Source], help="source tag for line-tagged logs")
    p.add_argument("--log-train", dest="log_train", help="pre-split training log (line-tagged)")
    p.add_argument("--log-test", dest="log_test", help="pre-split test log (line-tagged)")
    p.add_argument("--train-fraction", type=float, dest="train_fraction")
    p.add_argument("--rules", help="normalization rule file (default: built-in rules)")
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train-tokenizer", help="train the subword vocabulary")
    p.add_argument("--train", required=True, help="normalized training corpus (train.txt)")
    p.add_argument("--vocab", required=True, help="output vocabulary file")
    p.add_argument("--vocab-size", type=int, dest="vocab_size")
    p.add_argument("--min-frequency", type=int, dest="min_frequency")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_train_tokenizer)

    p = sub.add_parser("train", help="train the masked-token model")
    p.add_argument("--train", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, dest="train_steps")
    p.add_argument("--batch-size", type=int, dest="train_batch_size")
    p.add_argument("--lr", type=float, dest="train_learning_rate")
    p.add_argument("--layers", type=int, dest="model_n_layers")
    p.add_argument("--heads", type=int, dest="model_n_heads")
    p.add_argument("--d-model", type=int, dest="model_d_model")
    p.add_argument("--d-ff", type=int, dest="model_d_ff")
    p.add_argument("--max-seq-len", type=int, dest="model_max_seq_len")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a test set against a checkpoint")
    p.add_argument("--test", required=True, help="test.tsv from preprocess")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="output scores CSV")
    p.add_argument("--cache", help="dedup cache file to load/update")
    p.add_argument("--no-cache", action="store_true", help="recompute every line")
    p.add_argument("--k", type=int)
    p.add_argument("--mask-mode", choices=["token", "key"], dest="mask_mode")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="best-F1 / AUROC evaluation of a scores CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true", dest="no_figures")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("e2e", help="run the full chain on the synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, dest="train_steps")
    p.add_argument("--train-lines", type=int, dest="train_lines")
    p.add_argument("--test-lines", type=int, dest="test_lines")
    p.add_argument("--anomaly-rate", type=float, dest="anomaly_rate")
    p.add_argument("--k", type=int)
    p.add_argument("--mask-mode", choices=["token", "key"], dest="mask_mode")
    p.add_argument("--kinds", default="all")
    p.add_argument("--no-figures", action="store_true", dest="no_figures")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_e2e)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _load_config_file(args.config)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config-error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (CheckpointMismatch, VocabMismatch) as exc:
        print(f"checkpoint-mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except DataError as exc:
        print(f"data-error: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR
    except LogmaskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
