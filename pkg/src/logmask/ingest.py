"""Raw log ingestion: regex normalization, labeling, train/test splitting.

No template mining happens here. Dynamic fields (block ids, IPs, dates, hex
runs, numbers) are replaced by uppercase placeholder words through an ordered,
config-driven rule set; everything else is lowercased. The result is the
"normalized" text that the tokenizer and the score cache key on.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .errors import (
    ConfigError,
    DataError,
    MalformedLabelRow,
    MissingLabelFile,
    NoNormalRecords,
)

log = logging.getLogger(__name__)

BLOCK_ID_RE = re.compile(r"blk_-?\d+")


class Source(Enum):
    HDFS = "hdfs"
    BGL = "bgl"
    THUNDERBIRD = "thunderbird"
    SYNTHETIC = "synthetic"
    GENERIC = "generic"


class Label(Enum):
    NORMAL = "normal"
    ABNORMAL = "abnormal"
    UNLABELED = "unlabeled"


@dataclass(slots=True)
class LogRecord:
    """One log line with its normalized form and source metadata.

    ``group_id`` is the HDFS block id and is set only for HDFS records;
    line-labeled sources (BGL, Thunderbird, synthetic) label each line
    individually and carry no group.
    """

    raw: str
    normalized: str
    source: Source
    group_id: Optional[str]
    label: Label
    line_no: int


@dataclass
class IngestStats:
    """Counters reported by the loaders (skipped lines are never silent)."""

    lines_read: int = 0
    skipped_empty: int = 0
    decode_errors: int = 0
    skipped_no_block_id: int = 0
    unlabeled: int = 0


class NormalizationRuleSet:
    """Ordered (pattern -> placeholder) rules applied before tokenization.

    Placeholders must be plain uppercase alphabetic words. Application is
    expected to be idempotent: every default pattern requires at least one
    digit, and normalized output contains none.
    """

    def __init__(self, pairs: Iterable[tuple[str, str]], version: str = "unversioned"):
        self.version = version
        self.rules: list[tuple[re.Pattern[str], str]] = []
        placeholders: list[str] = []
        for pattern, placeholder in pairs:
            if not re.fullmatch(r"[A-Z]+", placeholder):
                raise ConfigError(
                    f"placeholder {placeholder!r} must be uppercase alphabetic"
                )
            self.rules.append((re.compile(pattern), placeholder))
            if placeholder not in placeholders:
                placeholders.append(placeholder)
        if not self.rules:
            raise ConfigError("rule set has no rules")
        self._placeholder_set = frozenset(placeholders)
        self._upper_run_re = re.compile(r"[A-Z]+")

    def placeholders(self) -> list[str]:
        return list(dict.fromkeys(repl for _, repl in self.rules))

    @classmethod
    def from_file(cls, path: str | Path) -> "NormalizationRuleSet":
        """Parse the plain-text rule file.

        Format: one rule per line, ``PLACEHOLDER <whitespace> <regex>`` where
        the regex is the remainder of the line. ``#`` starts a comment and an
        optional ``version <text>`` line names the rule set. Order in the file
        is the application order.
        """
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"rule file not found: {path}")
        version = path.stem
        pairs: list[tuple[str, str]] = []
        for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            head, _, rest = line.partition(" ")
            if head == "version":
                version = rest.strip()
                continue
            if not rest.strip():
                raise ConfigError(f"{path}:{i}: rule line needs a placeholder and a pattern")
            pairs.append((rest.strip(), head))
        return cls(pairs, version=version)

    def to_file(self, path: str | Path) -> None:
        lines = [f"version {self.version}"]
        lines += [f"{repl} {pat.pattern}" for pat, repl in self.rules]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def default_rules() -> NormalizationRuleSet:
    """Placeholder rules covering block ids, IPs, dates, hex runs, numbers.

    Order matters: specific shapes first, the catch-all digit run last.
    """
    return NormalizationRuleSet(
        [
            (r"blk_-?\d+", "BLK"),
            (r"/?\b\d{1,3}\.\d{1,3}\.\d{1,3}\.\d{1,3}(?::\d{1,5})?\b", "IP"),
            (r"\d{4}-\d{2}-\d{2}(?:[-T ]\d{2}[.:]\d{2}[.:]\d{2}(?:\.\d+)?)?", "DATE"),
            (r"\d{4}\.\d{2}\.\d{2}", "DATE"),
            (r"\b1\d{9}\b", "DATE"),  # epoch seconds, 2001..2033
            (r"\b0[xX][0-9a-fA-F]+\b", "HEX"),
            (r"\b(?=[0-9a-f]*\d)(?=[0-9a-f]*[a-f])[0-9a-f]{8,}\b", "HEX"),
            (r"\d+", "NUM"),
        ],
        version="default-v1",
    )


def normalize_line(raw: str, rules: NormalizationRuleSet) -> str:
    """Apply the rule set to one line, collapse whitespace, lowercase.

    Lowercasing preserves any maximal uppercase run that exactly equals a
    placeholder name (so an inserted placeholder survives even when glued to
    other text, e.g. "532ms" -> "NUMms"); placeholder names are effectively
    reserved words. Empty input yields empty output.
    """
    text = raw
    for pattern, placeholder in rules.rules:
        text = pattern.sub(placeholder, text)
    text = " ".join(text.split())
    if not text:
        return ""
    keep = rules._placeholder_set
    return rules._upper_run_re.sub(
        lambda m: m.group(0) if m.group(0) in keep else m.group(0).lower(), text
    )


def _iter_decoded_lines(path: Path, stats: IngestStats) -> Iterator[str]:
    """Yield decoded lines, replacing invalid UTF-8 and counting occurrences."""
    with open(path, "rb") as fh:
        for raw in fh:
            raw = raw.rstrip(b"\r\n")
            stats.lines_read += 1
            try:
                yield raw.decode("utf-8")
            except UnicodeDecodeError:
                stats.decode_errors += 1
                yield raw.decode("utf-8", errors="replace")


def read_hdfs_labels(label_path: str | Path) -> dict[str, Label]:
    """Read the two-column ``BlockId,Label`` file (header row optional)."""
    path = Path(label_path)
    if not path.exists():
        raise MissingLabelFile(f"label file not found: {path}")
    labels: dict[str, Label] = {}
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        cols = [c.strip() for c in line.split(",")]
        if i == 1 and cols[0].lower() == "blockid":
            continue
        if len(cols) != 2 or not BLOCK_ID_RE.fullmatch(cols[0]):
            raise MalformedLabelRow(f"{path}:{i}: expected 'blk_<id>,Normal|Anomaly', got {line!r}")
        value = cols[1].lower()
        if value == "normal":
            labels[cols[0]] = Label.NORMAL
        elif value == "anomaly":
            labels[cols[0]] = Label.ABNORMAL
        else:
            raise MalformedLabelRow(f"{path}:{i}: unknown label {cols[1]!r}")
    return labels


def load_hdfs(
    log_path: str | Path,
    label_path: str | Path,
    rules: NormalizationRuleSet,
    stats: IngestStats | None = None,
) -> Iterator[LogRecord]:
    """Stream HDFS records, one per line, labeled by their block id.

    The block id is extracted from the raw line before normalization and kept
    as ``group_id``. Lines without any block id cannot be labeled and are
    skipped (counted in ``stats``); lines whose block id is missing from the
    label file come out ``UNLABELED`` and are dropped later by the splitter.
    """
    stats = stats if stats is not None else IngestStats()
    labels = read_hdfs_labels(label_path)
    for line_no, line in enumerate(_iter_decoded_lines(Path(log_path), stats)):
        if not line.strip():
            stats.skipped_empty += 1
            continue
        m = BLOCK_ID_RE.search(line)
        if m is None:
            stats.skipped_no_block_id += 1
            continue
        block_id = m.group(0)
        label = labels.get(block_id, Label.UNLABELED)
        if label is Label.UNLABELED:
            stats.unlabeled += 1
        yield LogRecord(
            raw=line,
            normalized=normalize_line(line, rules),
            source=Source.HDFS,
            group_id=block_id,
            label=label,
            line_no=line_no,
        )


def load_line_labeled(
    log_path: str | Path,
    source: Source,
    rules: NormalizationRuleSet,
    stats: IngestStats | None = None,
) -> Iterator[LogRecord]:
    """Stream records from an alert-tagged log (BGL/Thunderbird layout).

    The first whitespace-delimited field is the alert tag: the literal ``-``
    means non-alert (normal), anything else is an alert (abnormal). The tag is
    stripped before normalization. Lines that are empty after the tag strip
    are skipped and counted.
    """
    stats = stats if stats is not None else IngestStats()
    for line_no, line in enumerate(_iter_decoded_lines(Path(log_path), stats)):
        stripped = line.strip()
        if not stripped:
            stats.skipped_empty += 1
            continue
        tag, _, rest = stripped.partition(" ")
        if not rest.strip():
            stats.skipped_empty += 1
            continue
        label = Label.NORMAL if tag == "-" else Label.ABNORMAL
        yield LogRecord(
            raw=line,
            normalized=normalize_line(rest, rules),
            source=source,
            group_id=None,
            label=label,
            line_no=line_no,
        )


def split_train_test(
    records: Iterable[LogRecord],
    train_fraction: float,
) -> tuple[list[LogRecord], list[LogRecord]]:
    """Chronological split; the training side keeps only normal records.

    The earliest ``train_fraction`` of records (by ``line_no``) forms the
    training window; abnormal records inside the window are moved to the test
    side so training data stays purely normal. Unlabeled records are excluded
    from both sides. HDFS records are split by whole blocks (ordered by each
    block's first line) so no block straddles the boundary.
    """
    if not 0.0 < train_fraction <= 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1], got {train_fraction}")
    ordered = sorted(
        (r for r in records if r.label is not Label.UNLABELED),
        key=lambda r: r.line_no,
    )
    if not ordered:
        raise NoNormalRecords("no labeled records to split")

    grouped = any(r.group_id is not None for r in ordered)
    train: list[LogRecord] = []
    test: list[LogRecord] = []
    if grouped:
        blocks: dict[str, list[LogRecord]] = {}
        for rec in ordered:
            if rec.group_id is None:
                raise DataError("mixed grouped and ungrouped records in one split")
            blocks.setdefault(rec.group_id, []).append(rec)
        block_list = list(blocks.values())
        n_window = int(train_fraction * len(block_list))
        for i, members in enumerate(block_list):
            abnormal = any(r.label is Label.ABNORMAL for r in members)
            if i < n_window and not abnormal:
                train.extend(members)
            else:
                test.extend(members)
    else:
        n_window = int(train_fraction * len(ordered))
        for i, rec in enumerate(ordered):
            if i < n_window and rec.label is Label.NORMAL:
                train.append(rec)
            else:
                test.append(rec)

    if not train:
        raise NoNormalRecords("training window contains no normal records")
    return train, test
