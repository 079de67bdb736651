"""Deterministic synthetic log benchmark: grammar-driven normal lines plus
controlled anomaly injections.

Normal lines come from weighted templates whose slots draw from per-slot
filler sets. Anomalies corrupt a normal line at one of three levels: an
unseen reserved token (never in the training vocabulary), a slot filled from
the wrong slot's set (known word, wrong context), or two adjacent fixed keys
swapped (order violation). Everything is reproducible from the grammar seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError, EmptyGrammar
from .ingest import Label, LogRecord, Source

log = logging.getLogger(__name__)

SLOT_OPEN, SLOT_CLOSE = "<", ">"


class AnomalyKind(Enum):
    UNSEEN_TOKEN = "unseen-token"
    SLOT_VIOLATION = "slot-violation"
    ORDER_BREAK = "order-break"


ALL_KINDS = (AnomalyKind.UNSEEN_TOKEN, AnomalyKind.SLOT_VIOLATION, AnomalyKind.ORDER_BREAK)


@dataclass(slots=True)
class Template:
    name: str
    weight: float
    tokens: list[str]  # fixed words, or "<slot>" references

    def slot_positions(self) -> list[int]:
        return [i for i, t in enumerate(self.tokens) if t.startswith(SLOT_OPEN)]


@dataclass
class LogGrammar:
    """Weighted templates plus an optional iid "chatter" component.

    A drawn line is, with small probability, tail noise instead of a clean
    template instance: word salad over the grammar's own vocabulary
    (``noise_weight``), a template instance with its tokens randomly permuted
    (``scramble_weight``), or a template instance with one or two positions
    substituted by random vocabulary words (``mutate_weight``). Real log
    corpora carry such a thin tail of oddball-but-normal lines; training on it
    is what teaches the model to hedge on any context that deviates from a
    template -- salad covers unfamiliar token bags, scrambles unfamiliar
    order, mutations near-miss lines -- which is what makes predictive
    probability drop on corrupted test lines instead of staying confidently
    wrong.
    """

    templates: list[Template]
    slot_fillers: dict[str, list[str]]
    seed: int = 0
    anomaly_tokens: list[str] = field(default_factory=lambda: ["zzzap", "qlxj", "jxqz"])
    transition: Optional[dict[str, list[str]]] = None
    noise_weight: float = 0.0
    noise_len: int = 6
    scramble_weight: float = 0.0
    mutate_weight: float = 0.0
    extra_noise_words: list[str] = field(default_factory=list)
    version: str = "unversioned"

    def __post_init__(self) -> None:
        if not self.templates:
            raise EmptyGrammar("grammar has no templates")
        if any(t.weight <= 0 for t in self.templates):
            raise ConfigError("template weights must be positive")
        if not 0.0 <= self.noise_weight < 1.0:
            raise ConfigError("noise_weight must be in [0, 1)")
        tail = self.noise_weight + self.scramble_weight + self.mutate_weight
        if self.scramble_weight < 0 or self.mutate_weight < 0 or tail >= 1.0:
            raise ConfigError("noise + scramble + mutate weights must stay below 1")
        normal_tokens: set[str] = set()
        for t in self.templates:
            for tok in t.tokens:
                if tok.startswith(SLOT_OPEN):
                    slot = tok[1:-1]
                    if not tok.endswith(SLOT_CLOSE) or slot not in self.slot_fillers:
                        raise ConfigError(f"template {t.name}: unknown slot {tok}")
                    normal_tokens.update(self.slot_fillers[slot])
                else:
                    normal_tokens.add(tok)
        for tok in list(normal_tokens) + self.extra_noise_words:
            if not tok.isalpha() or not tok.islower():
                raise ConfigError(
                    f"grammar token {tok!r} must be lowercase alphabetic so lines "
                    "pass through normalization unchanged"
                )
        overlap = (normal_tokens | set(self.extra_noise_words)) & set(self.anomaly_tokens)
        if overlap:
            raise ConfigError(f"anomaly tokens collide with normal tokens: {overlap}")
        # salad may use chatter-only words on top of the template vocabulary
        self.word_pool: list[str] = sorted(normal_tokens | set(self.extra_noise_words))

    def template_by_name(self, name: str) -> Template:
        for t in self.templates:
            if t.name == name:
                return t
        raise ConfigError(f"no template named {name}")

    def match_template(self, tokens: list[str]) -> Optional[Template]:
        """Find the template that generated a token list, if any."""
        for t in self.templates:
            if len(t.tokens) != len(tokens):
                continue
            ok = True
            for spec_tok, tok in zip(t.tokens, tokens):
                if spec_tok.startswith(SLOT_OPEN):
                    if tok not in self.slot_fillers[spec_tok[1:-1]]:
                        ok = False
                        break
                elif spec_tok != tok:
                    ok = False
                    break
            if ok:
                return t
        return None


@dataclass(slots=True)
class Injection:
    """Diagnostic record of one corruption."""

    line_no: int
    kind: AnomalyKind
    position: int
    original: str
    corrupted: str


def _weighted_choice(rng: np.random.Generator, templates: list[Template]) -> Template:
    weights = np.array([t.weight for t in templates], dtype=np.float64)
    cum = np.cumsum(weights / weights.sum())
    return templates[int(np.searchsorted(cum, rng.random(), side="right"))]


def generate_normal(
    grammar: LogGrammar,
    n: int,
    start_index: int = 0,
    with_noise: bool = True,
) -> list[LogRecord]:
    """Draw ``n`` normal lines; line i is reproducible from (grammar, seed, i).

    Each line gets its own child generator keyed by (seed, start_index + i);
    with transition constraints the template chain is replayed from the start
    index, which is still a pure function of the grammar and seed. Passing
    ``with_noise=False`` suppresses the chatter component (used for test-side
    draws, where every normal line should be a clean template instance).
    """
    if n < 1:
        raise ConfigError(f"n must be at least 1, got {n}")
    records: list[LogRecord] = []
    prev_name: Optional[str] = None
    for i in range(start_index, start_index + n):
        rng = np.random.default_rng(np.random.SeedSequence((grammar.seed, i)))
        u = rng.random()
        if with_noise and u < grammar.noise_weight:
            pool_ids = rng.integers(len(grammar.word_pool), size=grammar.noise_len)
            tokens = [grammar.word_pool[int(j)] for j in pool_ids]
        else:
            scramble = with_noise and u < grammar.noise_weight + grammar.scramble_weight
            mutate = (
                with_noise
                and not scramble
                and u < grammar.noise_weight + grammar.scramble_weight + grammar.mutate_weight
            )
            pool = grammar.templates
            if grammar.transition and prev_name in grammar.transition:
                allowed = set(grammar.transition[prev_name])
                pool = [t for t in grammar.templates if t.name in allowed] or pool
            template = _weighted_choice(rng, pool)
            prev_name = template.name
            tokens = []
            filler_by_slot: dict[str, str] = {}
            for tok in template.tokens:
                if tok.startswith(SLOT_OPEN):
                    slot = tok[1:-1]
                    if slot not in filler_by_slot:
                        fillers = grammar.slot_fillers[slot]
                        filler_by_slot[slot] = fillers[int(rng.integers(len(fillers)))]
                    tokens.append(filler_by_slot[slot])
                else:
                    tokens.append(tok)
            if scramble:
                tokens = [tokens[int(j)] for j in rng.permutation(len(tokens))]
            elif mutate:
                n_subs = 1 + int(rng.random() < 0.4)
                for pos in rng.choice(len(tokens), size=min(n_subs, len(tokens)), replace=False):
                    choices = [w for w in grammar.word_pool if w != tokens[int(pos)]]
                    tokens[int(pos)] = choices[int(rng.integers(len(choices)))]
        line = " ".join(tokens)
        records.append(
            LogRecord(
                raw=line,
                normalized=line,  # grammar tokens are already normalization-neutral
                source=Source.SYNTHETIC,
                group_id=None,
                label=Label.NORMAL,
                line_no=i,
            )
        )
    return records


def _corrupt_unseen(grammar, tokens, rng) -> tuple[list[str], int]:
    pos = int(rng.integers(len(tokens) + 1))
    bad = grammar.anomaly_tokens[int(rng.integers(len(grammar.anomaly_tokens)))]
    return tokens[:pos] + [bad] + tokens[pos:], pos


def _corrupt_slot(grammar, tokens, rng) -> Optional[tuple[list[str], int]]:
    template = grammar.match_template(tokens)
    if template is None:
        return None
    slot_pos = template.slot_positions()
    if not slot_pos or len(grammar.slot_fillers) < 2:
        return None
    pos = slot_pos[int(rng.integers(len(slot_pos)))]
    own_slot = template.tokens[pos][1:-1]
    other_slots = sorted(s for s in grammar.slot_fillers if s != own_slot)
    wrong_slot = other_slots[int(rng.integers(len(other_slots)))]
    fillers = sorted(set(grammar.slot_fillers[wrong_slot]) - {tokens[pos]})
    if not fillers:
        return None
    out = list(tokens)
    out[pos] = fillers[int(rng.integers(len(fillers)))]
    return out, pos


def _corrupt_order(grammar, tokens, rng) -> Optional[tuple[list[str], int]]:
    template = grammar.match_template(tokens)
    slots = set(template.slot_positions()) if template else set()
    candidates = [
        i
        for i in range(len(tokens) - 1)
        if tokens[i] != tokens[i + 1] and i not in slots and i + 1 not in slots
    ]
    if not candidates:
        return None
    pos = candidates[int(rng.integers(len(candidates)))]
    out = list(tokens)
    out[pos], out[pos + 1] = out[pos + 1], out[pos]
    return out, pos


def inject_anomalies(
    grammar: LogGrammar,
    records: list[LogRecord],
    kinds: Iterable[AnomalyKind] = ALL_KINDS,
    rate: float = 0.1,
) -> tuple[list[LogRecord], list[Injection]]:
    """Corrupt a ``rate`` fraction of lines and relabel them abnormal.

    Untouched lines are returned unchanged (same objects). A kind that cannot
    apply to the selected line (e.g. a slot violation on a slotless template)
    falls back to the unseen-token corruption so the selected line is always
    corrupted. Corruption positions are returned and logged for diagnosis.
    """
    if not 0.0 < rate < 1.0:
        raise ConfigError(f"rate must be in (0, 1), got {rate}")
    kind_list = sorted(set(kinds), key=lambda k: k.value)
    if not kind_list:
        raise ConfigError("kinds must be non-empty")
    rng = np.random.default_rng(np.random.SeedSequence((grammar.seed, 0x1B7E)))
    out: list[LogRecord] = []
    injections: list[Injection] = []
    for rec in records:
        if rng.random() >= rate:
            out.append(rec)
            continue
        kind = kind_list[int(rng.integers(len(kind_list)))]
        tokens = rec.normalized.split()
        result = None
        if kind is AnomalyKind.SLOT_VIOLATION:
            result = _corrupt_slot(grammar, tokens, rng)
        elif kind is AnomalyKind.ORDER_BREAK:
            result = _corrupt_order(grammar, tokens, rng)
        if result is None:
            kind = AnomalyKind.UNSEEN_TOKEN
            result = _corrupt_unseen(grammar, tokens, rng)
        new_tokens, pos = result
        line = " ".join(new_tokens)
        out.append(
            LogRecord(
                raw=line,
                normalized=line,
                source=rec.source,
                group_id=rec.group_id,
                label=Label.ABNORMAL,
                line_no=rec.line_no,
            )
        )
        injections.append(
            Injection(rec.line_no, kind, pos, rec.normalized, line)
        )
    log.info("injected %d anomalies into %d lines", len(injections), len(records))
    return out, injections


# --- default desk-scale benchmark -------------------------------------------

BENCHMARK_TRAIN_LINES = 20_000
BENCHMARK_TEST_LINES = 2_000
BENCHMARK_ANOMALY_RATE = 0.10


def benchmark_grammar(seed: int = 7) -> LogGrammar:
    """Six templates over a 30-word vocabulary (24 fixed keys, 6 fillers).

    Every position of a clean line is determined by its context: each slot
    appears twice with the same filler (the twin acts as an in-line checksum)
    and template pairs that share a prefix differ in two correlated positions
    (opened/fast vs closed/slow), so a trained model is confident everywhere
    on normal lines. The small salad/scramble tail is what teaches it to
    hedge on contexts that deviate from the templates.
    """
    return LogGrammar(
        templates=[
            Template("session-open", 0.22,
                     ["gateway", "session", "opened", "client", "<actor>", "<actor>", "fast"]),
            Template("session-close", 0.18,
                     ["gateway", "session", "closed", "client", "<actor>", "<actor>", "slow"]),
            Template("sync-start", 0.18,
                     ["storage", "sync", "started", "volume", "<vol>", "<vol>", "hot"]),
            Template("sync-finish", 0.14,
                     ["storage", "sync", "finished", "volume", "<vol>", "<vol>", "cold"]),
            Template("heartbeat", 0.16,
                     ["scheduler", "heartbeat", "from", "worker", "<worker>", "<worker>", "steady"]),
            Template("watchdog", 0.12,
                     ["watchdog", "timer", "reset", "module", "clean"]),
        ],
        slot_fillers={
            "actor": ["alice", "bob"],
            "vol": ["vega", "rigel"],
            "worker": ["wren", "finch"],
        },
        seed=seed,
        anomaly_tokens=["zzzap", "qlxj", "jxqz"],
        noise_weight=0.02,
        noise_len=6,
        scramble_weight=0.03,
        version="benchmark-v4",
    )


def write_tagged_log(records: list[LogRecord], path: str | Path, anomaly_tag: str = "ANOM") -> None:
    """Write records in the alert-tag line format the ingest loader reads."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            tag = "-" if r.label is Label.NORMAL else anomaly_tag
            fh.write(f"{tag} {r.raw}\n")


# --- grammar file format -----------------------------------------------------

def load_grammar(path: str | Path) -> LogGrammar:
    """Parse the plain-text grammar format (see ``save_grammar``)."""
    path = Path(path)
    templates: list[Template] = []
    slot_fillers: dict[str, list[str]] = {}
    transition: dict[str, list[str]] = {}
    seed = 0
    version = path.stem
    anomaly_tokens: list[str] = []
    noise_weight = 0.0
    noise_len = 6
    scramble_weight = 0.0
    mutate_weight = 0.0
    extra_noise_words: list[str] = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        head, _, rest = line.partition(" ")
        if head == "version":
            version = rest.strip()
        elif head == "seed":
            seed = int(rest)
        elif head == "anomaly-tokens":
            anomaly_tokens = rest.split()
        elif head == "noise":
            weight_str, _, len_str = rest.partition(" ")
            noise_weight = float(weight_str)
            noise_len = int(len_str) if len_str.strip() else 6
        elif head == "scramble":
            scramble_weight = float(rest)
        elif head == "mutate":
            mutate_weight = float(rest)
        elif head == "extra-noise-words":
            extra_noise_words = rest.split()
        elif head == "slot":
            name, *fillers = rest.split()
            slot_fillers[name] = fillers
        elif head == "template":
            spec, _, tokens = rest.partition(":")
            parts = spec.split()
            if len(parts) != 2 or not tokens.strip():
                raise ConfigError(f"{path}:{i}: expected 'template <name> <weight> : tokens...'")
            templates.append(Template(parts[0], float(parts[1]), tokens.split()))
        elif head == "after":
            name, _, successors = rest.partition(":")
            transition[name.strip()] = successors.split()
        else:
            raise ConfigError(f"{path}:{i}: unknown directive {head!r}")
    kwargs = dict(
        templates=templates, slot_fillers=slot_fillers, seed=seed, version=version,
        transition=transition or None, noise_weight=noise_weight, noise_len=noise_len,
        scramble_weight=scramble_weight, mutate_weight=mutate_weight,
        extra_noise_words=extra_noise_words,
    )
    if anomaly_tokens:
        kwargs["anomaly_tokens"] = anomaly_tokens
    return LogGrammar(**kwargs)


def save_grammar(grammar: LogGrammar, path: str | Path) -> None:
    lines = [f"version {grammar.version}", f"seed {grammar.seed}"]
    lines.append("anomaly-tokens " + " ".join(grammar.anomaly_tokens))
    if grammar.noise_weight > 0:
        lines.append(f"noise {grammar.noise_weight} {grammar.noise_len}")
    if grammar.scramble_weight > 0:
        lines.append(f"scramble {grammar.scramble_weight}")
    if grammar.mutate_weight > 0:
        lines.append(f"mutate {grammar.mutate_weight}")
    if grammar.extra_noise_words:
        lines.append("extra-noise-words " + " ".join(grammar.extra_noise_words))
    for name, fillers in grammar.slot_fillers.items():
        lines.append(f"slot {name} " + " ".join(fillers))
    for t in grammar.templates:
        lines.append(f"template {t.name} {t.weight} : " + " ".join(t.tokens))
    if grammar.transition:
        for name, successors in grammar.transition.items():
            lines.append(f"after {name} : " + " ".join(successors))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
