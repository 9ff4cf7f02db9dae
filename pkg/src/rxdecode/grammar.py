"""Probabilistic generator of synthetic medicine-name lines.

A line is produced by walking fixed nodes in order -- enumeration token,
medicine type, root name, suffix -- and joining the emitted pieces with
single spaces. The root name is mandatory; the other nodes can be disabled
(empty token list), mandatory, or optional. Optional nodes are skipped with
probability 1/2 and all in-node choices are uniform.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import DataError, GrammarError

NODE_ORDER = ("enum", "type", "name", "suffix")


@dataclass(frozen=True)
class MedicineEntry:
    name: str
    kind: str

    def __post_init__(self):
        object.__setattr__(self, "name", self.name.strip().lower())
        object.__setattr__(self, "kind", self.kind.strip().lower())
        if not self.name:
            raise DataError("medicine entry with empty name")


@dataclass
class MedicineVocabulary:
    entries: list[MedicineEntry]
    _by_name: dict[str, MedicineEntry] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for entry in self.entries:
            if entry.name in self._by_name:
                raise DataError(f"duplicate medicine name: {entry.name}")
            self._by_name[entry.name] = entry

    @property
    def names(self) -> frozenset:
        return frozenset(self._by_name)

    def __contains__(self, name: str) -> bool:
        return name.lower() in self._by_name

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, name: str) -> MedicineEntry | None:
        return self._by_name.get(name.lower())


@dataclass
class GrammarSpec:
    enum_tokens: list[str]
    type_tokens: dict[str, list[str]]
    suffix_tokens: list[str]
    optional: dict[str, bool]
    entries: list[MedicineEntry]

    def validate(self) -> None:
        for node in ("enum", "type", "suffix"):
            if node not in self.optional:
                raise GrammarError(f"missing optional flag for node {node!r}")
        if "name" in self.optional and self.optional["name"]:
            raise GrammarError("root-name node cannot be optional")
        for kind, forms in self.type_tokens.items():
            if len(set(forms)) != len(forms):
                raise GrammarError(f"duplicate type forms for kind {kind!r}")
        for name, tokens in (("enum", self.enum_tokens), ("suffix", self.suffix_tokens)):
            if len(set(tokens)) != len(tokens):
                raise GrammarError(f"duplicate tokens in {name} node")

    def node_options(self, node: str, entry: MedicineEntry) -> list[str]:
        """Token choices for a node; empty list means the node is disabled."""
        if node == "enum":
            return list(self.enum_tokens)
        if node == "type":
            return list(self.type_tokens.get(entry.kind, []))
        if node == "name":
            return [entry.name]
        if node == "suffix":
            return list(self.suffix_tokens)
        raise GrammarError(f"unknown node {node!r}")

    def is_optional(self, node: str) -> bool:
        return node != "name" and bool(self.optional.get(node, False))


def sample_line(spec: GrammarSpec, entry: MedicineEntry, seed: int) -> str:
    """One random line for ``entry``; deterministic given ``seed``."""
    rng = random.Random(seed)
    parts = []
    for node in NODE_ORDER:
        options = spec.node_options(node, entry)
        if not options:
            continue
        if spec.is_optional(node) and rng.random() < 0.5:
            continue
        parts.append(options[rng.randrange(len(options))])
    return " ".join(parts)


def line_count(spec: GrammarSpec, entry: MedicineEntry) -> int:
    """Closed-form number of distinct lines for one entry."""
    count = 1
    for node in NODE_ORDER:
        options = spec.node_options(node, entry)
        if not options:
            continue
        count *= len(options) + (1 if spec.is_optional(node) else 0)
    return count


def enumerate_lines(spec: GrammarSpec, entry: MedicineEntry, limit: int = 0) -> list[str]:
    """All distinct lines for ``entry`` in lexicographic choice-index order.

    ``limit`` = 0 means unbounded; otherwise a combinatorial count above the
    limit raises GrammarError carrying the exact count.
    """
    total = line_count(spec, entry)
    if limit and total > limit:
        raise GrammarError(f"enumeration would produce {total} lines (> limit {limit})", count=total)
    per_node: list[list[str | None]] = []
    for node in NODE_ORDER:
        options = spec.node_options(node, entry)
        if not options:
            continue
        choices: list[str | None] = [None] if spec.is_optional(node) else []
        choices.extend(options)
        per_node.append(choices)

    lines: list[str] = []

    def walk(i: int, parts: list[str]) -> None:
        if i == len(per_node):
            lines.append(" ".join(parts))
            return
        for choice in per_node[i]:
            if choice is None:
                walk(i + 1, parts)
            else:
                parts.append(choice)
                walk(i + 1, parts)
                parts.pop()

    walk(0, [])
    return lines


def build_corpus(spec: GrammarSpec, mode: str = "exhaustive", samples_per_entry: int = 1,
                 seed: int = 0, entries: Iterable[MedicineEntry] | None = None) -> list[str]:
    """Concatenate per-entry lines over the whole vocabulary.

    ``mode`` is "exhaustive" (all distinct lines per entry) or "sampled"
    (``samples_per_entry`` draws per entry with per-entry derived seeds).
    """
    spec.validate()
    chosen = list(entries) if entries is not None else list(spec.entries)
    if not chosen:
        raise GrammarError("grammar spec has no entries")
    corpus: list[str] = []
    if mode == "exhaustive":
        for entry in chosen:
            corpus.extend(enumerate_lines(spec, entry, limit=0))
    elif mode == "sampled":
        if samples_per_entry < 1:
            raise GrammarError("sampled mode requires samples_per_entry >= 1")
        for j, entry in enumerate(chosen):
            for i in range(samples_per_entry):
                corpus.append(sample_line(spec, entry, seed + 1_000_003 * j + i))
    else:
        raise GrammarError(f"unknown corpus mode {mode!r}")
    return corpus


# ----------------------------------------------------------------------
# shipped defaults and file loading
# ----------------------------------------------------------------------

DEFAULT_ENUM_TOKENS = ["-", ".", "1.", "2.", "1)", "*"]
DEFAULT_TYPE_TOKENS = {
    "tab": ["tab", "tab."],
    "cap": ["cap"],
    "inj": ["inj"],
    "syp": ["syp"],
    "oint": ["oint"],
}
# dosage/frequency templates expanded from fixed numeric sets to keep
# enumeration finite; composite "dose frequency" forms included
DEFAULT_DOSE_TOKENS = [f"{n}mg" for n in (125, 250, 325, 400, 500, 650, 850)] + \
                      [f"{n}ml" for n in (5, 10, 15)]
DEFAULT_FREQ_TOKENS = ["1-0-1", "1-1-1", "0-0-1", "1-0-0", "0-1-0", "1-1-0", "0-0-2", "2-0-2"]
DEFAULT_SUFFIX_TOKENS = DEFAULT_DOSE_TOKENS + DEFAULT_FREQ_TOKENS + \
    [f"{dose} {freq}" for dose in DEFAULT_DOSE_TOKENS for freq in DEFAULT_FREQ_TOKENS]


def default_grammar(entries: list[MedicineEntry]) -> GrammarSpec:
    # suffix mandatory by default: dosage/frequency is nearly always written,
    # and it keeps top-k hypothesis families length-matched to the line
    spec = GrammarSpec(
        enum_tokens=list(DEFAULT_ENUM_TOKENS),
        type_tokens={k: list(v) for k, v in DEFAULT_TYPE_TOKENS.items()},
        suffix_tokens=list(DEFAULT_SUFFIX_TOKENS),
        optional={"enum": True, "type": True, "suffix": False},
        entries=entries,
    )
    spec.validate()
    return spec


def load_vocabulary(path: str | Path) -> MedicineVocabulary:
    """Read a ``name<TAB>kind`` vocabulary file."""
    entries = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise DataError(f"{path}: line {line_no}: expected name<TAB>kind")
        entries.append(MedicineEntry(fields[0], fields[1]))
    if not entries:
        raise DataError(f"{path}: empty vocabulary")
    return MedicineVocabulary(entries)


def load_grammar(path: str | Path, entries: list[MedicineEntry]) -> GrammarSpec:
    """Read a grammar spec from JSON; entries come from the vocabulary."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    spec = GrammarSpec(
        enum_tokens=list(raw.get("enum_tokens", DEFAULT_ENUM_TOKENS)),
        type_tokens={k: list(v) for k, v in raw.get("type_tokens", DEFAULT_TYPE_TOKENS).items()},
        suffix_tokens=list(raw.get("suffix_tokens", DEFAULT_SUFFIX_TOKENS)),
        optional=dict(raw.get("optional", {"enum": True, "type": True, "suffix": True})),
        entries=entries,
    )
    spec.validate()
    return spec
