"""Character n-gram language models with absolute-discount backoff.

Training counts full-order character events over lines wrapped in
begin/end markers, marginalizes the counts down to every shorter context
length, and converts them to probabilities bottom-up:

* At the empty context, each observed symbol keeps ``(count - D) / total``
  and the discounted mass ``D * distinct / total`` is spread uniformly over
  the full predictable set (observed characters, the end marker, and a
  reserved unknown symbol). This is the only place unseen symbols -- in
  particular the unknown symbol -- receive probability.
* At longer contexts, each observed continuation keeps
  ``(count - D) / total`` and the discounted mass is redistributed over the
  context's observed continuations in proportion to their lower-order
  probabilities. Continuations never seen after a stored context score
  zero (``-inf`` in log space).

Scoring walks the longest stored suffix of the history, so a context
observed at full order is always scored from the full-order table.
Training and scoring both lower-case their input. All in-memory scores are
natural logs; the serialized form is log base 10.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError, LmParseError

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

_MARKERS = (BOS, EOS, UNK)

NEG_INF = float("-inf")
_LN10 = math.log(10.0)


@dataclass
class ContextNode:
    """Distribution over next symbols for one stored context."""

    probs: dict[str, float]  # symbol -> natural-log probability
    backoff: float = 0.0     # natural-log discount fraction of this context


@dataclass
class NGramModel:
    order: int
    alphabet: tuple[str, ...]           # markers first, then sorted characters
    tables: dict[int, dict[tuple[str, ...], ContextNode]]
    discount: float | None = 0.4
    _resolve_cache: dict = field(default_factory=dict, repr=False)

    # ------------------------------------------------------------------
    # scoring
    # ------------------------------------------------------------------

    @property
    def predictable(self) -> tuple[str, ...]:
        """Symbols the model assigns probability to (no begin marker)."""
        return tuple(s for s in self.alphabet if s != BOS)

    @property
    def characters(self) -> frozenset:
        return frozenset(s for s in self.alphabet if s not in _MARKERS)

    def resolve(self, window: tuple[str, ...]) -> tuple[str, ...]:
        """Longest stored suffix of ``window`` (always succeeds: () is stored)."""
        hit = self._resolve_cache.get(window)
        if hit is not None:
            return hit
        limit = min(len(window), self.order - 1)
        key: tuple[str, ...] = ()
        for length in range(limit, -1, -1):
            suffix = window[len(window) - length:]
            if suffix in self.tables.get(length, {}):
                key = suffix
                break
        self._resolve_cache[window] = key
        return key

    def node_prob(self, key: tuple[str, ...], symbol: str) -> float:
        return self.tables[len(key)][key].probs.get(symbol, NEG_INF)

    def _symbol(self, ch: str) -> str:
        if ch in _MARKERS:
            return ch
        return ch if ch in self.characters else UNK

    def score_next(self, history: str, next_symbol: str) -> float:
        """log P(next | last order-1 chars of history).

        ``next_symbol`` is a single character or the EOS marker; characters
        outside the alphabet are scored as the reserved unknown symbol.
        """
        history = history.lower()
        window = tuple(self._symbol(c) for c in history[max(0, len(history) - (self.order - 1)):])
        if next_symbol not in _MARKERS:
            next_symbol = self._symbol(next_symbol.lower())
        return self.node_prob(self.resolve(window), next_symbol)

    def score_sequence(self, text: str) -> float:
        """log P(text), begin-padded and terminated with EOS."""
        syms = [BOS] * (self.order - 1) + [self._symbol(c) for c in text.lower()] + [EOS]
        total = 0.0
        for i in range(self.order - 1, len(syms)):
            window = tuple(syms[i - (self.order - 1):i])
            total += self.node_prob(self.resolve(window), syms[i])
            if total == NEG_INF:
                return NEG_INF
        return total


def train_ngram(corpus: Iterable[str], order: int, discount: float = 0.4) -> NGramModel:
    """Train a character n-gram model on text lines.

    Lines are lower-cased, wrapped with ``order - 1`` begin markers and one
    end marker, and counted at full order; lower orders are marginals.
    """
    if order < 1:
        raise DataError("invalid order")
    if not (0.0 < discount < 1.0):
        raise DataError(f"discount {discount} outside (0, 1)")
    lines = [line.lower() for line in corpus]
    if not lines:
        raise DataError("empty corpus")

    full: dict[tuple[str, ...], dict[str, int]] = {}
    chars: set[str] = set()
    for line in lines:
        syms = [BOS] * (order - 1) + list(line) + [EOS]
        chars.update(line)
        for i in range(order - 1, len(syms)):
            ctx = tuple(syms[i - (order - 1):i])
            nxt = syms[i]
            bucket = full.get(ctx)
            if bucket is None:
                bucket = full[ctx] = {}
            bucket[nxt] = bucket.get(nxt, 0) + 1

    # counts per context length, marginalizing from the full order down
    counts: list[dict[tuple[str, ...], dict[str, int]]] = [dict() for _ in range(order)]
    counts[order - 1] = full
    for length in range(order - 2, -1, -1):
        lower: dict[tuple[str, ...], dict[str, int]] = {}
        for ctx, bucket in counts[length + 1].items():
            key = ctx[1:]
            dest = lower.get(key)
            if dest is None:
                dest = lower[key] = {}
            for sym, c in bucket.items():
                dest[sym] = dest.get(sym, 0) + c
        counts[length] = lower

    predictable = sorted(chars) + [EOS, UNK]
    tables: dict[int, dict[tuple[str, ...], ContextNode]] = {}

    # empty context: interpolate with uniform over the full predictable set
    root_counts = counts[0][()]
    total = sum(root_counts.values())
    gamma = discount * len(root_counts) / total
    uniform = 1.0 / len(predictable)
    root_probs = {}
    for sym in predictable:
        p = max(root_counts.get(sym, 0) - discount, 0.0) / total + gamma * uniform
        root_probs[sym] = math.log(p)
    tables[0] = {(): ContextNode(root_probs, math.log(gamma))}

    # longer contexts: discount mass goes to the observed continuations,
    # weighted by their lower-order probabilities
    for length in range(1, order):
        level: dict[tuple[str, ...], ContextNode] = {}
        lower_table = tables[length - 1]
        for ctx in sorted(counts[length].keys()):
            bucket = counts[length][ctx]
            total = sum(bucket.values())
            gamma = discount * len(bucket) / total
            lower = lower_table[ctx[1:]].probs
            norm = sum(math.exp(lower[sym]) for sym in bucket)
            probs = {}
            for sym, c in bucket.items():
                p = (c - discount) / total + gamma * math.exp(lower[sym]) / norm
                probs[sym] = math.log(p)
            level[ctx] = ContextNode(probs, math.log(gamma))
        tables[length] = level

    alphabet = tuple(_MARKERS) + tuple(sorted(chars))
    return NGramModel(order=order, alphabet=alphabet, tables=tables, discount=discount)


# ----------------------------------------------------------------------
# serialization: ARPA-style plain text, log base 10
# ----------------------------------------------------------------------


def _render_symbols(symbols: Sequence[str]) -> str:
    return "".join(symbols)


def _parse_symbols(text: str, line_no: int) -> tuple[str, ...]:
    out: list[str] = []
    i = 0
    while i < len(text):
        if text[i] == "<":
            for marker in _MARKERS:
                if text.startswith(marker, i):
                    out.append(marker)
                    i += len(marker)
                    break
            else:
                raise LmParseError(line_no, f"unknown marker at column {i}")
        else:
            out.append(text[i])
            i += 1
    return tuple(out)


def save_lm(model: NGramModel, path: str | Path) -> None:
    """Write the model as ARPA-style text (deterministic byte layout)."""
    if any("<" in c for c in model.characters):
        raise DataError("alphabet contains '<'; cannot serialize unambiguously")
    lines = ["\\data\\"]
    for length in range(model.order):
        n_entries = sum(len(node.probs) for node in model.tables[length].values())
        lines.append(f"ngram {length + 1}={n_entries}")
    for length in range(model.order):
        lines.append("")
        lines.append(f"\\{length + 1}-grams:")
        for ctx in sorted(model.tables[length].keys()):
            node = model.tables[length][ctx]
            for sym in sorted(node.probs.keys()):
                logp10 = node.probs[sym] / _LN10
                child = ctx + (sym,)
                child_node = model.tables.get(length + 1, {}).get(child)
                bo10 = child_node.backoff / _LN10 if child_node is not None else 0.0
                lines.append(f"{logp10!r}\t{_render_symbols(child)}\t{bo10!r}")
    lines.append("")
    lines.append("\\end\\")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_lm(path: str | Path) -> NGramModel:
    """Parse an ARPA-style file back into a model.

    Raises LmParseError with the offending line number on malformed input.
    """
    raw = Path(path).read_text(encoding="utf-8").split("\n")
    pos = 0

    def fail(msg: str):
        raise LmParseError(pos + 1, msg)

    while pos < len(raw) and raw[pos].strip() == "":
        pos += 1
    if pos >= len(raw) or raw[pos].strip() != "\\data\\":
        fail("expected \\data\\ header")
    pos += 1
    expected: dict[int, int] = {}
    while pos < len(raw) and raw[pos].strip().startswith("ngram "):
        body = raw[pos].strip()[len("ngram "):]
        try:
            k, n = body.split("=")
            expected[int(k)] = int(n)
        except ValueError:
            fail(f"bad count line: {raw[pos]!r}")
        pos += 1
    if not expected or sorted(expected) != list(range(1, max(expected) + 1)):
        fail("missing or non-contiguous ngram counts")
    order = max(expected)

    tables: dict[int, dict[tuple[str, ...], ContextNode]] = {k: {} for k in range(order)}
    pending_backoff: dict[tuple[str, ...], float] = {}
    seen_end = False
    section = None
    section_counts = {k: 0 for k in expected}
    while pos < len(raw):
        line = raw[pos].rstrip("\n")
        stripped = line.strip()
        if stripped == "":
            pos += 1
            continue
        if stripped == "\\end\\":
            seen_end = True
            pos += 1
            continue
        if stripped.startswith("\\") and stripped.endswith("-grams:"):
            try:
                section = int(stripped[1:-len("-grams:")])
            except ValueError:
                fail(f"bad section header: {stripped!r}")
            if section not in expected:
                fail(f"section {section} not declared in header")
            pos += 1
            continue
        if section is None:
            fail(f"unexpected content outside section: {stripped!r}")
        parts = line.split("\t")
        if len(parts) != 3:
            fail(f"expected 3 tab-separated fields, got {len(parts)}")
        try:
            logp = float(parts[0]) * _LN10
            backoff = float(parts[2]) * _LN10
        except ValueError:
            fail("non-numeric probability or backoff")
        symbols = _parse_symbols(parts[1], pos + 1)
        if len(symbols) != section:
            fail(f"{len(symbols)}-symbol entry in {section}-gram section")
        ctx, sym = symbols[:-1], symbols[-1]
        node = tables[section - 1].setdefault(ctx, ContextNode({}, 0.0))
        node.probs[sym] = logp
        pending_backoff[symbols] = backoff
        section_counts[section] += 1
        pos += 1

    if not seen_end:
        raise LmParseError(len(raw), "missing \\end\\ footer (truncated file)")
    for k, n in expected.items():
        if section_counts[k] != n:
            raise LmParseError(len(raw), f"{k}-gram section has {section_counts[k]} entries, header says {n}")
    for symbols, bo in pending_backoff.items():
        node = tables.get(len(symbols), {}).get(symbols)
        if node is not None:
            node.backoff = bo

    chars = set()
    for ctx, node in tables[0].items():
        chars.update(s for s in node.probs if s not in _MARKERS)
    for level in tables.values():
        for ctx in level:
            chars.update(s for s in ctx if s not in _MARKERS)
    alphabet = tuple(_MARKERS) + tuple(sorted(chars))
    return NGramModel(order=order, alphabet=alphabet, tables=tables, discount=None)
