"""Map ranked decoded strings onto a medicine vocabulary.

A decoded line such as ``- tab dolo 500mg`` carries the medicine name as
one of its tokens, so exact matching tests every whitespace token and every
contiguous token bigram against the vocabulary. Matching is
case-insensitive throughout.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .decoder import DecodedPath
from .grammar import MedicineVocabulary


@dataclass(frozen=True)
class MatchStrategy:
    kind: str
    edit_threshold: float = 0.85

    _KINDS = ("top1_exact", "top1_edit", "topk_first", "topk_majority")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {self._KINDS}")
        if not (0.0 <= self.edit_threshold <= 1.0):
            raise ValueError(f"edit threshold {self.edit_threshold} outside [0, 1]")

    @classmethod
    def top1_exact(cls) -> "MatchStrategy":
        return cls("top1_exact")

    @classmethod
    def top1_edit(cls, threshold: float = 0.85) -> "MatchStrategy":
        return cls("top1_edit", edit_threshold=threshold)

    @classmethod
    def topk_first(cls) -> "MatchStrategy":
        return cls("topk_first")

    @classmethod
    def topk_majority(cls) -> "MatchStrategy":
        return cls("topk_majority")


@dataclass(frozen=True)
class LinePrediction:
    medicine: str | None = None
    matched_rank: int | None = None
    vote_count: int = 0


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalized_similarity(a: str, b: str) -> float:
    """1 - edit distance / max length, in [0, 1]."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def candidate_tokens(text: str) -> list[str]:
    """Whitespace tokens followed by contiguous token bigrams, lower-cased."""
    tokens = text.lower().split()
    return tokens + [f"{tokens[i]} {tokens[i + 1]}" for i in range(len(tokens) - 1)]


def _names(vocab) -> frozenset:
    if isinstance(vocab, MedicineVocabulary):
        return vocab.names
    return frozenset(n.lower() for n in vocab)


def exact_matches(text: str, names: frozenset) -> list[str]:
    """Vocabulary hits among the candidate tokens, in candidate order, deduplicated."""
    seen = []
    for cand in candidate_tokens(text):
        if cand in names and cand not in seen:
            seen.append(cand)
    return seen


def match_line(paths: Sequence[DecodedPath], vocab, strategy: MatchStrategy) -> LinePrediction:
    """Predict at most one vocabulary medicine for one line's ranked paths."""
    names = _names(vocab)
    if not paths:
        return LinePrediction()

    if strategy.kind == "top1_exact":
        hits = exact_matches(paths[0].text, names)
        if hits:
            return LinePrediction(medicine=hits[0], matched_rank=0, vote_count=1)
        return LinePrediction()

    if strategy.kind == "top1_edit":
        best_name = None
        best_sim = -1.0
        for cand in candidate_tokens(paths[0].text):
            for name in names:
                sim = normalized_similarity(cand, name)
                if sim > best_sim or (sim == best_sim and best_name is not None and name < best_name):
                    best_sim = sim
                    best_name = name
        if best_name is not None and best_sim >= strategy.edit_threshold:
            return LinePrediction(medicine=best_name, matched_rank=0, vote_count=1)
        return LinePrediction()

    if strategy.kind == "topk_first":
        for rank, path in enumerate(paths):
            hits = exact_matches(path.text, names)
            if hits:
                return LinePrediction(medicine=hits[0], matched_rank=rank, vote_count=1)
        return LinePrediction()

    # topk_majority: one vote per (path, matched name); mode wins, ties go to
    # the name first seen at the best (lowest) rank
    votes: Counter = Counter()
    first_rank: dict[str, int] = {}
    for rank, path in enumerate(paths):
        for name in exact_matches(path.text, names):
            votes[name] += 1
            first_rank.setdefault(name, rank)
    if not votes:
        return LinePrediction()
    winner = min(votes, key=lambda n: (-votes[n], first_rank[n], n))
    return LinePrediction(medicine=winner, matched_rank=first_rank[winner], vote_count=votes[winner])


def predict_document(lines: Iterable[Sequence[DecodedPath]], vocab, strategy: MatchStrategy) -> set[str]:
    """Union of per-line predictions, lower-cased and deduplicated."""
    out: set[str] = set()
    for paths in lines:
        pred = match_line(paths, vocab, strategy)
        if pred.medicine is not None:
            out.add(pred.medicine.lower())
    return out
