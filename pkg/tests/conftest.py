import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rxdecode.grammar import (
    GrammarSpec,
    MedicineEntry,
    MedicineVocabulary,
    default_grammar,
    load_vocabulary,
)

DATA_DIR = Path(__file__).parent.parent / "src" / "rxdecode" / "data"


@pytest.fixture(scope="session")
def shipped_vocab() -> MedicineVocabulary:
    return load_vocabulary(DATA_DIR / "medicines.tsv")


@pytest.fixture(scope="session")
def distractor_lines() -> list[str]:
    return [l for l in (DATA_DIR / "distractors.txt").read_text().splitlines() if l.strip()]


@pytest.fixture(scope="session")
def tiny_entries() -> list[MedicineEntry]:
    return [
        MedicineEntry("dolo", "tab"),
        MedicineEntry("folvite", "tab"),
        MedicineEntry("zincovit", "syp"),
    ]


@pytest.fixture(scope="session")
def tiny_grammar(tiny_entries) -> GrammarSpec:
    return GrammarSpec(
        enum_tokens=["-", "1."],
        type_tokens={"tab": ["tab"], "syp": ["syp"]},
        suffix_tokens=["500mg", "1-0-1"],
        optional={"enum": True, "type": True, "suffix": True},
        entries=tiny_entries,
    )


@pytest.fixture(scope="session")
def default_spec(shipped_vocab) -> GrammarSpec:
    return default_grammar(shipped_vocab.entries)
