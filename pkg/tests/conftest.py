import random
from pathlib import Path

import pytest

from tm_prompting.corpus import CorpusSplit, LangPair, SentencePair, save_split

FIXTURES = Path(__file__).parent / "fixtures"
EXPERIMENTS = Path(__file__).parent / "experiments"

WORDS = [
    "house", "tree", "river", "stone", "light", "green", "small", "quick", "water", "bread",
    "table", "chair", "window", "garden", "train", "city", "night", "morning", "music", "paper",
    "road", "cloud", "horse", "field", "winter", "summer", "market", "letter", "friend", "school",
]


def random_sentence(rng: random.Random, low: int = 4, high: int = 12, vocab=WORDS) -> str:
    return " ".join(rng.choice(vocab) for _ in range(rng.randint(low, high)))


def synthetic_pairs(n: int, seed: int = 0, start_id: int = 0, vocab=WORDS) -> list[SentencePair]:
    """Distinct lowercase sentences; the target is the upper-cased source plus a period."""
    rng = random.Random(seed)
    seen = set()
    pairs = []
    while len(pairs) < n:
        source = random_sentence(rng, vocab=vocab)
        if source in seen:
            continue
        seen.add(source)
        pairs.append(SentencePair(start_id + len(pairs), source, source.upper() + " ."))
    return pairs


@pytest.fixture
def en_de() -> LangPair:
    return LangPair.from_codes("en", "de")


@pytest.fixture
def de_en() -> LangPair:
    return LangPair.from_codes("de", "en")


@pytest.fixture
def copy_split_dir(tmp_path, de_en) -> Path:
    """A 1,000-pair TM whose test set repeats 40 TM entries under fresh ids."""
    tm = synthetic_pairs(1000, seed=11)
    test = [SentencePair(5000 + i, pair.source, pair.target) for i, pair in enumerate(tm[::25])]
    directory = tmp_path / "copy-split"
    save_split(CorpusSplit(tuple(test), tuple(tm), seed=0, lang=de_en), directory)
    return directory


@pytest.fixture
def fuzzy_split_dir(tmp_path, de_en) -> Path:
    """Test sentences drawn independently of the TM, so FMS values vary."""
    tm = synthetic_pairs(300, seed=3)
    known = {pair.source for pair in tm}
    test = [p for p in synthetic_pairs(40, seed=4, start_id=9000) if p.source not in known][:12]
    directory = tmp_path / "fuzzy-split"
    save_split(CorpusSplit(tuple(test), tuple(tm), seed=0, lang=de_en), directory)
    hypotheses = directory / "nmt.jsonl"
    hypotheses.write_text(
        "".join(f'{{"id": {p.id}, "hypothesis": "nmt {p.id}"}}\n' for p in test), encoding="utf-8"
    )
    return directory
