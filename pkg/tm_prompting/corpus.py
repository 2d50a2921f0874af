"""
Parallel corpus loading, normalization, test/TM splitting and split persistence.
"""

import hashlib
import json
import logging
import random
import re
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from enum import StrEnum
from functools import lru_cache
from pathlib import Path

from sacremoses import MosesDetokenizer

from .errors import CorpusError, SplitFormatError

logger = logging.getLogger(__name__)

SPLIT_MAGIC = "tm-prompting-split"
SPLIT_FORMAT_VERSION = 1
DEFAULT_TEST_SIZE = 3000
DEFAULT_MAX_TOKENS = 512

# Fixed unescape table; anything else passes through untouched.
ENTITY_TABLE: dict[str, str] = {
    "&amp;": "&",
    "&quot;": '"',
    "&lt;": "<",
    "&gt;": ">",
    "&apos;": "'",
}
_ENTITY_RE = re.compile("|".join(re.escape(entity) for entity in ENTITY_TABLE))
_WHITESPACE_RE = re.compile(r"\s+")

LANGUAGE_NAMES: dict[str, str] = {
    "en": "English",
    "de": "German",
    "fr": "French",
    "es": "Spanish",
    "it": "Italian",
    "ro": "Romanian",
    "cs": "Czech",
    "zh": "Chinese",
    "ja": "Japanese",
    "pt": "Portuguese",
    "nl": "Dutch",
}


class CorpusFormat(StrEnum):
    TSV = "tsv"
    JSONL = "jsonl"
    PAIRED = "paired"


class RejectReason(StrEnum):
    EMPTY = "empty-after-normalization"
    TOO_LONG = "too-long"
    DUPLICATE = "duplicate"


@dataclass(frozen=True)
class LangPair:
    """Source/target language codes plus the display names used in prompts."""

    src_code: str
    tgt_code: str
    src_name: str
    tgt_name: str

    def __post_init__(self):
        if self.src_code == self.tgt_code:
            raise CorpusError(f"source and target language are both {self.src_code!r}")
        if not self.src_name.strip() or not self.tgt_name.strip():
            raise CorpusError("language display names must be non-empty")

    @classmethod
    def from_codes(cls, src_code: str, tgt_code: str) -> "LangPair":
        try:
            return cls(src_code, tgt_code, LANGUAGE_NAMES[src_code], LANGUAGE_NAMES[tgt_code])
        except KeyError as exc:
            raise CorpusError(f"no display name known for language code {exc.args[0]!r}") from exc

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "LangPair":
        return cls(data["src_code"], data["tgt_code"], data["src_name"], data["tgt_name"])


@dataclass(frozen=True)
class SentencePair:
    id: int
    source: str
    target: str

    def to_dict(self) -> dict:
        return {"id": self.id, "source": self.source, "target": self.target}


@dataclass(frozen=True)
class CorpusSplit:
    test_set: tuple[SentencePair, ...]
    tm_database: tuple[SentencePair, ...]
    seed: int
    lang: LangPair


@dataclass(frozen=True)
class NormalizationRules:
    max_tokens: int = DEFAULT_MAX_TOKENS
    reject_duplicates: bool = False
    # (src_code, tgt_code) to run the Moses detokenizer on each side first
    detokenize: tuple[str, str] | None = None


@dataclass(frozen=True)
class Rejection:
    pair_id: int
    reason: RejectReason


@dataclass
class IngestStats:
    kept: int = 0
    rejected: Counter = field(default_factory=Counter)

    def to_dict(self) -> dict:
        return {"kept": self.kept, "rejected": {str(k): v for k, v in sorted(self.rejected.items())}}


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _read_lines(path: Path) -> list[str]:
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as f:
        content = f.read()
    if not content:
        raise CorpusError(f"corpus file is empty: {path}")
    lines = content.split("\n")
    if lines[-1] == "":
        lines.pop()
    return [line.removesuffix("\r") for line in lines]


def load_corpus(
    path: str | Path, format: CorpusFormat | str, target_path: str | Path | None = None
) -> list[SentencePair]:
    """Load a parallel corpus. Ids are assigned from 0 in file order.

    For the paired format `path` is the source-side file and `target_path`
    the target-side file; both must have the same number of lines.
    """
    format = CorpusFormat(format)
    path = Path(path)

    if format == CorpusFormat.PAIRED:
        if target_path is None:
            raise CorpusError("paired format needs a target-side file")
        sources = _read_lines(path)
        targets = _read_lines(Path(target_path))
        if len(sources) != len(targets):
            raise CorpusError(
                f"line count mismatch: {path} has {len(sources)} lines, "
                f"{target_path} has {len(targets)}"
            )
        return [SentencePair(i, s, t) for i, (s, t) in enumerate(zip(sources, targets))]

    pairs = []
    for line_number, line in enumerate(_read_lines(path), 1):
        if format == CorpusFormat.TSV:
            fields = line.split("\t")
            if len(fields) != 2:
                raise CorpusError(f"expected exactly one tab, found {len(fields) - 1}", line_number)
            source, target = fields
        else:
            try:
                record = json.loads(line)
                source, target = record["source"], record["target"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"malformed JSONL record: {exc}", line_number) from exc
            if not isinstance(source, str) or not isinstance(target, str):
                raise CorpusError("source and target must be strings", line_number)
        pairs.append(SentencePair(len(pairs), source, target))
    return pairs


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def unescape_entities(text: str) -> str:
    return _ENTITY_RE.sub(lambda m: ENTITY_TABLE[m.group(0)], text)


@lru_cache(maxsize=None)
def _detokenizer(lang: str) -> MosesDetokenizer:
    return MosesDetokenizer(lang=lang)


def _normalize_text(text: str) -> str:
    # Decodes to a fixpoint: "&amp;quot;" becomes a plain quote, never "&quot;".
    while True:
        cleaned = _WHITESPACE_RE.sub(" ", unescape_entities(text)).strip()
        if cleaned == text:
            return cleaned
        text = cleaned


def normalize_pair(pair: SentencePair, rules: NormalizationRules = NormalizationRules()) -> SentencePair | Rejection:
    source, target = pair.source, pair.target
    if rules.detokenize:
        src_lang, tgt_lang = rules.detokenize
        source = _detokenizer(src_lang).detokenize(source.split())
        target = _detokenizer(tgt_lang).detokenize(target.split())

    source = _normalize_text(source)
    target = _normalize_text(target)
    if not source or not target:
        return Rejection(pair.id, RejectReason.EMPTY)
    if len(source.split(" ")) > rules.max_tokens or len(target.split(" ")) > rules.max_tokens:
        return Rejection(pair.id, RejectReason.TOO_LONG)
    return SentencePair(pair.id, source, target)


def ingest(
    pairs: Iterable[SentencePair], rules: NormalizationRules = NormalizationRules()
) -> tuple[list[SentencePair], IngestStats]:
    """Normalize a whole corpus, dropping rejected pairs instead of aborting."""
    stats = IngestStats()
    kept: list[SentencePair] = []
    seen: set[tuple[str, str]] = set()
    for pair in pairs:
        result = normalize_pair(pair, rules)
        if isinstance(result, SentencePair) and rules.reject_duplicates:
            key = (result.source, result.target)
            if key in seen:
                result = Rejection(pair.id, RejectReason.DUPLICATE)
            else:
                seen.add(key)
        if isinstance(result, Rejection):
            stats.rejected[result.reason] += 1
            continue
        kept.append(result)
        stats.kept += 1
    logger.info("Ingested %d pairs, rejected %s", stats.kept, dict(stats.rejected))
    return kept, stats


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def split_corpus(
    corpus: Sequence[SentencePair], test_size: int, seed: int, lang: LangPair
) -> CorpusSplit:
    """Draw `test_size` pairs uniformly without replacement; the rest form the TM."""
    if test_size < 0:
        raise CorpusError(f"test_size must be non-negative, got {test_size}")
    if test_size >= len(corpus):
        raise CorpusError(f"test_size {test_size} must be smaller than the corpus ({len(corpus)} pairs)")
    ids = [pair.id for pair in corpus]
    if len(set(ids)) != len(ids):
        raise CorpusError("corpus contains duplicate ids")

    chosen = set(random.Random(seed).sample(range(len(corpus)), test_size))
    test_set = tuple(pair for i, pair in enumerate(corpus) if i in chosen)
    tm_database = tuple(pair for i, pair in enumerate(corpus) if i not in chosen)
    return CorpusSplit(test_set=test_set, tm_database=tm_database, seed=seed, lang=lang)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _jsonl_bytes(pairs: Iterable[SentencePair]) -> bytes:
    return "".join(json.dumps(p.to_dict(), ensure_ascii=False) + "\n" for p in pairs).encode("utf-8")


def corpus_checksum(pairs: Iterable[SentencePair]) -> str:
    return hashlib.sha256(_jsonl_bytes(pairs)).hexdigest()


def write_jsonl(pairs: Iterable[SentencePair], path: str | Path) -> None:
    Path(path).write_bytes(_jsonl_bytes(pairs))


def read_jsonl(path: str | Path) -> list[SentencePair]:
    """Read canonical {id, source, target} JSONL, keeping the stored ids."""
    pairs = []
    for line_number, line in enumerate(_read_lines(Path(path)), 1):
        try:
            record = json.loads(line)
            pairs.append(SentencePair(int(record["id"]), record["source"], record["target"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"malformed JSONL record in {path}: {exc}", line_number) from exc
    return pairs


def save_split(split: CorpusSplit, directory: str | Path) -> Path:
    """Write test.jsonl, tm.jsonl and manifest.json into `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    test_bytes = _jsonl_bytes(split.test_set)
    tm_bytes = _jsonl_bytes(split.tm_database)
    (directory / "test.jsonl").write_bytes(test_bytes)
    (directory / "tm.jsonl").write_bytes(tm_bytes)
    manifest = {
        "magic": SPLIT_MAGIC,
        "format_version": SPLIT_FORMAT_VERSION,
        "seed": split.seed,
        "test_size": len(split.test_set),
        "tm_size": len(split.tm_database),
        "lang": split.lang.to_dict(),
        "checksums": {
            "test": hashlib.sha256(test_bytes).hexdigest(),
            "tm": hashlib.sha256(tm_bytes).hexdigest(),
        },
    }
    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest_path


def load_manifest(directory: str | Path) -> dict:
    manifest_path = Path(directory) / "manifest.json"
    if not manifest_path.exists():
        raise SplitFormatError(f"split manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SplitFormatError(f"corrupted split manifest {manifest_path}: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("magic") != SPLIT_MAGIC:
        raise SplitFormatError(f"{manifest_path} is not a split manifest")
    if manifest.get("format_version") != SPLIT_FORMAT_VERSION:
        raise SplitFormatError(
            f"split format version {manifest.get('format_version')} is not supported "
            f"(expected {SPLIT_FORMAT_VERSION})"
        )
    return manifest


def load_split(directory: str | Path) -> CorpusSplit:
    directory = Path(directory)
    manifest = load_manifest(directory)
    parts = {}
    for name in ("test", "tm"):
        path = directory / f"{name}.jsonl"
        if not path.exists():
            raise SplitFormatError(f"split file missing: {path}")
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        if digest != manifest["checksums"][name]:
            raise SplitFormatError(f"checksum mismatch for {path}")
        parts[name] = tuple(read_jsonl(path)) if path.stat().st_size else ()
    return CorpusSplit(
        test_set=parts["test"],
        tm_database=parts["tm"],
        seed=manifest["seed"],
        lang=LangPair.from_dict(manifest["lang"]),
    )
