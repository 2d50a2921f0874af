"""
Fuzzy-match retrieval over a translation memory.

Two stages: an inverted index proposes up to `limit` candidates by
IDF-weighted token overlap, then every candidate is reranked by the exact
fuzzy match score FMS = 1 - LD / max(|x|, |s|) over word tokens.
"""

import heapq
import json
import logging
import math
import random
import re
import unicodedata
from bisect import bisect_right
from collections import defaultdict
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path

import Levenshtein

from .corpus import SentencePair, corpus_checksum
from .errors import IndexFormatError, RetrievalError
from .templates import Demonstration, Provenance

logger = logging.getLogger(__name__)

DEFAULT_CANDIDATE_LIMIT = 500
INDEX_FORMAT_VERSION = 1
FMS_BUCKET_EDGES: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)

MatchTokenSeq = tuple[str, ...]

_NUMBER_SEPARATORS_RE = re.compile(r"[,.\-−]")


class SelectionStrategy(StrEnum):
    TOP_FMS = "top-fms"
    RANDOM_IN_DOMAIN = "random-in-domain"
    RANDOM_OUT_DOMAIN = "random-out-domain"


@dataclass(frozen=True)
class TmIndex:
    postings: dict[str, tuple[int, ...]]
    entry_tokens: dict[int, MatchTokenSeq]
    doc_count: int
    built_from: str


@dataclass(frozen=True)
class RetrievalHit:
    entry: SentencePair
    fms: float
    rank: int

    def to_dict(self) -> dict:
        return {**self.entry.to_dict(), "fms": self.fms, "rank": self.rank}


@dataclass(frozen=True)
class FmsHistogram:
    bucket_edges: tuple[float, ...]
    counts: tuple[int, ...]
    proportions: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "bucket_edges": list(self.bucket_edges),
            "counts": list(self.counts),
            "proportions": list(self.proportions),
        }


# ---------------------------------------------------------------------------
# Tokens and scores
# ---------------------------------------------------------------------------

def _is_punct(char: str) -> bool:
    return unicodedata.category(char)[0] in "PS"


def _strip_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and _is_punct(token[start]):
        start += 1
    while end > start and _is_punct(token[end - 1]):
        end -= 1
    return token[start:end]


def _is_number(token: str) -> bool:
    digits = _NUMBER_SEPARATORS_RE.sub("", token)
    return bool(digits) and digits.isdigit()


def match_tokenize(text: str) -> MatchTokenSeq:
    """Word tokens used for matching: case-folded, numbers and punctuation removed."""
    tokens = []
    for raw in text.split():
        token = _strip_punct(raw)
        if not token or _is_number(token) or all(_is_punct(c) for c in token):
            continue
        tokens.append(token.casefold())
    return tuple(tokens)


def levenshtein(a: Sequence[str], b: Sequence[str], score_cutoff: int | None = None) -> int:
    """Word-level edit distance. Above `score_cutoff` the result is `score_cutoff + 1`."""
    return Levenshtein.distance(a, b, score_cutoff=score_cutoff)


def fms_tokens(a: MatchTokenSeq, b: MatchTokenSeq, min_score: float | None = None) -> float | None:
    """FMS of two token sequences.

    With `min_score`, returns None as soon as the score provably falls below
    it, which lets the edit distance stop early.
    """
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    cutoff = None
    if min_score is not None:
        cutoff = math.floor((1.0 - min_score) * longest + 1e-9)
        if cutoff < 0:
            return None
    distance = levenshtein(a, b, score_cutoff=cutoff)
    if cutoff is not None and distance > cutoff:
        return None
    return (longest - distance) / longest


def fms(x: str, s: str) -> float:
    return fms_tokens(match_tokenize(x), match_tokenize(s))


# ---------------------------------------------------------------------------
# Index
# ---------------------------------------------------------------------------

def build_index(db: Sequence[SentencePair]) -> TmIndex:
    if not db:
        raise RetrievalError("cannot build an index over an empty TM database")
    entries = sorted(db, key=lambda pair: pair.id)
    entry_tokens: dict[int, MatchTokenSeq] = {}
    postings: dict[str, list[int]] = defaultdict(list)
    for pair in entries:
        if pair.id in entry_tokens:
            raise RetrievalError(f"duplicate entry id {pair.id} in TM database")
        tokens = match_tokenize(pair.source)
        entry_tokens[pair.id] = tokens
        for token in sorted(set(tokens)):
            postings[token].append(pair.id)
    logger.info("Indexed %d TM entries, %d distinct tokens", len(entries), len(postings))
    return TmIndex(
        postings={token: tuple(ids) for token, ids in sorted(postings.items())},
        entry_tokens=entry_tokens,
        doc_count=len(entries),
        built_from=corpus_checksum(entries),
    )


def save_index(index: TmIndex, path: str | Path) -> None:
    data = {
        "format_version": INDEX_FORMAT_VERSION,
        "built_from": index.built_from,
        "doc_count": index.doc_count,
        "postings": {token: list(ids) for token, ids in index.postings.items()},
        "entry_tokens": {str(i): list(tokens) for i, tokens in index.entry_tokens.items()},
    }
    Path(path).write_text(json.dumps(data, ensure_ascii=False, sort_keys=True), encoding="utf-8")


def load_index(path: str | Path, expected_checksum: str | None = None) -> TmIndex:
    """Load a saved index; refuses one built from a different corpus."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IndexFormatError(f"cannot read index {path}: {exc}") from exc
    if data.get("format_version") != INDEX_FORMAT_VERSION:
        raise IndexFormatError(f"unsupported index format version {data.get('format_version')}")
    if expected_checksum is not None and data["built_from"] != expected_checksum:
        raise IndexFormatError(
            f"index {path} was built from corpus {data['built_from'][:12]}, "
            f"not {expected_checksum[:12]}"
        )
    entry_tokens = {int(i): tuple(tokens) for i, tokens in data["entry_tokens"].items()}
    return TmIndex(
        postings={token: tuple(ids) for token, ids in data["postings"].items()},
        entry_tokens=dict(sorted(entry_tokens.items())),
        doc_count=data["doc_count"],
        built_from=data["built_from"],
    )


# ---------------------------------------------------------------------------
# Retrieval
# ---------------------------------------------------------------------------

def _candidates_for_tokens(index: TmIndex, tokens: MatchTokenSeq, limit: int) -> list[int]:
    if index.doc_count <= limit:
        return list(index.entry_tokens)
    scores: dict[int, float] = defaultdict(float)
    # sorted() keeps float summation order, hence tie order, reproducible
    for token in sorted(set(tokens)):
        posting = index.postings.get(token)
        if not posting:
            continue
        weight = math.log1p(index.doc_count / len(posting))
        for entry_id in posting:
            scores[entry_id] += weight
    ranked = heapq.nsmallest(limit, scores.items(), key=lambda item: (-item[1], item[0]))
    return [entry_id for entry_id, _ in ranked]


def candidates(index: TmIndex, query: str, limit: int = DEFAULT_CANDIDATE_LIMIT) -> list[int]:
    """Top `limit` entry ids by IDF-weighted unique-token overlap (all ids if the TM is small)."""
    return _candidates_for_tokens(index, match_tokenize(query), limit)


def _as_entry_map(db: Sequence[SentencePair] | Mapping[int, SentencePair]) -> Mapping[int, SentencePair]:
    if isinstance(db, Mapping):
        return db
    return {pair.id: pair for pair in db}


def retrieve_top_k(
    index: TmIndex,
    db: Sequence[SentencePair] | Mapping[int, SentencePair],
    query: str,
    k: int,
    limit: int = DEFAULT_CANDIDATE_LIMIT,
) -> list[RetrievalHit]:
    """Exact FMS top-k over the candidate set, ties broken by ascending entry id.

    The candidate set is padded to `limit` ids with the lowest unseen ids, and
    token-less queries scan the whole TM, so the result does not depend on k.
    """
    if k < 1:
        raise RetrievalError(f"k must be at least 1, got {k}")
    entries = _as_entry_map(db)
    query_tokens = match_tokenize(query)

    if not query_tokens:
        ids = list(index.entry_tokens)
    else:
        ids = _candidates_for_tokens(index, query_tokens, limit)
        width = max(limit, k)
        if len(ids) < width and len(ids) < index.doc_count:
            seen = set(ids)
            for entry_id in index.entry_tokens:
                if len(ids) >= width:
                    break
                if entry_id not in seen:
                    ids.append(entry_id)

    # min-heap of (fms, -id): the root is the weakest of the current top-k
    heap: list[tuple[float, int]] = []
    for entry_id in ids:
        floor = heap[0][0] if len(heap) == k else None
        score = fms_tokens(query_tokens, index.entry_tokens[entry_id], min_score=floor)
        if score is None:
            continue
        item = (score, -entry_id)
        if len(heap) < k:
            heapq.heappush(heap, item)
        elif item > heap[0]:
            heapq.heapreplace(heap, item)

    ranked = sorted(heap, reverse=True)
    return [
        RetrievalHit(entry=entries[-neg_id], fms=score, rank=rank)
        for rank, (score, neg_id) in enumerate(ranked, 1)
    ]


def select_demonstrations(
    strategy: SelectionStrategy | str,
    k: int,
    query: str,
    index: TmIndex | None,
    db: Sequence[SentencePair],
    aux_pool: Sequence[SentencePair] | None = None,
    seed: int = 0,
    limit: int = DEFAULT_CANDIDATE_LIMIT,
) -> list[Demonstration]:
    strategy = SelectionStrategy(strategy)
    if strategy == SelectionStrategy.TOP_FMS:
        if index is None:
            raise RetrievalError("top-fms selection needs a TM index")
        return [
            Demonstration(hit.entry.source, hit.entry.target, Provenance.TM, fms=hit.fms)
            for hit in retrieve_top_k(index, db, query, k, limit=limit)
        ]

    if strategy == SelectionStrategy.RANDOM_OUT_DOMAIN:
        if aux_pool is None:
            raise RetrievalError("random-out-domain selection needs an auxiliary pool")
        pool, provenance = aux_pool, Provenance.RANDOM_OUT
    else:
        pool, provenance = db, Provenance.RANDOM_IN
    if len(pool) < k:
        raise RetrievalError(f"pool has {len(pool)} pairs, fewer than k={k}")
    ordered = sorted(pool, key=lambda pair: pair.id)
    drawn = random.Random(seed).sample(ordered, k)
    return [Demonstration(pair.source, pair.target, provenance) for pair in drawn]


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def bucket_index(score: float, edges: Sequence[float] = FMS_BUCKET_EDGES) -> int:
    """Left-closed buckets; the last one is closed at 1.0."""
    if not edges[0] <= score <= edges[-1]:
        raise RetrievalError(f"FMS {score} outside [{edges[0]}, {edges[-1]}]")
    return min(bisect_right(edges, score) - 1, len(edges) - 2)


def bucket_label(i: int, edges: Sequence[float] = FMS_BUCKET_EDGES) -> str:
    closing = "]" if i == len(edges) - 2 else ")"
    return f"[{edges[i]:.1f}, {edges[i + 1]:.1f}{closing}"


def fms_histogram(scores: Sequence[float]) -> FmsHistogram:
    if not scores:
        raise RetrievalError("cannot build a histogram of zero scores")
    counts = [0] * (len(FMS_BUCKET_EDGES) - 1)
    for score in scores:
        counts[bucket_index(score)] += 1
    total = len(scores)
    return FmsHistogram(
        bucket_edges=FMS_BUCKET_EDGES,
        counts=tuple(counts),
        proportions=tuple(count / total for count in counts),
    )
