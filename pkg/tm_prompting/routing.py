"""
TM/NMT routing: a TM demonstration whose FMS is strictly below the threshold
is replaced by (query, NMT hypothesis) for the same query.
"""

import hashlib
import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path

from .corpus import SentencePair
from .errors import RoutingError
from .retrieval import FmsHistogram, RetrievalHit, fms_histogram
from .templates import Demonstration, Provenance

logger = logging.getLogger(__name__)

NmtHypothesisTable = Mapping[int, str]


class RouteChoice(StrEnum):
    TM = "tm"
    NMT = "nmt"


@dataclass(frozen=True)
class RoutingPolicy:
    threshold: float = 0.0
    hypotheses: NmtHypothesisTable = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise RoutingError(f"routing threshold must lie in [0, 1], got {self.threshold}")


@dataclass(frozen=True)
class RoutingEntry:
    query_id: int
    choice: RouteChoice
    tm_fms: float
    demonstration: Demonstration


@dataclass(frozen=True)
class RoutingDecision:
    entries: tuple[RoutingEntry, ...]
    tm_proportion: float
    nmt_proportion: float
    routed_histogram: FmsHistogram | None


def load_hypotheses(path: str | Path) -> dict[int, str]:
    """Read a JSONL file of {id, hypothesis} records."""
    table: dict[int, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                table[int(record["id"])] = record["hypothesis"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise RoutingError(f"{path}:{line_number}: malformed hypothesis record: {exc}") from exc
    return table


def hypotheses_checksum(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _route_demonstration(query: SentencePair, demo: Demonstration, policy: RoutingPolicy) -> RoutingEntry:
    if demo.provenance != Provenance.TM:
        raise RoutingError(f"only tm demonstrations can be routed, got {demo.provenance}")
    if demo.fms < policy.threshold:
        try:
            hypothesis = policy.hypotheses[query.id]
        except KeyError:
            raise RoutingError(f"no NMT hypothesis for query {query.id}") from None
        if not hypothesis:
            raise RoutingError(f"empty NMT hypothesis for query {query.id}")
        return RoutingEntry(query.id, RouteChoice.NMT, demo.fms, Demonstration(query.source, hypothesis, Provenance.NMT))
    return RoutingEntry(query.id, RouteChoice.TM, demo.fms, demo)


def route(query: SentencePair, top_hit: RetrievalHit, policy: RoutingPolicy) -> RoutingEntry:
    demo = Demonstration(top_hit.entry.source, top_hit.entry.target, Provenance.TM, fms=top_hit.fms)
    return _route_demonstration(query, demo, policy)


def route_demonstrations(
    query: SentencePair, demos: Sequence[Demonstration], policy: RoutingPolicy
) -> list[RoutingEntry]:
    """Route each of k TM demonstrations independently, keeping their order."""
    return [_route_demonstration(query, demo, policy) for demo in demos]


def route_batch(
    queries: Sequence[SentencePair], hits: Mapping[int, RetrievalHit], policy: RoutingPolicy
) -> RoutingDecision:
    """Route every query on its top hit. `hits` maps query id to that hit."""
    query_ids = [query.id for query in queries]
    if set(query_ids) != set(hits) or len(set(query_ids)) != len(query_ids):
        missing = sorted(set(query_ids) - set(hits))
        extra = sorted(set(hits) - set(query_ids))
        raise RoutingError(f"queries and hits are misaligned (missing hits: {missing[:5]}, extra hits: {extra[:5]})")
    if not queries:
        return RoutingDecision((), 1.0, 0.0, None)

    entries = tuple(route(query, hits[query.id], policy) for query in queries)
    tm_count = sum(1 for entry in entries if entry.choice == RouteChoice.TM)
    routed = [entry.tm_fms for entry in entries if entry.choice == RouteChoice.NMT]
    logger.info("Routing at threshold %.2f kept TM for %d/%d queries", policy.threshold, tm_count, len(entries))
    return RoutingDecision(
        entries=entries,
        tm_proportion=tm_count / len(entries),
        nmt_proportion=len(routed) / len(entries),
        routed_histogram=fms_histogram(routed) if routed else None,
    )
