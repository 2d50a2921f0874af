"""
Corpus BLEU with multi-bleu semantics: tokenized input, single reference,
clipped n-gram precisions up to 4, no smoothing (any zero precision gives 0).
"""

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

from sacrebleu.metrics import BLEU

from .errors import EvaluationError
from .retrieval import FMS_BUCKET_EDGES, bucket_index, bucket_label

logger = logging.getLogger(__name__)

MAX_NGRAM_ORDER = 4


@dataclass(frozen=True)
class BleuReport:
    bleu: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hyp_length: int
    ref_length: int
    counts: tuple[int, ...] = ()
    totals: tuple[int, ...] = ()

    @property
    def ratio(self) -> float:
        return self.hyp_length / self.ref_length if self.ref_length else 0.0

    @property
    def zero_precision(self) -> bool:
        """True when some n-gram order had no match, which forces BLEU to 0."""
        return any(p == 0.0 for p in self.precisions)

    def format_multi_bleu(self) -> str:
        p1, p2, p3, p4 = (100 * p for p in self.precisions)
        return (
            f"BLEU = {self.bleu:.2f}, {p1:.1f}/{p2:.1f}/{p3:.1f}/{p4:.1f} "
            f"(BP={self.brevity_penalty:.3f}, ratio={self.ratio:.3f}, "
            f"hyp_len={self.hyp_length}, ref_len={self.ref_length})"
        )

    def to_dict(self) -> dict:
        return {
            "bleu": self.bleu,
            "precisions": list(self.precisions),
            "brevity_penalty": self.brevity_penalty,
            "hyp_length": self.hyp_length,
            "ref_length": self.ref_length,
            "counts": list(self.counts),
            "totals": list(self.totals),
            "zero_precision": self.zero_precision,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BleuReport":
        return cls(
            bleu=data["bleu"],
            precisions=tuple(data["precisions"]),
            brevity_penalty=data["brevity_penalty"],
            hyp_length=data["hyp_length"],
            ref_length=data["ref_length"],
            counts=tuple(data.get("counts", ())),
            totals=tuple(data.get("totals", ())),
        )


@dataclass(frozen=True)
class ScoredSentence:
    fms: float
    hypothesis: tuple[str, ...]
    reference: tuple[str, ...]


def _bleu_metric(lowercase: bool) -> BLEU:
    # input is already tokenized; whitespace split only
    return BLEU(
        tokenize="none",
        smooth_method="none",
        lowercase=lowercase,
        max_ngram_order=MAX_NGRAM_ORDER,
        force=True,
    )


def corpus_bleu(
    hyps: Sequence[Sequence[str]],
    refs: Sequence[Sequence[str]],
    lowercase: bool = False,
) -> BleuReport:
    if len(hyps) != len(refs):
        raise EvaluationError(f"{len(hyps)} hypotheses but {len(refs)} references")
    if not hyps:
        raise EvaluationError("cannot score an empty corpus")

    result = _bleu_metric(lowercase).corpus_score(
        [" ".join(tokens) for tokens in hyps],
        [[" ".join(tokens) for tokens in refs]],
    )
    counts = tuple(int(c) for c in result.counts)
    totals = tuple(int(t) for t in result.totals)
    precisions = tuple(c / t if t else 0.0 for c, t in zip(counts, totals))
    hyp_len, ref_len = int(result.sys_len), int(result.ref_len)

    if hyp_len == 0:
        brevity_penalty = 0.0
    elif hyp_len < ref_len:
        brevity_penalty = math.exp(1 - ref_len / hyp_len)
    else:
        brevity_penalty = 1.0
    if brevity_penalty == 0.0 or any(p == 0.0 for p in precisions):
        bleu = 0.0
    else:
        bleu = 100 * brevity_penalty * math.exp(sum(math.log(p) for p in precisions) / MAX_NGRAM_ORDER)

    return BleuReport(
        bleu=bleu,
        precisions=precisions,
        brevity_penalty=brevity_penalty,
        hyp_length=hyp_len,
        ref_length=ref_len,
        counts=counts,
        totals=totals,
    )


def bleu_by_bucket(
    records: Iterable[ScoredSentence],
    edges: Sequence[float] = FMS_BUCKET_EDGES,
    lowercase: bool = False,
) -> dict[str, BleuReport]:
    """Corpus BLEU within each FMS bucket, in bucket order. Empty buckets are left out."""
    buckets: dict[int, list[ScoredSentence]] = {}
    for record in records:
        buckets.setdefault(bucket_index(record.fms, edges), []).append(record)
    reports = {}
    for i in sorted(buckets):
        members = buckets[i]
        reports[bucket_label(i, edges)] = corpus_bleu(
            [m.hypothesis for m in members], [m.reference for m in members], lowercase=lowercase
        )
        logger.debug("Bucket %s: %d sentences", bucket_label(i, edges), len(members))
    return reports
