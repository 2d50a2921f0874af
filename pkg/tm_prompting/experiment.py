"""
End-to-end experiment runs and parameter sweeps.

One run takes every test sentence through retrieve -> select -> order ->
route -> render -> translate -> clean, then scores the corpus and each FMS
bucket. An ExperimentRunner keeps the split, the index and per-sentence
retrieval results between runs so sweeps only pay for retrieval once.
"""

import hashlib
import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import httpx
import yaml

from .backends import (
    BackendConfig,
    BaseBackend,
    Completion,
    CompletionFailure,
    DecodingParams,
    create_backend,
    translate_batch,
)
from .corpus import CorpusSplit, LangPair, SentencePair, corpus_checksum, load_manifest, load_split, read_jsonl
from .errors import ExperimentError, TmPromptingError
from .evaluate import ScoredSentence, bleu_by_bucket, corpus_bleu
from .postprocess import clean_output, score_tokenize
from .report import ExperimentReport, SentenceRecord, emit_report
from .retrieval import (
    DEFAULT_CANDIDATE_LIMIT,
    RetrievalHit,
    SelectionStrategy,
    TmIndex,
    build_index,
    fms_histogram,
    retrieve_top_k,
    select_demonstrations,
)
from .routing import RoutingPolicy, hypotheses_checksum, load_hypotheses, route_batch, route_demonstrations
from .templates import (
    DEFAULT_TM_TEMPLATE,
    Demonstration,
    DemoOrder,
    PromptRequest,
    Provenance,
    catalog,
    get_template,
    order_demos,
    render,
)

logger = logging.getLogger(__name__)

# Retrieval is cached at this depth so every k in the sweep grid is a prefix.
RETRIEVAL_DEPTH = 9
CHECKPOINT_FILE = "completions.jsonl"

SWEEP_AXES: dict[str, str] = {
    "k": "k",
    "threshold": "threshold",
    "template": "template_id",
    "order": "demo_order",
    "selection": "selection",
}


def default_sweep_values(axis: str) -> tuple:
    if axis == "k":
        return tuple(range(1, RETRIEVAL_DEPTH + 1))
    if axis == "threshold":
        return tuple(round(0.1 * i, 1) for i in range(11))
    if axis == "template":
        return tuple(template.id for template in catalog())
    if axis == "order":
        return (DemoOrder.ASCENDING, DemoOrder.DESCENDING)
    if axis == "selection":
        return tuple(SelectionStrategy)
    raise ExperimentError(f"unknown sweep axis {axis!r} (expected one of {', '.join(SWEEP_AXES)})")


def coerce_sweep_value(axis: str, value):
    """Convert a command-line string (or already typed value) for `axis`."""
    try:
        if axis in ("k", "template"):
            return int(value)
        if axis == "threshold":
            return float(value)
        if axis == "order":
            return DemoOrder(value)
        if axis == "selection":
            return SelectionStrategy(value)
    except ValueError as exc:
        raise ExperimentError(f"invalid value {value!r} for sweep axis {axis}") from exc
    raise ExperimentError(f"unknown sweep axis {axis!r} (expected one of {', '.join(SWEEP_AXES)})")


_PATH_FIELDS = ("split_dir", "nmt_hypotheses", "aux_pool")


@dataclass(frozen=True)
class ExperimentConfig:
    split_dir: str
    lang: LangPair | None = None
    template_id: int = DEFAULT_TM_TEMPLATE
    k: int = 5
    demo_order: DemoOrder = DemoOrder.DESCENDING
    selection: SelectionStrategy = SelectionStrategy.TOP_FMS
    threshold: float = 0.0
    nmt_hypotheses: str | None = None
    aux_pool: str | None = None
    backend: BackendConfig = field(default_factory=BackendConfig)
    decoding: DecodingParams = field(default_factory=DecodingParams)
    seed: int = 0
    limit: int = DEFAULT_CANDIDATE_LIMIT
    max_sentences: int | None = None
    lowercase: bool = False

    def __post_init__(self):
        object.__setattr__(self, "demo_order", DemoOrder(self.demo_order))
        object.__setattr__(self, "selection", SelectionStrategy(self.selection))
        if self.k < 1:
            raise ExperimentError(f"k must be at least 1, got {self.k}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ExperimentError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.threshold > 0 and not self.nmt_hypotheses:
            raise ExperimentError("a routing threshold above 0 needs an nmt_hypotheses file")
        if self.threshold > 0 and self.selection != SelectionStrategy.TOP_FMS:
            raise ExperimentError("routing only applies to top-fms demonstrations")
        if self.selection == SelectionStrategy.RANDOM_OUT_DOMAIN and not self.aux_pool:
            raise ExperimentError("random-out-domain selection needs an aux_pool file")
        if self.limit < 1:
            raise ExperimentError(f"limit must be at least 1, got {self.limit}")
        if self.max_sentences is not None and self.max_sentences < 1:
            raise ExperimentError(f"max_sentences must be at least 1, got {self.max_sentences}")

    def to_dict(self) -> dict:
        return {
            "split_dir": self.split_dir,
            "lang": self.lang.to_dict() if self.lang else None,
            "template_id": self.template_id,
            "k": self.k,
            "demo_order": str(self.demo_order),
            "selection": str(self.selection),
            "threshold": self.threshold,
            "nmt_hypotheses": self.nmt_hypotheses,
            "aux_pool": self.aux_pool,
            "backend": self.backend.to_dict(),
            "decoding": self.decoding.to_dict(),
            "seed": self.seed,
            "limit": self.limit,
            "max_sentences": self.max_sentences,
            "lowercase": self.lowercase,
        }

    def config_hash(self) -> str:
        """First 12 hex chars of the SHA-256 of the snapshot; names the run directory."""
        snapshot = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(snapshot.encode("utf-8")).hexdigest()[:12]

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path | None = None) -> "ExperimentConfig":
        data = dict(data)
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ExperimentError(f"unknown experiment config keys {sorted(unknown)}")
        if "split_dir" not in data:
            raise ExperimentError("experiment config needs split_dir")
        for name in _PATH_FIELDS:
            if data.get(name) and base_dir is not None and not Path(data[name]).is_absolute():
                data[name] = str((Path(base_dir) / data[name]).resolve())
        lang = data.get("lang")
        if isinstance(lang, dict):
            if "src_name" in lang:
                data["lang"] = LangPair.from_dict(lang)
            else:
                data["lang"] = LangPair.from_codes(lang["src_code"], lang["tgt_code"])
        data["backend"] = BackendConfig.from_dict(data.get("backend"))
        data["decoding"] = DecodingParams.from_dict(data.get("decoding"))
        return cls(**data)

    @classmethod
    def from_yaml(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        config = cls.from_dict(data, base_dir=path.parent)
        overrides = {name: value for name, value in overrides.items() if value is not None}
        return replace(config, **overrides) if overrides else config


@dataclass
class _Prepared:
    query: SentencePair
    request: PromptRequest
    top_fms: float
    routing: tuple[str, ...]


class ExperimentRunner:
    """
    Runs experiments while caching the split, the TM index and retrieval
    results. A runner passed a backend shares it across all runs.
    """

    def __init__(
        self,
        backend: BaseBackend | None = None,
        transport: httpx.AsyncBaseTransport | None = None,
        runs_dir: str | Path | None = None,
    ):
        self.backend = backend
        self.transport = transport
        self.runs_dir = Path(runs_dir) if runs_dir is not None else None
        self._splits: dict[str, CorpusSplit] = {}
        self._indexes: dict[str, TmIndex] = {}
        self._retrievals: dict[tuple[str, int, int], list[RetrievalHit]] = {}
        self.retrieval_calls = 0

    # -- caches ---------------------------------------------------------------

    def _split(self, split_dir: str) -> CorpusSplit:
        key = str(Path(split_dir).resolve())
        if key not in self._splits:
            self._splits[key] = load_split(split_dir)
        return self._splits[key]

    def _index(self, checksum: str, tm_database: Sequence[SentencePair]) -> TmIndex:
        if checksum not in self._indexes:
            self._indexes[checksum] = build_index(tm_database)
        return self._indexes[checksum]

    def _hits(
        self, checksum: str, index: TmIndex, entries: dict[int, SentencePair], query: SentencePair, k: int, limit: int
    ) -> list[RetrievalHit]:
        key = (checksum, query.id, limit)
        cached = self._retrievals.get(key)
        if cached is None or len(cached) < min(k, index.doc_count):
            depth = max(k, RETRIEVAL_DEPTH)
            cached = retrieve_top_k(index, entries, query.source, depth, limit=limit)
            self._retrievals[key] = cached
            self.retrieval_calls += 1
        return cached[:k]

    # -- stages ---------------------------------------------------------------

    def _prepare(
        self,
        config: ExperimentConfig,
        query: SentencePair,
        split: CorpusSplit,
        checksum: str,
        index: TmIndex,
        entries: dict[int, SentencePair],
        policy: RoutingPolicy,
        aux_pool: list[SentencePair] | None,
    ) -> _Prepared:
        template = get_template(config.template_id)
        top = self._hits(checksum, index, entries, query, 1, config.limit)
        routing: tuple[str, ...] = ()
        demos: list[Demonstration] = []
        if template.with_tm:
            if config.selection == SelectionStrategy.TOP_FMS:
                hits = self._hits(checksum, index, entries, query, config.k, config.limit)
                demos = [Demonstration(h.entry.source, h.entry.target, Provenance.TM, fms=h.fms) for h in hits]
            else:
                demos = select_demonstrations(
                    config.selection, config.k, query.source, None, split.tm_database,
                    aux_pool=aux_pool, seed=config.seed + query.id, limit=config.limit,
                )
            demos = order_demos(demos, config.demo_order)
            if config.selection == SelectionStrategy.TOP_FMS:
                entries_routed = route_demonstrations(query, demos, policy)
                demos = [entry.demonstration for entry in entries_routed]
                routing = tuple(str(entry.choice) for entry in entries_routed)
        request = render(template, config.lang, query.source, demos, query_id=query.id)
        return _Prepared(query=query, request=request, top_fms=top[0].fms, routing=routing)

    def _run_dir(self, config: ExperimentConfig) -> Path | None:
        return self.runs_dir / config.config_hash() if self.runs_dir is not None else None

    async def _translate(
        self, config: ExperimentConfig, prepared: list[_Prepared], resume: bool
    ) -> list[Completion]:
        run_dir = self._run_dir(config)
        checkpoint = run_dir / CHECKPOINT_FILE if run_dir is not None else None
        done = _load_checkpoint(checkpoint) if checkpoint is not None and resume else {}
        if checkpoint is not None and not resume and checkpoint.exists():
            checkpoint.unlink()

        results: list[Completion | None] = [None] * len(prepared)
        pending: list[int] = []
        for i, item in enumerate(prepared):
            saved = done.get(item.query.id)
            if saved is not None and saved["prompt_sha"] == _sha(item.request.rendered):
                results[i] = Completion(**saved["completion"])
            else:
                pending.append(i)
        if done:
            logger.info("Resumed %d completions from %s", len(prepared) - len(pending), checkpoint)

        def on_complete(j: int, completion: Completion) -> None:
            item = prepared[pending[j]]
            if checkpoint is None or isinstance(completion, CompletionFailure):
                return
            checkpoint.parent.mkdir(parents=True, exist_ok=True)
            record = {
                "id": item.query.id,
                "prompt_sha": _sha(item.request.rendered),
                "completion": {
                    "text": completion.text,
                    "latency": completion.latency,
                    "attempt_count": completion.attempt_count,
                    "raw_finish_reason": completion.raw_finish_reason,
                },
            }
            with open(checkpoint, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, ensure_ascii=False) + "\n")

        if pending:
            backend = self.backend or create_backend(config.backend, transport=self.transport)
            try:
                completions = await translate_batch(
                    [prepared[i].request for i in pending],
                    config.decoding,
                    config.backend,
                    backend=backend,
                    on_complete=on_complete,
                )
            finally:
                if self.backend is None:
                    await backend.aclose()
            for i, completion in zip(pending, completions):
                results[i] = completion
        return results

    # -- public -----------------------------------------------------------------

    async def run(self, config: ExperimentConfig, resume: bool = False) -> ExperimentReport:
        split = self._split(config.split_dir)
        if config.lang is None:
            config = replace(config, lang=split.lang)
        get_template(config.template_id)

        checksum = corpus_checksum(split.tm_database)
        index = self._index(checksum, split.tm_database)
        entries = {pair.id: pair for pair in split.tm_database}
        hypotheses = load_hypotheses(config.nmt_hypotheses) if config.nmt_hypotheses else {}
        policy = RoutingPolicy(threshold=config.threshold, hypotheses=hypotheses)
        aux_pool = read_jsonl(config.aux_pool) if config.aux_pool else None

        test_set = split.test_set[:config.max_sentences] if config.max_sentences else split.test_set
        if not test_set:
            raise ExperimentError(f"split {config.split_dir} has an empty test set")
        logger.info(
            "Running %d sentences: template #%d, k=%d, %s, %s, threshold %.2f",
            len(test_set), config.template_id, config.k, config.selection, config.demo_order, config.threshold,
        )

        prepared = []
        for query in test_set:
            try:
                prepared.append(self._prepare(config, query, split, checksum, index, entries, policy, aux_pool))
            except TmPromptingError as exc:
                raise ExperimentError(exc.message, sentence_id=query.id) from exc

        completions = await self._translate(config, prepared, resume)

        records = []
        scored = []
        tgt_code = config.lang.tgt_code
        for item, completion in zip(prepared, completions):
            cleaned = "" if completion.failed else clean_output(completion.text)
            records.append(SentenceRecord(
                id=item.query.id,
                source=item.query.source,
                reference=item.query.target,
                fms=item.top_fms,
                routing=item.routing,
                template_id=config.template_id,
                k=item.request.k,
                prompt=item.request.rendered,
                completion=completion.text,
                cleaned=cleaned,
                provenance=tuple(str(demo.provenance) for demo in item.request.demos),
                warnings=item.request.warnings,
                error=completion.error,
            ))
            scored.append(ScoredSentence(
                fms=item.top_fms,
                hypothesis=tuple(score_tokenize(cleaned, tgt_code)),
                reference=tuple(score_tokenize(item.query.target, tgt_code)),
            ))

        tm_proportion, nmt_proportion = self._proportions(config, prepared, index, entries, policy)
        snapshot = config.to_dict()
        snapshot["split_checksums"] = load_manifest(config.split_dir)["checksums"]
        snapshot["hypotheses_checksum"] = hypotheses_checksum(config.nmt_hypotheses) if config.nmt_hypotheses else None
        report = ExperimentReport(
            records=tuple(records),
            corpus=corpus_bleu([s.hypothesis for s in scored], [s.reference for s in scored], config.lowercase),
            buckets=bleu_by_bucket(scored, lowercase=config.lowercase),
            tm_proportion=tm_proportion,
            nmt_proportion=nmt_proportion,
            fms_histogram=fms_histogram([item.top_fms for item in prepared]),
            config=snapshot,
        )
        run_dir = self._run_dir(config)
        if run_dir is not None:
            emit_report(report, run_dir)
        return report

    def _proportions(
        self,
        config: ExperimentConfig,
        prepared: list[_Prepared],
        index: TmIndex,
        entries: dict[int, SentencePair],
        policy: RoutingPolicy,
    ) -> tuple[float, float]:
        """Share of sentences whose best TM match is kept vs. replaced by the NMT hypothesis."""
        template = get_template(config.template_id)
        if not template.with_tm or config.selection != SelectionStrategy.TOP_FMS:
            return 0.0, 0.0
        checksum = index.built_from
        queries = [item.query for item in prepared]
        top_hits = {q.id: self._hits(checksum, index, entries, q, 1, config.limit)[0] for q in queries}
        decision = route_batch(queries, top_hits, policy)
        return decision.tm_proportion, decision.nmt_proportion

    async def sweep(
        self, base: ExperimentConfig, axis: str, values: Sequence | None = None, resume: bool = False
    ) -> list[ExperimentReport]:
        """One report per axis value; caches are shared across the sweep."""
        if axis not in SWEEP_AXES:
            raise ExperimentError(f"unknown sweep axis {axis!r} (expected one of {', '.join(SWEEP_AXES)})")
        if values is None:
            values = default_sweep_values(axis)
        values = tuple(coerce_sweep_value(axis, value) for value in values)
        if not values:
            raise ExperimentError(f"empty value list for sweep axis {axis}")
        reports = []
        for value in values:
            config = replace(base, **{SWEEP_AXES[axis]: value})
            reports.append(await self.run(config, resume=resume))
        return reports


async def run(config: ExperimentConfig, **runner_kwargs) -> ExperimentReport:
    return await ExperimentRunner(**runner_kwargs).run(config)


async def sweep(base: ExperimentConfig, axis: str, values: Sequence | None = None, **runner_kwargs) -> list[ExperimentReport]:
    return await ExperimentRunner(**runner_kwargs).sweep(base, axis, values)


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _load_checkpoint(path: Path) -> dict[int, dict]:
    if not path.exists():
        return {}
    done = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                # a run killed mid-write leaves a truncated last line
                logger.warning("Skipping unreadable checkpoint line in %s", path)
                continue
            done[record["id"]] = record
    return done
