"""
TM prompting command line.

    python main.py ingest --input raw.tsv --format tsv --output corpus.jsonl
    python main.py split --corpus corpus.jsonl --src-lang de --tgt-lang en --out data/de-en
    python main.py retrieve --split data/de-en --k 5 --out hits.jsonl
    python main.py retrieve --db data/de-en/tm.jsonl --index tm.index.json --query "Ich habe einen Apfel."
    python main.py translate --hits hits.jsonl --split data/de-en --backend-config remote.yaml --out out.jsonl
    python main.py evaluate --hyp out.txt --ref ref.txt --lang en
    python main.py experiment --config tests/experiments/copy_oracle.yaml --sweep k
"""

import functools
import sys

# Force unbuffered stdout so output appears in real-time when piped
print = functools.partial(print, flush=True)

import argparse
import asyncio
import json
import logging
from pathlib import Path

import yaml
from dotenv import load_dotenv

# Load .env file from project root
load_dotenv(Path(__file__).parent / ".env")

from tm_prompting.backends import BackendConfig, BackendKind, DecodingParams, translate_batch
from tm_prompting.corpus import (
    DEFAULT_MAX_TOKENS,
    DEFAULT_TEST_SIZE,
    CorpusFormat,
    LangPair,
    NormalizationRules,
    SentencePair,
    corpus_checksum,
    ingest,
    load_corpus,
    load_split,
    read_jsonl,
    save_split,
    split_corpus,
    write_jsonl,
)
from tm_prompting.errors import CorpusError, EvaluationError, TmPromptingError
from tm_prompting.evaluate import corpus_bleu
from tm_prompting.experiment import SWEEP_AXES, ExperimentConfig, ExperimentRunner
from tm_prompting.postprocess import clean_output, score_tokenize
from tm_prompting.retrieval import DEFAULT_CANDIDATE_LIMIT, build_index, load_index, retrieve_top_k, save_index
from tm_prompting.routing import RoutingPolicy, load_hypotheses, route_demonstrations
from tm_prompting.templates import (
    DEFAULT_TM_TEMPLATE,
    Demonstration,
    DemoOrder,
    PromptRequest,
    Provenance,
    get_template,
    order_demos,
    render,
)


def _write_records(records, path: str | None) -> None:
    lines = [json.dumps(record, ensure_ascii=False, sort_keys=True) for record in records]
    if path is None:
        for line in lines:
            print(line)
        return
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    print(f"Wrote {len(lines)} records to {path}")


def _read_records(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def _lang(args, split=None) -> LangPair:
    if args.src_lang and args.tgt_lang:
        return LangPair.from_codes(args.src_lang, args.tgt_lang)
    if split is not None:
        return split.lang
    raise CorpusError("--src-lang and --tgt-lang are required without --split")


def _demonstrations(hit_record: dict, k: int | None) -> list[Demonstration]:
    hits = hit_record["hits"][:k] if k else hit_record["hits"]
    return [Demonstration(h["source"], h["target"], Provenance.TM, fms=h["fms"]) for h in hits]


def _backend_config(args) -> BackendConfig:
    if args.backend_config:
        with open(args.backend_config, "r", encoding="utf-8") as f:
            return BackendConfig.from_dict(yaml.safe_load(f))
    return BackendConfig(kind=BackendKind(args.backend), max_in_flight=args.max_in_flight)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> None:
    if args.detokenize and not (args.src_lang and args.tgt_lang):
        raise CorpusError("--detokenize needs --src-lang and --tgt-lang")
    corpus = load_corpus(args.input, args.format, target_path=args.target_file)
    rules = NormalizationRules(
        max_tokens=args.max_tokens,
        reject_duplicates=args.dedup,
        detokenize=(args.src_lang, args.tgt_lang) if args.detokenize else None,
    )
    kept, stats = ingest(corpus, rules)
    # reassign contiguous ids after rejections
    write_jsonl([SentencePair(i, p.source, p.target) for i, p in enumerate(kept)], args.output)
    print(f"Loaded {len(corpus)} pairs from {args.input}")
    print(json.dumps(stats.to_dict(), indent=2))


def cmd_split(args) -> None:
    corpus = read_jsonl(args.corpus)
    split = split_corpus(corpus, args.test_size, args.seed, _lang(args))
    manifest = save_split(split, args.out)
    print(f"Test set: {len(split.test_set)} pairs, TM database: {len(split.tm_database)} pairs")
    print(f"Manifest: {manifest}")


def cmd_index(args) -> None:
    split = load_split(args.split)
    index = build_index(split.tm_database)
    save_index(index, args.out)
    print(f"Indexed {index.doc_count} TM entries ({len(index.postings)} tokens) -> {args.out}")


def _retrieve_queries(args, split) -> list[SentencePair]:
    if args.query is not None:
        return [SentencePair(0, args.query, "")]
    if args.query_file:
        lines = Path(args.query_file).read_text(encoding="utf-8").splitlines()
        # ids are 0-based line numbers, blank lines skipped
        return [SentencePair(i, line.strip(), "") for i, line in enumerate(lines) if line.strip()]
    if split is None:
        raise CorpusError("--query or --query-file is required without --split")
    return list(split.test_set)


def cmd_retrieve(args) -> None:
    if not (args.split or args.db):
        raise CorpusError("retrieve needs --split or --db")
    split = load_split(args.split) if args.split else None
    tm = read_jsonl(args.db) if args.db else split.tm_database
    if args.index:
        index = load_index(args.index, expected_checksum=corpus_checksum(tm))
    else:
        index = build_index(tm)
    entries = {pair.id: pair for pair in tm}
    queries = _retrieve_queries(args, split)
    if args.max_sentences:
        queries = queries[:args.max_sentences]
    records = []
    for query in queries:
        hits = retrieve_top_k(index, entries, query.source, args.k, limit=args.limit)
        records.append({"query": query.to_dict(), "hits": [hit.to_dict() for hit in hits]})
    _write_records(records, args.out)


def cmd_prompt(args) -> None:
    split = load_split(args.split) if args.split else None
    lang = _lang(args, split)
    template = get_template(args.template)
    records = []
    for hit_record in _read_records(args.hits):
        query = hit_record["query"]
        demos = order_demos(_demonstrations(hit_record, args.k), args.order) if template.with_tm else []
        request = render(template, lang, query["source"], demos, query_id=query["id"])
        for warning in request.warnings:
            print(f"Warning: {warning}", file=sys.stderr)
        records.append(request.to_dict())
    _write_records(records, args.out)


async def cmd_translate(args) -> None:
    split = load_split(args.split) if args.split else None
    lang = _lang(args, split)
    template = get_template(args.template)
    hypotheses = load_hypotheses(args.nmt_hyp) if args.nmt_hyp else {}
    policy = RoutingPolicy(threshold=args.fms_threshold, hypotheses=hypotheses)

    requests: list[PromptRequest] = []
    routing: list[list[str]] = []
    for hit_record in _read_records(args.hits):
        query = SentencePair(**hit_record["query"])
        choices = []
        demos = []
        if template.with_tm:
            demos = order_demos(_demonstrations(hit_record, args.k), args.order)
            entries = route_demonstrations(query, demos, policy)
            demos = [entry.demonstration for entry in entries]
            choices = [str(entry.choice) for entry in entries]
        requests.append(render(template, lang, query.source, demos, query_id=query.id))
        routing.append(choices)

    config = _backend_config(args)
    params = DecodingParams(max_output_tokens=args.max_output_tokens)
    completions = await translate_batch(requests, params, config, fail_fast=args.fail_fast)

    records = []
    for request, choices, completion in zip(requests, routing, completions):
        records.append({
            "id": request.query_id,
            "prompt": request.rendered,
            "routing": choices,
            "completion": completion.text,
            "cleaned": "" if completion.failed else clean_output(completion.text),
            "attempt_count": completion.attempt_count,
            "error": completion.error,
        })
    _write_records(records, args.out)
    failed = sum(1 for completion in completions if completion.failed)
    if failed:
        print(f"{failed}/{len(completions)} requests failed")


def cmd_evaluate(args) -> None:
    hyps = Path(args.hyp).read_text(encoding="utf-8").splitlines()
    refs = Path(args.ref).read_text(encoding="utf-8").splitlines()
    if len(hyps) != len(refs):
        raise EvaluationError(f"{args.hyp} has {len(hyps)} lines, {args.ref} has {len(refs)}")
    if args.tokenized:
        hyp_tokens = [line.split() for line in hyps]
        ref_tokens = [line.split() for line in refs]
    else:
        hyp_tokens = [score_tokenize(line, args.lang) for line in hyps]
        ref_tokens = [score_tokenize(line, args.lang) for line in refs]
    report = corpus_bleu(hyp_tokens, ref_tokens, lowercase=args.lowercase)
    print(report.format_multi_bleu())
    if report.zero_precision:
        print("Note: some n-gram precision is zero, so BLEU is 0 (no smoothing)")


async def cmd_experiment(args) -> None:
    config = ExperimentConfig.from_yaml(args.config, max_sentences=args.max_sentences)
    runner = ExperimentRunner(runs_dir=args.runs_dir)
    if args.sweep:
        reports = await runner.sweep(config, args.sweep, values=args.values or None, resume=args.resume)
    else:
        reports = [await runner.run(config, resume=args.resume)]

    for report in reports:
        snapshot = report.config
        print(
            f"template #{snapshot['template_id']} k={snapshot['k']} order={snapshot['demo_order']} "
            f"selection={snapshot['selection']} threshold={snapshot['threshold']}: "
            f"{report.corpus.format_multi_bleu()} | TM {report.tm_proportion:.1%} NMT {report.nmt_proportion:.1%}"
        )
        for label, bucket in report.buckets.items():
            print(f"    FMS {label}: BLEU {bucket.bleu:.2f}{' (zero precision)' if bucket.zero_precision else ''}")
        if report.failures or report.empty_outputs:
            print(f"    {report.failures} failed, {report.empty_outputs} empty outputs")
    print(f"Reports written under {args.runs_dir}")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Translation-memory prompting toolkit")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def lang_flags(p):
        p.add_argument("--src-lang", help="Source language code, e.g. de")
        p.add_argument("--tgt-lang", help="Target language code, e.g. en")

    p = sub.add_parser("ingest", help="Load and normalize a raw parallel corpus")
    p.add_argument("--input", required=True, help="Corpus file (source side for --format paired)")
    p.add_argument("--target-file", help="Target-side file for --format paired")
    p.add_argument("--format", choices=[f.value for f in CorpusFormat], default="tsv")
    p.add_argument("--output", required=True, help="Normalized JSONL output")
    p.add_argument("--max-tokens", type=int, default=DEFAULT_MAX_TOKENS)
    p.add_argument("--dedup", action="store_true", help="Reject exact duplicate pairs")
    p.add_argument("--detokenize", action="store_true", help="Moses-detokenize both sides first")
    lang_flags(p)

    p = sub.add_parser("split", help="Split a normalized corpus into test set and TM database")
    p.add_argument("--corpus", required=True, help="Normalized JSONL corpus")
    p.add_argument("--test-size", type=int, default=DEFAULT_TEST_SIZE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="Split directory")
    lang_flags(p)

    p = sub.add_parser("index", help="Build and save the TM index of a split")
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("retrieve", help="Top-k fuzzy matches for test sentences or free text")
    p.add_argument("--split", help="Split directory (TM database and test set)")
    p.add_argument("--db", help="Normalized JSONL TM database, overrides the split's")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--query", help="Single query sentence")
    group.add_argument("--query-file", help="One query sentence per line")
    p.add_argument("--index", help="Saved index (built on the fly if omitted)")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--limit", type=int, default=DEFAULT_CANDIDATE_LIMIT, help="Candidates reranked per query")
    p.add_argument("--max-sentences", type=int)
    p.add_argument("--out", help="Hits JSONL (stdout if omitted)")

    for name, help_text in (("prompt", "Render prompts from hits"), ("translate", "Render, route and translate")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--hits", required=True, help="Hits JSONL from `retrieve`")
        p.add_argument("--split", help="Split directory (for language names)")
        p.add_argument("--template", type=int, default=DEFAULT_TM_TEMPLATE)
        p.add_argument("--k", type=int, default=5, help="Use only the first k hits")
        p.add_argument("--order", choices=[o.value for o in DemoOrder], default=DemoOrder.DESCENDING.value)
        p.add_argument("--out", help="Output JSONL (stdout if omitted)")
        lang_flags(p)
    p.add_argument("--nmt-hyp", help="JSONL of {id, hypothesis}")
    p.add_argument("--fms-threshold", type=float, default=0.0, help="Route TM matches below this FMS to NMT")
    p.add_argument("--backend", choices=[BackendKind.COPY.value, BackendKind.ECHO.value], default=BackendKind.COPY.value)
    p.add_argument("--backend-config", help="YAML backend config (required for remote-completion)")
    p.add_argument("--max-in-flight", type=int, default=4)
    p.add_argument("--max-output-tokens", type=int)
    p.add_argument("--fail-fast", action="store_true")

    p = sub.add_parser("evaluate", help="multi-bleu compatible corpus BLEU")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--lang", default="en", help="Language for the scoring tokenizer")
    p.add_argument("--tokenized", action="store_true", help="Input is already tokenized")
    p.add_argument("--lowercase", "-lc", action="store_true")

    p = sub.add_parser("experiment", help="Run an experiment config or sweep one axis")
    p.add_argument("--config", required=True, help="Experiment YAML")
    p.add_argument("--sweep", choices=list(SWEEP_AXES))
    p.add_argument("--values", nargs="+", help="Sweep values (defaults to the full grid)")
    p.add_argument("--resume", action="store_true", help="Reuse completions checkpointed by an earlier run")
    p.add_argument("--runs-dir", default="runs")
    p.add_argument("--max-sentences", type=int)
    return parser


async def main():
    args = build_parser().parse_args()
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handler = globals()[f"cmd_{args.command}"]
    try:
        if asyncio.iscoroutinefunction(handler):
            await handler(args)
        else:
            handler(args)
    except TmPromptingError as e:
        print(f"Error: {e.message}")
        sys.exit(1)


if __name__ == "__main__":
    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        print("\nInterrupted")
        sys.exit(130)
