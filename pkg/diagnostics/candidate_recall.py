"""
Candidate recall: how often the IDF-overlap candidate stage keeps the true
FMS top-k, measured against an exhaustive scan of the whole TM.

For each sampled test sentence the exhaustive top-k scores are compared with
the scores retrieve_top_k finds at several candidate limits. Also records the
mean retrieval latency per limit.

Run:
    python diagnostics/candidate_recall.py data/de-en-split --k 5 --limits 50 100 500 --sample 200

Writes candidate_recall.json and candidate_recall_log.txt next to this script.
"""
import argparse
import json
import random
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from tm_prompting.corpus import load_split  # noqa: E402
from tm_prompting.retrieval import build_index, fms_tokens, match_tokenize, retrieve_top_k  # noqa: E402

DIAG_DIR = Path(__file__).resolve().parent

results = {}
log_lines = []


def log(msg, indent=0):
    line = f"{'  ' * indent}{msg}"
    print(line)
    log_lines.append(line)


def section(title):
    log(f"\n{'─' * 60}")
    log(f"  {title}")
    log(f"{'─' * 60}")


def exhaustive_scores(index, query, k):
    q = match_tokenize(query)
    return sorted((fms_tokens(q, tokens) for tokens in index.entry_tokens.values()), reverse=True)[:k]


def measure(split_dir, k, limits, sample, seed):
    split = load_split(split_dir)
    queries = list(split.test_set)
    if sample and sample < len(queries):
        queries = random.Random(seed).sample(queries, sample)

    section("Setup")
    started = time.perf_counter()
    index = build_index(split.tm_database)
    log(f"TM entries: {index.doc_count}")
    log(f"Index build: {time.perf_counter() - started:.2f}s")
    log(f"Queries: {len(queries)}  k={k}")
    results["split_dir"] = str(split_dir)
    results["tm_size"] = index.doc_count
    results["queries"] = len(queries)
    results["k"] = k

    section("Exhaustive scan")
    started = time.perf_counter()
    truth = {query.id: exhaustive_scores(index, query.source, k) for query in queries}
    log(f"Exhaustive scan: {(time.perf_counter() - started) / len(queries) * 1000:.1f} ms/query")

    section("Candidate limits")
    results["limits"] = {}
    for limit in limits:
        hits_match = 0
        started = time.perf_counter()
        for query in queries:
            hits = retrieve_top_k(index, split.tm_database, query.source, k, limit=limit)
            hits_match += [hit.fms for hit in hits] == truth[query.id]
        elapsed = (time.perf_counter() - started) / len(queries) * 1000
        recall = hits_match / len(queries)
        log(f"limit={limit:>6}: recall {recall:.3f} ({hits_match}/{len(queries)})  {elapsed:.1f} ms/query")
        results["limits"][str(limit)] = {"recall": recall, "ms_per_query": elapsed}


def main():
    parser = argparse.ArgumentParser(description="Measure candidate-stage recall against an exhaustive scan")
    parser.add_argument("split_dir", help="Directory written by `main.py split`")
    parser.add_argument("--k", type=int, default=5)
    parser.add_argument("--limits", type=int, nargs="+", default=[50, 100, 250, 500])
    parser.add_argument("--sample", type=int, default=200, help="Number of test sentences (0 for all)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    measure(args.split_dir, args.k, args.limits, args.sample, args.seed)

    section("Saved")
    with open(DIAG_DIR / "candidate_recall.json", "w", encoding="utf-8") as f:
        json.dump(results, f, indent=2)
    log("Full results saved: candidate_recall.json")
    with open(DIAG_DIR / "candidate_recall_log.txt", "w", encoding="utf-8") as f:
        f.write("\n".join(log_lines))
    log("Full log saved: candidate_recall_log.txt")


if __name__ == "__main__":
    main()
