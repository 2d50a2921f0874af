"""
Experiment reports: summary.json, records.jsonl and a browsable report.html.

Nothing time-dependent is written, so rerunning a stub-backend experiment
reproduces the files byte for byte.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from jinja2 import Environment

from .errors import EvaluationError
from .evaluate import BleuReport
from .retrieval import FmsHistogram, bucket_label

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"
RECORDS_FILE = "records.jsonl"
HTML_FILE = "report.html"


@dataclass(frozen=True)
class SentenceRecord:
    """Everything needed to audit one test sentence."""

    id: int
    source: str
    reference: str
    fms: float
    routing: tuple[str, ...]
    template_id: int
    k: int
    prompt: str
    completion: str
    cleaned: str
    provenance: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "source": self.source,
            "reference": self.reference,
            "fms": self.fms,
            "routing": list(self.routing),
            "template_id": self.template_id,
            "k": self.k,
            "prompt": self.prompt,
            "completion": self.completion,
            "cleaned": self.cleaned,
            "provenance": list(self.provenance),
            "warnings": list(self.warnings),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SentenceRecord":
        return cls(
            id=data["id"],
            source=data["source"],
            reference=data["reference"],
            fms=data["fms"],
            routing=tuple(data["routing"]),
            template_id=data["template_id"],
            k=data["k"],
            prompt=data["prompt"],
            completion=data["completion"],
            cleaned=data["cleaned"],
            provenance=tuple(data.get("provenance", ())),
            warnings=tuple(data.get("warnings", ())),
            error=data.get("error"),
        )


@dataclass(frozen=True)
class ExperimentReport:
    records: tuple[SentenceRecord, ...]
    corpus: BleuReport
    buckets: dict[str, BleuReport]
    tm_proportion: float
    nmt_proportion: float
    fms_histogram: FmsHistogram
    config: dict = field(default_factory=dict)

    @property
    def failures(self) -> int:
        return sum(1 for record in self.records if record.error is not None)

    @property
    def empty_outputs(self) -> int:
        return sum(1 for record in self.records if record.error is None and not record.cleaned)

    def summary(self) -> dict:
        return {
            "config": self.config,
            "sentences": len(self.records),
            "corpus": self.corpus.to_dict(),
            "multi_bleu": self.corpus.format_multi_bleu(),
            "buckets": {label: report.to_dict() for label, report in self.buckets.items()},
            "bucket_sizes": self.bucket_sizes(),
            "tm_proportion": self.tm_proportion,
            "nmt_proportion": self.nmt_proportion,
            "fms_histogram": self.fms_histogram.to_dict(),
            "failures": self.failures,
            "empty_outputs": self.empty_outputs,
        }

    def bucket_sizes(self) -> dict[str, int]:
        edges = self.fms_histogram.bucket_edges
        counts = {bucket_label(i, edges): count for i, count in enumerate(self.fms_histogram.counts)}
        return {label: counts[label] for label in self.buckets}


def emit_report(report: ExperimentReport, directory: str | Path) -> Path:
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        summary = json.dumps(report.summary(), ensure_ascii=False, sort_keys=True, indent=2) + "\n"
        (directory / SUMMARY_FILE).write_text(summary, encoding="utf-8")
        with open(directory / RECORDS_FILE, "w", encoding="utf-8") as f:
            for record in report.records:
                f.write(json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
        html = _HTML_ENV.from_string(HTML_REPORT_TEMPLATE).render(report=report, summary=report.summary())
        (directory / HTML_FILE).write_text(html, encoding="utf-8")
    except OSError as exc:
        raise EvaluationError(f"cannot write report to {directory}: {exc}") from exc
    logger.info("Wrote report for %d sentences to %s", len(report.records), directory)
    return directory


def load_report(directory: str | Path) -> ExperimentReport:
    directory = Path(directory)
    summary = json.loads((directory / SUMMARY_FILE).read_text(encoding="utf-8"))
    with open(directory / RECORDS_FILE, "r", encoding="utf-8") as f:
        records = tuple(SentenceRecord.from_dict(json.loads(line)) for line in f if line.strip())
    histogram = summary["fms_histogram"]
    return ExperimentReport(
        records=records,
        corpus=BleuReport.from_dict(summary["corpus"]),
        buckets={label: BleuReport.from_dict(data) for label, data in summary["buckets"].items()},
        tm_proportion=summary["tm_proportion"],
        nmt_proportion=summary["nmt_proportion"],
        fms_histogram=FmsHistogram(
            bucket_edges=tuple(histogram["bucket_edges"]),
            counts=tuple(histogram["counts"]),
            proportions=tuple(histogram["proportions"]),
        ),
        config=summary["config"],
    )


_HTML_ENV = Environment(autoescape=True, keep_trailing_newline=True)

HTML_REPORT_TEMPLATE = """<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <meta name="viewport" content="width=device-width, initial-scale=1.0">
    <title>TM Prompting Report - template #{{ summary.config.template_id }}, k={{ summary.config.k }}</title>
    <style>
        * { box-sizing: border-box; margin: 0; padding: 0; }
        body { font-family: -apple-system, BlinkMacSystemFont, 'Segoe UI', Roboto, sans-serif; background: #f5f5f5; padding: 20px; }
        .container { max-width: 1200px; margin: 0 auto; }
        .header { background: #1a1a2e; color: white; padding: 30px; border-radius: 10px; margin-bottom: 20px; }
        .header h1 { font-size: 24px; margin-bottom: 10px; }
        .header .meta { color: #888; font-size: 14px; }
        .summary { display: flex; gap: 20px; margin-bottom: 20px; }
        .summary-card { flex: 1; background: white; padding: 20px; border-radius: 10px; text-align: center; box-shadow: 0 2px 4px rgba(0,0,0,0.1); }
        .summary-card .count { font-size: 36px; font-weight: bold; }
        .summary-card .label { color: #666; font-size: 14px; }
        table { width: 100%; background: white; border-collapse: collapse; border-radius: 10px; margin-bottom: 20px; }
        th, td { padding: 8px 12px; border-bottom: 1px solid #eee; text-align: left; font-size: 13px; }
        .sentence { background: white; border-radius: 10px; margin-bottom: 15px; box-shadow: 0 2px 4px rgba(0,0,0,0.1); }
        .sentence-header { padding: 12px 20px; border-bottom: 1px solid #eee; display: flex; gap: 15px; }
        .sentence-body { padding: 15px 20px; }
        .detail label { font-weight: 600; color: #666; font-size: 12px; text-transform: uppercase; display: block; margin: 8px 0 4px; }
        .detail pre { white-space: pre-wrap; color: #333; }
        .error { color: #991b1b; }
        .warn { color: #92400e; }
    </style>
</head>
<body>
    <div class="container">
        <div class="header">
            <h1>{{ summary.multi_bleu }}</h1>
            <div class="meta">
                {{ summary.config.lang.src_name }} &rarr; {{ summary.config.lang.tgt_name }} |
                template #{{ summary.config.template_id }} | k={{ summary.config.k }} |
                order={{ summary.config.demo_order }} | selection={{ summary.config.selection }} |
                threshold={{ summary.config.threshold }}
            </div>
        </div>

        <div class="summary">
            <div class="summary-card">
                <div class="count">{{ summary.sentences }}</div>
                <div class="label">Sentences</div>
            </div>
            <div class="summary-card">
                <div class="count">{{ "%.1f"|format(100 * summary.tm_proportion) }}%</div>
                <div class="label">TM demonstrations</div>
            </div>
            <div class="summary-card">
                <div class="count">{{ summary.failures }}</div>
                <div class="label">Failures</div>
            </div>
            <div class="summary-card">
                <div class="count">{{ summary.empty_outputs }}</div>
                <div class="label">Empty outputs</div>
            </div>
        </div>

        <table>
            <tr><th>FMS bucket</th><th>Sentences</th><th>BLEU</th><th>Precisions</th><th>BP</th></tr>
            {% for label, bucket in report.buckets.items() %}
            <tr>
                <td>{{ label }}</td>
                <td>{{ summary.bucket_sizes[label] }}</td>
                <td>{{ "%.2f"|format(bucket.bleu) }}{% if bucket.zero_precision %} <span class="warn">(zero n-gram precision)</span>{% endif %}</td>
                <td>{% for p in bucket.precisions %}{{ "%.1f"|format(100 * p) }}{% if not loop.last %}/{% endif %}{% endfor %}</td>
                <td>{{ "%.3f"|format(bucket.brevity_penalty) }}</td>
            </tr>
            {% endfor %}
        </table>

        {% for record in report.records %}
        <div class="sentence">
            <div class="sentence-header">
                <strong>#{{ record.id }}</strong>
                <span>FMS {{ "%.3f"|format(record.fms) }}</span>
                <span>{{ record.routing|join(", ") }}</span>
                {% if record.error %}<span class="error">{{ record.error }}</span>{% endif %}
            </div>
            <div class="sentence-body">
                <div class="detail"><label>Source</label><pre>{{ record.source }}</pre></div>
                <div class="detail"><label>Prompt</label><pre>{{ record.prompt }}</pre></div>
                <div class="detail"><label>Output</label><pre>{{ record.cleaned }}</pre></div>
                <div class="detail"><label>Reference</label><pre>{{ record.reference }}</pre></div>
                {% for warning in record.warnings %}<div class="warn">{{ warning }}</div>{% endfor %}
            </div>
        </div>
        {% endfor %}
    </div>
</body>
</html>
"""
