import asyncio
from dataclasses import replace

import pytest

from conftest import EXPERIMENTS, FIXTURES
from tm_prompting.backends import BackendConfig, CopyStubBackend
from tm_prompting.errors import ExperimentError
from tm_prompting.experiment import ExperimentConfig, ExperimentRunner, default_sweep_values, run, sweep
from tm_prompting.report import HTML_FILE, RECORDS_FILE, SUMMARY_FILE, load_report


def run_sync(config, **runner_kwargs):
    return asyncio.run(run(config, **runner_kwargs))


def test_copy_oracle_scores_100(copy_split_dir):
    report = run_sync(ExperimentConfig(split_dir=str(copy_split_dir), k=1))
    assert len(report.records) == 40
    assert report.corpus.bleu == pytest.approx(100.0)
    assert all(record.cleaned == record.reference for record in report.records)
    assert all(record.fms == 1.0 for record in report.records)
    assert report.tm_proportion == 1.0 and report.nmt_proportion == 0.0
    assert report.fms_histogram.counts == (0, 0, 0, 0, 40)


def test_copy_oracle_from_yaml():
    report = run_sync(ExperimentConfig.from_yaml(EXPERIMENTS / "copy_oracle.yaml"))
    assert report.corpus.bleu == pytest.approx(100.0)
    assert [record.id for record in report.records] == [100, 101, 102, 103]
    assert report.config["split_checksums"]["tm"].startswith("0cd879b5")


def test_zero_shot_echo_returns_sources():
    report = run_sync(ExperimentConfig.from_yaml(EXPERIMENTS / "zero_shot_echo.yaml"))
    assert [record.cleaned for record in report.records] == [record.source for record in report.records]
    assert all(record.k == 0 and record.provenance == () for record in report.records)
    assert report.tm_proportion == 0.0 and report.nmt_proportion == 0.0


def test_copy_stub_on_zero_shot_records_failures():
    config = ExperimentConfig.from_yaml(EXPERIMENTS / "zero_shot_echo.yaml", backend=BackendConfig())
    report = run_sync(config)
    assert report.failures == 4
    assert report.corpus.bleu == 0.0
    assert all("demonstration" in record.error for record in report.records)


def test_stub_runs_are_byte_identical(copy_split_dir, tmp_path):
    config = ExperimentConfig(split_dir=str(copy_split_dir), k=3, max_sentences=10)
    run_sync(config, runs_dir=tmp_path / "a")
    run_sync(config, runs_dir=tmp_path / "b")
    first = next((tmp_path / "a").iterdir())
    second = tmp_path / "b" / first.name
    for name in (SUMMARY_FILE, RECORDS_FILE, HTML_FILE):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_prompts_grow_with_k(copy_split_dir):
    runner = ExperimentRunner()
    base = ExperimentConfig(split_dir=str(copy_split_dir), max_sentences=10)
    reports = asyncio.run(runner.sweep(base, "k", [1, 2, 3, 5, 9]))
    for records in zip(*(report.records for report in reports)):
        lengths = [len(record.prompt) for record in records]
        assert lengths == sorted(set(lengths))
    # retrieval happens once per sentence at the deepest k
    assert runner.retrieval_calls == 10


def test_cached_retrieval_is_transparent(copy_split_dir):
    base = ExperimentConfig(split_dir=str(copy_split_dir), max_sentences=10)
    swept = asyncio.run(sweep(base, "k", [1, 4]))[1]
    fresh = run_sync(replace(base, k=4))
    assert swept.records == fresh.records
    assert swept.corpus == fresh.corpus


def test_threshold_sweep_is_monotone(fuzzy_split_dir):
    base = ExperimentConfig(
        split_dir=str(fuzzy_split_dir),
        k=1,
        nmt_hypotheses=str(fuzzy_split_dir / "nmt.jsonl"),
    )
    thresholds = default_sweep_values("threshold")
    reports = asyncio.run(sweep(base, "threshold"))
    proportions = [report.tm_proportion for report in reports]
    assert proportions == sorted(proportions, reverse=True)
    assert proportions[0] == 1.0
    # no test sentence is in the TM, so every top match is below 1.0
    assert proportions[-1] == 0.0
    for threshold, report in zip(thresholds, reports):
        for record in report.records:
            routed = record.fms < threshold
            assert record.routing == (("nmt",) if routed else ("tm",))
            assert (record.cleaned == f"nmt {record.id}") == routed
            assert record.provenance == (("nmt",) if routed else ("tm",))


def test_demo_order_permutes_lines(copy_split_dir):
    base = ExperimentConfig(split_dir=str(copy_split_dir), template_id=9, k=3, max_sentences=10)
    ascending, descending = asyncio.run(sweep(base, "order", ["asc", "desc"]))
    for asc, desc in zip(ascending.records, descending.records):
        asc_lines, desc_lines = asc.prompt.split("\n"), desc.prompt.split("\n")
        assert asc_lines[0] == desc_lines[0] and asc_lines[-1] == desc_lines[-1]
        assert sorted(asc_lines[1:-1]) == sorted(desc_lines[1:-1])
    # ascending puts the exact match next to the query, where the copy stub reads it
    assert ascending.corpus.bleu == pytest.approx(100.0)
    assert descending.corpus.bleu < 100.0


def test_random_selection_is_reproducible():
    config = ExperimentConfig(split_dir=str(FIXTURES / "de-en-mini"), k=2, selection="random-in-domain", seed=5)
    first, second = run_sync(config), run_sync(config)
    assert [r.prompt for r in first.records] == [r.prompt for r in second.records]
    assert all(r.provenance == ("random-in", "random-in") for r in first.records)
    assert first.tm_proportion == 0.0


def test_resume_skips_completed_sentences(copy_split_dir, tmp_path):
    backend = CopyStubBackend()
    runner = ExperimentRunner(backend=backend, runs_dir=tmp_path / "runs")
    config = ExperimentConfig(split_dir=str(copy_split_dir), k=2, max_sentences=12)
    first = asyncio.run(runner.run(config))
    assert backend.calls == 12
    resumed = asyncio.run(runner.run(config, resume=True))
    assert backend.calls == 12
    assert resumed.records == first.records
    asyncio.run(runner.run(config))
    assert backend.calls == 24


def test_stage_error_names_the_sentence(tmp_path):
    hypotheses = tmp_path / "partial.jsonl"
    hypotheses.write_text('{"id": 101, "hypothesis": "x"}\n', encoding="utf-8")
    config = ExperimentConfig(
        split_dir=str(FIXTURES / "de-en-mini"),
        k=2,
        threshold=1.0,
        nmt_hypotheses=str(hypotheses),
    )
    with pytest.raises(ExperimentError) as excinfo:
        run_sync(config)
    assert excinfo.value.sentence_id == 100


def test_config_validation():
    with pytest.raises(ExperimentError):
        ExperimentConfig(split_dir="x", k=0)
    with pytest.raises(ExperimentError):
        ExperimentConfig(split_dir="x", threshold=0.5)
    with pytest.raises(ExperimentError):
        ExperimentConfig(split_dir="x", threshold=0.5, nmt_hypotheses="h.jsonl", selection="random-in-domain")
    with pytest.raises(ExperimentError):
        ExperimentConfig(split_dir="x", selection="random-out-domain")
    with pytest.raises(ExperimentError, match="unknown"):
        ExperimentConfig.from_dict({"split_dir": "x", "temprature": 0.1})


def test_config_hash_tracks_content():
    config = ExperimentConfig.from_yaml(EXPERIMENTS / "copy_oracle.yaml")
    assert config.config_hash() == ExperimentConfig.from_yaml(EXPERIMENTS / "copy_oracle.yaml").config_hash()
    assert len(config.config_hash()) == 12
    overridden = ExperimentConfig.from_yaml(EXPERIMENTS / "copy_oracle.yaml", k=3, threshold=None)
    assert overridden.k == 3
    assert overridden.config_hash() != config.config_hash()


def test_yaml_paths_resolve_against_the_file():
    config = ExperimentConfig.from_yaml(EXPERIMENTS / "copy_oracle.yaml")
    assert config.split_dir == str((FIXTURES / "de-en-mini").resolve())


def test_remote_example_config_parses():
    config = ExperimentConfig.from_yaml(EXPERIMENTS / "remote_example.yaml")
    assert config.backend.kind == "remote-completion"
    assert config.backend.credential_env_var == "TM_PROMPTING_API_KEY"
    assert config.backend.retry.max_attempts == 5


def test_report_round_trip(tmp_path):
    config = ExperimentConfig.from_yaml(EXPERIMENTS / "copy_oracle.yaml")
    report = run_sync(config, runs_dir=tmp_path)
    run_dir = next(tmp_path.iterdir())
    loaded = load_report(run_dir)
    assert loaded == report
    assert "BLEU = 100.00" in (run_dir / HTML_FILE).read_text(encoding="utf-8")


def test_unknown_sweep_axis(copy_split_dir):
    with pytest.raises(ExperimentError, match="sweep axis"):
        asyncio.run(sweep(ExperimentConfig(split_dir=str(copy_split_dir)), "temperature"))
