import pandas as pd
import pytest
import yaml
from builders import random_records
from click.testing import CliRunner

from disputebench.cli import RESOLVED_CONFIG, main
from disputebench.corpus import load_corpus
from disputebench.stats import regression_battery, write_results_table


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


def simulate(runner: CliRunner, output, *args: str):
    return runner.invoke(main, ["simulate", "--scripted", "-o", str(output), *args])


@pytest.fixture
def annotated_corpus(runner, tmp_path):
    raw = tmp_path / "sim" / "corpus.jsonl"
    labelled = tmp_path / "sim" / "annotated.jsonl"
    assert simulate(runner, raw, "--n", "20", "--seed", "11").exit_code == 0
    assert runner.invoke(main, ["annotate", str(raw), "-o", str(labelled)]).exit_code == 0
    return labelled


def test_scripted_simulation_is_reproducible(runner, tmp_path):
    first = simulate(runner, tmp_path / "a" / "corpus.jsonl", "--n", "5", "--seed", "7")
    second = simulate(runner, tmp_path / "b" / "corpus.jsonl", "--n", "5", "--seed", "7")

    assert first.exit_code == 0, first.output
    assert second.exit_code == 0, second.output
    assert (tmp_path / "a" / "corpus.jsonl").read_bytes() == (tmp_path / "b" / "corpus.jsonl").read_bytes()
    assert len(load_corpus(tmp_path / "a" / "corpus.jsonl")) == 5
    assert "Wrote 5 dialogues" in first.output


def test_parallelism_does_not_change_the_pipeline(runner, tmp_path):
    for name, workers in (("serial", "1"), ("parallel", "6")):
        base = tmp_path / name
        simulate(runner, base / "corpus.jsonl", "--n", "12", "--seed", "5", "-c", workers)
        runner.invoke(main, ["annotate", str(base / "corpus.jsonl"), "-o", str(base / "annotated.jsonl")])
        runner.invoke(main, ["analyze", str(base / "annotated.jsonl"), "-o", str(base / "analysis")])

    for name in ("corpus.jsonl", "annotated.jsonl", "analysis/records.csv", "analysis/heatmap.csv"):
        assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "parallel" / name).read_bytes()


def test_simulation_records_its_configuration(runner, tmp_path):
    simulate(runner, tmp_path / "corpus.jsonl", "--n", "2", "--seed", "3", "--policy", "open-offer")
    resolved = yaml.safe_load((tmp_path / RESOLVED_CONFIG).read_text())

    assert resolved["simulate"]["n"] == 2
    assert resolved["simulate"]["seed"] == 3
    assert resolved["simulate"]["policy"] == "open-offer"
    assert resolved["simulate"]["scripted"] is True


def test_rerun_from_resolved_config_reproduces_corpus(runner, tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    simulate(runner, corpus, "--n", "4", "--seed", "21")
    before = corpus.read_bytes()
    corpus.unlink()

    result = runner.invoke(main, ["--config", str(tmp_path / RESOLVED_CONFIG), "simulate"])

    assert result.exit_code == 0, result.output
    assert corpus.read_bytes() == before


def test_config_file_supplies_defaults(runner, tmp_path):
    config = tmp_path / "config.yaml"
    config.write_text(yaml.safe_dump({"simulate": {"n": 3, "seed": 4, "scripted": True}}))
    corpus = tmp_path / "out" / "corpus.jsonl"

    result = runner.invoke(main, ["--config", str(config), "simulate", "-o", str(corpus)])

    assert result.exit_code == 0, result.output
    assert len(load_corpus(corpus)) == 3


def test_empty_simulation(runner, tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    result = simulate(runner, corpus, "--n", "0")

    assert result.exit_code == 0
    assert corpus.read_text() == ""


def test_resume_extends_an_existing_corpus(runner, tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    fresh = tmp_path / "fresh" / "corpus.jsonl"
    simulate(runner, corpus, "--n", "3", "--seed", "9")
    simulate(runner, fresh, "--n", "5", "--seed", "9")

    result = simulate(runner, corpus, "--n", "5", "--seed", "9", "--resume")

    assert result.exit_code == 0, result.output
    assert "Kept:        3" in result.output
    assert "Wrote 5 dialogues" in result.output
    assert corpus.read_bytes() == fresh.read_bytes()


def test_live_simulation_needs_a_credential(runner, tmp_path, monkeypatch):
    monkeypatch.delenv("DISPUTEBENCH_OPENAI_KEY", raising=False)
    corpus = tmp_path / "corpus.jsonl"

    result = runner.invoke(main, ["simulate", "--n", "1", "-o", str(corpus)])

    assert result.exit_code != 0
    assert "DISPUTEBENCH_OPENAI_KEY" in result.output
    assert not corpus.exists()


def test_rules_annotation_covers_every_segment(runner, annotated_corpus):
    dialogues = load_corpus(annotated_corpus)

    assert len(dialogues) == 20
    assert all(d.is_annotated for d in dialogues)


def test_annotated_corpus_is_left_alone(runner, annotated_corpus, tmp_path):
    again = tmp_path / "again.jsonl"
    result = runner.invoke(main, ["annotate", str(annotated_corpus), "-o", str(again)])

    assert result.exit_code == 0
    assert "already annotated" in result.output
    assert load_corpus(again) == load_corpus(annotated_corpus)


def test_analyze_writes_tables(runner, annotated_corpus, tmp_path):
    out = tmp_path / "analysis"
    result = runner.invoke(main, ["analyze", str(annotated_corpus), "-o", str(out), "--role-contingent"])

    assert result.exit_code == 0, result.output
    for name in ("records.csv", "regression_effect.csv", "heatmap.csv", "stages_all.csv", "stages_Buyer.csv"):
        assert (out / name).exists()
    assert (out / "simple_effects.csv").exists()
    assert len(pd.read_csv(out / "records.csv")) == 40

    heatmap = pd.read_csv(out / "heatmap.csv", index_col=0).dropna()
    assert heatmap.sum(axis=1).tolist() == pytest.approx([100.0] * len(heatmap))
    stages = pd.read_csv(out / "stages_all.csv", index_col=0).dropna()
    assert stages.sum(axis=1).tolist() == pytest.approx([100.0] * len(stages))


def test_analyze_is_deterministic(runner, annotated_corpus, tmp_path):
    for name in ("one", "two"):
        runner.invoke(main, ["analyze", str(annotated_corpus), "-o", str(tmp_path / name)])

    for table in ("records.csv", "regression_effect.csv", "heatmap.csv"):
        assert (tmp_path / "one" / table).read_bytes() == (tmp_path / "two" / table).read_bytes()


def test_analyze_rejects_unannotated_corpus(runner, tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    simulate(runner, corpus, "--n", "2")

    result = runner.invoke(main, ["analyze", str(corpus), "-o", str(tmp_path / "analysis")])

    assert result.exit_code != 0
    assert "unannotated" in result.output


def test_evaluate_against_itself(runner, annotated_corpus, tmp_path):
    out = tmp_path / "eval"
    result = runner.invoke(main, ["evaluate", str(annotated_corpus), str(annotated_corpus), "-o", str(out)])

    assert result.exit_code == 0, result.output
    assert "Accuracy: 1.000" in result.output
    assert (out / "classification.csv").exists()


def test_report_compares_tables(runner, rng, tmp_path):
    for name in ("human", "llm"):
        battery = regression_battery(random_records(rng, 80), dvs=["score", "accept"])
        write_results_table(battery.results, tmp_path / name / "regression.csv")
    out = tmp_path / "report"

    human = tmp_path / "human" / "regression.csv"
    llm = tmp_path / "llm" / "regression.csv"
    result = runner.invoke(main, ["report", str(human), f"llm={llm}", "-o", str(out)])

    assert result.exit_code == 0, result.output
    assert "Overall overlap" in result.output
    overlap = pd.read_csv(out / "overlap.csv")
    assert list(overlap.columns[:3]) == ["dv", "overlap", "shared"]
    assert set(overlap.columns[3:]) == {"only_human", "only_llm"}


def test_report_needs_two_tables(runner, rng, tmp_path):
    path = tmp_path / "regression.csv"
    write_results_table(regression_battery(random_records(rng, 40), dvs=["score"]).results, path)

    result = runner.invoke(main, ["report", str(path), "-o", str(tmp_path / "report")])

    assert result.exit_code != 0


def test_analyze_stops_at_the_first_invalid_record(runner, annotated_corpus, tmp_path):
    corpus = tmp_path / "broken.jsonl"
    lines = annotated_corpus.read_text().splitlines()
    corpus.write_text("\n".join([lines[0], "{not json", *lines[1:]]) + "\n")

    result = runner.invoke(main, ["analyze", str(corpus), "-o", str(tmp_path / "analysis")])

    assert result.exit_code != 0
    assert "line 2" in result.output
    assert not (tmp_path / "analysis" / "records.csv").exists()
