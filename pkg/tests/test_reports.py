import dataclasses
import math

import pytest

from hiernav.gateway import ScriptedModel
from hiernav.orchestrator import RecordLog, ValidationError, run_experiment
from hiernav.prompts import PromptTemplate
from hiernav.reports import (
    ALL_FORMATS,
    DELIMITED,
    IoError,
    MissingRecords,
    ReportBundle,
    STRUCTURED_RECORDS,
    TABULAR_TEXT,
    TaxonomyRequired,
    emit_report,
    load_bundle,
    load_delimited,
    score_experiment,
)
from hiernav.taskgen import McqTask, NcaTask
from hiernav.taxonomy import ComplexityBand, band_of, ingest_taxonomy

from test_orchestrator import (
    nca_task,
    scripted_completers,
    spec,
    tiny_taxonomy,
)

MCQ_TEMPLATES = (PromptTemplate.DIRECT_QA, PromptTemplate.STRUCTURED)


def banded_mcq(task_id, marker, answer_key, band):
    options = {"A": "opt a", "B": "opt b", "C": "opt c", "D": "opt d"}
    return McqTask(
        id=task_id,
        system="TS",
        question=f"What is the description of the medical code {marker} in TS?",
        options=options,
        answer_key=answer_key,
        band=band,
    )


def mcq_fixture(tmp_path, endpoints=("m1",)):
    """Four questions with (3, 2, 1, 0) correct runs apiece on m1.

    Any extra endpoint answers A on everything; no answer key is A, so
    those endpoints score zero across the board.
    """
    light, medium = ComplexityBand.MEMORY_LIGHT, ComplexityBand.MEDIUM
    tasks = [
        banded_mcq("q1", "001", "B", light),
        banded_mcq("q2", "002", "B", light),
        banded_mcq("q3", "003", "C", medium),
        banded_mcq("q4", "004", "D", medium),
    ]
    rules = {
        "001": ["Answer: B", "Answer: B", "Answer: B"],
        "002": ["Answer: B", "Answer: B", "Answer: D"],
        "003": ["Answer: A", "Answer: A", "Answer: C"],
        "004": ["Answer: A", "Answer: A", "Answer: A"],
    }
    completers = {}
    for endpoint_id in endpoints:
        script = rules if endpoint_id == "m1" else {"the": "Answer: A"}
        model = ScriptedModel(list(script.items()))
        completers.update(scripted_completers(model, (endpoint_id,)))
    log = RecordLog(tmp_path / "runs.jsonl")
    run_experiment(spec(endpoints=tuple(endpoints)), tasks, completers, log)
    return tasks, log.records()


def cell_rows(rows, endpoint_id, template):
    return [
        r
        for r in rows
        if r["endpoint_id"] == endpoint_id and r["template"] == template
    ]


def test_mcq_accuracy_and_votes(tmp_path):
    tasks, records = mcq_fixture(tmp_path)
    bundle = score_experiment(records, tasks)
    assert len(bundle.accuracy_rows) == 2
    for row in bundle.accuracy_rows:
        assert row["n_questions"] == 4
        assert row["accuracy_mean"] == pytest.approx(0.5)
        assert row["accuracy_majority"] == pytest.approx(0.5)
        assert row["accuracy_std"] == pytest.approx(0.0)
        assert row["accuracy_run0"] == pytest.approx(0.5)
        assert row["unparseable_rate"] == 0.0
    for row in bundle.vote_rows:
        assert row["all_correct"] == 1
        assert row["majority_correct"] == 1
        assert row["majority_incorrect"] == 1
        assert row["all_incorrect"] == 1
        assert row["total"] == 4


def test_vote_counts_conserve_question_total(tmp_path):
    tasks, records = mcq_fixture(tmp_path)
    bundle = score_experiment(records, tasks)
    for row in bundle.vote_rows:
        parts = (
            row["all_incorrect"]
            + row["majority_incorrect"]
            + row["majority_correct"]
            + row["all_correct"]
        )
        assert parts == row["total"]


def test_band_rows_recompose_overall_mean(tmp_path):
    tasks, records = mcq_fixture(tmp_path)
    bundle = score_experiment(records, tasks)
    for template in ("direct_qa", "structured"):
        rows = cell_rows(bundle.band_rows, "m1", template)
        assert [r["band"] for r in rows] == ["MemoryLight", "Medium"]
        light, medium = rows
        assert light["accuracy_mean"] == pytest.approx(5 / 6)
        assert light["accuracy_majority"] == pytest.approx(1.0)
        assert medium["accuracy_mean"] == pytest.approx(1 / 6)
        assert medium["accuracy_majority"] == pytest.approx(0.0)
        assert light["pms_mean"] is None
        total = sum(r["n_questions"] for r in rows)
        weighted = sum(r["accuracy_mean"] * r["n_questions"] for r in rows) / total
        overall = cell_rows(bundle.accuracy_rows, "m1", template)[0]
        assert weighted == pytest.approx(overall["accuracy_mean"])


def test_question_rows_carry_per_run_detail(tmp_path):
    tasks, records = mcq_fixture(tmp_path)
    bundle = score_experiment(records, tasks)
    rows = cell_rows(bundle.question_rows, "m1", "direct_qa")
    by_id = {r["question_id"]: r for r in rows}
    assert by_id["q2"]["correct_run0"] is True
    assert by_id["q2"]["correct_run2"] is False
    assert by_id["q2"]["vote_category"] == 2
    assert by_id["q4"]["vote_category"] == 0
    assert by_id["q1"]["band"] == "MemoryLight"
    assert by_id["q1"]["pms"] is None
    assert by_id["q1"]["system"] == "TS"


def nca_fixture(tmp_path):
    taxonomy = tiny_taxonomy()
    n1 = nca_task(taxonomy, "n1", "A1", "A2")
    n2 = nca_task(taxonomy, "n2", "A1", "B1")
    perfect = "NCA: A\nPATH_A: R > A\nPATH_B: R > A"
    wrong_nca = "NCA: A\nPATH_A: R > A\nPATH_B: R > B"
    rules = {
        "A2": perfect,
        "B1": [wrong_nca, wrong_nca, "no idea"],
    }
    model = ScriptedModel(list(rules.items()))
    log = RecordLog(tmp_path / "runs.jsonl")
    run_experiment(
        spec(templates=(PromptTemplate.NCA_PATH,)),
        [n1, n2],
        scripted_completers(model),
        log,
    )
    return taxonomy, [n1, n2], log.records()


def test_nca_scoring_requires_taxonomy(tmp_path):
    taxonomy, tasks, records = nca_fixture(tmp_path)
    with pytest.raises(TaxonomyRequired):
        score_experiment(records, tasks)


def test_nca_scoring_path_scores_and_votes(tmp_path):
    taxonomy, tasks, records = nca_fixture(tmp_path)
    bundle = score_experiment(records, tasks, taxonomy)
    acc = bundle.accuracy_rows[0]
    assert acc["accuracy_mean"] == pytest.approx(0.5)
    assert acc["accuracy_majority"] == pytest.approx(0.5)
    assert acc["unparseable_rate"] == pytest.approx(1 / 6)
    by_id = {r["question_id"]: r for r in bundle.question_rows}
    assert by_id["n1"]["pms"] == pytest.approx(1.0)
    assert by_id["n1"]["vote_category"] == 3
    # n2's paths are right even though its named common node is wrong;
    # the unparseable third run zeroes one third of every component
    assert by_id["n2"]["pms"] == pytest.approx(2 / 3)
    assert by_id["n2"]["f1"] == pytest.approx(2 / 3)
    assert by_id["n2"]["css"] == pytest.approx(2 / 3)
    assert by_id["n2"]["vote_category"] == 0
    vote = bundle.vote_rows[0]
    assert vote["all_correct"] == 1
    assert vote["all_incorrect"] == 1
    band = {r["band"]: r for r in bundle.band_rows}
    assert band["MemoryLight"]["pms_mean"] == pytest.approx(1.0)


def test_nca_scoring_rejects_stale_tasks(tmp_path):
    taxonomy, tasks, records = nca_fixture(tmp_path)
    stale = [tasks[0], dataclasses.replace(tasks[1], truth_nca="A")]
    with pytest.raises(ValidationError):
        score_experiment(records, stale, taxonomy)


def test_missing_records_raises_unless_partial(tmp_path):
    tasks, records = mcq_fixture(tmp_path)
    incomplete = [
        r for r in records if not (r.question_id == "q3" and r.run_index == 2)
    ]
    with pytest.raises(MissingRecords) as info:
        score_experiment(incomplete, tasks)
    assert ("m1", "direct_qa", "q3", 2) in info.value.cells
    bundle = score_experiment(incomplete, tasks, partial=True)
    assert bundle.metadata["partial"] is True
    assert bundle.metadata["missing_cells"] == 2
    for row in bundle.accuracy_rows:
        assert row["n_questions"] == 3
    assert not any(r["question_id"] == "q3" for r in bundle.question_rows)


def test_scoring_input_validation(tmp_path):
    tasks, records = mcq_fixture(tmp_path)
    with pytest.raises(ValidationError):
        score_experiment([], tasks)
    with pytest.raises(ValidationError):
        score_experiment(records, tasks[1:])
    mixed = [records[0]] + [
        dataclasses.replace(r, experiment_id="other") for r in records[1:]
    ]
    with pytest.raises(ValidationError):
        score_experiment(mixed, tasks)


def test_delta_rows_are_antisymmetric(tmp_path):
    tasks, records = mcq_fixture(tmp_path, endpoints=("m1", "m2"))
    forward = score_experiment(records, tasks, pairs=[("m1", "m2")])
    backward = score_experiment(records, tasks, pairs=[("m2", "m1")])
    assert len(forward.delta_rows) == 2
    for fwd, bwd in zip(forward.delta_rows, backward.delta_rows):
        assert fwd["template"] == bwd["template"]
        assert fwd["delta_mean"] == pytest.approx(-bwd["delta_mean"])
        assert fwd["delta_majority"] == pytest.approx(-bwd["delta_majority"])
    # m2 answers A on everything and no key is A, so it scores 0 against
    # m1's 6 / 12; delta is second endpoint minus first
    fwd = forward.delta_rows[0]
    assert fwd["delta_mean"] == pytest.approx(-0.5)
    assert fwd["delta_majority"] == pytest.approx(-0.5)


def test_metadata_names_conventions(tmp_path):
    tasks, records = mcq_fixture(tmp_path)
    bundle = score_experiment(
        records, tasks, extra_metadata={"note": "fixture run"}
    )
    meta = bundle.metadata
    assert meta["experiment_id"] == "exp-1"
    assert meta["std_convention"] == "population"
    assert meta["runs_per_question"] == 3
    assert meta["nca_complexity_counts_common_node"] is True
    assert meta["max_tokens_defaults"]["direct_qa"] == 16
    assert len(meta["template_digests"]) == 4
    assert meta["note"] == "fixture run"


def test_structured_records_round_trip(tmp_path):
    tasks, records = mcq_fixture(tmp_path)
    bundle = score_experiment(records, tasks, pairs=[("m1", "m1")])
    out = tmp_path / "report"
    written = emit_report(bundle, out, formats=[STRUCTURED_RECORDS])
    assert [p.name for p in written] == ["bundle.json"]
    loaded = load_bundle(out / "bundle.json")
    assert loaded.to_json_dict() == bundle.to_json_dict()


def test_delimited_round_trip_is_exact(tmp_path):
    taxonomy, tasks, records = nca_fixture(tmp_path)
    bundle = score_experiment(records, tasks, taxonomy)
    out = tmp_path / "report"
    emit_report(bundle, out, formats=[DELIMITED])
    loaded = load_delimited(out)
    assert loaded.accuracy_rows == bundle.accuracy_rows
    assert loaded.delta_rows == bundle.delta_rows
    assert loaded.vote_rows == bundle.vote_rows
    assert loaded.band_rows == bundle.band_rows
    assert loaded.question_rows == bundle.question_rows
    assert loaded.metadata == bundle.metadata
    # floats survive the text leg bit-exactly
    raw = bundle.question_rows[1]["pms"]
    assert loaded.question_rows[1]["pms"] == raw
    assert math.isclose(raw, 2 / 3, rel_tol=0, abs_tol=0)


def test_tabular_text_report(tmp_path):
    tasks, records = mcq_fixture(tmp_path)
    bundle = score_experiment(records, tasks)
    out = tmp_path / "report"
    written = emit_report(bundle, out, formats=[TABULAR_TEXT])
    text = written[0].read_text(encoding="utf-8")
    assert "ACCURACY" in text
    assert "accuracy_mean" in text
    assert "METADATA" in text


def test_emit_all_formats(tmp_path):
    tasks, records = mcq_fixture(tmp_path)
    bundle = score_experiment(records, tasks)
    out = tmp_path / "report"
    written = emit_report(bundle, out, formats=ALL_FORMATS)
    names = {p.name for p in written}
    assert {"report.txt", "bundle.json", "metadata.json", "accuracy.tsv"} <= names
    with pytest.raises(ValueError):
        emit_report(bundle, out, formats=["csv"])


def test_delimited_rejects_cells_the_format_cannot_hold(tmp_path):
    bundle = ReportBundle(
        accuracy_rows=[],
        delta_rows=[],
        vote_rows=[],
        band_rows=[],
        question_rows=[
            {
                "endpoint_id": "m\t1",
                "template": "direct_qa",
                "question_id": "q1",
                "system": "TS",
                "band": None,
                "p": None,
                "r": None,
                "f1": None,
                "css": None,
                "pms": None,
                "vote_category": 0,
                "correct_run0": False,
                "correct_run1": False,
                "correct_run2": False,
            }
        ],
        metadata={},
    )
    with pytest.raises(IoError):
        emit_report(bundle, tmp_path / "report", formats=[DELIMITED])
