"""Probe and series file parsing."""

import pytest

from hnav_extractor.probes import CotSeries, Probe, ProbeFileError, load_probes, load_series

from conftest import COT_ROWS, PROBE_ROWS, write_jsonl


def test_load_probes_roundtrip(tmp_path):
    path = write_jsonl(tmp_path / "p.jsonl", PROBE_ROWS)
    probes = load_probes(path)
    assert [p.id for p in probes] == ["p1", "p2", "p3"]
    assert probes[0] == Probe(
        id="p1",
        system="TS",
        code="001",
        question="Which code covers acute widget failure ?",
        answer_statement="Code 001 covers acute widget failure .",
    )


def test_comments_and_blanks_skipped(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text(
        "# leading comment\n\n"
        '{"id": "x", "system": "S", "code": "1", "question": "q", "answer_statement": "a"}\n'
        "   \n# trailing\n",
        encoding="utf-8",
    )
    assert len(load_probes(path)) == 1


def test_bad_json_reports_line(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text('{"id": "x"\n', encoding="utf-8")
    with pytest.raises(ProbeFileError) as info:
        load_probes(path)
    assert info.value.lineno == 1


def test_missing_field_named(tmp_path):
    row = dict(PROBE_ROWS[0])
    del row["answer_statement"]
    path = write_jsonl(tmp_path / "p.jsonl", [row])
    with pytest.raises(ProbeFileError, match="answer_statement"):
        load_probes(path)


def test_duplicate_probe_id_rejected(tmp_path):
    path = write_jsonl(tmp_path / "p.jsonl", [PROBE_ROWS[0], PROBE_ROWS[0]])
    with pytest.raises(ProbeFileError, match="duplicate"):
        load_probes(path)


def test_load_series_roundtrip(tmp_path):
    path = write_jsonl(tmp_path / "c.jsonl", COT_ROWS)
    series = load_series(path)
    assert [s.probe_id for s in series] == ["p1", "p3"]
    assert all(isinstance(s, CotSeries) for s in series)
    assert series[0].step_count == 5
    assert series[0].steps[0].startswith(PROBE_ROWS[0]["question"])


def test_series_steps_must_be_string_list(tmp_path):
    row = dict(COT_ROWS[0])
    row["steps"] = "not a list"
    path = write_jsonl(tmp_path / "c.jsonl", [row])
    with pytest.raises(ProbeFileError, match="steps"):
        load_series(path)


def test_series_steps_must_be_nonempty(tmp_path):
    row = dict(COT_ROWS[0])
    row["steps"] = []
    path = write_jsonl(tmp_path / "c.jsonl", [row])
    with pytest.raises(ProbeFileError, match="nonempty"):
        load_series(path)


def test_duplicate_series_rejected(tmp_path):
    path = write_jsonl(tmp_path / "c.jsonl", [COT_ROWS[0], COT_ROWS[0]])
    with pytest.raises(ProbeFileError, match="duplicate"):
        load_series(path)


def test_series_default_joiner(tmp_path):
    row = dict(COT_ROWS[0])
    del row["joiner"]
    path = write_jsonl(tmp_path / "c.jsonl", [row])
    assert load_series(path)[0].joiner == ", and "
