import json
import logging

import numpy as np
import pytest

from vogue.data import (
    IngestError, build_vocabs, lf_tokens, load_dataset, make_batch, question_tokens, save_dataset,
    split_dev, target_tokens,
)
from vogue.grammar import execute, parse_lf
from vogue.synth import (
    FIXTURE_SIZES, TEMPLATES, answer_text, fixture, fixture_kg, generate, toy_kg,
)
from vogue.text import CTX, END, ENT, START


def write(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


RECORD = {
    "question": "How many players are in Chicago Bulls?",
    "logical_form": "count(find_reverse(Chicago_Bulls, team))",
    "answer": "15",
    "entities": [{"surface": "Chicago Bulls", "start_token": 5, "end_token": 7}],
    "references": ["[ENT] has [ANS] players.", "There are [ANS] players in [ENT].",
                   "[ANS] players play for [ENT]."],
    "slots": [["Chicago Bulls", "15"], ["15", "Chicago Bulls"], ["15", "Chicago Bulls"]],
}


def test_multi_reference_record(tmp_path):
    [ex] = load_dataset(write(tmp_path / "a.jsonl", [RECORD]))
    assert len(ex.references) == 3
    assert ex.references[1].realized() == "There are 15 players in Chicago Bulls."
    assert ex.logical_form.depth() == 2


def test_empty_file_warns(tmp_path, caplog):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with caplog.at_level(logging.WARNING):
        assert load_dataset(path) == []
    assert "no records" in caplog.text


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(RECORD) + "\n{nope\n")
    with pytest.raises(IngestError) as e:
        load_dataset(path)
    assert e.value.lineno == 2
    assert ":2:" in str(e.value)


def test_unparseable_lf_skipped_with_count(tmp_path, caplog):
    bad = dict(RECORD, logical_form="is_in(find(X, p), Y)")
    with caplog.at_level(logging.WARNING):
        out = load_dataset(write(tmp_path / "m.jsonl", [RECORD, bad, bad]))
    assert len(out) == 1
    assert "skipped 2" in caplog.text


def test_field_map(tmp_path):
    rec = {"q": RECORD["question"], "sparql_lf": RECORD["logical_form"], "ans": "15",
           "verbalized": RECORD["references"][:1]}
    [ex] = load_dataset(write(tmp_path / "f.jsonl", [rec]),
                        field_map={"question": "q", "logical_form": "sparql_lf", "answer": "ans",
                                   "references": "verbalized"})
    assert ex.answer == "15" and ex.references[0].text == "[ENT] has [ANS] players."


def test_gazetteer_fallback_when_entities_missing(tmp_path):
    rec = {k: v for k, v in RECORD.items() if k != "entities"}
    rec["question"] = "How many shows does HBO own?"
    [ex] = load_dataset(write(tmp_path / "g.jsonl", [rec]), kg=toy_kg())
    assert ex.entity_surfaces == ["hbo"]


def test_save_load_roundtrip(tmp_path):
    data = generate(12, seed=3)
    save_dataset(data, tmp_path / "d.jsonl")
    back = load_dataset(tmp_path / "d.jsonl")
    assert [e.to_json() for e in back] == [e.to_json() for e in data]


def test_encoded_sequences_end_with_ctx():
    for ex in fixture(64):
        q = question_tokens(ex)
        lf = lf_tokens(ex.logical_form, ex)
        assert q[-1] == CTX and lf[-1] == CTX
        assert q.count(ENT) == len(ex.entities)
        t = target_tokens(ex.references[0])
        assert t[0] == START and t[-1] == END


def test_foreign_entities_stay_visible_in_lf():
    ex = fixture(16)[0]
    gold = lf_tokens(ex.logical_form, ex)
    swapped = parse_lf(ex.logical_form.surface.replace(ex.entities[0].id, "Nobody_Here"))
    neg = lf_tokens(swapped, ex)
    assert "Nobody_Here" in neg and "Nobody_Here" not in gold
    assert gold.count(ENT) >= 1


def test_make_batch_shapes_and_masks():
    data = fixture(16)[:5]
    vocabs = build_vocabs(data)
    b = make_batch(data, vocabs, [e.logical_form for e in data])
    assert b.q_ids.shape == b.q_mask.shape and b.size == 5
    assert b.tgt_in.shape == b.tgt_out.shape
    # target shift: the output at t is the input at t+1
    assert np.array_equal(b.tgt_in[:, 1:][b.tgt_mask[:, :-1]], b.tgt_out[:, :-1][b.tgt_mask[:, :-1]])
    assert (b.q_ids[~b.q_mask] == vocabs.question.pad).all()


def test_split_dev_is_seeded_partition():
    data = fixture(64)
    tr, dv = split_dev(data, 0.2, 5)
    assert len(dv) == 13 and len(tr) == 51
    assert split_dev(data, 0.2, 5)[1] == dv
    assert split_dev(data, 0.2, 6)[1] != dv


def test_fixtures_shipped_and_reproducible():
    kg = fixture_kg()
    assert len(kg.entities) == 20
    assert kg.triples == toy_kg().triples
    for n in FIXTURE_SIZES:
        shipped = fixture(n)
        assert len(shipped) == n
        assert [e.to_json() for e in shipped] == [e.to_json() for e in generate(n, seed=n)]


def test_fixture_records_are_consistent():
    kg = fixture_kg()
    for ex in fixture(256):
        assert answer_text(execute(ex.logical_form, kg)) == ex.answer
        for ref in ex.references:
            assert "[" not in ref.realized()
    names = {t.references[0] for t in TEMPLATES}
    assert names == {e.references[0].text for e in fixture(256)}
    assert any(len(e.references) == 3 for e in fixture(256))
