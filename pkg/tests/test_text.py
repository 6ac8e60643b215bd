import numpy as np
import pytest
from hypothesis import given, strategies as st

from vogue import autodiff as ad
from vogue.autodiff import Tape, Tensor, finite_diff_check
from vogue.text import (
    CTX, DECODER_SPECIALS, ENCODER_SPECIALS, ENT, UNK, Span, SpanError, Vocab, build_vocab, embed,
    gazetteer_spans, init_embeddings, load_word_vectors, mask_entities, tokenize, unmask_entities,
)


def test_tokenize_examples():
    assert tokenize("Who is HBO?") == ["who", "is", "hbo", "?"]
    assert tokenize("") == []
    assert tokenize("sister-station's") == ["sister-station", "'s"]


def test_tokenize_keeps_placeholders_and_numbers():
    assert tokenize("[ENT] owns [ANS] shows.") == ["[ENT]", "owns", "[ANS]", "shows", "."]
    assert tokenize("It costs 3.50, ok") == ["it", "costs", "3.50", ",", "ok"]


def test_mask_entities_example():
    toks = ["how", "many", "shows", "does", "hbo", "have"]
    masked, ents = mask_entities(toks, [Span(4, 5)])
    assert masked == ["how", "many", "shows", "does", ENT, "have"]
    assert ents == ["hbo"]


def test_mask_without_spans_and_with_two():
    toks = ["a", "b", "c", "d"]
    assert mask_entities(toks, []) == (toks, [])
    masked, ents = mask_entities(toks, [Span(0, 1), Span(2, 4)])
    assert masked == [ENT, "b", ENT] and ents == ["a", "c d"]


@pytest.mark.parametrize("spans", [[Span(0, 2), Span(1, 3)], [Span(2, 3), Span(0, 1)],
                                   [Span(3, 5)], [Span(1, 1)]])
def test_bad_spans(spans):
    with pytest.raises(SpanError):
        mask_entities(["a", "b", "c", "d"], spans)


@given(st.lists(st.sampled_from(["a", "b", "c", "dd"]), min_size=1, max_size=12),
       st.data())
def test_mask_unmask_roundtrip(tokens, data):
    cuts = sorted(set(data.draw(st.lists(st.integers(0, len(tokens)), max_size=6))))
    spans = [Span(a, b) for a, b in zip(cuts[::2], cuts[1::2]) if a < b]
    masked, ents = mask_entities(tokens, spans)
    assert masked.count(ENT) == len(ents) == len(spans)
    assert unmask_entities(masked, ents) == tokens


def test_build_vocab_rules():
    v = build_vocab([["a", "a", "b"]], min_count=2)
    assert "a" in v and "b" not in v
    assert build_vocab([]).tokens == ENCODER_SPECIALS
    tie = build_vocab([["b", "a"]])
    assert tie.id_of["a"] < tie.id_of["b"]
    freq = build_vocab([["z", "z", "a"]])
    assert freq.id_of["z"] < freq.id_of["a"]
    with pytest.raises(ValueError):
        build_vocab([], min_count=0)


def test_vocab_bijection_and_unknowns():
    v = build_vocab([["x", "y"]], specials=DECODER_SPECIALS)
    assert len(set(v.id_of.values())) == len(v)
    assert all(v.token_of(v.id_of[t]) == t for t in v.tokens)
    assert v.encode(["x", "never-seen"]) == [v.id_of["x"], v.id_of[UNK]]
    assert Vocab.from_json(v.to_json()) == v


def test_decoder_specials_disjoint_from_words():
    v = build_vocab([["[ENT]", "owns", "[ANS]", "[START]"]], specials=DECODER_SPECIALS)
    assert v.tokens[:len(DECODER_SPECIALS)] == DECODER_SPECIALS
    assert v.tokens.count(ENT) == 1


def test_embed_lookup_and_gradient():
    table = init_embeddings(6, 4, np.random.default_rng(0))
    assert np.abs(table.data).max() <= 0.1
    out = embed([2], table)
    assert np.array_equal(out.data[0], table.data[2])
    rep = embed([3, 3], table)
    assert np.array_equal(rep.data[0], rep.data[1])
    with Tape() as tape:
        tape.backward(ad.tsum(embed([1, 4, 1], table)))
    assert np.array_equal(table.grad.sum(axis=1) / 4, [0, 2, 0, 0, 1, 0])
    r = Tensor(np.random.default_rng(1).normal(size=(3, 4)))
    assert finite_diff_check(lambda t: ad.tsum(embed([1, 4, 1], t) * r), table.data) < 1e-6


def test_embed_out_of_range():
    with pytest.raises(IndexError):
        embed([7], init_embeddings(3, 2, np.random.default_rng(0)))


def test_gazetteer_longest_match():
    toks = tokenize("Did Neil Cross visit New York or York?")
    spans = gazetteer_spans(toks, ["Neil_Cross", "New_York", "York", "Neil"])
    assert [" ".join(toks[s.start:s.end]) for s in spans] == ["neil cross", "new york", "york"]


def test_load_word_vectors(tmp_path):
    v = build_vocab([["cat", "dog"]])
    table = init_embeddings(len(v), 3, np.random.default_rng(0))
    path = tmp_path / "vec.txt"
    path.write_text("cat 1 2 3\nbird 4 5 6\ndog 1 1\n")
    assert load_word_vectors(path, v, table) == 1
    assert np.array_equal(table.data[v.id_of["cat"]], [1, 2, 3])


def test_ctx_is_a_special():
    assert CTX in ENCODER_SPECIALS
