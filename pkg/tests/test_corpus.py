import json

import numpy as np
import pytest

from masksum.corpus import (GRAMMAR_WORDS, CorpusError, Example, SyntheticSpec, generate_examples, generate_synthetic,
                            load_jsonl, noise_lexicon, stats, token_classes, write_jsonl)
from masksum.rouge import rouge_n
from masksum.textrank import split_sentences
from masksum.tokenizer import build_vocab, tokenize


def write_lines(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs), encoding="utf-8")


def test_load_empty_file(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text("")
    assert load_jsonl(p) == []


def test_load_two_lines_in_order(tmp_path):
    p = tmp_path / "c.jsonl"
    write_lines(p, [{"id": "b", "article": "x", "summary": "y"}, {"id": "a", "article": "z", "summary": ""}])
    assert [e.id for e in load_jsonl(p)] == ["b", "a"]


def test_missing_field_cites_line(tmp_path):
    p = tmp_path / "c.jsonl"
    write_lines(p, [{"id": "1", "article": "x", "summary": "y"}, {"id": "2", "article": "x", "summary": "y"},
                    {"id": "3", "article": "x"}])
    with pytest.raises(CorpusError, match=":3:.*summary"):
        load_jsonl(p)


def test_duplicate_and_malformed(tmp_path):
    p = tmp_path / "c.jsonl"
    write_lines(p, [{"id": "a", "article": "x", "summary": "y"}, {"id": "a", "article": "x", "summary": "y"}])
    with pytest.raises(CorpusError, match="'a'"):
        load_jsonl(p)
    p.write_text('{"id": "a", "article": "x", "summary": "y"}\nnot json\n')
    with pytest.raises(CorpusError, match=":2:"):
        load_jsonl(p)
    with pytest.raises(FileNotFoundError, match="nope"):
        load_jsonl(tmp_path / "nope.jsonl")


def test_jsonl_roundtrip(tmp_path):
    exs = [Example("é1", "Ünïcode article.", "summary \"quoted\""), Example("2", "b", "c")]
    p, q = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_jsonl(p, exs)
    assert load_jsonl(p) == exs
    write_jsonl(q, load_jsonl(p))
    assert p.read_bytes() == q.read_bytes()


def test_synthetic_deterministic(tmp_path):
    spec = SyntheticSpec(num_examples=50, seed=3)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert a == b
    write_jsonl(tmp_path / "a", a[0])
    write_jsonl(tmp_path / "b", b[0])
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert generate_synthetic(SyntheticSpec(num_examples=50, seed=4)) != a


def test_split_sizes():
    tr, va, te = generate_synthetic(SyntheticSpec(num_examples=100))
    assert (len(tr), len(va), len(te)) == (80, 10, 10)
    assert len({e.id for e in tr + va + te}) == 100


def test_summary_has_salient_sentence_count():
    for e in generate_examples(SyntheticSpec(num_examples=40, min_sentences=6, max_sentences=6, salient=2)):
        assert len(split_sentences(e.summary)) == 2
        assert len(split_sentences(e.article, min_tokens=1)) == 6


def test_extractive_oracle_without_noise_or_paraphrase():
    spec = SyntheticSpec(num_examples=40, noise_rate=0.0, paraphrase=False)
    for e in generate_examples(spec):
        sents = split_sentences(e.article)
        picked = [s for s in sents if s in e.summary]
        assert " ".join(picked) == e.summary
        assert rouge_n(tokenize(" ".join(picked)), tokenize(e.summary), 1).f1 == 1.0


def test_paraphrase_changes_verbs():
    e = generate_examples(SyntheticSpec(num_examples=1))[0]
    assert e.summary not in e.article


def test_vocab_within_spec():
    spec = SyntheticSpec()
    tr, va, te = generate_synthetic(spec)
    vocab = build_vocab([e.article + " " + e.summary for e in tr + va + te])
    assert len(vocab) - 5 <= spec.vocab_size
    assert set(noise_lexicon(20)).isdisjoint(GRAMMAR_WORDS)


def test_spec_validation():
    with pytest.raises(CorpusError):
        SyntheticSpec(vocab_size=20).validate()
    with pytest.raises(CorpusError):
        SyntheticSpec(salient=5, min_sentences=4).validate()
    with pytest.raises(CorpusError):
        generate_examples(SyntheticSpec(min_sentences=7, max_sentences=6))


def test_salience_signal():
    """Dropping the noise tokens from an article raises its ROUGE-1 F1 against the summary."""
    exs = generate_examples(SyntheticSpec(num_examples=200))
    better = 0
    for e in exs:
        toks = tokenize(e.article)
        ref = tokenize(e.summary)
        salient, noise = token_classes(toks)
        kept = [t for t, n in zip(toks, noise) if not n]
        better += rouge_n(kept, ref, 1).f1 > rouge_n(toks, ref, 1).f1
        assert salient.any() and noise.any()
    assert better >= 0.95 * len(exs)


def test_token_classes():
    sal, noi = token_classes(["alice", "bought", "zubax", "."])
    assert sal.tolist() == [True, True, False, False]
    assert noi.tolist() == [False, False, True, False]


def test_stats_empty_and_conservation(tmp_path):
    s = stats([])
    assert s.count == 0 and sum(s.article_hist.values()) == 0
    exs = generate_examples(SyntheticSpec(num_examples=30))
    s = stats(exs, vocab=build_vocab([e.article for e in exs]))
    assert sum(s.article_hist.values()) == 30 == sum(s.summary_hist.values())
    assert 0 < s.vocab_coverage < 1  # paraphrased verbs only appear in summaries
    s.write(tmp_path / "stats.txt")
    lines = (tmp_path / "stats.txt").read_text().splitlines()
    assert lines[0] == "examples 30"
    assert np.isclose(float(lines[1].split()[1]), s.article_tokens_mean, atol=1e-4)
