from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from caaed.errors import ConfigError, DataError
from caaed.vocab import (CHAR_TO_ID, SPECIALS, Corpus, Vocab, build_character, build_mixed_units,
                         build_wordpiece, greedy_decompose)

WORDS = st.text(alphabet="abcde", min_size=1, max_size=6)
LINES = st.lists(st.lists(WORDS, min_size=1, max_size=5).map(" ".join), min_size=1, max_size=12)


def brute_force_best_pair(segmented: dict[tuple[str, ...], int]):
    """Enumerate every adjacent pair by hand and pick the winner."""
    counts = Counter()
    for parts, f in segmented.items():
        for i in range(len(parts) - 1):
            counts[(parts[i], parts[i + 1])] += f
    best = max(counts.values())
    return min((a + b, (a, b)) for (a, b), c in counts.items() if c == best)[1], best


def test_first_merge_is_ab():
    corpus = Corpus.from_lines(["ab ab ab abc"])
    base = 4 + 3  # specials + a, b, c
    v = build_wordpiece(corpus, base + 1)
    assert v.merges == [("a", "b")]
    assert brute_force_best_pair({tuple("ab"): 3, tuple("abc"): 1})[0] == ("a", "b")


def test_degenerate_wordpiece_is_characters():
    corpus = Corpus.from_lines(["ab ab ab abc"])
    v = build_wordpiece(corpus, 7)
    assert v.merges == [] and v.units == list(SPECIALS) + ["a", "b", "c"]
    assert v.units == build_character(corpus).units
    with pytest.raises(ConfigError):
        build_wordpiece(corpus, 6)


def test_empty_corpus():
    with pytest.raises(DataError):
        build_wordpiece(Corpus.from_lines([""]), 10)
    with pytest.raises(DataError):
        build_mixed_units(Corpus.from_lines([]), 2)


@given(LINES, st.integers(0, 12))
@settings(max_examples=100, deadline=None)
def test_bpe_merges_match_bruteforce(lines, extra):
    corpus = Corpus.from_lines(lines)
    n_base = len(SPECIALS) + len({c for w in corpus.freqs for c in w})
    v = build_wordpiece(corpus, n_base + extra)
    assert len(v) <= n_base + extra
    segmented = {tuple(w): f for w, f in corpus.freqs.items()}
    for pair in v.merges:
        want, count = brute_force_best_pair(segmented)
        assert pair == want and count >= 2
        new = {}
        for parts, f in segmented.items():
            out, i = [], 0
            while i < len(parts):
                if i + 1 < len(parts) and (parts[i], parts[i + 1]) == pair:
                    out.append(parts[i] + parts[i + 1])
                    i += 2
                else:
                    out.append(parts[i])
                    i += 1
            new[tuple(out)] = f
        segmented = new
    # stored merges re-segment each training word exactly as training did
    for parts in segmented:
        word = "".join(parts)
        assert tuple(v.units[i] for i in v.segment(word)) == parts


def test_mixed_unit_examples():
    assert greedy_decompose("playground", ["play", "ground"]) == ["play", "ground"]
    assert greedy_decompose("playa", ["play"]) == ["play", "a"]
    assert greedy_decompose("play", ["play"]) == ["play"]
    corpus = Corpus.from_lines(["play ground play ground playground playa xyplay"])
    v = build_mixed_units(corpus, 2)
    assert v.decomp["playground"] == ("play", "ground")
    assert v.decomp["playa"] == ("play", "a")
    assert v.decomp["xyplay"] == ("xy", "play")
    assert v.decomp["play"] == ("play",)
    assert "xy" in v.unit_to_id
    with pytest.raises(ConfigError):
        build_mixed_units(corpus, 0)


@given(LINES, st.integers(1, 4))
@settings(max_examples=100, deadline=None)
def test_mixed_units_closed(lines, threshold):
    corpus = Corpus.from_lines(lines)
    v = build_mixed_units(corpus, threshold)
    for word in corpus.freqs:
        ids = v.segment(word)
        assert v.unk not in ids
        assert "".join(v.units[i] for i in ids) == word


def test_mixed_unit_unseen_word():
    v = build_mixed_units(Corpus.from_lines(["cat cat dog dog catdog"]), 2)
    assert [v.units[i] for i in v.segment("dogcat")] == ["dog", "cat"]
    assert [v.units[i] for i in v.segment("cato")] == ["cat", "o"]


def test_tokenize_examples():
    v = build_wordpiece(Corpus.from_lines(["ab ab ab"]), 7)
    ab = v.unit_to_id["ab"]
    assert v.tokenize("") == [v.sos, v.eos]
    assert v.tokenize("ab") == [v.sos, ab, v.eos]
    assert v.tokenize("ab ab") == [v.sos, ab, v.space, ab, v.eos]
    assert v.unk in v.tokenize("abz")


def test_detokenize_examples():
    v = Vocab("word-piece", list(SPECIALS) + ["p", "l", "a", "y", "pl", "ay"], [("p", "l"), ("a", "y")])
    assert v.detokenize([v.sos, v.eos]) == ""
    ids = [v.sos, v.unit_to_id["pl"], v.unit_to_id["ay"], v.eos]
    assert v.detokenize(ids) == "play"
    assert v.tokenize("play") == ids
    with pytest.raises(DataError):
        v.detokenize([99])


@pytest.mark.parametrize("kind", ["word-piece", "mixed-unit", "character"])
def test_round_trip_1000_lines(kind, synth_lines):
    corpus = Corpus.from_lines(synth_lines[:1000])
    from caaed.vocab import build_vocab
    v = build_vocab(corpus, kind, target_size=60, freq_threshold=5)
    for line in corpus.lines:
        assert v.detokenize(v.tokenize(line)) == line


def test_char_ids():
    v = build_mixed_units(Corpus.from_lines(["play play"]), 2)
    uid = v.unit_to_id["play"]
    assert v.char_ids(uid) == tuple(CHAR_TO_ID[c] for c in "play")
    assert v.char_ids(v.space) == (CHAR_TO_ID["<space>"],)
    for u in range(len(v)):
        chars = "".join(v.char_inventory[c] for c in v.char_ids(u))
        assert chars == v.units[u]
    with pytest.raises(DataError):
        v.char_ids(len(v))


@given(LINES, st.sampled_from(["word-piece", "mixed-unit", "character"]))
@settings(max_examples=50, deadline=None)
def test_serialisation_round_trip(lines, kind):
    from caaed.vocab import build_vocab
    corpus = Corpus.from_lines(lines)
    v = build_vocab(corpus, kind, target_size=20, freq_threshold=2)
    text = v.dumps()
    w = Vocab.loads(text)
    assert w == v and w.dumps() == text
    for line in corpus.lines:
        assert w.tokenize(line) == v.tokenize(line)


def test_load_rejects_bad_files(tmp_path):
    with pytest.raises(DataError):
        Vocab.loads("word-piece\t10\n0\t<sos>\t0\n")
    with pytest.raises(DataError):
        Vocab.loads("nonsense\n")
    with pytest.raises(DataError):
        Vocab.load(tmp_path / "missing.txt")
