import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convofeat.pairing import (
    MIN_POSITIVE_GAP,
    dump_pairs,
    make_persona_pairs,
    make_topic_pairs,
    positive_index_pairs,
    shuffle_and_order,
)


class TestPositiveIndexPairs:
    def test_eight_turn_cross_speaker(self):
        # 1-based turn indices with gap > 4, any speakers
        got = set(positive_index_pairs(8, same_speaker=False))
        assert got == {(1, 6), (1, 7), (1, 8), (2, 7), (2, 8), (3, 8)}

    def test_eight_turn_same_speaker(self):
        # same speaker means both indices share parity
        got = set(positive_index_pairs(8, same_speaker=True))
        assert got == {(1, 7), (2, 8)}

    def test_short_dialogue_has_none(self):
        assert positive_index_pairs(MIN_POSITIVE_GAP + 1, same_speaker=False) == []

    @given(st.integers(min_value=2, max_value=30))
    @settings(max_examples=30, deadline=None)
    def test_gap_invariant(self, n):
        for i, j in positive_index_pairs(n, same_speaker=False):
            assert j - i > MIN_POSITIVE_GAP
            assert 1 <= i < j <= n

    @given(st.integers(min_value=2, max_value=30))
    @settings(max_examples=30, deadline=None)
    def test_same_speaker_parity(self, n):
        for i, j in positive_index_pairs(n, same_speaker=True):
            assert (i - j) % 2 == 0


class TestPairGeneration:
    def test_balanced_labels(self, tiny_split, tiny_vocab):
        pairs = make_topic_pairs(tiny_split.train, 200, tiny_vocab, seed=0)
        labels = [p.y for p in pairs]
        assert labels.count(1.0) == labels.count(0.0) == 100

    def test_deterministic(self, tiny_split, tiny_vocab):
        a = make_topic_pairs(tiny_split.train, 50, tiny_vocab, seed=3)
        b = make_topic_pairs(tiny_split.train, 50, tiny_vocab, seed=3)
        assert [(p.s, p.t, p.y) for p in a] == [(p.s, p.t, p.y) for p in b]

    def test_kind_recorded(self, tiny_split, tiny_vocab):
        topic = make_topic_pairs(tiny_split.train, 10, tiny_vocab, seed=0)
        persona = make_persona_pairs(tiny_split.train, 10, tiny_vocab, seed=0)
        assert all(p.kind == "topic" for p in topic)
        assert all(p.kind == "persona" for p in persona)

    def test_positive_provenance_same_dialogue(self, tiny_split, tiny_vocab):
        for p in make_topic_pairs(tiny_split.train, 100, tiny_vocab, seed=1):
            (d_s, i), (d_t, j) = p.provenance
            if p.y == 1.0:
                assert d_s == d_t
                assert abs(i - j) > MIN_POSITIVE_GAP
            else:
                assert d_s != d_t

    def test_persona_positives_same_speaker(self, tiny_split, tiny_vocab):
        for p in make_persona_pairs(tiny_split.train, 100, tiny_vocab, seed=1):
            (d_s, i), (d_t, j) = p.provenance
            if p.y == 1.0:
                assert d_s == d_t
                assert (i - j) % 2 == 0

    def test_encoded_length_fixed(self, tiny_split, tiny_vocab):
        for p in make_topic_pairs(tiny_split.train, 20, tiny_vocab, seed=0):
            assert len(p.s) == len(p.t) == tiny_vocab.max_len

    def test_too_short_dialogues_rejected(self, tiny_vocab, tiny_split):
        short = [d for d in tiny_split.train][:1]
        trimmed = type(short[0])(id=short[0].id, turns=short[0].turns[:3],
                                 truth=short[0].truth)
        with pytest.raises(ValueError):
            make_topic_pairs([trimmed], 10, tiny_vocab, seed=0)


class TestShuffleAndDump:
    def test_shuffle_is_permutation_up_to_swaps(self, tiny_split, tiny_vocab):
        pairs = make_topic_pairs(tiny_split.train, 40, tiny_vocab, seed=0)
        mixed = shuffle_and_order(pairs, seed=9)
        key = lambda p: (tuple(sorted([p.s, p.t])), p.y)
        assert sorted(map(key, mixed)) == sorted(map(key, pairs))
        assert [p.y for p in mixed] != [p.y for p in pairs]

    def test_shuffle_swaps_some_pair_orders(self, tiny_split, tiny_vocab):
        pairs = make_topic_pairs(tiny_split.train, 40, tiny_vocab, seed=0)
        mixed = shuffle_and_order(pairs, seed=9)
        originals = {(p.s, p.t) for p in pairs}
        assert any((p.s, p.t) not in originals for p in mixed)

    def test_dump_jsonl(self, tiny_split, tiny_vocab, tmp_path):
        pairs = make_topic_pairs(tiny_split.train, 10, tiny_vocab, seed=0)
        out = tmp_path / "pairs.jsonl"
        dump_pairs(pairs, out)
        rows = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(rows) == 10
        assert {"s_ref", "t_ref", "y", "kind"} <= set(rows[0])
