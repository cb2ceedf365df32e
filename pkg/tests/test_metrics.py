"""Metric checks against independently computed brute-force values.

The expected numbers below were produced by a standalone script that
implements each formula directly from its definition (clipped n-gram
counts, pooled reference information weights, and so on) without
importing this package.  They are frozen here as literals.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convofeat.metrics import (
    EmbeddingTable,
    bleu,
    dist_n,
    embedding_metrics,
    ent_n,
    evaluate_corpus,
    meteor_simple,
    ngrams,
    nist,
    stem,
    train_embedding_table,
)

SINGLE = [("a b c d".split(), "a b c e".split())]
EXACT = [("the cat sat".split(), "the cat sat".split())]
TWO = [
    ("a b c d e".split(), "a b c d f".split()),
    ("x y".split(), "x y z".split()),
]
FIVE = [
    ("the quick brown fox jumps".split(), "the quick red fox jumps".split()),
    ("hello world".split(), "hello there world".split()),
    ("a a a".split(), "a a a a".split()),
    ("one two three four".split(), "one two three four".split()),
    ("pad pad pad".split(), "totally different tokens".split()),
]


class TestBleu:
    def test_single_pair_frozen(self):
        # precisions (3/4, 3/4, 2/3, 1/2) after add-one smoothing on n >= 2
        assert bleu(SINGLE).score == pytest.approx(65.803700647625, abs=1e-9)

    def test_exact_match_is_100(self):
        assert bleu(EXACT).score == pytest.approx(100.0, abs=1e-9)

    def test_two_pair_corpus_frozen(self):
        assert bleu(TWO).score == pytest.approx(67.014444709658, abs=1e-9)

    def test_five_pair_corpus_frozen(self):
        assert bleu(FIVE).score == pytest.approx(52.065710604038, abs=1e-9)

    def test_zero_unigram_overlap_scores_zero(self):
        out = bleu([("a b".split(), "c d".split())])
        assert out.score == 0.0
        assert out.raw_zero

    def test_brevity_penalty_applied(self):
        short = bleu([("a b".split(), "a b c d".split())])
        assert short.brevity_penalty == pytest.approx(math.exp(1 - 4 / 2))

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            bleu([])

    @given(st.lists(st.lists(st.sampled_from("abcde"), min_size=1, max_size=8),
                    min_size=1, max_size=5))
    @settings(max_examples=50, deadline=None)
    def test_identity_corpus_scores_100(self, sents):
        assert bleu([(s, list(s)) for s in sents]).score == pytest.approx(100.0)


class TestNist:
    def test_single_pair_frozen(self):
        assert nist(SINGLE) == pytest.approx(1.5, abs=1e-9)

    def test_exact_match_frozen(self):
        assert nist(EXACT) == pytest.approx(1.584962500721156, abs=1e-9)

    def test_two_pair_corpus_frozen(self):
        assert nist(TWO) == pytest.approx(2.385203785131205, abs=1e-9)

    def test_five_pair_corpus_frozen(self):
        assert nist(FIVE) == pytest.approx(2.8932968340716294, abs=1e-9)

    def test_nonnegative(self):
        assert nist([("a b".split(), "c d".split())]) >= 0.0


class TestDiversity:
    def test_dist1_all_same_token(self):
        assert dist_n(["a a a a".split()], 1) == pytest.approx(0.25, abs=1e-9)

    def test_dist2_pooled(self):
        sents = ["a b a b".split(), "a b c d".split()]
        # 6 bigram tokens, 4 distinct types
        assert dist_n(sents, 2) == pytest.approx(4 / 6, abs=1e-9)

    def test_ent4_single_type_is_zero(self):
        assert ent_n(["a b c d".split()] * 3, 4) == pytest.approx(0.0, abs=1e-9)

    def test_ent4_uniform_is_log_k(self):
        sents = [f"w{i} x{i} y{i} z{i}".split() for i in range(5)]
        assert ent_n(sents, 4) == pytest.approx(math.log(5), abs=1e-9)

    def test_ent1_two_tokens(self):
        assert ent_n(["x y".split()], 1) == pytest.approx(math.log(2), abs=1e-9)

    def test_no_ngrams_rejected(self):
        with pytest.raises(ValueError):
            dist_n(["a b".split()], 4)

    @given(st.lists(st.lists(st.sampled_from("abc"), min_size=1, max_size=6),
                    min_size=1, max_size=4))
    @settings(max_examples=50, deadline=None)
    def test_dist1_in_unit_interval(self, sents):
        d = dist_n(sents, 1)
        assert 0.0 < d <= 1.0


class TestMeteor:
    def test_identical_ten_tokens(self):
        toks = [f"t{i}" for i in range(10)]
        # P = R = 1, one chunk: 1 * (1 - 0.5 * (1/10)**3)
        assert meteor_simple([(toks, list(toks))]) == pytest.approx(0.9995)

    def test_no_match_is_zero(self):
        assert meteor_simple([("a b".split(), "c d".split())]) == 0.0

    def test_stem_match_counts(self):
        score = meteor_simple([("the cats running".split(),
                                "the cat runs".split())])
        assert score > 0.5

    def test_reordering_penalised(self):
        inorder = meteor_simple([("a b c d".split(), "a b c d".split())])
        shuffled = meteor_simple([("d c b a".split(), "a b c d".split())])
        assert shuffled < inorder

    def test_mean_over_pairs(self):
        a = meteor_simple([(["x"], ["x"])])
        b = meteor_simple([(["x"], ["y"])])
        both = meteor_simple([(["x"], ["x"]), (["x"], ["y"])])
        assert both == pytest.approx((a + b) / 2)


class TestStem:
    @pytest.mark.parametrize("word,expected", [
        ("cats", "cat"),
        ("boxes", "box"),
        ("walked", "walk"),
        ("running", "run"),
        ("stopped", "stop"),
        ("seeing", "see"),
        ("glass", "glass"),
        ("ed", "ed"),
        ("s", "s"),
    ])
    def test_suffix_stripping(self, word, expected):
        assert stem(word) == expected


class TestEmbeddingMetrics:
    def table(self):
        return EmbeddingTable({
            "a": np.array([1.0, 0.0]),
            "b": np.array([0.0, 1.0]),
            "c": np.array([1.0, 1.0]) / math.sqrt(2),
        })

    def test_identical_sentences_score_one(self):
        scores = embedding_metrics([("a b".split(), "a b".split())], self.table())
        assert scores.greedy == pytest.approx(1.0)
        assert scores.average == pytest.approx(1.0)
        assert scores.extreme == pytest.approx(1.0)

    def test_orthogonal_tokens_greedy_zero(self):
        scores = embedding_metrics([(["a"], ["b"])], self.table())
        assert scores.greedy == pytest.approx(0.0)

    def test_oov_pairs_counted(self):
        scores = embedding_metrics([(["zzz"], ["a"])], self.table())
        assert scores.oov_pairs == 1

    def test_greedy_hand_value(self):
        # hyp {a}, ref {a, b}: rows max = 1, cols max = (1 + 0) / 2
        scores = embedding_metrics([(["a"], "a b".split())], self.table())
        assert scores.greedy == pytest.approx(0.5 * (1.0 + 0.5))

    def test_trained_table_roundtrip(self, tiny_corpus, tmp_path):
        table = train_embedding_table(tiny_corpus, dim=8)
        p = tmp_path / "emb.txt"
        table.save(p)
        again = EmbeddingTable.load(p)
        tok = next(iter(table.vectors))
        assert np.allclose(table.vectors[tok], again.vectors[tok])


class TestEvaluateCorpus:
    def test_diversity_only_without_references(self):
        report = evaluate_corpus(["a b c d".split(), "e f g h".split()], None)
        assert report.bleu is None
        assert report.dist1 == pytest.approx(1.0)

    def test_full_report_structure(self):
        outs = [p[0] for p in FIVE]
        refs = [p[1] for p in FIVE]
        report = evaluate_corpus(outs, refs)
        d = report.to_dict()
        assert d["relevance"]["bleu"] == pytest.approx(52.065710604038, abs=1e-9)
        assert d["relevance"]["nist"] == pytest.approx(2.8932968340716294, abs=1e-9)
        assert d["counts"]["n_outputs"] == 5
        assert "config" in d

    def test_misaligned_lengths_rejected(self):
        with pytest.raises(ValueError):
            evaluate_corpus([["a"]], [["a"], ["b"]])


def test_ngrams_basic():
    assert ngrams(["a", "b", "c"], 2) == [("a", "b"), ("b", "c")]
    assert ngrams(["a"], 2) == []
