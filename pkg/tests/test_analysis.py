import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentgraph.analysis import (
    GraphStats, bleu, export_graph, graph_stats, head_distance, head_entropy, read_graph_csv, sequence_accuracy,
    token_accuracy,
)
from latentgraph.graph import LatentGraph
from oracles import hand_bleu

HAND = np.array([[0, 0.2, 0.8], [0.9, 0, 0.1], [0.6, 0.4, 0]])


def _random_graph(rng, m):
    a = rng.random((m, m)) ** 3
    np.fill_diagonal(a, 0.0)
    return a / a.sum(axis=1, keepdims=True)


class TestHeadDistance:
    def test_right_neighbours(self):
        a = np.zeros((4, 4))
        a[0, 1] = a[1, 2] = a[2, 3] = a[3, 2] = 1.0
        assert head_distance(a) == [1, 1, 1, 1]

    def test_hand_example(self):
        assert head_distance(HAND) == [2, 1, 2]
        assert np.mean(head_distance(LatentGraph(HAND))) == pytest.approx(5 / 3)

    def test_tie_goes_to_smaller_index(self):
        assert head_distance(np.array([[0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]])) == [1, 1, 2]

    def test_needs_two_words(self):
        with pytest.raises(ValueError):
            head_distance(np.zeros((1, 1)))


class TestHeadEntropy:
    def test_one_hot(self):
        assert head_entropy(np.array([[0, 1.0], [1.0, 0]])) == [0.0, 0.0]

    @pytest.mark.parametrize("m", [2, 4, 7, 30])
    def test_uniform(self, m):
        a = (np.ones((m, m)) - np.eye(m)) / (m - 1)
        for h in head_entropy(a):
            assert abs(h - math.log(m - 1)) < 1e-12

    def test_rejects_non_distribution(self):
        with pytest.raises(ValueError):
            head_entropy(np.array([[0, 0.5], [1.0, 0]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 12))
def test_bounds(seed, m):
    a = _random_graph(np.random.default_rng(seed), m)
    d = head_distance(a)
    assert 1 <= min(d) and max(d) <= m - 1
    h = np.array(head_entropy(a))
    assert (h >= 0).all() and (h <= math.log(m - 1) + 1e-12).all()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_pooled_statistics_combine(seed):
    rng = np.random.default_rng(seed)
    first = [_random_graph(rng, int(rng.integers(2, 9))) for _ in range(3)]
    second = [_random_graph(rng, int(rng.integers(2, 9))) for _ in range(4)]
    s1, s2, s12 = graph_stats(first), graph_stats(second), graph_stats(first + second)
    w = s1.word_count + s2.word_count
    assert s12.word_count == w and s12.sentence_count == 7
    assert s12.mean_head_distance == pytest.approx(
        (s1.mean_head_distance * s1.word_count + s2.mean_head_distance * s2.word_count) / w, rel=1e-12)
    assert s12.mean_entropy_nats == pytest.approx(
        (s1.mean_entropy_nats * s1.word_count + s2.mean_entropy_nats * s2.word_count) / w, rel=1e-12)


def test_graph_stats_report():
    stats = graph_stats([HAND])
    assert isinstance(stats, GraphStats)
    text = stats.report()
    assert "mean_head_distance: 1.6666666666666667" in text
    assert "sentence_count: 1" in text
    with pytest.raises(ValueError):
        graph_stats([])


class TestExport:
    def test_single_edge(self):
        dot = export_graph(np.array([[0, 1.0], [0, 0]]), ["a", "b"], "dot")
        assert dot.count("->") == 1 and "n0 -> n1" in dot

    def test_high_threshold_has_no_edges(self):
        assert "->" not in export_graph(HAND, ["x", "y", "z"], "dot", threshold=1.1)

    def test_quotes_escaped(self):
        assert '\\"' in export_graph(HAND, ['"q"', "y", "z"], "dot")

    def test_csv_round_trip(self, tmp_path):
        a = _random_graph(np.random.default_rng(0), 6)
        path = tmp_path / "g.csv"
        export_graph(a, list("abcdef"), "csv", path)
        assert np.abs(read_graph_csv(path) - a).max() <= 1e-12

    def test_errors(self):
        with pytest.raises(ValueError):
            export_graph(HAND, ["a", "b"], "dot")
        with pytest.raises(ValueError):
            export_graph(HAND, ["a", "b", "c"], "png")


class TestBleu:
    def test_identity(self):
        corpus = ["the cat sat on the mat", "a b c d e"]
        assert bleu(corpus, corpus) == 100.0

    def test_no_unigram_overlap(self):
        assert bleu(["x y z w"], ["a b c d"]) == 0.0

    def test_hand_example(self):
        # clipped 1-gram 2/4, 2-gram 1/3, no 3-gram match; hypothesis longer than reference
        assert bleu(["the the the cat"], ["the cat sat"], max_ngram=2) == pytest.approx(100 * math.sqrt(1 / 6), abs=1e-9)
        assert bleu(["the the the cat"], ["the cat sat"]) == 0.0

    def test_brevity_penalty(self):
        ref = "a b c d e f g h"
        expected = 100 * math.exp(1 - 8 / 6)
        assert bleu(["a b c d e f"], [ref]) == pytest.approx(expected, abs=1e-9)

    def test_matches_long_hand_oracle(self):
        rng = np.random.default_rng(0)
        words = list("abcdef")
        refs = [" ".join(rng.choice(words, size=int(rng.integers(5, 12)))) for _ in range(30)]
        hyps = [" ".join(w if rng.random() > 0.2 else "z" for w in r.split()) for r in refs]
        assert bleu(hyps, refs) == pytest.approx(hand_bleu(hyps, refs), abs=1e-9)

    def test_corruption_strictly_decreases(self):
        refs = ["a b c d e f", "g h i j k l m"]
        for i in range(2):
            for j in range(len(refs[i].split())):
                toks = refs[i].split()
                toks[j] = "zz"
                hyps = list(refs)
                hyps[i] = " ".join(toks)
                assert bleu(hyps, refs) < 100.0

    def test_errors(self):
        with pytest.raises(ValueError):
            bleu([], [])
        with pytest.raises(ValueError):
            bleu(["a"], ["a", "b"])


def test_accuracies():
    assert token_accuracy([["a", "b", "c"]], [["a", "x", "c", "d"]]) == 0.5
    assert sequence_accuracy(["a b", "c"], ["a b", "d"]) == 0.5
