import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from aggre.errors import ContractViolation
from aggre.evaluation import (FILTERED, RAW, compute_metrics, evaluate, filter_mask,
                              known_relations, rank_from_scores, rank_relations)
from aggre.kg_store import KnowledgeGraph, build_context_index
from aggre.model import EmbeddingState, aggregate


def scores_strategy():
    return hnp.arrays(np.float64, st.integers(1, 12),
                      elements=st.integers(-3, 3).map(float))


class TestRank:
    def test_argmax_is_rank_one(self):
        assert rank_from_scores([[5.0, 3.0, 1.0]], [0])[0] == 1.0

    def test_all_tied(self):
        for nr in (1, 2, 7):
            assert rank_from_scores([np.zeros(nr)], [0])[0] == (1 + nr) / 2

    def test_filtered_removes_other_true_relation(self):
        known = known_relations([(0, 0, 1), (0, 1, 1)])
        mask = filter_mask(np.array([[0, 0, 1]]), known, 3)
        assert mask.tolist() == [[True, False, True]]
        scores = np.array([[1.0, 2.0, 0.0]])
        assert rank_from_scores(scores, [0])[0] == 2.0
        assert rank_from_scores(scores, [0], mask)[0] == 1.0

    def test_bad_relation(self):
        with pytest.raises(ContractViolation):
            rank_from_scores([[1.0, 2.0]], [2])

    @settings(max_examples=200, deadline=None)
    @given(scores_strategy(), st.data(), st.floats(-100, 100))
    def test_properties(self, scores, data, shift):
        nr = len(scores)
        true = data.draw(st.integers(0, nr - 1))
        rank = rank_from_scores([scores], [true])[0]
        assert 1 <= rank <= nr
        # integer-valued scores keep the shift exact
        assert rank_from_scores([scores + np.round(shift)], [true])[0] == rank
        best = 1 + np.sum(scores > scores[true])
        worst = np.sum(scores >= scores[true])
        assert rank == (best + worst) / 2
        drop = data.draw(hnp.arrays(bool, nr))
        assert rank_from_scores([scores], [true], drop[None, :])[0] <= rank

    def test_rank_relations_on_trace(self):
        kg = KnowledgeGraph.from_labeled([("A", "r", "B"), ("A", "s", "B")])
        ctx = build_context_index(kg)
        st_ = EmbeddingState(np.array([[1.0, 1.0], [1.0, 1.0]]), np.array([[2.0, 0.0], [3.0, 0.0]]))
        trace = aggregate(st_, ctx, 0)
        assert rank_relations(trace, (0, 0, 1)) == 2.0
        known = known_relations(kg.triples)
        assert rank_relations(trace, (0, 0, 1), FILTERED, known) == 1.0
        with pytest.raises(ContractViolation):
            rank_relations(trace, (0, 5, 1))


class TestMetrics:
    def test_hand_values(self):
        mrr, mr, hit3 = compute_metrics([1, 2, 4])
        assert abs(mrr - 1.75 / 3) < 1e-12
        assert abs(mr - 7 / 3) < 1e-12
        assert abs(hit3 - 2 / 3) < 1e-12

    def test_perfect(self):
        assert compute_metrics([1, 1, 1]) == (1.0, 1.0, 1.0)

    def test_empty(self):
        with pytest.raises(ContractViolation):
            compute_metrics([])

    def test_hit_k(self):
        assert compute_metrics([1, 2, 4], k=1)[2] == pytest.approx(1 / 3)


class TestEvaluate:
    def _setup(self):
        kg = KnowledgeGraph.from_labeled([("A", "r", "B"), ("A", "s", "B"), ("B", "s", "C")])
        ctx = build_context_index(kg)
        st_ = EmbeddingState(np.eye(3), np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 1.0]]))
        return kg, aggregate(st_, ctx, 1)

    def test_filtered_never_worse(self):
        kg, trace = self._setup()
        known = known_relations(kg.triples)
        raw = evaluate(trace, kg.triples, RAW)
        filt = evaluate(trace, kg.triples, FILTERED, known)
        assert np.all(filt.ranks <= raw.ranks)
        assert raw.mode == "raw" and filt.mode == "filtered"

    def test_report_serialisation(self):
        kg, trace = self._setup()
        rep = evaluate(trace, kg.triples)
        data = json.loads(rep.to_json(per_query=True, config={"dim": 3},
                                      labels=(kg.entity_vocab, kg.relation_vocab)))
        assert data["mode"] == "raw" and data["tie_policy"] == "mean"
        assert data["num_queries"] == 3
        assert data["per_query"][0]["head"] == "A"
        assert {"mrr", "mr", "hit3"} <= set(data)
        assert "MRR" in rep.table() and "Hit@3" in rep.table()

    def test_chunking_is_transparent(self):
        kg, trace = self._setup()
        a = evaluate(trace, kg.triples, chunk=1)
        b = evaluate(trace, kg.triples)
        assert np.array_equal(a.ranks, b.ranks)


def test_random_scores_mean_rank():
    """Uniform random scores: rank is uniform on 1..|R|, mean (|R|+1)/2."""
    rng = np.random.default_rng(0)
    nr, n = 11, 2000
    ranks = rank_from_scores(rng.normal(size=(n, nr)), rng.integers(nr, size=n))
    se = np.sqrt((nr ** 2 - 1) / 12 / n)
    assert abs(ranks.mean() - (nr + 1) / 2) < 3 * se
