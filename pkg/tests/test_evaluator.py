import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gramlink.config import TrainConfig
from gramlink.dataset import Query, Triple, ZSLSplit
from gramlink.errors import EmptyInput, UnknownCandidate
from gramlink.evaluator import (
    evaluate,
    format_table,
    hits_at_k,
    metrics_from_ranks,
    mrr,
    predict_tail,
    rank_against_all,
)
from gramlink.model import LinkPredictor

SMALL = TrainConfig(d_model=6, n_heads=3, d_ff=6, max_n=4, max_nodes=30, dropout=0.0)


def make_split(n_entities=10, queries=()):
    return ZSLSplit(
        entities={i: f"e{i}" for i in range(n_entities)},
        relations={0: "works near", 1: "plays near"},
        train=[Triple(0, 0, 1), Triple(1, 0, 2)],
        dev=[],
        test=list(queries),
    )


def make_model(split, score_fn="transe", seed=0):
    return LinkPredictor.initialize(SMALL.replace(score_fn=score_fn), split, np.random.default_rng(seed))


class TestMetrics:
    def test_mrr_definition(self):
        assert mrr([1, 2, 4]) == pytest.approx((1 + 0.5 + 0.25) / 3, abs=0)

    def test_all_first(self):
        assert mrr([1, 1, 1]) == hits_at_k([1, 1, 1], 1) == 1.0

    def test_hits(self):
        assert hits_at_k([3, 11], 10) == 0.5
        assert hits_at_k([3, 11], 1) == 0.0

    def test_empty(self):
        with pytest.raises(EmptyInput):
            mrr([])
        with pytest.raises(EmptyInput):
            hits_at_k([], 1)

    def test_rank_zero_rejected(self):
        with pytest.raises(ValueError):
            mrr([0, 1])

    @given(st.lists(st.integers(1, 50), min_size=1, max_size=30), st.data())
    def test_monotone(self, ranks, data):
        i = data.draw(st.integers(0, len(ranks) - 1))
        better = list(ranks)
        better[i] = data.draw(st.integers(1, ranks[i]))
        assert mrr(better) >= mrr(ranks)
        for k in (1, 5, 10):
            assert hits_at_k(better, k) >= hits_at_k(ranks, k)

    def test_table_columns(self):
        table = format_table(metrics_from_ranks([1, 2]))
        assert table.splitlines()[0].split() == ["MRR", "|", "hits@10", "|", "hits@5", "|", "hits@1"]


class TestPredictTail:
    def test_single_candidate(self):
        q = Query(0, 1, 3, (3,), "plays near")
        model = make_model(make_split(queries=[q]))
        assert predict_tail(q, model) == [3]

    def test_order_independent(self):
        split = make_split()
        model = make_model(split)
        a = Query(0, 1, 3, (1, 3, 5, 7, 9), "plays near")
        b = Query(0, 1, 3, (9, 5, 3, 7, 1), "plays near")
        assert predict_tail(a, model) == predict_tail(b, model)

    def test_exact_translation_ranks_first(self):
        split = make_split()
        model = make_model(split)
        S = model.encode("plays near").data
        table = model.kg.entity_table.data
        table[7] = table[2] + S
        q = Query(2, 1, 7, (1, 4, 7, 8), "plays near")
        assert predict_tail(q, model)[0] == 7

    def test_ties_broken_by_id(self):
        split = make_split()
        model = make_model(split)
        model.kg.entity_table.data[[4, 6, 8]] = 0.0
        q = Query(0, 1, 6, (8, 6, 4), "plays near")
        assert predict_tail(q, model) == [4, 6, 8]

    def test_unknown_candidate(self):
        model = make_model(make_split())
        with pytest.raises(UnknownCandidate):
            predict_tail(Query(0, 1, 3, (3, 42), "plays near"), model)


class TestEvaluate:
    def test_singleton_candidates(self):
        qs = [Query(h, 1, (h + 1) % 10, ((h + 1) % 10,), "plays near") for h in range(10)]
        report = evaluate(qs, make_model(make_split(queries=qs)))
        assert report.metrics == {"MRR": 1.0, "hits@10": 1.0, "hits@5": 1.0, "hits@1": 1.0}

    def test_random_null(self):
        rng = np.random.default_rng(0)
        qs = []
        for _ in range(500):
            cands = tuple(sorted(rng.choice(120, size=100, replace=False).tolist()))
            qs.append(Query(int(rng.integers(120)), 1, int(rng.choice(cands)), cands, "plays near"))
        split = make_split(120, qs)
        report = evaluate(qs, make_model(split, seed=1))
        harmonic = sum(1 / r for r in range(1, 101)) / 100
        assert harmonic == pytest.approx(0.0519, abs=1e-4)
        assert abs(report.metrics["MRR"] - harmonic) <= 0.02

    def test_dump_reaggregates(self):
        rng = np.random.default_rng(2)
        qs = [Query(h, 1, int(t), tuple(range(10)), "plays near") for h, t in enumerate(rng.integers(0, 10, 10))]
        report = evaluate(qs, make_model(make_split(queries=qs)))
        ranks = [json.loads(line)["rank"] for line in report.records_jsonl().splitlines()]
        again = metrics_from_ranks(ranks)
        for k, v in report.metrics.items():
            assert again[k] == pytest.approx(v, abs=1e-12)
        assert json.loads(report.to_json()) == report.metrics

    def test_does_not_mutate_model(self):
        qs = [Query(0, 1, 3, tuple(range(10)), "plays near")]
        model = make_model(make_split(queries=qs))
        before = model.checksum()
        evaluate(qs, model)
        assert model.checksum() == before

    def test_candidate_permutation_keeps_rank(self):
        split = make_split()
        model = make_model(split, "distmult")
        rng = np.random.default_rng(4)
        base = Query(1, 1, 5, tuple(range(10)), "plays near")
        rank = evaluate([base], model).records[0]["rank"]
        for _ in range(5):
            perm = tuple(rng.permutation(10).tolist())
            assert evaluate([Query(1, 1, 5, perm, "plays near")], model).records[0]["rank"] == rank

    def test_empty_queries(self):
        with pytest.raises(EmptyInput):
            evaluate([], make_model(make_split()))


class TestRankAgainstAll:
    def test_matches_full_candidate_evaluation(self):
        split = make_split()
        model = make_model(split)
        triples = [Triple(0, 0, 1), Triple(3, 1, 4)]
        ranks = rank_against_all(triples, split.relations, model)
        qs = [Query(t.head, t.relation, t.tail, tuple(range(10)), split.relations[t.relation]) for t in triples]
        assert ranks == [r["rank"] for r in evaluate(qs, model).records]
