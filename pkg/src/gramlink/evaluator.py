"""Zero-shot tail prediction over candidate sets, MRR and hits@k."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import ndtensor as nt
from .dataset import Query, Triple
from .errors import EmptyInput, UnknownCandidate, UnknownEntity
from .kge import combine

__all__ = [
    "EvalReport",
    "Query",
    "evaluate",
    "format_table",
    "hits_at_k",
    "mrr",
    "predict_tail",
    "rank_against_all",
]

HITS_KS = (10, 5, 1)


def _check_ranks(ranks: Sequence[int]) -> np.ndarray:
    r = np.asarray(list(ranks), dtype=np.float64)
    if r.size == 0:
        raise EmptyInput("no ranks to aggregate")
    if (r < 1).any():
        raise ValueError("ranks start at 1")
    return r


def mrr(ranks: Sequence[int]) -> float:
    return float(np.mean(1.0 / _check_ranks(ranks)))


def hits_at_k(ranks: Sequence[int], k: int) -> float:
    return float(np.mean(_check_ranks(ranks) <= k))


def _order(scores: np.ndarray, ids: Sequence[int]) -> list[int]:
    # descending score, ascending id on ties
    keys = np.lexsort((np.asarray(ids), -scores))
    return [ids[i] for i in keys]


def _query_vector(model, head: int, relation_vec: np.ndarray) -> nt.Tensor:
    (row,) = model.rows([head])
    e_h = nt.Tensor(model.kg.entity_table.data[row : row + 1])
    return combine(model.kg.score_fn, e_h, nt.Tensor(relation_vec.reshape(1, -1)))


def predict_tail(query: Query, model, relation_vec: np.ndarray | None = None) -> list[int]:
    """Candidates sorted by descending score; ties go to the smaller entity id."""
    if relation_vec is None:
        relation_vec = model.encode(query.relation_name).data
    try:
        rows = model.rows(query.candidates)
    except UnknownEntity as exc:
        raise UnknownCandidate(str(exc)) from None
    q = _query_vector(model, query.head, relation_vec)
    table = nt.Tensor(model.kg.entity_table.data[rows])
    scores = nt.tail_scores(q, table, model.kg.score_fn.kernel_code).data[0]
    return _order(scores, list(query.candidates))


def rank_against_all(triples: Iterable[Triple], relation_names: dict[int, str], model) -> list[int]:
    """Raw rank of each true tail among all entities (used for train/dev)."""
    cache: dict[int, np.ndarray] = {}
    ranks = []
    for t in triples:
        if t.relation not in cache:
            cache[t.relation] = model.encode(relation_names[t.relation]).data
        q = _query_vector(model, t.head, cache[t.relation])
        scores = nt.tail_scores(q, model.kg.entity_table, model.kg.score_fn.kernel_code).data[0]
        (true_row,) = model.rows([t.tail])
        s = scores[true_row]
        ids = np.asarray(model.entity_ids)
        ranks.append(int(1 + np.sum(scores > s) + np.sum((scores == s) & (ids < t.tail))))
    return ranks


@dataclass
class EvalReport:
    metrics: dict[str, float]
    records: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.metrics, sort_keys=True) + "\n"

    def records_jsonl(self) -> str:
        return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in self.records)


def metrics_from_ranks(ranks: Sequence[int]) -> dict[str, float]:
    out = {"MRR": mrr(ranks)}
    for k in HITS_KS:
        out[f"hits@{k}"] = hits_at_k(ranks, k)
    return out


def evaluate(queries: Sequence[Query], model) -> EvalReport:
    """Rank every query's ground truth within its candidate set.

    Each relation is encoded once; the model is never modified.
    """
    if not queries:
        raise EmptyInput("no queries to evaluate")
    cache: dict[str, np.ndarray] = {}
    records = []
    for q in queries:
        if q.relation_name not in cache:
            cache[q.relation_name] = model.encode(q.relation_name).data
        ranked = predict_tail(q, model, cache[q.relation_name])
        records.append(
            {
                "head": q.head,
                "relation": q.relation,
                "truth": q.truth,
                "rank": ranked.index(q.truth) + 1,
                "top5": ranked[:5],
            }
        )
    return EvalReport(metrics_from_ranks([r["rank"] for r in records]), records)


def format_table(metrics: dict[str, float]) -> str:
    cols = ["MRR"] + [f"hits@{k}" for k in HITS_KS]
    header = " | ".join(f"{c:>8}" for c in cols)
    row = " | ".join(f"{metrics[c]:>8.4f}" for c in cols)
    return f"{header}\n{'-' * len(header)}\n{row}\n"
