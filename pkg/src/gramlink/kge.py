"""Triple scoring with TransE and DistMult.

Both scorers are "higher is better": TransE returns the negated L2 distance
``-||e_h + S - e_t||``, DistMult the trilinear product ``sum(e_h * S * e_t)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import ndtensor as nt
from .errors import DimensionMismatch
from .ndtensor import Tensor


class ScoreFn(enum.Enum):
    TRANSE = "transe"
    DISTMULT = "distmult"

    @property
    def kernel_code(self) -> int:
        return kernels.TRANSE if self is ScoreFn.TRANSE else kernels.DISTMULT

    @classmethod
    def parse(cls, value) -> "ScoreFn":
        return value if isinstance(value, cls) else cls(str(value).strip().lower())


@dataclass
class KGState:
    entity_table: Tensor
    score_fn: ScoreFn = ScoreFn.TRANSE

    def __post_init__(self):
        self.score_fn = ScoreFn.parse(self.score_fn)

    @classmethod
    def initialize(cls, n_entities: int, dim: int, score_fn, rng: np.random.Generator, std: float = 0.1) -> "KGState":
        table = Tensor(rng.normal(0.0, std, size=(n_entities, dim)), requires_grad=True, name="entity_table")
        return cls(table, ScoreFn.parse(score_fn))

    @property
    def dim(self) -> int:
        return self.entity_table.shape[1]


def _vec(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64).reshape(-1)


def score(score_fn, e_h, S, e_t) -> float:
    """Score of one triple, computed with a plain scalar loop."""
    fn = ScoreFn.parse(score_fn)
    h, s, t = _vec(e_h), _vec(S), _vec(e_t)
    if not h.shape == s.shape == t.shape:
        raise DimensionMismatch(f"vector lengths {h.shape[0]}, {s.shape[0]}, {t.shape[0]} differ")
    acc = 0.0
    if fn is ScoreFn.TRANSE:
        for i in range(h.shape[0]):
            d = float(h[i] + s[i]) - float(t[i])
            acc += d * d
        return -math.sqrt(acc)
    for i in range(h.shape[0]):
        acc += float(h[i] * s[i]) * float(t[i])
    return acc


def combine(score_fn, heads: Tensor, relations: Tensor) -> Tensor:
    """Query vectors: ``e_h + S`` for TransE, ``e_h * S`` for DistMult."""
    fn = ScoreFn.parse(score_fn)
    if heads.shape != relations.shape:
        raise DimensionMismatch(f"head shape {list(heads.shape)} vs relation shape {list(relations.shape)}")
    return nt.add(heads, relations) if fn is ScoreFn.TRANSE else nt.mul(heads, relations)


def tail_logits(score_fn, heads: Tensor, relations: Tensor, entity_table: Tensor) -> Tensor:
    """``B x |E|`` scores of every entity as tail of each ``(head, relation)`` row."""
    fn = ScoreFn.parse(score_fn)
    q = combine(fn, heads, relations)
    if q.shape[1] != entity_table.shape[1]:
        raise DimensionMismatch(f"embedding width {q.shape[1]} vs entity width {entity_table.shape[1]}")
    return nt.tail_scores(q, entity_table, fn.kernel_code)


def score_all_tails(score_fn, e_h: Tensor, S: Tensor, entity_table: Tensor) -> Tensor:
    """Scores of one ``(e_h, S)`` pair against every row of ``entity_table``."""
    if e_h.data.ndim != 1 or S.data.ndim != 1:
        raise DimensionMismatch("e_h and S must be vectors")
    d = e_h.shape[0]
    logits = tail_logits(score_fn, nt.reshape(e_h, (1, d)), nt.reshape(S, (1, S.shape[0])), entity_table)
    return nt.reshape(logits, (entity_table.shape[0],))
