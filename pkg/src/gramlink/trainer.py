"""Mini-batch training: encode relations, score all tails, smoothed CE, Adam."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import ndtensor as nt
from .config import TrainConfig
from .dataset import Triple, ZSLSplit
from .errors import UnknownRelation
from .evaluator import hits_at_k, mrr, rank_against_all
from .kge import tail_logits
from .model import LinkPredictor

__all__ = ["Adam", "TrainConfig", "TrainResult", "train", "train_step"]

log = logging.getLogger(__name__)


class Adam:
    """Adam with bias correction; parameters without a gradient are skipped."""

    def __init__(self, params: dict[str, nt.Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _rngs(seed: int):
    init, shuffle, drop = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(s) for s in (init, shuffle, drop))


def batch_loss(
    batch: Sequence[Triple],
    model: LinkPredictor,
    relation_names: dict[int, str],
    config: TrainConfig,
    training: bool,
    rng: np.random.Generator | None,
) -> nt.Tensor:
    """Label-smoothed 1-vs-all cross-entropy; each relation is encoded once."""
    encoded: dict[int, nt.Tensor] = {}
    for t in batch:
        if t.relation not in encoded:
            if t.relation not in relation_names:
                raise UnknownRelation(f"relation id {t.relation} is unknown")
            encoded[t.relation] = model.encode(relation_names[t.relation], training, rng)
    table = model.kg.entity_table
    heads = nt.gather_rows(table, model.rows(t.head for t in batch))
    rels = nt.stack_rows([encoded[t.relation] for t in batch])
    logits = tail_logits(model.kg.score_fn, heads, rels, table)
    return nt.cross_entropy_label_smoothed(logits, model.rows(t.tail for t in batch), config.label_smoothing)


def train_step(
    batch: Sequence[Triple],
    model: LinkPredictor,
    adam: Adam,
    config: TrainConfig,
    relation_names: dict[int, str],
    rng: np.random.Generator | None = None,
) -> float:
    """One forward/backward/update; returns the loss before the update."""
    adam.zero_grad()
    with nt.Tape() as tape:
        loss = batch_loss(batch, model, relation_names, config, True, rng)
        tape.backward(loss)
    adam.step()
    return loss.item()


@dataclass
class TrainResult:
    model: LinkPredictor
    metrics: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def _dev_metrics(split, model):
    if not split.dev:
        return None, None
    ranks = rank_against_all(split.dev, split.relations, model)
    return mrr(ranks), hits_at_k(ranks, 1)


def train(
    split: ZSLSplit,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train on ``split.train``; by default keep the parameters with the best dev MRR.

    When ``out_dir`` is given, ``metrics.jsonl`` is appended once per epoch and
    the retained parameters are saved to ``out_dir/checkpoint``. Identical
    config and seed give bit-identical logs and checkpoints.
    """
    init_rng, shuffle_rng, dropout_rng = _rngs(config.seed)
    model = LinkPredictor.initialize(config, split, init_rng)
    params = model.parameters()
    adam = Adam(params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    result = TrainResult(model)

    metrics_path = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        metrics_path = Path(out_dir) / "metrics.jsonl"
        metrics_path.write_text("", encoding="utf-8")

    train = list(split.train)
    best_mrr, best_snap, stale = -1.0, None, 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train[i] for i in order[start : start + config.batch_size]]
            losses.append(train_step(batch, model, adam, config, split.relations, dropout_rng))
        dev_mrr, dev_hits1 = _dev_metrics(split, model)
        record = {
            "epoch": epoch,
            "loss": float(np.mean(losses)) if losses else float("nan"),
            "dev_mrr": dev_mrr,
            "dev_hits1": dev_hits1,
        }
        result.metrics.append(record)
        if metrics_path is not None:
            with open(metrics_path, "a", encoding="utf-8", newline="\n") as fh:
                fh.write(json.dumps(record) + "\n")
        if on_epoch is not None:
            on_epoch(record)
        log.info("epoch %d loss %.5f dev_mrr %s", epoch, record["loss"], dev_mrr)

        score = dev_mrr if dev_mrr is not None else float(epoch)
        if score > best_mrr:
            best_mrr, best_snap, stale = score, model.snapshot(), 0
            result.best_epoch = epoch
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                break

    if config.keep == "best_dev" and best_snap is not None:
        model.restore(best_snap)
    if out_dir is not None:
        model.save(Path(out_dir) / "checkpoint")
    return result
