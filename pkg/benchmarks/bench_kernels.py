"""Compare the compiled and numpy kernel backends.

Usage: ``python benchmarks/bench_kernels.py [--repeat N]``

Times one relation-masked attention head (forward and backward) at the
default graph size, tail scoring of a batch against the entity table, and a
full training step on the synthetic split.
"""

import argparse
import math
import timeit

import numpy as np

from gramlink import kernels
from gramlink.config import TrainConfig
from gramlink.dataset import synth_fixture
from gramlink.model import LinkPredictor
from gramlink.ngram_graph import build_graph, tokenize
from gramlink.trainer import Adam, train_step


def attention_case(rng, n_nodes=90, d_k=66):
    q, v = rng.normal(size=(n_nodes, d_k)), rng.normal(size=(n_nodes, d_k))
    ra, rc = rng.normal(size=d_k), rng.normal(size=d_k)
    g = build_graph(tokenize("agent belongs to organization"), 13, max_nodes=n_nodes)
    ma = np.zeros((n_nodes, n_nodes))
    mc = np.zeros((n_nodes, n_nodes))
    ma[: g.size, : g.size] = g.mask_a
    mc[: g.size, : g.size] = g.mask_c
    return q, v, ra, rc, ma, mc


def bench_attention(impl, case, repeat):
    q, v, ra, rc, ma, mc = case
    scale = 1.0 / math.sqrt(q.shape[1])

    def run():
        out, w, pa, pc = impl.masked_attention_forward(q, v, ra, rc, ma, mc, kernels.POST, scale)
        impl.masked_attention_backward(q, v, ra, rc, ma, mc, kernels.POST, scale, w, pa, pc, np.ones_like(out))

    return min(timeit.repeat(run, number=10, repeat=repeat)) / 10


def bench_tails(impl, rng, repeat, batch=32, n_entities=2000, d=200):
    q, e = rng.normal(size=(batch, d)), rng.normal(size=(n_entities, d))

    def run():
        for fn in (kernels.TRANSE, kernels.DISTMULT):
            out = impl.tail_scores_forward(q, e, fn)
            impl.tail_scores_backward(q, e, out, np.ones_like(out), fn)

    return min(timeit.repeat(run, number=3, repeat=repeat)) / 3


def bench_train_step(repeat):
    split = synth_fixture(0)
    cfg = TrainConfig(dropout=0.1)
    model = LinkPredictor.initialize(cfg, split, np.random.default_rng(0))
    adam = Adam(model.parameters(), cfg.learning_rate)
    batch = split.train[: cfg.batch_size]
    rng = np.random.default_rng(1)
    return min(timeit.repeat(lambda: train_step(batch, model, adam, cfg, split.relations, rng), number=3, repeat=repeat)) / 3


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    case = attention_case(rng)
    rows = []
    for name in kernels.available_backends():
        with kernels.use_backend(name) as impl:
            rows.append((name, bench_attention(impl, case, args.repeat), bench_tails(impl, rng, args.repeat), bench_train_step(args.repeat)))
    print(f"{'backend':<8} {'attention fwd+bwd':>18} {'tail scores fwd+bwd':>20} {'train step':>11}")
    for name, att, tails, step in rows:
        print(f"{name:<8} {att * 1e3:>15.3f} ms {tails * 1e3:>17.3f} ms {step * 1e3:>8.1f} ms")
    if len(rows) == 2:
        (_, a0, t0, s0), (_, a1, t1, s1) = sorted(rows, key=lambda r: r[0] != "python")
        print(f"speedup over python: attention x{a0 / a1:.2f}, tail scores x{t0 / t1:.2f}, train step x{s0 / s1:.2f}")


if __name__ == "__main__":
    main()
