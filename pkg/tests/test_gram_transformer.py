import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gramlink import kernels
from gramlink import ndtensor as nt
from gramlink.dataset import NGramVocab, vocab_from_names
from gramlink.errors import GraphTooLarge
from gramlink.gram_transformer import (
    GramTransformerConfig,
    GramTransformerParams,
    MaskMode,
    Variant,
    attention_relation_masked,
    attention_standard,
    embed_graph,
    encode_relation,
)
from gramlink.ngram_graph import NGramGraph, build_graph, tokenize

HAS_VOCAB = vocab_from_names(["has"], 3)


def make(config=None, vocab=HAS_VOCAB, seed=0):
    config = config or GramTransformerConfig(d_model=12, n_heads=3, d_ff=10, dropout=0.0, max_nodes=20)
    params = GramTransformerParams.initialize(config, vocab.size - 1, np.random.default_rng(seed))
    return config, params


def has_graph(max_nodes=None):
    return build_graph(tokenize("has"), 3, max_nodes=max_nodes)


def randomize(params, rng, scale=0.5):
    for _, p in params.items():
        p.data[...] = rng.normal(0.0, scale, size=p.shape)


# ------------------------------------------------------- independent oracle


def _ln(x, g, b, eps):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def _softmax_row(row):
    mx = max(row)
    ex = [math.exp(x - mx) for x in row]
    s = sum(ex)
    return [e / s for e in ex]


def _masked_head_loops(q, v, ra, rc, ma, mc, dk):
    """Post-mode head written with scalar loops."""
    m = q.shape[0]
    a = q + ra
    c = q + rc
    sa = [[sum(a[i, k] * a[j, k] for k in range(dk)) / math.sqrt(dk) for j in range(m)] for i in range(m)]
    sc = [[sum(c[i, k] * c[j, k] for k in range(dk)) / math.sqrt(dk) for j in range(m)] for i in range(m)]
    out = np.zeros_like(v)
    for i in range(m):
        pa, pc = _softmax_row(sa[i]), _softmax_row(sc[i])
        for j in range(m):
            w = pa[j] * ma[i, j] + pc[j] * mc[i, j]
            out[i] += w * v[j]
    return out


def oracle_encode(graph, params, config, vocab):
    t = {k: p.data for k, p in params.items()}
    eps = config.layer_norm_eps
    dk = config.d_k
    ids = [vocab.index(n.text) for n in graph.nodes]
    H = t["node_embeddings"][ids] + t["position_embeddings"][[n.position for n in graph.nodes]]
    for layer in range(config.n_layers):
        p = f"layers.{layer}"
        x = _ln(H, t[f"{p}.ln_attn.gain"], t[f"{p}.ln_attn.bias"], eps)
        heads = []
        for h in range(config.n_heads):
            q = x @ t[f"{p}.heads.{h}.w_q"]
            v = x @ t[f"{p}.heads.{h}.w_v"]
            sl = slice(h * dk, (h + 1) * dk)
            heads.append(_masked_head_loops(q, v, t["r_a"][sl], t["r_c"][sl], graph.mask_a, graph.mask_c, dk))
        H = H + np.concatenate(heads, axis=1) @ t[f"{p}.w_o"] + t[f"{p}.b_o"]
        x = _ln(H, t[f"{p}.ln_ffn.gain"], t[f"{p}.ln_ffn.bias"], eps)
        H = H + _gelu(x @ t[f"{p}.ffn.w_1"] + t[f"{p}.ffn.b_1"]) @ t[f"{p}.ffn.w_2"] + t[f"{p}.ffn.b_2"]
    H = _ln(H, t["final_ln.gain"], t["final_ln.bias"], eps)
    return H.mean(axis=0)


# -------------------------------------------------------------------- tests


class TestConfig:
    def test_head_width_floor(self):
        cfg = GramTransformerConfig(d_model=200, n_heads=3)
        assert cfg.d_k == 66
        _, params = make(GramTransformerConfig(d_model=200, n_heads=3, max_nodes=10))
        assert params["layers.0.w_o"].shape == (198, 200)

    def test_rejects_more_heads_than_dims(self):
        with pytest.raises(ValueError):
            GramTransformerConfig(d_model=2, n_heads=3)

    def test_mode_aliases(self):
        assert MaskMode.parse("post_renorm") is MaskMode.POST_RENORM
        assert MaskMode.parse("PRE") is MaskMode.PRE

    def test_param_groups(self):
        _, params = make()
        groups = {GramTransformerParams.group_of(k) for k in params}
        assert groups == {"node_embeddings", "position_embeddings", "r_a", "r_c", "projections", "ffn", "layer_norm"}


class TestEmbedGraph:
    def test_zero_tables(self):
        config, params = make()
        for k in ("node_embeddings", "position_embeddings"):
            params[k].data[...] = 0.0
        g = build_graph(tokenize("h"), 3)
        np.testing.assert_array_equal(embed_graph(g, params, HAS_VOCAB).data, np.zeros((1, 12)))

    def test_deterministic(self):
        _, params = make()
        a = embed_graph(has_graph(), params, HAS_VOCAB).data
        b = embed_graph(has_graph(), params, HAS_VOCAB).data
        assert a.tobytes() == b.tobytes()

    def test_unknown_gram_uses_unk(self):
        config, params = make()
        g = build_graph(tokenize("zq"), 2)
        x = embed_graph(g, params, HAS_VOCAB).data
        unk = params["node_embeddings"].data[HAS_VOCAB.unk_id]
        np.testing.assert_array_equal(x[0], unk + params["position_embeddings"].data[0])
        assert np.isfinite(encode_relation(g, params, config, HAS_VOCAB).data).all()

    def test_too_many_nodes(self):
        config, params = make(GramTransformerConfig(d_model=6, n_heads=3, max_nodes=4))
        with pytest.raises(GraphTooLarge):
            embed_graph(has_graph(), params, HAS_VOCAB)


class TestStandardAttention:
    def test_single_node_returns_v(self, rng):
        _, params = make()
        H = nt.Tensor(rng.normal(size=(1, 12)))
        out = attention_standard(H, params, 0, 1).data
        np.testing.assert_allclose(out, H.data @ params["layers.0.heads.1.w_v"].data, atol=1e-14)

    def test_permutation_equivariant(self, rng):
        _, params = make()
        H = rng.normal(size=(5, 12))
        perm = rng.permutation(5)
        out = attention_standard(nt.Tensor(H), params, 0, 0).data
        out_p = attention_standard(nt.Tensor(H[perm]), params, 0, 0).data
        np.testing.assert_allclose(out_p, out[perm], atol=1e-13)

    def test_two_node_hand_computation(self, rng):
        _, params = make()
        H = rng.normal(size=(2, 12))
        wq, wk, wv = (params[f"layers.0.heads.2.{p}"].data for p in ("w_q", "w_k", "w_v"))
        q, k, v = H @ wq, H @ wk, H @ wv
        expected = np.zeros((2, 4))
        for i in range(2):
            s = [sum(q[i, c] * k[j, c] for c in range(4)) / 2.0 for j in range(2)]
            w = _softmax_row(s)
            expected[i] = w[0] * v[0] + w[1] * v[1]
        np.testing.assert_allclose(attention_standard(nt.Tensor(H), params, 0, 2).data, expected, atol=1e-10)


class TestMaskedAttention:
    def test_all_ones_masks_double_standard(self, rng):
        _, params = make()
        for h in range(3):
            params[f"layers.0.heads.{h}.w_k"].data[...] = params[f"layers.0.heads.{h}.w_q"].data
        params["r_a"].data[...] = 0.0
        params["r_c"].data[...] = 0.0
        H = nt.Tensor(rng.normal(size=(4, 12)))
        ones = np.ones((4, 4), dtype=bool)
        for h in range(3):
            masked = attention_relation_masked(H, params, 0, h, ones, ones, "post").data
            np.testing.assert_allclose(masked, 2 * attention_standard(H, params, 0, h).data, atol=1e-13)

    @pytest.mark.parametrize("mode", list(MaskMode))
    def test_single_node_doubles_v(self, rng, mode):
        _, params = make()
        H = nt.Tensor(rng.normal(size=(1, 12)))
        eye = np.ones((1, 1), dtype=bool)
        out = attention_relation_masked(H, params, 0, 0, eye, eye, mode).data
        np.testing.assert_allclose(out, 2 * (H.data @ params["layers.0.heads.0.w_v"].data), atol=1e-14)

    def test_has_head_matches_loop_oracle(self):
        config, params = make(seed=0)
        randomize(params, np.random.default_rng(0))
        g = has_graph()
        H = embed_graph(g, params, HAS_VOCAB)
        for h in range(3):
            got = attention_relation_masked(H, params, 0, h, g.mask_a, g.mask_c, "post").data
            q = H.data @ params[f"layers.0.heads.{h}.w_q"].data
            v = H.data @ params[f"layers.0.heads.{h}.w_v"].data
            sl = slice(h * 4, (h + 1) * 4)
            want = _masked_head_loops(q, v, params["r_a"].data[sl], params["r_c"].data[sl], g.mask_a, g.mask_c, 4)
            np.testing.assert_allclose(got, want, rtol=0, atol=1e-10)

    def test_post_renorm_equals_pre(self, rng):
        _, params = make()
        randomize(params, rng)
        g = build_graph(tokenize("a part of"), 4)
        H = nt.Tensor(rng.normal(size=(g.size, 12)))
        a = attention_relation_masked(H, params, 0, 1, g.mask_a, g.mask_c, "post-renorm").data
        b = attention_relation_masked(H, params, 0, 1, g.mask_a, g.mask_c, "pre").data
        np.testing.assert_allclose(a, b, atol=1e-12)

    @pytest.mark.parametrize("variant", list(Variant))
    def test_key_projection_used_only_by_plain_attention(self, rng, variant):
        config, params = make(GramTransformerConfig(d_model=12, n_heads=3, d_ff=10, dropout=0.0, variant=variant))
        randomize(params, rng)
        with nt.Tape() as tape:
            s = encode_relation(has_graph(), params, config, HAS_VOCAB)
            tape.backward(nt.sum_all(nt.mul(s, s)))
        grads = [params[f"layers.0.heads.{h}.w_k"].grad for h in range(3)]
        if variant is Variant.FULL:
            assert all(g is None or not np.any(g) for g in grads)
        else:
            assert all(g is not None and np.any(g) for g in grads)

    @given(st.integers(0, 10_000), st.sampled_from(list(MaskMode)))
    @settings(max_examples=30, deadline=None)
    def test_mask_semantics(self, seed, mode):
        rng = np.random.default_rng(seed)
        m, dk = int(rng.integers(1, 9)), 3
        ma = rng.random((m, m)) < 0.3
        mc = rng.random((m, m)) < 0.3
        ma = ma | ma.T | np.eye(m, dtype=bool)
        mc = mc | mc.T | np.eye(m, dtype=bool)
        q = nt.Tensor(rng.normal(0, 3, size=(m, dk)))
        out = nt.relation_masked_attention(
            q, q, nt.Tensor(rng.normal(size=dk)), nt.Tensor(rng.normal(size=dk)), ma, mc, mode.kernel_code, 0.5
        )
        w = out.aux["weights"]
        assert (w[~(ma | mc)] == 0.0).all()
        if mode is MaskMode.POST:
            assert (w.sum(axis=1) <= 2.0 + 1e-12).all()
        else:
            np.testing.assert_allclose(w.sum(axis=1), 2.0, atol=1e-10)


class TestEncodeRelation:
    def test_zero_params_zero_vector(self):
        config, params = make()
        for _, p in params.items():
            p.data[...] = 0.0
        S = encode_relation(has_graph(), params, config, HAS_VOCAB).data
        np.testing.assert_array_equal(S, np.zeros(12))

    def test_matches_straight_line_oracle(self):
        config, params = make(GramTransformerConfig(d_model=12, n_heads=3, n_layers=2, d_ff=10, dropout=0.0, max_nodes=20))
        randomize(params, np.random.default_rng(0))
        g = has_graph()
        S = encode_relation(g, params, config, HAS_VOCAB).data
        np.testing.assert_allclose(S, oracle_encode(g, params, config, HAS_VOCAB), rtol=0, atol=1e-10)

    def test_wg_equals_full_with_open_masks(self):
        """WG with W_k = W_q equals Full with all-ones masks, zero edge vectors and half W_o."""
        full_cfg = GramTransformerConfig(d_model=12, n_heads=3, d_ff=10, dropout=0.0, max_nodes=20)
        wg_cfg = GramTransformerConfig(d_model=12, n_heads=3, d_ff=10, dropout=0.0, max_nodes=20, variant="wg")
        _, params = make(full_cfg)
        randomize(params, np.random.default_rng(3))
        for h in range(3):
            params[f"layers.0.heads.{h}.w_k"].data[...] = params[f"layers.0.heads.{h}.w_q"].data
        params["r_a"].data[...] = 0.0
        params["r_c"].data[...] = 0.0
        g = has_graph()
        S_wg = encode_relation(g, params, wg_cfg, HAS_VOCAB).data
        ones = np.ones((g.size, g.size), dtype=bool)
        open_graph = NGramGraph(g.name, g.nodes, g.adjoin_edges, g.comp_edges, ones, ones, g.full_node_count, g.max_n, g.strategy)
        params["layers.0.w_o"].data[...] *= 0.5
        S_full = encode_relation(open_graph, params, full_cfg, HAS_VOCAB).data
        np.testing.assert_allclose(S_full, S_wg, atol=1e-12)

    def test_permutation_consistent(self, rng):
        config, params = make()
        randomize(params, rng)
        g = build_graph(tokenize("a part of"), 4)
        perm = rng.permutation(g.size)
        pg = NGramGraph(
            g.name,
            tuple(g.nodes[i] for i in perm),
            g.adjoin_edges,
            g.comp_edges,
            g.mask_a[np.ix_(perm, perm)],
            g.mask_c[np.ix_(perm, perm)],
            g.full_node_count,
            g.max_n,
            g.strategy,
        )
        vocab = vocab_from_names(["a part of"], 4)
        _, params = make(config, vocab)
        randomize(params, rng)
        S = encode_relation(g, params, config, vocab).data
        S_perm = encode_relation(pg, params, config, vocab).data
        np.testing.assert_allclose(S_perm, S, atol=1e-12)

    @pytest.mark.parametrize("variant", list(Variant))
    def test_eval_deterministic_train_stochastic(self, variant):
        config = GramTransformerConfig(d_model=12, n_heads=3, d_ff=10, dropout=0.5, max_nodes=20, variant=variant)
        _, params = make(config)
        g = has_graph()
        a = encode_relation(g, params, config, HAS_VOCAB).data
        b = encode_relation(g, params, config, HAS_VOCAB).data
        assert a.tobytes() == b.tobytes()
        t1 = encode_relation(g, params, config, HAS_VOCAB, True, np.random.default_rng(1)).data
        t2 = encode_relation(g, params, config, HAS_VOCAB, True, np.random.default_rng(1)).data
        t3 = encode_relation(g, params, config, HAS_VOCAB, True, np.random.default_rng(2)).data
        assert t1.tobytes() == t2.tobytes()
        assert not np.array_equal(t1, t3)

    def test_wng_uses_characters_only(self):
        config = GramTransformerConfig(d_model=12, n_heads=3, d_ff=10, dropout=0.0, max_nodes=20, variant="wng")
        _, params = make(config)
        randomize(params, np.random.default_rng(4))
        # grams above level 1 never reach the encoder
        params["node_embeddings"].data[HAS_VOCAB.index("ha")] += 100.0
        before = encode_relation(has_graph(), params, config, HAS_VOCAB).data.copy()
        params["node_embeddings"].data[HAS_VOCAB.index("ha")] -= 100.0
        np.testing.assert_array_equal(encode_relation(has_graph(), params, config, HAS_VOCAB).data, before)

    @pytest.mark.parametrize("mode", list(MaskMode))
    def test_gradient_of_squared_norm(self, mode):
        config, params = make(GramTransformerConfig(d_model=9, n_heads=3, d_ff=6, dropout=0.0, max_nodes=8, mask_mode=mode))
        randomize(params, np.random.default_rng(7), scale=0.3)
        g = has_graph()

        def f():
            S = encode_relation(g, params, config, HAS_VOCAB)
            return nt.sum_all(nt.mul(S, S))

        report = nt.finite_difference_check(f, dict(params.items()), h=1e-5, tol=1e-4)
        assert report.passed, report.per_param
