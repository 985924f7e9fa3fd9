"""GramTransformer: encodes an n-gram graph into a single relation vector.

Each block is pre-norm: multi-head attention, output projection, dropout and
a residual, followed by a GELU feed-forward sublayer with its own residual.
The node vectors of the last block go through a final layer norm and are
mean-pooled into the relation embedding.

Three variants share the same parameters:

``full``
    relation-masked attention: queries shifted by the adjoin / compositional
    edge vectors, two softmax maps masked by the graph and summed.
``wg``
    plain scaled dot-product attention over all graph nodes.
``wng``
    plain attention over the 1-gram character sequence only.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from . import ndtensor as nt
from .errors import GraphTooLarge, ShapeMismatch
from .ndtensor import Tensor
from .ngram_graph import NGramGraph, char_sequence_graph


class MaskMode(enum.Enum):
    POST = "post"
    POST_RENORM = "post-renorm"
    PRE = "pre"

    @property
    def kernel_code(self) -> int:
        return {
            MaskMode.POST: kernels.POST,
            MaskMode.POST_RENORM: kernels.POST_RENORM,
            MaskMode.PRE: kernels.PRE,
        }[self]

    @classmethod
    def parse(cls, value) -> "MaskMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"postsoftmax": "post", "postsoftmaxrenorm": "post-renorm", "presoftmaxadditive": "pre", "renorm": "post-renorm"}
        return cls(aliases.get(key.replace("-", ""), key))


class Variant(enum.Enum):
    FULL = "full"
    WNG = "wng"
    WG = "wg"

    @classmethod
    def parse(cls, value) -> "Variant":
        return value if isinstance(value, cls) else cls(str(value).strip().lower())


@dataclass
class GramTransformerConfig:
    d_model: int = 200
    n_heads: int = 3
    n_layers: int = 1
    d_ff: int = 200
    dropout: float = 0.5
    mask_mode: MaskMode | str = MaskMode.POST
    variant: Variant | str = Variant.FULL
    max_nodes: int = 90
    layer_norm_eps: float = 1e-5
    init_std: float = 0.02

    def __post_init__(self):
        self.mask_mode = MaskMode.parse(self.mask_mode)
        self.variant = Variant.parse(self.variant)
        if self.d_model < self.n_heads:
            raise ValueError(f"d_model={self.d_model} is smaller than n_heads={self.n_heads}")
        if min(self.d_model, self.n_heads, self.n_layers, self.d_ff, self.max_nodes) < 1:
            raise ValueError("sizes must be positive")

    @property
    def d_k(self) -> int:
        # floor division: with 200 dims and 3 heads the heads span 198 dims and
        # the output projection maps them back to 200
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mask_mode"] = self.mask_mode.value
        d["variant"] = self.variant.value
        return d


def _xavier(rng, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class GramTransformerParams:
    """Named trainable tensors of the encoder.

    ``r_a`` and ``r_c`` are the adjoin and compositional edge vectors; head
    ``h`` uses the slice ``[h*d_k, (h+1)*d_k)`` of each.
    """

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @classmethod
    def initialize(
        cls,
        config: GramTransformerConfig,
        vocab_size: int,
        rng: np.random.Generator,
        edge_embeddings: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> "GramTransformerParams":
        d, dk, std = config.d_model, config.d_k, config.init_std
        t: dict[str, np.ndarray] = {
            "node_embeddings": rng.normal(0.0, std, size=(vocab_size + 1, d)),
            "position_embeddings": rng.normal(0.0, std, size=(config.max_nodes, d)),
        }
        if edge_embeddings is None:
            t["r_a"] = rng.normal(0.0, std, size=d)
            t["r_c"] = rng.normal(0.0, std, size=d)
        else:
            r_a, r_c = (np.asarray(v, dtype=np.float64) for v in edge_embeddings)
            if r_a.shape != (d,) or r_c.shape != (d,):
                raise ShapeMismatch(f"edge embeddings must have shape [{d}]")
            t["r_a"], t["r_c"] = r_a.copy(), r_c.copy()
        for layer in range(config.n_layers):
            p = f"layers.{layer}"
            for head in range(config.n_heads):
                for proj in ("w_q", "w_k", "w_v"):
                    t[f"{p}.heads.{head}.{proj}"] = _xavier(rng, d, dk)
            t[f"{p}.w_o"] = _xavier(rng, config.n_heads * dk, d)
            t[f"{p}.b_o"] = np.zeros(d)
            t[f"{p}.ffn.w_1"] = _xavier(rng, d, config.d_ff)
            t[f"{p}.ffn.b_1"] = np.zeros(config.d_ff)
            t[f"{p}.ffn.w_2"] = _xavier(rng, config.d_ff, d)
            t[f"{p}.ffn.b_2"] = np.zeros(d)
            for ln in ("ln_attn", "ln_ffn"):
                t[f"{p}.{ln}.gain"] = np.ones(d)
                t[f"{p}.{ln}.bias"] = np.zeros(d)
        t["final_ln.gain"] = np.ones(d)
        t["final_ln.bias"] = np.zeros(d)
        return cls({k: Tensor(v, requires_grad=True, name=k) for k, v in t.items()})

    @staticmethod
    def group_of(name: str) -> str:
        if name in ("node_embeddings", "position_embeddings", "r_a", "r_c"):
            return name
        if ".heads." in name or name.endswith(".w_o") or name.endswith(".b_o"):
            return "projections"
        if ".ffn." in name:
            return "ffn"
        return "layer_norm"


def embed_graph(graph: NGramGraph, params: GramTransformerParams, vocab) -> Tensor:
    """Node embedding plus position embedding for every node of ``graph``."""
    table = params["position_embeddings"]
    max_nodes = table.shape[0]
    if graph.size > max_nodes or any(n.position >= max_nodes for n in graph.nodes):
        raise GraphTooLarge(f"graph with {graph.size} nodes exceeds the {max_nodes} position slots")
    ids = [vocab.index(n.text) for n in graph.nodes]
    positions = [n.position for n in graph.nodes]
    return nt.add(
        nt.gather_rows(params["node_embeddings"], ids),
        nt.gather_rows(table, positions),
    )


def _head_weights(params, layer, head):
    p = f"layers.{layer}.heads.{head}"
    return params[f"{p}.w_q"], params[f"{p}.w_k"], params[f"{p}.w_v"]


def attention_standard(H: Tensor, params: GramTransformerParams, layer: int, head: int) -> Tensor:
    """``softmax(Q K^T / sqrt(d_k)) V`` for one head."""
    w_q, w_k, w_v = _head_weights(params, layer, head)
    q, k, v = nt.matmul(H, w_q), nt.matmul(H, w_k), nt.matmul(H, w_v)
    logits = nt.scale(nt.matmul(q, nt.transpose(k)), 1.0 / math.sqrt(w_q.shape[1]))
    return nt.matmul(nt.softmax_rows(logits), v)


def attention_relation_masked(
    H: Tensor,
    params: GramTransformerParams,
    layer: int,
    head: int,
    mask_a: np.ndarray,
    mask_c: np.ndarray,
    mask_mode: MaskMode | str = MaskMode.POST,
) -> Tensor:
    """One relation-masked head.

    With ``a = Q + r_a`` and ``c = Q + r_c`` the head computes
    ``[mu(a a^T / sqrt(d_k)) (.) M_a + mu(c c^T / sqrt(d_k)) (.) M_c] V`` in
    ``post`` mode; ``post-renorm`` rescales each masked row to sum to one and
    ``pre`` masks logits before the softmax.
    """
    mode = MaskMode.parse(mask_mode)
    w_q, _, w_v = _head_weights(params, layer, head)
    dk = w_q.shape[1]
    lo, hi = head * dk, (head + 1) * dk
    return nt.relation_masked_attention(
        nt.matmul(H, w_q),
        nt.matmul(H, w_v),
        nt.slice_vec(params["r_a"], lo, hi),
        nt.slice_vec(params["r_c"], lo, hi),
        mask_a,
        mask_c,
        mode.kernel_code,
        1.0 / math.sqrt(dk),
    )


def _block(H, graph, params, config, layer, training, rng):
    p = f"layers.{layer}"
    eps = config.layer_norm_eps
    normed = nt.layer_norm(H, params[f"{p}.ln_attn.gain"], params[f"{p}.ln_attn.bias"], eps)
    if config.variant is Variant.FULL:
        heads = [
            attention_relation_masked(normed, params, layer, h, graph.mask_a, graph.mask_c, config.mask_mode)
            for h in range(config.n_heads)
        ]
    else:
        heads = [attention_standard(normed, params, layer, h) for h in range(config.n_heads)]
    attn = nt.add(nt.matmul(nt.concat_cols(heads), params[f"{p}.w_o"]), params[f"{p}.b_o"])
    H = nt.add(H, nt.dropout(attn, config.dropout, training, rng))

    normed = nt.layer_norm(H, params[f"{p}.ln_ffn.gain"], params[f"{p}.ln_ffn.bias"], eps)
    hidden = nt.gelu(nt.add(nt.matmul(normed, params[f"{p}.ffn.w_1"]), params[f"{p}.ffn.b_1"]))
    ffn = nt.add(nt.matmul(hidden, params[f"{p}.ffn.w_2"]), params[f"{p}.ffn.b_2"])
    return nt.add(H, nt.dropout(ffn, config.dropout, training, rng))


def encode_relation(
    graph: NGramGraph,
    params: GramTransformerParams,
    config: GramTransformerConfig,
    vocab,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Relation embedding ``S`` (length ``d_model``) of ``graph``."""
    if config.variant is Variant.WNG:
        graph = char_sequence_graph(graph.name, config.max_nodes)
    H = embed_graph(graph, params, vocab)
    for layer in range(config.n_layers):
        H = _block(H, graph, params, config, layer, training, rng)
    H = nt.layer_norm(H, params["final_ln.gain"], params["final_ln.bias"], config.layer_norm_eps)
    return nt.mean_rows(H)


class GramTransformer:
    """Config, parameters and vocabulary bundled for convenience."""

    def __init__(self, config: GramTransformerConfig, vocab, params: GramTransformerParams):
        self.config = config
        self.vocab = vocab
        self.params = params

    @classmethod
    def initialize(cls, config, vocab, rng, edge_embeddings=None) -> "GramTransformer":
        return cls(config, vocab, GramTransformerParams.initialize(config, vocab.size - 1, rng, edge_embeddings))

    def encode(self, graph: NGramGraph, training: bool = False, rng=None) -> Tensor:
        return encode_relation(graph, self.params, self.config, self.vocab, training, rng)


def load_edge_embeddings(path, d_model: int) -> tuple[np.ndarray, np.ndarray]:
    """Read the ``adjoin`` / ``compositional`` vectors from a tensor file."""
    tensors, _ = nt.load_tensors(path)
    try:
        r_a, r_c = tensors["adjoin"], tensors["compositional"]
    except KeyError as exc:
        raise ShapeMismatch(f"edge embedding file lacks tensor {exc}") from None
    if r_a.shape != (d_model,) or r_c.shape != (d_model,):
        raise ShapeMismatch(f"edge embeddings must have shape [{d_model}], got {r_a.shape} and {r_c.shape}")
    return r_a, r_c
