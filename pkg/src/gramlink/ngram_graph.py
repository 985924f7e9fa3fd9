"""Hierarchical character n-gram graphs built from relation surface names.

Every word of a surface name contributes all of its contiguous character
n-grams as nodes. Two edge kinds connect them:

* adjoin edges between same-level n-grams whose spans are one character apart;
* compositional edges from an n-gram to each (n+1)-gram that contains it.

Words are linked to each other through their 1-gram boundaries and through
whole-word matches inside other words. Nodes are then put into a fixed order,
truncated from the left, and turned into the two boolean masks consumed by the
relation-masked attention.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptySurfaceName

__all__ = [
    "EdgeKind",
    "NGramGraph",
    "NGramNode",
    "NodeOrderStrategy",
    "SurfaceName",
    "build_graph",
    "char_sequence_graph",
    "graph_to_dict",
    "graph_to_dot",
    "graph_to_json",
    "mask_matrices",
    "tokenize",
    "word_ngrams",
]

_PREFIX_RE = re.compile(r"^[^\s:]+:")
_CAMEL_RE = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")
_SPLIT_RE = re.compile(r"[\s_]+")


class EdgeKind(enum.Enum):
    ADJOIN = "adjoin"
    COMPOSITIONAL = "compositional"


class NodeOrderStrategy(enum.Enum):
    """Total order over graph nodes.

    ``WORD_MAJOR`` lists every n-gram of the first word (by level, then
    offset) before moving to the next word. ``LEVEL_MAJOR`` lists all 1-grams
    of every word, then all 2-grams, and so on.
    """

    WORD_MAJOR = "word_major"
    LEVEL_MAJOR = "level_major"

    @classmethod
    def parse(cls, value: "str | NodeOrderStrategy") -> "NodeOrderStrategy":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"strategy1": "word_major", "strategy2": "level_major"}
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class SurfaceName:
    raw: str
    words: tuple[str, ...]


@dataclass(frozen=True)
class NGramNode:
    text: str
    word_index: int
    level: int
    start: int
    position: int = -1

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.word_index, self.level, self.start)


@dataclass(frozen=True, eq=False)
class NGramGraph:
    """An ordered, possibly truncated n-gram graph.

    ``adjoin_edges`` holds unordered pairs stored as ``(i, j)`` with ``i < j``;
    ``comp_edges`` holds directed ``(lower, superior)`` pairs. Indices refer to
    ``nodes``.
    """

    name: SurfaceName
    nodes: tuple[NGramNode, ...]
    adjoin_edges: frozenset[tuple[int, int]]
    comp_edges: frozenset[tuple[int, int]]
    mask_a: np.ndarray = field(repr=False)
    mask_c: np.ndarray = field(repr=False)
    full_node_count: int
    max_n: int
    strategy: NodeOrderStrategy

    @property
    def size(self) -> int:
        return len(self.nodes)

    def texts(self) -> list[str]:
        return [node.text for node in self.nodes]


def tokenize(raw: str, strip_prefix: bool = False, split_camel: bool = False) -> SurfaceName:
    """Normalize a relation surface name into lowercase word tokens.

    >>> tokenize("a part of").words
    ('a', 'part', 'of')
    >>> tokenize("Concept:TeamMate", strip_prefix=True, split_camel=True).words
    ('team', 'mate')
    """
    text = raw if raw is not None else ""
    text = text.strip()
    if strip_prefix:
        text = _PREFIX_RE.sub("", text, count=1)
    if split_camel:
        text = _CAMEL_RE.sub(" ", text)
    words = tuple(w for w in _SPLIT_RE.split(text.lower()) if w)
    if not words:
        raise EmptySurfaceName(f"no word survives normalization of {raw!r}")
    return SurfaceName(raw=raw, words=words)


def word_ngrams(word: str, max_n: int, word_index: int = 0) -> list[NGramNode]:
    """All contiguous n-grams of ``word`` for n in 1..min(max_n, len(word)).

    Nodes come out grouped by level, then by start offset.
    """
    top = min(max_n, len(word))
    return [
        NGramNode(text=word[s : s + n], word_index=word_index, level=n, start=s)
        for n in range(1, top + 1)
        for s in range(len(word) - n + 1)
    ]


def _word_edges(word: str, word_index: int, max_n: int):
    top = min(max_n, len(word))
    adjoin = set()
    comp = set()
    for n in range(1, top + 1):
        for s in range(len(word) - n + 1):
            key = (word_index, n, s)
            if s + 1 <= len(word) - n:
                adjoin.add((key, (word_index, n, s + 1)))
            if n + 1 <= top:
                # (n+1)-grams containing [s, s+n) start at s-1 or s
                for s2 in (s - 1, s):
                    if 0 <= s2 <= len(word) - (n + 1):
                        comp.add((key, (word_index, n + 1, s2)))
    return adjoin, comp


def _sort_key(strategy: NodeOrderStrategy):
    if strategy is NodeOrderStrategy.WORD_MAJOR:
        return lambda node: (node.word_index, node.level, node.start)
    return lambda node: (node.level, node.word_index, node.start)


def build_graph(
    name: SurfaceName,
    max_n: int,
    strategy: NodeOrderStrategy | str = NodeOrderStrategy.LEVEL_MAJOR,
    max_nodes: int | None = None,
) -> NGramGraph:
    """Build, order and truncate the n-gram graph of ``name``."""
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if max_nodes is not None and max_nodes < 1:
        raise ValueError("max_nodes must be >= 1")
    if not name.words:
        raise EmptySurfaceName(f"surface name {name.raw!r} has no words")
    strategy = NodeOrderStrategy.parse(strategy)

    nodes: dict[tuple[int, int, int], NGramNode] = {}
    adjoin: set = set()
    comp: set = set()
    for k, word in enumerate(name.words):
        for node in word_ngrams(word, max_n, k):
            nodes[node.key] = node
        a, c = _word_edges(word, k, max_n)
        adjoin |= a
        comp |= c

    # neighbour/superior lookups restricted to intra-word edges
    adj_nbrs: dict = {}
    for u, v in adjoin:
        adj_nbrs.setdefault(u, set()).add(v)
        adj_nbrs.setdefault(v, set()).add(u)
    superiors: dict = {}
    for low, high in comp:
        superiors.setdefault(low, set()).add(high)

    cross_adjoin = set()
    cross_comp = set()
    words = name.words
    for k in range(len(words) - 1):
        cross_adjoin.add(((k, 1, len(words[k]) - 1), (k + 1, 1, 0)))
    for k, word in enumerate(words):
        whole = (k, len(word), 0)
        if whole not in nodes:
            continue
        for key, node in nodes.items():
            if key[0] == k or node.text != word:
                continue
            for nb in adj_nbrs.get(key, ()):
                cross_adjoin.add((whole, nb))
            for sup in superiors.get(key, ()):
                cross_comp.add((whole, sup))
    adjoin |= cross_adjoin
    comp |= cross_comp

    ordered = sorted(nodes.values(), key=_sort_key(strategy))
    full_count = len(ordered)
    if max_nodes is not None:
        ordered = ordered[:max_nodes]
    index = {node.key: i for i, node in enumerate(ordered)}
    final_nodes = tuple(replace(node, position=i) for i, node in enumerate(ordered))

    adjoin_idx = set()
    for u, v in adjoin:
        if u in index and v in index and u != v:
            i, j = index[u], index[v]
            adjoin_idx.add((min(i, j), max(i, j)))
    comp_idx = set()
    for low, high in comp:
        if low in index and high in index:
            comp_idx.add((index[low], index[high]))

    mask_a, mask_c = _masks(len(final_nodes), adjoin_idx, comp_idx)
    return NGramGraph(
        name=name,
        nodes=final_nodes,
        adjoin_edges=frozenset(adjoin_idx),
        comp_edges=frozenset(comp_idx),
        mask_a=mask_a,
        mask_c=mask_c,
        full_node_count=full_count,
        max_n=max_n,
        strategy=strategy,
    )


def _masks(m, adjoin_edges, comp_edges):
    mask_a = np.eye(m, dtype=bool)
    mask_c = np.eye(m, dtype=bool)
    for i, j in adjoin_edges:
        mask_a[i, j] = mask_a[j, i] = True
    for i, j in comp_edges:
        mask_c[i, j] = mask_c[j, i] = True
    mask_a.setflags(write=False)
    mask_c.setflags(write=False)
    return mask_a, mask_c


def mask_matrices(graph: NGramGraph) -> tuple[np.ndarray, np.ndarray]:
    """Recompute the adjoin and compositional masks from the edge sets."""
    return _masks(graph.size, graph.adjoin_edges, graph.comp_edges)


def char_sequence_graph(name: SurfaceName, max_nodes: int | None = None) -> NGramGraph:
    """The 1-gram character sequence of ``name`` with sequential adjoin edges.

    Used by the word-level ablation, which ignores the n-gram hierarchy.
    """
    return build_graph(name, max_n=1, strategy=NodeOrderStrategy.WORD_MAJOR, max_nodes=max_nodes)


def graph_to_dict(graph: NGramGraph) -> dict:
    return {
        "name": graph.name.raw,
        "words": list(graph.name.words),
        "strategy": graph.strategy.value,
        "max_n": graph.max_n,
        "full_node_count": graph.full_node_count,
        "nodes": [
            {
                "position": n.position,
                "text": n.text,
                "level": n.level,
                "word": n.word_index,
                "start": n.start,
            }
            for n in graph.nodes
        ],
        "adjoin_edges": [list(e) for e in sorted(graph.adjoin_edges)],
        "compositional_edges": [list(e) for e in sorted(graph.comp_edges)],
        "mask_adjoin": graph.mask_a.astype(int).tolist(),
        "mask_compositional": graph.mask_c.astype(int).tolist(),
    }


def graph_to_json(graph: NGramGraph) -> str:
    return json.dumps(graph_to_dict(graph), separators=(",", ":")) + "\n"


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def graph_to_dot(graph: NGramGraph) -> str:
    """DOT rendering: adjoin edges solid and undirected, compositional dashed."""
    lines = ["digraph ngram_graph {", f'  label="{_dot_escape(graph.name.raw)}";']
    for n in graph.nodes:
        lines.append(f'  n{n.position} [label="{_dot_escape(n.text)}"];')
    for i, j in sorted(graph.adjoin_edges):
        lines.append(f"  n{i} -> n{j} [style=solid, dir=none];")
    for i, j in sorted(graph.comp_edges):
        lines.append(f"  n{i} -> n{j} [style=dashed];")
    lines.append("}")
    return "\n".join(lines) + "\n"
