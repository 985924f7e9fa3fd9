"""Zero-shot splits on disk, n-gram vocabularies and synthetic fixtures.

Directory layout (UTF-8, LF line endings)::

    entities.tsv         id<TAB>name
    relations.tsv        id<TAB>surface_name
    train.tsv            head_id<TAB>relation_id<TAB>tail_id
    dev.tsv              head_id<TAB>relation_id<TAB>tail_id
    test_queries.jsonl   {"head": id, "relation": id, "truth": id, "candidates": [ids]}

Seen relations are those occurring in ``train.tsv``; unseen relations are
those of the test queries. The two sets must be disjoint.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import DanglingId, MalformedLine, MissingFile, SplitOverlap
from .ngram_graph import tokenize, word_ngrams

log = logging.getLogger(__name__)

REQUIRED_FILES = ("entities.tsv", "relations.tsv", "train.tsv", "dev.tsv", "test_queries.jsonl")


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


@dataclass(frozen=True)
class Query:
    head: int
    relation: int
    truth: int
    candidates: tuple[int, ...]
    relation_name: str = ""

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("query has no candidates")
        if self.truth not in self.candidates:
            raise ValueError(f"ground truth {self.truth} missing from candidates")


@dataclass
class ZSLSplit:
    entities: dict[int, str]
    relations: dict[int, str]
    train: list[Triple]
    dev: list[Triple]
    test: list[Query]
    warnings: list[str] = field(default_factory=list)

    @property
    def seen_relations(self) -> frozenset[int]:
        return frozenset(t.relation for t in self.train)

    @property
    def unseen_relations(self) -> frozenset[int]:
        return frozenset(q.relation for q in self.test)

    def relation_name(self, rid: int) -> str:
        return self.relations[rid]

    def validate(self) -> None:
        overlap = self.seen_relations & self.unseen_relations
        if overlap:
            raise SplitOverlap(f"relations both seen and unseen: {sorted(overlap)}")
        dev_overlap = {t.relation for t in self.dev} & self.unseen_relations
        if dev_overlap:
            raise SplitOverlap(f"dev relations also used as test relations: {sorted(dev_overlap)}")
        for where, triples in (("train", self.train), ("dev", self.dev)):
            for t in triples:
                self._check_ids(where, t.head, t.relation, t.tail)
        for q in self.test:
            self._check_ids("test", q.head, q.relation, q.truth, *q.candidates)
            if q.truth not in q.candidates:
                raise MalformedLine(f"test query {q}: truth not among candidates")

    def _check_ids(self, where, head, relation, *entities):
        if relation not in self.relations:
            raise DanglingId(f"{where}: unknown relation id {relation}")
        for e in (head, *entities):
            if e not in self.entities:
                raise DanglingId(f"{where}: unknown entity id {e}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, ZSLSplit):
            return NotImplemented
        return (
            self.entities == other.entities
            and self.relations == other.relations
            and self.train == other.train
            and self.dev == other.dev
            and [(q.head, q.relation, q.truth, q.candidates) for q in self.test]
            == [(q.head, q.relation, q.truth, q.candidates) for q in other.test]
        )


# ---------------------------------------------------------------- reading


def _read_lines(path: Path):
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if line.endswith("\r"):
                raise MalformedLine(f"{path}:{lineno}: CRLF line ending")
            if line.strip():
                yield lineno, line


def _parse_int(path, lineno, text, what):
    try:
        return int(text)
    except ValueError:
        raise MalformedLine(f"{path}:{lineno}: {what} {text!r} is not an integer id") from None


def _read_names(path: Path) -> dict[int, str]:
    out: dict[int, str] = {}
    for lineno, line in _read_lines(path):
        parts = line.split("\t")
        if len(parts) != 2 or not parts[1].strip():
            raise MalformedLine(f"{path}:{lineno}: expected 'id<TAB>name'")
        key = _parse_int(path, lineno, parts[0], "id")
        if key in out:
            raise MalformedLine(f"{path}:{lineno}: duplicate id {key}")
        out[key] = parts[1]
    return out


def _read_triples(path: Path, entities, relations, warnings) -> list[Triple]:
    out = []
    seen = set()
    for lineno, line in _read_lines(path):
        parts = line.split("\t")
        if len(parts) != 3:
            raise MalformedLine(f"{path}:{lineno}: expected 'head<TAB>relation<TAB>tail'")
        t = Triple(*(_parse_int(path, lineno, p, "id") for p in parts))
        if t.head not in entities or t.tail not in entities:
            raise DanglingId(f"{path}:{lineno}: unknown entity id in {tuple(t)}")
        if t.relation not in relations:
            raise DanglingId(f"{path}:{lineno}: unknown relation id {t.relation}")
        if t in seen:
            warnings.append(f"{path}:{lineno}: duplicate triple {tuple(t)}")
        seen.add(t)
        out.append(t)
    return out


def _read_queries(path: Path, entities, relations) -> list[Query]:
    out = []
    for lineno, line in _read_lines(path):
        try:
            obj = json.loads(line)
            head, rel, truth = int(obj["head"]), int(obj["relation"]), int(obj["truth"])
            cands = tuple(int(c) for c in obj["candidates"])
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedLine(f"{path}:{lineno}: bad query record ({exc})") from None
        if rel not in relations:
            raise DanglingId(f"{path}:{lineno}: unknown relation id {rel}")
        for e in (head, truth, *cands):
            if e not in entities:
                raise DanglingId(f"{path}:{lineno}: unknown entity id {e}")
        if not cands or truth not in cands:
            raise MalformedLine(f"{path}:{lineno}: truth {truth} must be among nonempty candidates")
        if len(set(cands)) != len(cands):
            raise MalformedLine(f"{path}:{lineno}: duplicate candidate ids")
        out.append(Query(head, rel, truth, cands, relations[rel]))
    return out


def load(directory: str | os.PathLike) -> ZSLSplit:
    """Load and validate a split; any violation raises with file:line context."""
    root = Path(directory)
    if not root.is_dir():
        raise MissingFile(f"dataset directory {root} does not exist")
    for name in REQUIRED_FILES:
        if not (root / name).is_file():
            raise MissingFile(f"{root / name} is missing")
    warnings: list[str] = []
    entities = _read_names(root / "entities.tsv")
    relations = _read_names(root / "relations.tsv")
    train = _read_triples(root / "train.tsv", entities, relations, warnings)
    dev = _read_triples(root / "dev.tsv", entities, relations, warnings)
    test = _read_queries(root / "test_queries.jsonl", entities, relations)
    split = ZSLSplit(entities, relations, train, dev, test, warnings)
    split.validate()
    for w in warnings:
        log.warning(w)
    return split


def write(split: ZSLSplit, directory: str | os.PathLike) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)

    def dump(name, lines):
        with open(root / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(line + "\n" for line in lines)

    dump("entities.tsv", (f"{k}\t{v}" for k, v in sorted(split.entities.items())))
    dump("relations.tsv", (f"{k}\t{v}" for k, v in sorted(split.relations.items())))
    dump("train.tsv", (f"{t.head}\t{t.relation}\t{t.tail}" for t in split.train))
    dump("dev.tsv", (f"{t.head}\t{t.relation}\t{t.tail}" for t in split.dev))
    dump(
        "test_queries.jsonl",
        (
            json.dumps(
                {"head": q.head, "relation": q.relation, "truth": q.truth, "candidates": list(q.candidates)},
                separators=(",", ":"),
            )
            for q in split.test
        ),
    )


# -------------------------------------------------------------- vocabulary


@dataclass
class NGramVocab:
    """Dense gram ids in lexicographic order; UNK takes the last id."""

    grams: tuple[str, ...]
    coverage: float = 1.0
    relation_coverage: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        self._index = {g: i for i, g in enumerate(self.grams)}

    @property
    def unk_id(self) -> int:
        return len(self.grams)

    @property
    def size(self) -> int:
        return len(self.grams) + 1

    def __len__(self) -> int:
        return self.size

    def __contains__(self, gram: str) -> bool:
        return gram in self._index

    def index(self, gram: str) -> int:
        return self._index.get(gram, self.unk_id)

    def to_lines(self) -> str:
        return "".join(g + "\n" for g in self.grams)

    @classmethod
    def from_lines(cls, text: str) -> "NGramVocab":
        return cls(tuple(line for line in text.split("\n") if line))


def name_grams(surface: str, max_n: int, strip_prefix=False, split_camel=False) -> set[str]:
    name = tokenize(surface, strip_prefix=strip_prefix, split_camel=split_camel)
    return {node.text for w in name.words for node in word_ngrams(w, max_n)}


def vocab_from_names(
    seen_names: Iterable[str],
    max_n: int,
    unseen_names: Iterable[str] = (),
    strip_prefix: bool = False,
    split_camel: bool = False,
) -> NGramVocab:
    grams: set[str] = set()
    for s in seen_names:
        grams |= name_grams(s, max_n, strip_prefix, split_camel)
    vocab = NGramVocab(tuple(sorted(grams)))
    union: set[str] = set()
    for i, s in enumerate(unseen_names):
        g = name_grams(s, max_n, strip_prefix, split_camel)
        union |= g
        vocab.relation_coverage[i] = len(g & grams) / len(g)
    vocab.coverage = len(union & grams) / len(union) if union else 1.0
    return vocab


def build_vocab(split: ZSLSplit, max_n: int, strip_prefix: bool = False, split_camel: bool = False) -> NGramVocab:
    """Vocabulary over seen-relation grams, with unseen-gram coverage."""
    seen = sorted(split.seen_relations)
    unseen = sorted(split.unseen_relations)
    vocab = vocab_from_names(
        (split.relations[r] for r in seen),
        max_n,
        (split.relations[r] for r in unseen),
        strip_prefix,
        split_camel,
    )
    vocab.relation_coverage = {unseen[i]: c for i, c in vocab.relation_coverage.items()}
    return vocab


# ------------------------------------------------------------ synthetic data

# equal word lengths within each slot keep node counts identical across names
_FIXTURE_VERBS = ("works", "plays", "lives", "moves", "rests", "plans", "talks", "sells")
_FIXTURE_PREPS = ("near", "from", "with", "into", "over", "upon")


def _fixture_relations(rng, n_seen, n_unseen):
    total = n_seen + n_unseen
    if total > len(_FIXTURE_VERBS) * len(_FIXTURE_PREPS):
        raise ValueError(f"fixture supports at most {len(_FIXTURE_VERBS) * len(_FIXTURE_PREPS)} relations")
    n_verbs = min(len(_FIXTURE_VERBS), max(2, math.isqrt(total - 1) + 1))
    n_preps = min(len(_FIXTURE_PREPS), max(2, -(-total // n_verbs)))
    while n_verbs * n_preps < total:
        n_preps += 1
    combos = [(v, p) for v in range(n_verbs) for p in range(n_preps)]
    for _ in range(1000):
        order = rng.permutation(len(combos))
        chosen = [combos[i] for i in order[:total]]
        seen, unseen = chosen[:n_seen], chosen[n_seen:]
        seen_v = {v for v, _ in seen}
        seen_p = {p for _, p in seen}
        if all(v in seen_v and p in seen_p for v, p in unseen):
            return seen, unseen, n_verbs, n_preps
    raise ValueError("could not place unseen relations over seen words")


def synth_fixture(
    seed: int = 0,
    out_dir: str | os.PathLike | None = None,
    n_entities: int = 50,
    n_seen: int = 8,
    n_unseen: int = 2,
    triples_per_relation: int = 40,
    candidates: int = 20,
    dev_per_relation: int = 2,
) -> ZSLSplit:
    """Small split with a planted translational structure.

    Entities get latent 2-D positions; each word of a relation name carries a
    latent offset and a relation moves a head by the sum of its words'
    offsets, landing on the nearest other entity. Unseen relations recombine
    words used by seen ones, so their meaning is recoverable from n-grams.
    """
    if triples_per_relation + dev_per_relation > n_entities:
        raise ValueError("not enough entities for the requested triples per relation")
    if candidates > n_entities:
        raise ValueError("more candidates than entities")
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0.0, 10.0, size=(n_entities, 2))
    seen, unseen, n_verbs, n_preps = _fixture_relations(rng, n_seen, n_unseen)
    verb_vec = rng.normal(0.0, 1.5, size=(n_verbs, 2))
    prep_vec = rng.normal(0.0, 1.5, size=(n_preps, 2))

    entities = {i: f"entity_{i:03d}" for i in range(n_entities)}
    relations = {}
    train, dev, test = [], [], []
    for rid, (v, p) in enumerate(seen + unseen):
        relations[rid] = f"{_FIXTURE_VERBS[v]} {_FIXTURE_PREPS[p]}"
        target = pos + verb_vec[v] + prep_vec[p]
        dist = np.linalg.norm(target[:, None, :] - pos[None, :, :], axis=2)
        np.fill_diagonal(dist, np.inf)
        tails = dist.argmin(axis=1)
        residual = dist[np.arange(n_entities), tails]
        heads = np.argsort(residual, kind="stable")
        chosen = sorted(heads[:triples_per_relation].tolist())
        if rid < len(seen):
            train.extend(Triple(h, rid, int(tails[h])) for h in chosen)
            extra = heads[triples_per_relation : triples_per_relation + dev_per_relation]
            dev.extend(Triple(int(h), rid, int(tails[h])) for h in sorted(extra.tolist()))
        else:
            for h in chosen:
                truth = int(tails[h])
                others = np.array([e for e in range(n_entities) if e != truth])
                distract = rng.choice(others, size=candidates - 1, replace=False)
                cands = tuple(sorted([truth, *distract.tolist()]))
                test.append(Query(h, rid, truth, cands, relations[rid]))
    split = ZSLSplit(entities, relations, train, dev, test)
    split.validate()
    if out_dir is not None:
        write(split, out_dir)
    return split


# --------------------------------------------------------------- conversion


def _load_json(path: Path):
    if not path.is_file():
        raise MissingFile(f"{path} is missing")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def convert_zsgan(
    src_dir: str | os.PathLike,
    out_dir: str | os.PathLike,
    n_seen: int | None = None,
    n_unseen: int | None = None,
    seed: int = 0,
) -> dict:
    """Convert a NELL-ZS / Wiki-ZS style directory into the native layout.

    Reads ``train_tasks.json``, ``test_tasks.json`` and ``rel2candidates.json``
    (relation -> list of ``[head, relation, tail]`` triples / candidate
    entities), plus optional ``dev_tasks.json`` and ``e1rel_e2.json``. Without
    ``dev_tasks.json`` a seeded 5% of the seen triples becomes the dev split. Other
    known tails of a test query are removed from its candidates. ``n_seen`` /
    ``n_unseen`` subsample relations with a seeded draw. Returns (and writes
    as ``conversion_log.json``) the resulting counts.
    """
    src = Path(src_dir)
    train_tasks = _load_json(src / "train_tasks.json")
    test_tasks = _load_json(src / "test_tasks.json")
    rel2cand = _load_json(src / "rel2candidates.json")
    dev_tasks = _load_json(src / "dev_tasks.json") if (src / "dev_tasks.json").is_file() else {}
    known = _load_json(src / "e1rel_e2.json") if (src / "e1rel_e2.json").is_file() else {}

    rng = np.random.default_rng(seed)

    def pick(names, k):
        names = sorted(names)
        if k is None or k >= len(names):
            return names
        return sorted(rng.choice(names, size=k, replace=False).tolist())

    seen = pick(train_tasks, n_seen)
    unseen = pick(test_tasks, n_unseen)
    dev_rels = sorted(r for r in dev_tasks if r not in unseen)
    if set(seen) & set(unseen):
        raise SplitOverlap(f"relations in both train and test tasks: {sorted(set(seen) & set(unseen))}")

    raw_queries = []
    for r in unseen:
        cands_r = rel2cand.get(r)
        if not cands_r:
            raise MalformedLine(f"no candidates for test relation {r!r}")
        for h, _, t in test_tasks[r]:
            other = set(known.get(h + r, ())) - {t}
            cands = sorted({c for c in cands_r if c not in other} | {t})
            raw_queries.append((h, r, t, cands))

    ent_names: set[str] = set()
    for r in seen:
        for h, _, t in train_tasks[r]:
            ent_names.update((h, t))
    for r in dev_rels:
        for h, _, t in dev_tasks[r]:
            ent_names.update((h, t))
    for h, _, t, cands in raw_queries:
        ent_names.update((h, t, *cands))
    ent_id = {name: i for i, name in enumerate(sorted(ent_names))}
    rel_names = sorted(set(seen) | set(unseen) | set(dev_rels))
    rel_id = {name: i for i, name in enumerate(rel_names)}

    train = [Triple(ent_id[h], rel_id[r], ent_id[t]) for r in seen for h, _, t in train_tasks[r]]
    dev = [Triple(ent_id[h], rel_id[r], ent_id[t]) for r in dev_rels for h, _, t in dev_tasks[r]]
    if not dev_tasks and train:
        # no relation-level dev split in the source: hold out 5% of seen triples
        n_dev = max(1, round(0.05 * len(train)))
        held = set(rng.choice(len(train), size=n_dev, replace=False).tolist())
        dev = [t for i, t in enumerate(train) if i in held]
        train = [t for i, t in enumerate(train) if i not in held]
    test = [
        Query(ent_id[h], rel_id[r], ent_id[t], tuple(sorted(ent_id[c] for c in cands)), r)
        for h, r, t, cands in raw_queries
    ]
    split = ZSLSplit(
        entities={i: n for n, i in ent_id.items()},
        relations={i: n for n, i in rel_id.items()},
        train=train,
        dev=dev,
        test=test,
    )
    split.validate()
    write(split, out_dir)
    counts = {
        "entities": len(ent_id),
        "relations": len(rel_id),
        "seen_relations": len(seen),
        "unseen_relations": len(unseen),
        "dev_relations": len(dev_rels),
        "train_triples": len(train),
        "dev_triples": len(dev),
        "test_queries": len(test),
    }
    with open(Path(out_dir) / "conversion_log.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(counts, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return counts
