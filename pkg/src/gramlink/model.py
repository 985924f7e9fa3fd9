"""Encoder, entity table and vocabularies as one checkpointable unit."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import ndtensor as nt
from .config import TrainConfig
from .dataset import NGramVocab, ZSLSplit, build_vocab
from .errors import MissingFile, UnknownEntity, VocabMismatch
from .gram_transformer import GramTransformer, GramTransformerParams, load_edge_embeddings
from .kge import KGState
from .ngram_graph import NGramGraph, build_graph, tokenize

CHECKPOINT_FILES = ("tensors.json", "entities.txt", "ngram_vocab.txt", "config.json")


class LinkPredictor:
    def __init__(self, config: TrainConfig, vocab: NGramVocab, entity_ids, encoder: GramTransformer, kg: KGState):
        self.config = config
        self.vocab = vocab
        self.entity_ids = list(entity_ids)
        self.entity_row = {e: i for i, e in enumerate(self.entity_ids)}
        self.encoder = encoder
        self.kg = kg
        self._graphs: dict[str, NGramGraph] = {}

    @classmethod
    def initialize(cls, config: TrainConfig, split: ZSLSplit, rng: np.random.Generator, vocab=None) -> "LinkPredictor":
        if vocab is None:
            vocab = build_vocab(split, config.max_n, config.strip_prefix, config.split_camel)
        edges = None
        if config.edge_embeddings:
            edges = load_edge_embeddings(config.edge_embeddings, config.d_model)
        encoder = GramTransformer.initialize(config.transformer_config(), vocab, rng, edges)
        entity_ids = sorted(split.entities)
        kg = KGState.initialize(len(entity_ids), config.d_model, config.score_fn, rng, config.entity_init_std)
        return cls(config, vocab, entity_ids, encoder, kg)

    # -- lookups

    def rows(self, entity_ids) -> list[int]:
        try:
            return [self.entity_row[e] for e in entity_ids]
        except KeyError as exc:
            raise UnknownEntity(f"entity id {exc.args[0]} not in the model") from None

    def graph(self, surface: str) -> NGramGraph:
        g = self._graphs.get(surface)
        if g is None:
            name = tokenize(surface, self.config.strip_prefix, self.config.split_camel)
            g = build_graph(name, self.config.max_n, self.config.strategy, self.config.max_nodes)
            self._graphs[surface] = g
        return g

    def encode(self, surface: str, training: bool = False, rng=None) -> nt.Tensor:
        return self.encoder.encode(self.graph(surface), training, rng)

    # -- parameters

    def parameters(self) -> dict[str, nt.Tensor]:
        params = dict(self.encoder.params.items())
        params["entity_table"] = self.kg.entity_table
        return params

    @staticmethod
    def group_of(name: str) -> str:
        return "entity_table" if name == "entity_table" else GramTransformerParams.group_of(name)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.parameters().items()):
            h.update(name.encode())
            h.update(p.data.tobytes())
        return h.hexdigest()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, p in self.parameters().items():
            p.data[...] = snap[k]

    # -- checkpoints

    def save(self, directory) -> None:
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        nt.save_tensors(root / "tensors.json", self.parameters(), meta={"score_fn": self.kg.score_fn.value})
        with open(root / "entities.txt", "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{e}\n" for e in self.entity_ids)
        with open(root / "ngram_vocab.txt", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.vocab.to_lines())
        with open(root / "config.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.config.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, directory) -> "LinkPredictor":
        root = Path(directory)
        for name in CHECKPOINT_FILES:
            if not (root / name).is_file():
                raise MissingFile(f"checkpoint file {root / name} is missing")
        config = TrainConfig.from_dict(json.loads((root / "config.json").read_text(encoding="utf-8")))
        vocab = NGramVocab.from_lines((root / "ngram_vocab.txt").read_text(encoding="utf-8"))
        entity_ids = [int(x) for x in (root / "entities.txt").read_text(encoding="utf-8").split()]
        tensors, _ = nt.load_tensors(root / "tensors.json")
        table = nt.Tensor(tensors.pop("entity_table"), requires_grad=True, name="entity_table")
        params = GramTransformerParams({k: nt.Tensor(v, requires_grad=True, name=k) for k, v in tensors.items()})
        encoder = GramTransformer(config.transformer_config(), vocab, params)
        return cls(config, vocab, entity_ids, encoder, KGState(table, config.score_fn))

    def check_compatible(self, split: ZSLSplit) -> None:
        """Raise ``VocabMismatch`` unless ``split`` uses exactly this entity vocabulary."""
        if sorted(split.entities) != self.entity_ids:
            missing = sorted(set(split.entities) - set(self.entity_ids))[:5]
            raise VocabMismatch(
                f"split has {len(split.entities)} entities, checkpoint {len(self.entity_ids)}"
                + (f"; unknown ids e.g. {missing}" if missing else "")
            )
