"""Assembly of the full retrieval model: tables, text encoder, image head, map."""

from __future__ import annotations

import numpy as np

from .alignment import LinearMap
from .data import Vocabulary
from .encoders import (
    EmbeddingTable,
    GruEncoder,
    ImageProjector,
    check_mode,
    encode_captions_backward,
    encode_captions_batch,
    encode_images_backward,
    encode_images_batch,
)
from .errors import ConfigError
from .numerics import ParamSet, Tensor


class Model:
    """Two embedding tables, a shared GRU, an image projector, and a linear map.

    The ranking objective trains the tables (when trainable), the GRU and the
    projector through Adam; the map is touched only by alignment updates.
    """

    def __init__(
        self,
        tables: dict[str, EmbeddingTable],
        gru: GruEncoder,
        proj: ImageProjector,
        mapping: LinearMap,
        mode: str,
    ):
        if len(tables) != 2:
            raise ConfigError(f"exactly two languages are supported, got {sorted(tables)}")
        dims = {t.matrix.shape[1] for t in tables.values()}
        if len(dims) != 1:
            raise ConfigError("embedding tables must share one dimension")
        self.tables = dict(sorted(tables.items()))
        self.gru = gru
        self.proj = proj
        self.mapping = mapping
        self.mode = check_mode(mode)

    @classmethod
    def build(
        cls,
        languages: list[str],
        embeddings: dict[str, Tensor],
        joint_dim: int,
        feature_dim: int,
        mode: str,
        seed: int = 0,
        trainable_embeddings: bool = True,
    ) -> "Model":
        langs = sorted(languages)
        tables = {
            lang: EmbeddingTable(
                language=lang,
                matrix=np.array(embeddings[lang], dtype=np.float64),
                trainable=trainable_embeddings,
            )
            for lang in langs
        }
        embed_dim = tables[langs[0]].matrix.shape[1]
        return cls(
            tables=tables,
            gru=GruEncoder(embed_dim, joint_dim, seed=seed),
            proj=ImageProjector.create(joint_dim, feature_dim, seed=seed + 1),
            mapping=LinearMap.identity(embed_dim),
            mode=mode,
        )

    @property
    def languages(self) -> list[str]:
        return list(self.tables)

    @property
    def embed_dim(self) -> int:
        return next(iter(self.tables.values())).matrix.shape[1]

    @property
    def joint_dim(self) -> int:
        return self.gru.hidden_dim

    @property
    def feature_dim(self) -> int:
        return self.proj.weight.shape[1]

    def param_set(self) -> ParamSet:
        """Live views of the ranking-trained parameters (excludes the map)."""
        pset = ParamSet()
        for lang, table in self.tables.items():
            if table.trainable:
                pset.add(f"emb.{lang}", table.matrix)
        for name, arr in self.gru.params().items():
            pset.add(f"gru.{name}", arr)
        for name, arr in self.proj.params().items():
            pset.add(f"proj.{name}", arr)
        return pset

    def encode_captions(self, language: str, tokens: np.ndarray, lengths: np.ndarray):
        return encode_captions_batch(tokens, lengths, self.tables[language].matrix, self.gru, self.mode)

    def encode_captions_backward(self, language: str, d_out: Tensor, cache, pset: ParamSet):
        # padding rows receive no gradient through the step mask, so the
        # reserved rows stay untouched without special casing
        grads = {name: pset.grads[f"gru.{name}"] for name in self.gru.PARAM_NAMES}
        table_grad = pset.grads.get(f"emb.{language}")
        encode_captions_backward(d_out, cache, self.gru, grads, table_grad)

    def encode_images(self, features: Tensor):
        return encode_images_batch(features, self.proj, self.mode)

    def encode_images_backward(self, d_out: Tensor, cache, pset: ParamSet):
        grads = {name: pset.grads[f"proj.{name}"] for name in self.proj.params()}
        encode_images_backward(d_out, cache, grads)

    def snapshot(self) -> dict[str, np.ndarray]:
        """Deep copies of every parameter, including the map."""
        out = {f"emb.{lang}": t.matrix.copy() for lang, t in self.tables.items()}
        out.update({f"gru.{n}": a.copy() for n, a in self.gru.params().items()})
        out.update({f"proj.{n}": a.copy() for n, a in self.proj.params().items()})
        out["map.w"] = self.mapping.matrix.copy()
        return out

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        for lang, table in self.tables.items():
            table.matrix[...] = snapshot[f"emb.{lang}"]
        for name, arr in self.gru.params().items():
            arr[...] = snapshot[f"gru.{name}"]
        for name, arr in self.proj.params().items():
            arr[...] = snapshot[f"proj.{name}"]
        self.mapping.matrix[...] = snapshot["map.w"]

    def candidate_pool(self, language: str) -> np.ndarray:
        """Vocabulary indices eligible as translation candidates (no pad/unk)."""
        size = self.tables[language].matrix.shape[0]
        return np.arange(2, size, dtype=np.int64)


def vocab_hashes(vocabs: dict[str, Vocabulary]) -> dict[str, bytes]:
    return {lang: vocab.content_hash() for lang, vocab in sorted(vocabs.items())}
