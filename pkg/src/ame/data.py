"""Ingestion of word vectors, bilingual lexicons, captions, and image features.

File formats:

* embedding file: text, first line ``<count> <dim>``, then one token per line
  followed by ``dim`` ASCII floats (the common ``.vec`` convention);
* lexicon file: UTF-8 lines ``<source_word> <target_word>``;
* captions file: UTF-8 TSV lines ``<image_id>\\t<language_tag>\\t<caption>``;
* feature file: binary, magic ``AMEFEAT1``, u32 count, u32 dim, then per
  image a u64 id and ``dim`` little-endian float32 values.

Loaded datasets are immutable and safe for concurrent readers.
"""

from __future__ import annotations

import hashlib
import struct
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, ContractError, FormatError, ParseError
from .numerics import l2_normalize_rows

PAD_INDEX = 0
UNK_INDEX = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

FEATURE_MAGIC = b"AMEFEAT1"


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip surrounding punctuation per token."""
    out = []
    for raw in text.lower().split():
        token = _strip_punct(raw)
        if token:
            out.append(token)
    return out


def _strip_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and unicodedata.category(token[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(token[end - 1]).startswith("P"):
        end -= 1
    return token[start:end]


@dataclass
class Vocabulary:
    """Bijective token/index mapping for one language.

    Index 0 is reserved for padding and index 1 for unknown tokens; both are
    present in every vocabulary.
    """

    language: str
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ContractError(f"duplicate tokens in vocabulary for {self.language!r}")
        if self.tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ContractError("vocabulary must reserve index 0 for padding and 1 for unknown")

    @classmethod
    def from_tokens(cls, language: str, tokens: Iterable[str]) -> "Vocabulary":
        """Build from a token stream, keeping first-seen order, no frequency cutoff."""
        ordered = [PAD_TOKEN, UNK_TOKEN]
        seen = {PAD_TOKEN, UNK_TOKEN}
        for tok in tokens:
            if tok not in seen:
                seen.add(tok)
                ordered.append(tok)
        return cls(language=language, tokens=ordered)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def encode(self, token: str) -> int:
        return self.index.get(token, UNK_INDEX)

    def encode_many(self, tokens: Sequence[str]) -> list[int]:
        return [self.encode(t) for t in tokens]

    def content_hash(self) -> bytes:
        """8-byte digest of the language tag and full ordered token list."""
        payload = "\x1f".join([self.language, *self.tokens]).encode("utf-8")
        return hashlib.sha256(payload).digest()[:8]


@dataclass
class BilingualLexicon:
    """Word-pair supervision: disjoint train and evaluation index pairs.

    Source indices refer to ``source_language``'s vocabulary and target
    indices to ``target_language``'s; the tags make the pair orientation
    explicit wherever the lexicon travels.
    """

    train_pairs: list[tuple[int, int]]
    eval_pairs: list[tuple[int, int]]
    source_language: str
    target_language: str

    def __post_init__(self):
        overlap = set(self.train_pairs) & set(self.eval_pairs)
        if overlap:
            raise ConfigError(f"{len(overlap)} pair(s) appear in both train and eval lexicons")

    def validate(self, vocabs: dict[str, "Vocabulary"]) -> None:
        src = vocabs[self.source_language]
        tgt = vocabs[self.target_language]
        for s, t in [*self.train_pairs, *self.eval_pairs]:
            if not (0 <= s < src.size and 0 <= t < tgt.size):
                raise ConfigError(f"lexicon pair ({s}, {t}) out of vocabulary range")

    @classmethod
    def from_files(
        cls,
        train_path,
        eval_path,
        src: Vocabulary,
        tgt: Vocabulary,
        drop_overlap: bool = True,
    ) -> "BilingualLexicon":
        """Load both splits; eval pairs duplicated in train are dropped by default."""
        train = load_lexicon(train_path, src, tgt)
        eval_pairs = load_lexicon(eval_path, src, tgt)
        if drop_overlap:
            train_set = set(train)
            eval_pairs = [p for p in eval_pairs if p not in train_set]
        return cls(
            train_pairs=train,
            eval_pairs=eval_pairs,
            source_language=src.language,
            target_language=tgt.language,
        )


def load_lexicon(path, src: Vocabulary, tgt: Vocabulary) -> list[tuple[int, int]]:
    """Read word pairs, keeping only pairs with both words in-vocabulary.

    Duplicates are removed with the first occurrence's position preserved.
    """
    pairs: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise ParseError(f"expected two words, got {len(parts)}", path=path, line=lineno)
            s_word, t_word = parts
            if s_word not in src.index or t_word not in tgt.index:
                continue
            pair = (src.index[s_word], tgt.index[t_word])
            if pair not in seen:
                seen.add(pair)
                pairs.append(pair)
    return pairs


def load_embeddings(path, vocab: Vocabulary, dim: int, seed: int = 0) -> np.ndarray:
    """Load word vectors for a vocabulary from a ``.vec`` style text file.

    Tokens missing from the file (including the padding and unknown rows) are
    initialized from seeded uniform(-1/sqrt(dim), +1/sqrt(dim)). Every row of
    the result is l2-normalized.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}: header must be '<count> <dim>'")
        try:
            _, file_dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise FormatError(f"{path}: non-integer header fields") from exc
        if file_dim != dim:
            raise FormatError(f"{path}: file dimension {file_dim} does not match requested {dim}")

        bound = 1.0 / np.sqrt(dim)
        rng = np.random.default_rng(seed)
        matrix = rng.uniform(-bound, bound, size=(vocab.size, dim))
        filled = np.zeros(vocab.size, dtype=bool)

        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(" ")
            token, values = parts[0], parts[1:]
            # trailing space before newline is common in .vec files
            if values and values[-1] == "":
                values = values[:-1]
            if len(values) != dim:
                raise ParseError(
                    f"expected {dim} floats for token {token!r}, got {len(values)}",
                    path=path,
                    line=lineno,
                )
            idx = vocab.index.get(token)
            if idx is None or filled[idx]:
                continue
            try:
                matrix[idx] = [float(v) for v in values]
            except ValueError as exc:
                raise ParseError(f"non-numeric value for token {token!r}", path=path, line=lineno) from exc
            filled[idx] = True

    return l2_normalize_rows(matrix)


@dataclass
class ImageFeatureSet:
    """Precomputed image feature vectors keyed by integer image id."""

    features: dict[int, np.ndarray]
    dim: int

    def __post_init__(self):
        for image_id, vec in self.features.items():
            if vec.shape != (self.dim,):
                raise FormatError(f"feature vector for image {image_id} has shape {vec.shape}")
            if not np.all(np.isfinite(vec)):
                raise FormatError(f"feature vector for image {image_id} has non-finite values")

    def matrix(self, image_ids: Sequence[int]) -> np.ndarray:
        return np.stack([self.features[i] for i in image_ids]).astype(np.float64)


def save_features(fs: ImageFeatureSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", len(fs.features), fs.dim))
        for image_id in sorted(fs.features):
            fh.write(struct.pack("<Q", image_id))
            fh.write(fs.features[image_id].astype("<f4").tobytes())


def load_features(path) -> ImageFeatureSet:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != FEATURE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        head = fh.read(8)
        if len(head) != 8:
            raise FormatError(f"{path}: truncated header")
        count, dim = struct.unpack("<II", head)
        features: dict[int, np.ndarray] = {}
        record = 8 + 4 * dim
        for _ in range(count):
            blob = fh.read(record)
            if len(blob) != record:
                raise FormatError(f"{path}: truncated feature record")
            (image_id,) = struct.unpack("<Q", blob[:8])
            vec = np.frombuffer(blob[8:], dtype="<f4").astype(np.float64)
            features[image_id] = vec
    return ImageFeatureSet(features=features, dim=dim)


@dataclass(frozen=True)
class CaptionRecord:
    image_id: int
    language: str
    tokens: tuple[int, ...]


@dataclass
class CaptionDataset:
    """Caption records over a shared image feature set, tagged with a split."""

    records: list[CaptionRecord]
    images: ImageFeatureSet
    split: str

    def __post_init__(self):
        for rec in self.records:
            if rec.image_id not in self.images.features:
                raise ConfigError(f"record references unknown image id {rec.image_id}")
            if not rec.tokens:
                raise ConfigError(f"empty token sequence for image {rec.image_id}")

    @property
    def languages(self) -> list[str]:
        return sorted({r.language for r in self.records})

    @property
    def image_ids(self) -> list[int]:
        return sorted({r.image_id for r in self.records})

    def validate_indices(self, vocabs: dict[str, Vocabulary]) -> None:
        for rec in self.records:
            vocab = vocabs[rec.language]
            for idx in rec.tokens:
                if not (0 <= idx < vocab.size):
                    raise ConfigError(f"token index {idx} out of range for {rec.language!r}")

    def filter_language(self, language: str) -> "CaptionDataset":
        kept = [r for r in self.records if r.language == language]
        return CaptionDataset(records=kept, images=self.images, split=self.split)


def load_captions(path) -> list[tuple[int, str, str]]:
    """Read raw caption rows (image id, language tag, caption text)."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", path=path, line=lineno)
            try:
                image_id = int(parts[0])
            except ValueError as exc:
                raise ParseError(f"non-integer image id {parts[0]!r}", path=path, line=lineno) from exc
            rows.append((image_id, parts[1], parts[2]))
    return rows


def build_vocabularies(rows: Iterable[tuple[int, str, str]]) -> dict[str, Vocabulary]:
    """One vocabulary per language from raw caption rows (training split)."""
    streams: dict[str, list[str]] = {}
    for _, language, text in rows:
        streams.setdefault(language, []).extend(tokenize(text))
    return {lang: Vocabulary.from_tokens(lang, toks) for lang, toks in sorted(streams.items())}


def encode_dataset(
    rows: Iterable[tuple[int, str, str]],
    vocabs: dict[str, Vocabulary],
    images: ImageFeatureSet,
    split: str,
) -> CaptionDataset:
    """Tokenize and index raw caption rows; unknown words map to the unk row."""
    records = []
    for image_id, language, text in rows:
        if language not in vocabs:
            raise ConfigError(f"no vocabulary for language {language!r}")
        tokens = vocabs[language].encode_many(tokenize(text))
        if not tokens:
            raise ParseError(f"caption for image {image_id} is empty after tokenization")
        records.append(CaptionRecord(image_id=image_id, language=language, tokens=tuple(tokens)))
    return CaptionDataset(records=records, images=images, split=split)


@dataclass
class Batch:
    """One training batch: a set of images with one caption per language each.

    ``captions[lang]`` is a pair (token index matrix padded to the batch max
    length with the padding index, lengths vector), row-aligned with
    ``image_ids`` and ``features``.
    """

    image_ids: list[int]
    features: np.ndarray
    captions: dict[str, tuple[np.ndarray, np.ndarray]]

    @property
    def size(self) -> int:
        return len(self.image_ids)


def make_batches(ds: CaptionDataset, batch_size: int, seed: int, epoch: int = 0) -> Iterator[Batch]:
    """Yield one epoch of shuffled batches; the short final batch is kept.

    Shuffling and per-image caption choice are driven by a generator seeded
    with (seed, epoch), so the same arguments always reproduce the same
    batches. Images are the batch unit: every batch carries one caption per
    language per image. Requires batch_size >= 2 for in-batch negatives.
    """
    if batch_size < 2:
        raise ConfigError(f"batch size must be >= 2, got {batch_size}")
    langs = ds.languages
    by_image: dict[int, dict[str, list[CaptionRecord]]] = {}
    for rec in ds.records:
        by_image.setdefault(rec.image_id, {}).setdefault(rec.language, []).append(rec)
    image_ids = sorted(by_image)
    for image_id, per_lang in by_image.items():
        missing = [lang for lang in langs if lang not in per_lang]
        if missing:
            raise ConfigError(f"image {image_id} has no caption in language(s) {missing}")

    rng = np.random.default_rng([seed, epoch])
    order = [image_ids[i] for i in rng.permutation(len(image_ids))]

    chosen: dict[int, dict[str, CaptionRecord]] = {}
    for image_id in order:
        chosen[image_id] = {}
        for lang in langs:
            options = by_image[image_id][lang]
            pick = int(rng.integers(len(options))) if len(options) > 1 else 0
            chosen[image_id][lang] = options[pick]

    for start in range(0, len(order), batch_size):
        ids = order[start : start + batch_size]
        captions = {}
        for lang in langs:
            recs = [chosen[i][lang] for i in ids]
            max_len = max(len(r.tokens) for r in recs)
            tokens = np.full((len(ids), max_len), PAD_INDEX, dtype=np.int64)
            lengths = np.zeros(len(ids), dtype=np.int64)
            for row, rec in enumerate(recs):
                tokens[row, : len(rec.tokens)] = rec.tokens
                lengths[row] = len(rec.tokens)
            captions[lang] = (tokens, lengths)
        yield Batch(image_ids=ids, features=ds.images.matrix(ids), captions=captions)
