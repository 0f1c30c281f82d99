"""Synthetic two-language fixtures for desk-scale end-to-end runs.

Each image gets two unique content words plus shared filler words. The
second language is a deterministic token transform of the first (reversed
spelling with a suffix), its captions list the same words in reverse order,
and its word vectors start as noisy copies of the first language's vectors.
That gives a ground-truth lexicon and a near-perfect initial alignment while
keeping the two languages' training gradients distinct, so ranking-only
training visibly degrades the alignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import (
    BilingualLexicon,
    CaptionDataset,
    CaptionRecord,
    ImageFeatureSet,
    Vocabulary,
    save_features,
)
from .numerics import l2_normalize_rows

LANG_X = "en"
LANG_Y = "de"

_FILLERS = ("a", "the", "some")
_EXTRAS = ("near", "with", "under", "behind")


def translate_token(token: str) -> str:
    """Deterministic ground-truth translation used by the synthetic language."""
    return token[::-1] + "q"


@dataclass
class Fixture:
    vocabs: dict[str, Vocabulary]
    embeddings: dict[str, np.ndarray]
    dataset: CaptionDataset
    lexicon: BilingualLexicon
    caption_texts: list[tuple[int, str, str]] = field(default_factory=list)


def build_fixture(
    n_images: int = 64,
    feature_dim: int = 64,
    embed_dim: int = 16,
    lexicon_size: int = 40,
    eval_fraction: float = 0.4,
    noise: float = 0.15,
    seed: int = 0,
) -> Fixture:
    rng = np.random.default_rng([seed, 4211])

    texts: list[tuple[int, str, str]] = []
    content_words: list[str] = []
    for i in range(n_images):
        obj, att = f"obj{i:03d}", f"att{i:03d}"
        content_words += [obj, att]
        words = [_FILLERS[i % len(_FILLERS)], obj, att]
        if i % 2 == 0:
            words.append(_EXTRAS[i % len(_EXTRAS)])
        texts.append((i, LANG_X, " ".join(words)))
        texts.append((i, LANG_Y, " ".join(translate_token(w) for w in reversed(words))))

    x_tokens = []
    for image_id, lang, caption in texts:
        if lang == LANG_X:
            x_tokens.extend(caption.split())
    vocab_x = Vocabulary.from_tokens(LANG_X, x_tokens)
    vocab_y = Vocabulary.from_tokens(
        LANG_Y, (translate_token(t) for t in vocab_x.tokens[2:])
    )

    emb_x = l2_normalize_rows(rng.normal(size=(vocab_x.size, embed_dim)))
    emb_y = np.empty_like(emb_x)
    emb_y[:2] = l2_normalize_rows(rng.normal(size=(2, embed_dim)))
    for token in vocab_x.tokens[2:]:
        xi = vocab_x.index[token]
        yi = vocab_y.index[translate_token(token)]
        emb_y[yi] = emb_x[xi] + noise * rng.normal(size=embed_dim)
    emb_y = l2_normalize_rows(emb_y)

    features = ImageFeatureSet(
        features={i: rng.normal(size=feature_dim) for i in range(n_images)},
        dim=feature_dim,
    )

    vocabs = {LANG_X: vocab_x, LANG_Y: vocab_y}
    dataset = _encode(texts, vocabs, features, split="train")

    if lexicon_size > len(content_words):
        lexicon_size = len(content_words)
    picked = rng.choice(len(content_words), size=lexicon_size, replace=False)
    pairs = [
        (vocab_x.index[content_words[i]], vocab_y.index[translate_token(content_words[i])])
        for i in sorted(picked)
    ]
    n_eval = max(1, int(round(lexicon_size * eval_fraction)))
    lexicon = BilingualLexicon(
        train_pairs=pairs[n_eval:],
        eval_pairs=pairs[:n_eval],
        source_language=LANG_X,
        target_language=LANG_Y,
    )

    return Fixture(
        vocabs=vocabs,
        embeddings={LANG_X: emb_x, LANG_Y: emb_y},
        dataset=dataset,
        lexicon=lexicon,
        caption_texts=texts,
    )


def _encode(texts, vocabs, features, split):
    records = [
        CaptionRecord(
            image_id=image_id,
            language=lang,
            tokens=tuple(vocabs[lang].encode_many(caption.split())),
        )
        for image_id, lang, caption in texts
    ]
    return CaptionDataset(records=records, images=features, split=split)


def write_fixture_files(fixture: Fixture, out_dir) -> dict[str, str]:
    """Materialize a fixture in the on-disk formats the CLI consumes."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "captions": os.path.join(out_dir, "captions.tsv"),
        "features": os.path.join(out_dir, "features.bin"),
        "embeddings_x": os.path.join(out_dir, f"vectors.{LANG_X}.vec"),
        "embeddings_y": os.path.join(out_dir, f"vectors.{LANG_Y}.vec"),
        "lexicon_train": os.path.join(out_dir, "lexicon.train.txt"),
        "lexicon_eval": os.path.join(out_dir, "lexicon.eval.txt"),
    }

    with open(paths["captions"], "w", encoding="utf-8") as fh:
        for image_id, lang, caption in fixture.caption_texts:
            fh.write(f"{image_id}\t{lang}\t{caption}\n")

    save_features(fixture.dataset.images, paths["features"])

    for lang, key in ((LANG_X, "embeddings_x"), (LANG_Y, "embeddings_y")):
        vocab = fixture.vocabs[lang]
        matrix = fixture.embeddings[lang]
        with open(paths[key], "w", encoding="utf-8") as fh:
            fh.write(f"{vocab.size - 2} {matrix.shape[1]}\n")
            for idx in range(2, vocab.size):
                values = " ".join(repr(v) for v in matrix[idx])
                fh.write(f"{vocab.tokens[idx]} {values}\n")

    vocab_x, vocab_y = fixture.vocabs[LANG_X], fixture.vocabs[LANG_Y]
    for key, pairs in (
        ("lexicon_train", fixture.lexicon.train_pairs),
        ("lexicon_eval", fixture.lexicon.eval_pairs),
    ):
        with open(paths[key], "w", encoding="utf-8") as fh:
            for s, t in pairs:
                fh.write(f"{vocab_x.tokens[s]} {vocab_y.tokens[t]}\n")

    return paths
