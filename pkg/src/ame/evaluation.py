"""Retrieval metrics and the image/text and caption/caption protocols.

Rank of a query is 1 plus the number of candidates scoring strictly higher
than its best gold candidate; on score ties the lower column index wins.
Recall at k is the percentage of queries ranked at or below k; the median
rank uses the lower median for even-length lists, so whole-number ranks stay
whole. Multi-fold evaluation averages recalls and medians across equal
consecutive folds of the test images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CaptionDataset
from .errors import ConfigError, ContractError
from .model import Model
from .numerics import Tensor
from .similarity import similarity_values

I2T = "i2t"
T2I = "t2i"


@dataclass
class RetrievalReport:
    """Recall percentages, median rank, and fold count for one direction."""

    direction: str
    r1: float
    r5: float
    r10: float
    median_rank: float
    fold_count: int = 1
    alignment: float | None = None

    def as_row(self) -> dict:
        row = {
            "direction": self.direction,
            "r1": self.r1,
            "r5": self.r5,
            "r10": self.r10,
            "median_rank": self.median_rank,
            "fold_count": self.fold_count,
        }
        if self.alignment is not None:
            row["alignment"] = self.alignment
        return row


def rank_matrix(scores: Tensor, gold: dict[int, set[int]]) -> np.ndarray:
    """Best gold rank per query row of a query-by-candidate score matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    n_cols = scores.shape[1]
    ranks = np.zeros(scores.shape[0], dtype=np.int64)
    cols = np.arange(n_cols)
    for q in range(scores.shape[0]):
        gold_cols = gold.get(q, set())
        if not gold_cols:
            raise ContractError(f"query {q} has an empty gold set")
        row = scores[q]
        best = None
        for g in gold_cols:
            better = int(np.sum(row > row[g]) + np.sum((row == row[g]) & (cols < g)))
            rank = 1 + better
            best = rank if best is None else min(best, rank)
        ranks[q] = best
    return ranks


def recall_at_k(ranks, k: int) -> float:
    """Percentage of queries whose rank is at most k."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ContractError("recall needs a non-empty rank list")
    return 100.0 * float(np.sum(ranks <= k)) / ranks.size


def median_rank(ranks) -> float:
    """Lower median of the rank list (whole-valued for integer ranks)."""
    ranks = np.sort(np.asarray(ranks))
    if ranks.size == 0:
        raise ContractError("median needs a non-empty rank list")
    return float(ranks[(ranks.size - 1) // 2])


def report_from_ranks(ranks, direction: str, fold_count: int = 1) -> RetrievalReport:
    return RetrievalReport(
        direction=direction,
        r1=recall_at_k(ranks, 1),
        r5=recall_at_k(ranks, 5),
        r10=recall_at_k(ranks, 10),
        median_rank=median_rank(ranks),
        fold_count=fold_count,
    )


def _encode_fold(model: Model, ds: CaptionDataset, language: str, image_ids: list[int]):
    """Caption and image joint vectors for a fold, plus caption->image pairing."""
    id_set = set(image_ids)
    records = [r for r in ds.records if r.language == language and r.image_id in id_set]
    if not records:
        raise ConfigError(f"no {language!r} captions among the fold images")
    max_len = max(len(r.tokens) for r in records)
    tokens = np.zeros((len(records), max_len), dtype=np.int64)
    lengths = np.zeros(len(records), dtype=np.int64)
    for i, rec in enumerate(records):
        tokens[i, : len(rec.tokens)] = rec.tokens
        lengths[i] = len(rec.tokens)
    captions, _ = model.encode_captions(language, tokens, lengths)
    images, _ = model.encode_images(ds.images.matrix(image_ids))
    image_pos = {img: i for i, img in enumerate(image_ids)}
    caption_image = [image_pos[r.image_id] for r in records]
    return captions, images, caption_image


def evaluate_fold(
    model: Model,
    ds: CaptionDataset,
    language: str,
    direction: str,
    image_ids: list[int] | None = None,
) -> RetrievalReport:
    """Retrieval metrics on one fold of test images for one language.

    Image-to-text queries are images and the gold set is every caption of
    the image; text-to-image queries are captions and the gold item is the
    single paired image.
    """
    if direction not in (I2T, T2I):
        raise ConfigError(f"direction must be {I2T!r} or {T2I!r}, got {direction!r}")
    image_ids = list(image_ids) if image_ids is not None else ds.image_ids
    captions, images, caption_image = _encode_fold(model, ds, language, image_ids)
    sims = similarity_values(captions, images, model.mode)  # caption rows, image cols
    if direction == T2I:
        gold = {q: {caption_image[q]} for q in range(len(caption_image))}
        ranks = rank_matrix(sims, gold)
    else:
        gold: dict[int, set[int]] = {q: set() for q in range(len(image_ids))}
        for cap, img in enumerate(caption_image):
            gold[img].add(cap)
        ranks = rank_matrix(sims.T, gold)
    return report_from_ranks(ranks, direction)


def evaluate_retrieval(
    model: Model,
    ds: CaptionDataset,
    language: str,
    direction: str,
    folds: int = 1,
) -> RetrievalReport:
    """Single- or multi-fold retrieval evaluation with averaged metrics."""
    if folds < 1:
        raise ConfigError(f"fold count must be >= 1, got {folds}")
    image_ids = ds.image_ids
    fold_size = len(image_ids) // folds
    if fold_size == 0:
        raise ConfigError(f"{folds} folds do not fit in {len(image_ids)} images")
    if folds == 1:
        report = evaluate_fold(model, ds, language, direction, image_ids)
        return report
    parts = [
        evaluate_fold(model, ds, language, direction, image_ids[i * fold_size : (i + 1) * fold_size])
        for i in range(folds)
    ]
    return RetrievalReport(
        direction=direction,
        r1=float(np.mean([p.r1 for p in parts])),
        r5=float(np.mean([p.r5 for p in parts])),
        r10=float(np.mean([p.r10 for p in parts])),
        median_rank=float(np.mean([p.median_rank for p in parts])),
        fold_count=folds,
    )


def caption_caption_eval(
    model: Model,
    ds: CaptionDataset,
    source_language: str,
    target_language: str,
    image_ids: list[int] | None = None,
    query_as_image: bool = False,
) -> RetrievalReport:
    """Cross-language caption retrieval: gold items share the query's image.

    In asymmetric mode the pair score defaults to the candidate taking the
    dominating (image) slot, P(query, candidate) = S(candidate, query);
    ``query_as_image`` flips the orientation.
    """
    langs = set(ds.languages)
    for lang in (source_language, target_language):
        if lang not in langs:
            raise ConfigError(f"dataset has no captions in language {lang!r}")
    image_ids = list(image_ids) if image_ids is not None else ds.image_ids
    src_vecs, _, src_pair = _encode_fold(model, ds, source_language, image_ids)
    tgt_vecs, _, tgt_pair = _encode_fold(model, ds, target_language, image_ids)
    if query_as_image:
        # flipped orientation: the query takes the dominating slot
        sims = similarity_values(tgt_vecs, src_vecs, model.mode).T
    else:
        sims = similarity_values(src_vecs, tgt_vecs, model.mode)
    by_image: dict[int, set[int]] = {}
    for cand, img in enumerate(tgt_pair):
        by_image.setdefault(img, set()).add(cand)
    gold = {q: by_image[img] for q, img in enumerate(src_pair)}
    ranks = rank_matrix(sims, gold)
    return report_from_ranks(ranks, f"c2c({source_language}->{target_language})")
