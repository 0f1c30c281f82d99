"""Cross-lingual word alignment: neighborhoods, translation, and updates.

Word translation uses the locally scaled criterion

    score(y) = 2 cos(Wx, y) - r_tgt(Wx) - r_src(y)

where r_tgt(Wx) is the mean cosine of the mapped query to its k nearest
target words and r_src(y) the mean cosine of the candidate to its k nearest
mapped source words. Subtracting the local means demotes hub vectors that
would otherwise be retrieved for disproportionately many queries.

The linear map W is kept orthogonal: every alignment update ends by
projecting W onto the orthogonal group via SVD. Neighbor sets are computed
once per update cycle and held fixed inside it; the stamp field guards
against reuse across cycles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import EmbeddingTable
from .errors import ConfigError, ContractError
from .losses import rcsls_loss
from .numerics import Tensor, l2_normalize_rows, svd_orthogonal_projection


@dataclass
class LinearMap:
    """Orthogonality-maintained square map from source to target space."""

    matrix: Tensor
    last_projection_step: int = 0

    @classmethod
    def identity(cls, dim: int) -> "LinearMap":
        return cls(matrix=np.eye(dim))


@dataclass
class NeighborhoodCache:
    """Fixed neighbor index sets for one alignment update cycle.

    ``target_neighbors[i]`` holds the k nearest target rows to the mapped
    lexicon source i; ``source_neighbors[i]`` the k nearest source rows
    (compared after mapping) to lexicon target i. ``stamp`` records the
    training step the cache was computed at; stale caches must not be fed
    back into the alignment loss.
    """

    target_neighbors: np.ndarray  # (n, k)
    source_neighbors: np.ndarray  # (n, k)
    k: int
    stamp: int = 0


def _pool(pool, size: int) -> np.ndarray:
    if pool is None:
        return np.arange(size, dtype=np.int64)
    arr = np.asarray(sorted(set(int(i) for i in pool)), dtype=np.int64)
    if arr.size == 0:
        raise ConfigError("candidate pool is empty")
    if arr[0] < 0 or arr[-1] >= size:
        raise ConfigError("candidate pool index out of range")
    return arr


def _top_k(scores: Tensor, pool: np.ndarray, k: int) -> np.ndarray:
    """Row-wise k best pool indices, ties resolved toward the lower index."""
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return pool[order]


def compute_neighborhoods(
    x_rows: Tensor,
    y_rows: Tensor,
    w: Tensor,
    pairs_src,
    pairs_tgt,
    k: int,
    src_pool=None,
    tgt_pool=None,
    stamp: int = 0,
) -> NeighborhoodCache:
    """Nearest neighbors by cosine, per lexicon pair, over the candidate pools.

    The pools default to every row of the respective matrix; the true
    translation is never excluded.
    """
    pairs_src = np.asarray(pairs_src, dtype=np.int64)
    pairs_tgt = np.asarray(pairs_tgt, dtype=np.int64)
    src_pool = _pool(src_pool, x_rows.shape[0])
    tgt_pool = _pool(tgt_pool, y_rows.shape[0])
    if k > tgt_pool.size or k > src_pool.size:
        raise ConfigError(f"k={k} exceeds candidate pool size")

    mapped_queries = l2_normalize_rows(x_rows[pairs_src] @ w.T)
    tgt_cand = l2_normalize_rows(y_rows[tgt_pool])
    target_neighbors = _top_k(mapped_queries @ tgt_cand.T, tgt_pool, k)

    tgt_queries = l2_normalize_rows(y_rows[pairs_tgt])
    mapped_cand = l2_normalize_rows(x_rows[src_pool] @ w.T)
    source_neighbors = _top_k(tgt_queries @ mapped_cand.T, src_pool, k)

    return NeighborhoodCache(
        target_neighbors=target_neighbors,
        source_neighbors=source_neighbors,
        k=k,
        stamp=stamp,
    )


def csls_scores(
    query_indices,
    x_rows: Tensor,
    y_rows: Tensor,
    w: Tensor,
    k: int,
    src_pool=None,
    tgt_pool=None,
) -> tuple[Tensor, np.ndarray]:
    """Locally scaled translation scores for a batch of source queries.

    Returns (scores over the target pool, the target pool indices); column
    j of the score matrix corresponds to target word tgt_pool[j].
    """
    query_indices = np.asarray(query_indices, dtype=np.int64)
    src_pool = _pool(src_pool, x_rows.shape[0])
    tgt_pool = _pool(tgt_pool, y_rows.shape[0])
    if k > tgt_pool.size or k > src_pool.size:
        raise ConfigError(f"k={k} exceeds candidate pool size")

    mapped_queries = l2_normalize_rows(x_rows[query_indices] @ w.T)
    tgt_cand = l2_normalize_rows(y_rows[tgt_pool])
    mapped_cand = l2_normalize_rows(x_rows[src_pool] @ w.T)

    base = mapped_queries @ tgt_cand.T  # (q, |tgt_pool|)
    r_tgt = np.sort(base, axis=1)[:, -k:].mean(axis=1)  # mean of k best targets per query
    r_src = np.sort(tgt_cand @ mapped_cand.T, axis=1)[:, -k:].mean(axis=1)
    return 2.0 * base - r_tgt[:, None] - r_src[None, :], tgt_pool


def csls_translate(
    query_index: int,
    x_rows: Tensor,
    y_rows: Tensor,
    w: Tensor,
    k: int,
    src_pool=None,
    tgt_pool=None,
) -> np.ndarray:
    """Full target ranking for one source word, best first, ties by lower index."""
    scores, pool = csls_scores([query_index], x_rows, y_rows, w, k, src_pool, tgt_pool)
    order = np.argsort(-scores[0], kind="stable")
    return pool[order]


def alignment_ratio(
    eval_pairs,
    x_rows: Tensor,
    y_rows: Tensor,
    w: Tensor,
    k: int,
    src_pool=None,
    tgt_pool=None,
) -> float:
    """Fraction of evaluation sources whose top-ranked translation is a gold one.

    Pairs are grouped by source word: a source with several gold targets
    counts as correct if any of them is ranked first.
    """
    eval_pairs = list(eval_pairs)
    if not eval_pairs:
        raise ConfigError("alignment ratio needs a non-empty evaluation lexicon")
    gold: dict[int, set[int]] = {}
    for s, t in eval_pairs:
        gold.setdefault(int(s), set()).add(int(t))
    sources = sorted(gold)
    scores, pool = csls_scores(sources, x_rows, y_rows, w, k, src_pool, tgt_pool)
    top = pool[np.argmax(scores, axis=1)]  # argmax returns the first (lowest) index on ties
    correct = sum(1 for src, best in zip(sources, top) if int(best) in gold[src])
    return correct / len(sources)


def alignment_update(
    table_x: EmbeddingTable,
    table_y: EmbeddingTable,
    mapping: LinearMap,
    train_pairs,
    k: int,
    lr_align: float,
    src_pool=None,
    tgt_pool=None,
    step: int = 0,
    rng: np.random.Generator | None = None,
    sample_size: int | None = None,
) -> float:
    """One alignment descent step; returns the loss at the pre-step point.

    The loss is evaluated on l2-normalized copies of the current rows
    (retrieval updates in between de-normalize them), neighborhoods are
    recomputed, a plain gradient step at ``lr_align`` is applied to the map
    and to the embedding rows the loss touches, the map is projected back to
    the orthogonal group, and the touched rows are renormalized. Rows the
    loss never references keep their exact state so the retrieval objective
    is not perturbed wholesale every cycle.
    """
    pairs = [(int(s), int(t)) for s, t in train_pairs]
    if not pairs:
        raise ConfigError("alignment update needs a non-empty training lexicon")
    if sample_size is not None and sample_size < len(pairs):
        if rng is None:
            raise ContractError("pair sampling requires an explicit rng")
        chosen = rng.choice(len(pairs), size=sample_size, replace=False)
        pairs = [pairs[i] for i in sorted(chosen)]

    x_rows = l2_normalize_rows(table_x.matrix)
    y_rows = l2_normalize_rows(table_y.matrix)

    pairs_src = np.array([s for s, _ in pairs], dtype=np.int64)
    pairs_tgt = np.array([t for _, t in pairs], dtype=np.int64)
    cache = compute_neighborhoods(
        x_rows, y_rows, mapping.matrix, pairs_src, pairs_tgt, k, src_pool, tgt_pool, stamp=step
    )
    loss, d_w, d_x, d_y = rcsls_loss(x_rows, y_rows, mapping.matrix, pairs_src, pairs_tgt, cache)

    mapping.matrix -= lr_align * d_w
    mapping.matrix[...] = svd_orthogonal_projection(mapping.matrix)
    mapping.last_projection_step = step
    touched_x = np.unique(np.concatenate([pairs_src, cache.source_neighbors.reshape(-1)]))
    touched_y = np.unique(np.concatenate([pairs_tgt, cache.target_neighbors.reshape(-1)]))
    if table_x.trainable:
        stepped = x_rows[touched_x] - lr_align * d_x[touched_x]
        table_x.matrix[touched_x] = l2_normalize_rows(stepped)
    if table_y.trainable:
        stepped = y_rows[touched_y] - lr_align * d_y[touched_y]
        table_y.matrix[touched_y] = l2_normalize_rows(stepped)
    return loss
