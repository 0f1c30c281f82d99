"""Training objectives: bidirectional ranking loss and the alignment loss.

The ranking loss drives retrieval. For a square in-batch similarity matrix P
with gold pairs on the diagonal it sums, over every gold pair i, hinge terms
against all other batch items in both directions:

    sum_i sum_{j != i} [ max(0, margin - P[i,i] + P[j,i])     (other captions)
                       + max(0, margin - P[i,i] + P[i,j]) ]   (other images)

The alignment loss keeps two embedding spaces translatable through a linear
map W. For lexicon pairs (x_i, y_i) with fixed neighbor sets it averages

    -2 x_i'W'y_i + (1/k) sum_{y_j in N_Y(Wx_i)} x_i'W'y_j
                 + (1/k) sum_{x_j : Wx_j in N_X(y_i)} x_j'W'y_i

over the n pairs. Neighborhoods are treated as constant sets when
differentiating, so gradients flow to W, to the lexicon rows, and to the
neighbor rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ShapeError, SingularityError
from .numerics import Tensor
from .similarity import SimilarityMatrix


@dataclass
class LossBreakdown:
    """Per-step loss components; total is their unweighted sum."""

    ranking: float
    alignment: float
    active_terms: int = 0

    @property
    def total(self) -> float:
        return self.ranking + self.alignment


def total_loss(ranking: float, alignment: float) -> float:
    """Equally weighted combination of the two objectives."""
    return ranking + alignment


def ranking_loss(p, margin: float) -> tuple[float, Tensor, int]:
    """Bidirectional hinge loss over one batch similarity matrix.

    ``p`` is square with gold caption/image pairs on the diagonal (rows are
    captions, columns are images). Returns the loss value, its gradient with
    respect to every entry of ``p``, and the number of active hinge terms.
    """
    if isinstance(p, SimilarityMatrix):
        p = p.values
    p = np.asarray(p, dtype=np.float64)
    if margin <= 0.0:
        raise ConfigError(f"margin must be positive, got {margin}")
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ShapeError(f"batch similarity matrix must be square, got {p.shape}")

    n = p.shape[0]
    diag = np.diagonal(p)
    off = ~np.eye(n, dtype=bool)

    # columns: irrelevant captions j against gold image i
    viol_cap = margin - diag[None, :] + p
    active_cap = (viol_cap > 0.0) & off
    # rows: irrelevant images j against gold caption i
    viol_img = margin - diag[:, None] + p
    active_img = (viol_img > 0.0) & off

    loss = float(viol_cap[active_cap].sum() + viol_img[active_img].sum())
    grad = active_cap.astype(np.float64) + active_img.astype(np.float64)
    hits = active_cap.sum(axis=0) + active_img.sum(axis=1)
    grad[np.diag_indices(n)] -= hits
    return loss, grad, int(active_cap.sum() + active_img.sum())


def rcsls_loss(
    x_rows: Tensor,
    y_rows: Tensor,
    w: Tensor,
    pairs_src: np.ndarray,
    pairs_tgt: np.ndarray,
    neighborhoods,
) -> tuple[float, Tensor, Tensor, Tensor]:
    """Alignment loss and gradients for fixed neighbor sets.

    ``x_rows``/``y_rows`` are the full embedding matrices the neighborhood
    indices refer to; ``pairs_src``/``pairs_tgt`` index the lexicon pairs.
    Returns (loss, d_w, d_x_rows, d_y_rows); the row gradients cover lexicon
    rows and neighbor rows, all other rows are zero.
    """
    pairs_src = np.asarray(pairs_src, dtype=np.int64)
    pairs_tgt = np.asarray(pairs_tgt, dtype=np.int64)
    n = pairs_src.shape[0]
    if n == 0:
        raise ContractError("alignment loss needs at least one lexicon pair")
    if pairs_tgt.shape[0] != n:
        raise ContractError("source and target index lists differ in length")
    tgt_nbr = np.asarray(neighborhoods.target_neighbors, dtype=np.int64)
    src_nbr = np.asarray(neighborhoods.source_neighbors, dtype=np.int64)
    if tgt_nbr.shape[0] != n or src_nbr.shape[0] != n:
        raise ContractError("neighborhood cache does not cover the lexicon pairs")
    k = neighborhoods.k

    xs = x_rows[pairs_src]  # (n, d)
    yt = y_rows[pairs_tgt]  # (n, d)
    wx = xs @ w.T
    yn = y_rows[tgt_nbr]  # (n, k, d)
    xn = x_rows[src_nbr]  # (n, k, d)

    term_gold = -2.0 * float(np.sum(wx * yt))
    term_tgt = float(np.einsum("nd,nkd->", wx, yn)) / k
    term_src = float(np.einsum("nkd,nd->", xn @ w.T, yt)) / k
    loss = (term_gold + term_tgt + term_src) / n

    # d(x'W'y)/dW = y x', accumulated over every term
    d_w = -2.0 * yt.T @ xs
    d_w += np.einsum("nkd,ne->de", yn, xs) / k
    d_w += np.einsum("nd,nke->de", yt, xn) / k
    d_w /= n

    d_x = np.zeros_like(x_rows)
    d_y = np.zeros_like(y_rows)
    # gold terms plus the i-indexed side of each neighbor sum
    np.add.at(d_x, pairs_src, (-2.0 * yt + yn.sum(axis=1) / k) @ w / n)
    np.add.at(d_y, pairs_tgt, (-2.0 * xs + xn.sum(axis=1) / k) @ w.T / n)
    # neighbor rows themselves
    np.add.at(d_y, tgt_nbr.reshape(-1), np.repeat(xs @ w.T, k, axis=0) / (k * n))
    np.add.at(d_x, src_nbr.reshape(-1), np.repeat(yt @ w, k, axis=0) / (k * n))
    return loss, d_w, d_x, d_y


def least_squares_map(x: Tensor, y: Tensor) -> Tensor:
    """Unconstrained linear map minimizing the mean squared residual.

    Solves min_W (1/n) sum_i ||W x_i - y_i||^2 by the normal equations;
    used as a baseline and test oracle, not during training.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise ShapeError(f"paired row matrices required, got {x.shape} and {y.shape}")
    gram = x.T @ x
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise SingularityError("normal matrix is rank deficient; need more independent pairs")
    return np.linalg.solve(gram, x.T @ y).T
