"""Similarity functions between joint-space vectors, scalar and batched.

Two modes exist. Symmetric similarity is the cosine (a plain dot product,
since joint vectors are unit norm). Asymmetric similarity is the
partial-order penalty

    S(a, b) = -||max(0, b - a)||^2

where ``a`` is the image-side embedding and ``b`` the caption-side embedding:
it is zero exactly when ``b`` is coordinatewise dominated by ``a`` and
negative otherwise. Matrix entries follow the convention
P[caption, image] = S(image_emb, caption_emb).

All functions are pure and deterministic; the batched forms agree with the
scalar forms entrywise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import ASYMMETRIC, SYMMETRIC, JointVector, check_mode
from .errors import ContractError
from .numerics import Tensor

# column block size for the asymmetric pairwise computation; bounds the
# (rows x block x dim) temporary
_BLOCK = 64


@dataclass
class SimilarityMatrix:
    """Pairwise similarities, rows are captions and columns are images."""

    values: Tensor
    mode: str


def cosine(a: JointVector, b: JointVector) -> float:
    """Cosine similarity of two symmetric-mode unit vectors."""
    if a.mode != SYMMETRIC or b.mode != SYMMETRIC:
        raise ContractError(f"cosine requires symmetric mode, got {a.mode!r}/{b.mode!r}")
    return float(a.values @ b.values)


def order_similarity(a: JointVector, b: JointVector) -> float:
    """Partial-order penalty S(a, b) with ``a`` the image embedding."""
    if a.mode != ASYMMETRIC or b.mode != ASYMMETRIC:
        raise ContractError(
            f"order similarity requires asymmetric mode, got {a.mode!r}/{b.mode!r}"
        )
    violation = np.maximum(0.0, b.values - a.values)
    return -float(violation @ violation)


def similarity_values(captions: Tensor, images: Tensor, mode: str) -> Tensor:
    """Batched P[c, i] over caption rows and image rows."""
    check_mode(mode)
    captions = np.asarray(captions, dtype=np.float64)
    images = np.asarray(images, dtype=np.float64)
    if captions.size == 0 or images.size == 0:
        raise ContractError("similarity matrix requires non-empty caption and image sets")
    if mode == SYMMETRIC:
        return captions @ images.T
    out = np.empty((captions.shape[0], images.shape[0]))
    for start in range(0, images.shape[0], _BLOCK):
        block = images[start : start + _BLOCK]
        viol = np.maximum(0.0, captions[:, None, :] - block[None, :, :])
        out[:, start : start + block.shape[0]] = -np.sum(viol * viol, axis=2)
    return out


def similarity_backward(
    captions: Tensor,
    images: Tensor,
    mode: str,
    d_values: Tensor,
) -> tuple[Tensor, Tensor]:
    """Gradients of sum(d_values * P) with respect to caption and image rows.

    At coordinates where caption and image entries tie exactly, the hinge
    subgradient is taken as zero.
    """
    check_mode(mode)
    if mode == SYMMETRIC:
        return d_values @ images, d_values.T @ captions
    d_captions = np.zeros_like(captions)
    d_images = np.zeros_like(images)
    for start in range(0, images.shape[0], _BLOCK):
        block = images[start : start + _BLOCK]
        viol = np.maximum(0.0, captions[:, None, :] - block[None, :, :])
        weighted = d_values[:, start : start + block.shape[0], None] * viol
        d_captions += -2.0 * weighted.sum(axis=1)
        d_images[start : start + block.shape[0]] += 2.0 * weighted.sum(axis=0)
    return d_captions, d_images


def similarity_matrix(captions, images, mode: str | None = None) -> SimilarityMatrix:
    """Build the similarity matrix from JointVectors or raw row matrices.

    With JointVector sequences the mode is taken from the vectors and must be
    uniform; with raw arrays ``mode`` is required.
    """
    cap_rows, cap_mode = _stack(captions)
    img_rows, img_mode = _stack(images)
    modes = {m for m in (cap_mode, img_mode, mode) if m is not None}
    if len(modes) != 1:
        raise ContractError(f"conflicting or missing modes: {sorted(modes)}")
    resolved = modes.pop()
    return SimilarityMatrix(values=similarity_values(cap_rows, img_rows, resolved), mode=resolved)


def _stack(items) -> tuple[Tensor, str | None]:
    if isinstance(items, np.ndarray):
        if items.size == 0:
            raise ContractError("similarity matrix requires non-empty inputs")
        return items, None
    items = list(items)
    if not items:
        raise ContractError("similarity matrix requires non-empty inputs")
    if isinstance(items[0], JointVector):
        modes = {v.mode for v in items}
        if len(modes) != 1:
            raise ContractError(f"mixed modes in vector list: {sorted(modes)}")
        return np.stack([v.values for v in items]), modes.pop()
    return np.asarray(items, dtype=np.float64), None
