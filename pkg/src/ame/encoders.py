"""Caption and image encoders producing unit vectors in the joint space.

The caption encoder is a single shared unidirectional GRU over per-language
word embedding tables; the caption representation is the final hidden state.
The image encoder is an affine projection of precomputed feature vectors.
Both apply the mode-dependent output map:

* symmetric: l2 normalization (vectors compared by cosine);
* asymmetric: elementwise absolute value, then l2 normalization (vectors
  compared by the partial-order penalty, all coordinates nonnegative).

Backward passes are hand-derived; caches returned by the forward functions
hold everything backpropagation needs. Forward passes are read-only over
parameters and safe to run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateInputError, ShapeError
from .numerics import Tensor

SYMMETRIC = "symmetric"
ASYMMETRIC = "asymmetric"
MODES = (SYMMETRIC, ASYMMETRIC)


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ContractError(f"unknown mode {mode!r}, expected one of {MODES}")
    return mode


@dataclass
class JointVector:
    """A point in the shared image/caption space."""

    values: Tensor
    mode: str


@dataclass
class EmbeddingTable:
    """Per-language trainable word vectors, one row per vocabulary index."""

    language: str
    matrix: Tensor
    trainable: bool = True


class GruEncoder:
    """Gated recurrent unit weights for the shared multilingual text encoder.

    Gate equations, with e_t the input embedding and h_{t-1} the previous
    hidden state (h_0 = 0):

        z_t = sigmoid(W_z e_t + U_z h_{t-1} + b_z)
        r_t = sigmoid(W_r e_t + U_r h_{t-1} + b_r)
        g_t = tanh(W_h e_t + U_h (r_t * h_{t-1}) + b_h)
        h_t = (1 - z_t) * h_{t-1} + z_t * g_t
    """

    PARAM_NAMES = ("w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h")

    def __init__(self, input_dim: int, hidden_dim: int, seed: int = 0):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        rng = np.random.default_rng(seed)
        bi = 1.0 / np.sqrt(input_dim)
        bh = 1.0 / np.sqrt(hidden_dim)
        self.w_z = rng.uniform(-bi, bi, (hidden_dim, input_dim))
        self.w_r = rng.uniform(-bi, bi, (hidden_dim, input_dim))
        self.w_h = rng.uniform(-bi, bi, (hidden_dim, input_dim))
        self.u_z = rng.uniform(-bh, bh, (hidden_dim, hidden_dim))
        self.u_r = rng.uniform(-bh, bh, (hidden_dim, hidden_dim))
        self.u_h = rng.uniform(-bh, bh, (hidden_dim, hidden_dim))
        self.b_z = rng.uniform(-bh, bh, hidden_dim)
        self.b_r = rng.uniform(-bh, bh, hidden_dim)
        self.b_h = rng.uniform(-bh, bh, hidden_dim)

    def params(self) -> dict[str, Tensor]:
        return {name: getattr(self, name) for name in self.PARAM_NAMES}


@dataclass
class ImageProjector:
    """Trainable affine head over ingested image feature vectors."""

    weight: Tensor  # (joint_dim, feature_dim)
    bias: Tensor  # (joint_dim,)

    @classmethod
    def create(cls, joint_dim: int, feature_dim: int, seed: int = 0) -> "ImageProjector":
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(feature_dim)
        return cls(
            weight=rng.uniform(-bound, bound, (joint_dim, feature_dim)),
            bias=rng.uniform(-bound, bound, joint_dim),
        )

    def params(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


def _sigmoid(x: Tensor) -> Tensor:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gru_forward(
    tokens: np.ndarray,
    lengths: np.ndarray,
    table: Tensor,
    gru: GruEncoder,
) -> tuple[Tensor, list]:
    """Run the GRU over a padded batch; returns final hidden states and a cache.

    Steps at or past a row's length are masked: the hidden state is carried
    through unchanged, so trailing padding never affects the output.
    """
    batch, steps = tokens.shape
    h = np.zeros((batch, gru.hidden_dim))
    cache = []
    for t in range(steps):
        tok = tokens[:, t]
        e = table[tok]
        mask = (t < lengths).astype(np.float64)[:, None]
        z = _sigmoid(e @ gru.w_z.T + h @ gru.u_z.T + gru.b_z)
        r = _sigmoid(e @ gru.w_r.T + h @ gru.u_r.T + gru.b_r)
        g = np.tanh(e @ gru.w_h.T + (r * h) @ gru.u_h.T + gru.b_h)
        h_new = (1.0 - z) * h + z * g
        cache.append((tok, e, h, z, r, g, mask))
        h = mask * h_new + (1.0 - mask) * h
    return h, cache


def gru_backward(
    d_final: Tensor,
    cache: list,
    gru: GruEncoder,
    grads: dict[str, Tensor],
    table_grad: Tensor | None,
) -> None:
    """Backpropagate through time, accumulating into ``grads`` and ``table_grad``.

    ``grads`` must hold arrays keyed like GruEncoder.PARAM_NAMES; pass
    ``table_grad=None`` for a frozen embedding table.
    """
    dh = d_final.copy()
    for tok, e, h_prev, z, r, g, mask in reversed(cache):
        dh_new = dh * mask
        dh_prev = dh * (1.0 - mask)

        dz = dh_new * (g - h_prev)
        dg = dh_new * z
        dh_prev += dh_new * (1.0 - z)

        da_h = dg * (1.0 - g * g)
        grads["w_h"] += da_h.T @ e
        grads["u_h"] += da_h.T @ (r * h_prev)
        grads["b_h"] += da_h.sum(axis=0)
        de = da_h @ gru.w_h
        drh = da_h @ gru.u_h
        dr = drh * h_prev
        dh_prev += drh * r

        da_r = dr * r * (1.0 - r)
        grads["w_r"] += da_r.T @ e
        grads["u_r"] += da_r.T @ h_prev
        grads["b_r"] += da_r.sum(axis=0)
        de += da_r @ gru.w_r
        dh_prev += da_r @ gru.u_r

        da_z = dz * z * (1.0 - z)
        grads["w_z"] += da_z.T @ e
        grads["u_z"] += da_z.T @ h_prev
        grads["b_z"] += da_z.sum(axis=0)
        de += da_z @ gru.w_z
        dh_prev += da_z @ gru.u_z

        if table_grad is not None:
            np.add.at(table_grad, tok, de)
        dh = dh_prev


def joint_normalize(h: Tensor, mode: str) -> tuple[Tensor, dict]:
    """Apply the mode-dependent output map row-wise; returns output and cache."""
    check_mode(mode)
    if mode == ASYMMETRIC:
        sign = np.sign(h)
        a = np.abs(h)
    else:
        sign = None
        a = h
    norms = np.linalg.norm(a, axis=1)
    if np.any(norms == 0.0):
        rows = np.flatnonzero(norms == 0.0)[:5].tolist()
        raise DegenerateInputError(f"degenerate embedding: zero vector at row(s) {rows}")
    out = a / norms[:, None]
    return out, {"out": out, "norms": norms, "sign": sign}


def joint_normalize_backward(d_out: Tensor, cache: dict) -> Tensor:
    out, norms, sign = cache["out"], cache["norms"], cache["sign"]
    inner = np.sum(out * d_out, axis=1, keepdims=True)
    da = (d_out - out * inner) / norms[:, None]
    if sign is not None:
        da = da * sign
    return da


def encode_captions_batch(
    tokens: np.ndarray,
    lengths: np.ndarray,
    table: Tensor,
    gru: GruEncoder,
    mode: str,
) -> tuple[Tensor, dict]:
    """Batched caption encoding; returns (batch, joint_dim) unit rows and a cache."""
    if tokens.ndim != 2:
        raise ShapeError(f"token matrix must be 2-d, got shape {tokens.shape}")
    if np.any(lengths < 1):
        raise DegenerateInputError("every caption must contain at least one token")
    h, gru_cache = gru_forward(tokens, lengths, table, gru)
    out, norm_cache = joint_normalize(h, mode)
    return out, {"gru": gru_cache, "norm": norm_cache}


def encode_captions_backward(
    d_out: Tensor,
    cache: dict,
    gru: GruEncoder,
    grads: dict[str, Tensor],
    table_grad: Tensor | None,
) -> None:
    dh = joint_normalize_backward(d_out, cache["norm"])
    gru_backward(dh, cache["gru"], gru, grads, table_grad)


def encode_caption(
    tokens,
    language: str,
    tables: dict[str, EmbeddingTable],
    gru: GruEncoder,
    mode: str,
) -> JointVector:
    """Encode a single token index sequence for one language."""
    idx = np.asarray(tokens, dtype=np.int64)
    if idx.size == 0:
        raise DegenerateInputError("cannot encode an empty token sequence")
    if language not in tables:
        raise ContractError(f"no embedding table for language {language!r}")
    out, _ = encode_captions_batch(
        idx[None, :], np.array([idx.size]), tables[language].matrix, gru, mode
    )
    return JointVector(values=out[0], mode=mode)


def encode_images_batch(
    features: Tensor,
    proj: ImageProjector,
    mode: str,
) -> tuple[Tensor, dict]:
    """Batched image encoding: affine map then the same output map as captions."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != proj.weight.shape[1]:
        raise ShapeError(
            f"feature matrix {features.shape} does not match projector "
            f"input dimension {proj.weight.shape[1]}"
        )
    h = features @ proj.weight.T + proj.bias
    out, norm_cache = joint_normalize(h, mode)
    return out, {"norm": norm_cache, "features": features}


def encode_images_backward(
    d_out: Tensor,
    cache: dict,
    grads: dict[str, Tensor],
) -> None:
    dh = joint_normalize_backward(d_out, cache["norm"])
    grads["weight"] += dh.T @ cache["features"]
    grads["bias"] += dh.sum(axis=0)


def encode_image(feature: Tensor, proj: ImageProjector, mode: str) -> JointVector:
    """Encode one precomputed image feature vector."""
    vec = np.asarray(feature, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != proj.weight.shape[1]:
        raise ShapeError(
            f"feature of shape {vec.shape} does not match projector "
            f"input dimension {proj.weight.shape[1]}"
        )
    out, _ = encode_images_batch(vec[None, :], proj, mode)
    return JointVector(values=out[0], mode=mode)
