"""Training loop: Adam on the ranking loss, periodic alignment updates,
learning-rate decay, early stopping, metrics logging, and checkpoints.

Every step encodes one batch per language, accumulates hand-derived
gradients of the ranking loss into the shared parameters, clips the global
gradient norm, and applies a bias-corrected Adam update. Every
``align_every`` steps (full model only) the bilingual map and the word
embeddings take one alignment descent step followed by an orthogonal
projection of the map. Validation runs once per epoch; the best checkpoint
by validation score is retained and training stops early after ``patience``
validation passes without improvement.

Model variants:

* ``ame``     full objective (ranking + alignment updates);
* ``noalign`` ranking only, embeddings still trainable;
* ``fme``     frozen embeddings, identity map, ranking only;
* ``mono``    single-language ranking only.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import alignment as align_mod
from .data import BilingualLexicon, CaptionDataset, Vocabulary, make_batches
from .encoders import ASYMMETRIC, SYMMETRIC, check_mode
from .errors import (
    ConfigError,
    FormatError,
    IncompatibleCheckpointError,
    NumericError,
)
from .evaluation import I2T, T2I, evaluate_fold
from .losses import ranking_loss, total_loss
from .model import Model, vocab_hashes
from .numerics import ParamSet
from .similarity import similarity_backward, similarity_values

ABLATIONS = ("ame", "noalign", "fme", "mono")

CHECKPOINT_MAGIC = b"AMECKPT1"
CHECKPOINT_VERSION = 1

METRICS_HEADER = (
    "epoch,step,loss_ranking,loss_align,r1_i2t,r1_t2i,r5_i2t,r5_t2i,"
    "mr_i2t,mr_t2i,alignment_ratio,lr"
)

DEFAULT_MARGINS = {SYMMETRIC: 0.2, ASYMMETRIC: 0.05}


@dataclass
class TrainConfig:
    """Hyperparameters; defaults follow the reference schedule for the
    smaller dataset (the larger-corpus settings are noted in parentheses)."""

    joint_dim: int = 1024
    embed_dim: int = 300
    batch_size: int = 128
    mode: str = SYMMETRIC
    margin: float | None = None  # defaults by mode: 0.2 symmetric, 0.05 asymmetric
    learning_rate: float = 0.00011  # (0.00006)
    epochs: int = 30  # (20)
    decay_epoch: int = 15  # (10)
    decay_factor: float = 10.0
    align_every: int = 500  # alignment update period T
    lr_align: float = 2.0  # (5)
    k: int = 5  # (4)
    seed: int = 0
    patience: int = 5
    align_sample: int = 5000
    grad_clip: float = 2.0
    ablation: str = "ame"
    primary_language: str | None = None

    def __post_init__(self):
        check_mode(self.mode)
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.margin is None:
            self.margin = DEFAULT_MARGINS[self.mode]
        positive = {
            "joint_dim": self.joint_dim,
            "embed_dim": self.embed_dim,
            "batch_size": self.batch_size,
            "margin": self.margin,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "decay_factor": self.decay_factor,
            "align_every": self.align_every,
            "lr_align": self.lr_align,
            "k": self.k,
            "patience": self.patience,
            "align_sample": self.align_sample,
            "grad_clip": self.grad_clip,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.batch_size < 2:
            raise ConfigError("batch size must be >= 2 for in-batch negatives")

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


class AdamState:
    """Per-parameter moment estimates for bias-corrected Adam."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(params: ParamSet, state: AdamState, lr: float) -> None:
    """One Adam update over all parameters; gradients are reset afterwards."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name, theta in params.params.items():
        grad = params.grads[name]
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        theta -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    params.zero_grads()


@dataclass
class Checkpoint:
    """Float32 parameter arrays plus enough metadata to validate reloads."""

    arrays: dict[str, np.ndarray]
    config: dict
    vocab_hashes: dict[str, bytes]
    best_score: float
    step: int


@dataclass
class TrainResult:
    model: Model
    checkpoint: Checkpoint
    metrics: list[dict] = field(default_factory=list)


def _array_order(languages: list[str]) -> list[str]:
    langs = sorted(languages)
    return [
        f"emb.{langs[0]}",
        f"emb.{langs[1]}",
        "gru.w_z",
        "gru.w_r",
        "gru.w_h",
        "gru.u_z",
        "gru.u_r",
        "gru.u_h",
        "gru.b_z",
        "gru.b_r",
        "gru.b_h",
        "proj.weight",
        "proj.bias",
        "map.w",
    ]


def train_step(model: Model, batch, pset: ParamSet, margin: float) -> tuple[float, int]:
    """Forward/backward for one batch; returns (ranking loss, active hinges).

    Gradients are accumulated into ``pset`` (caller applies the optimizer).
    """
    image_out, image_cache = model.encode_images(batch.features)
    d_images = np.zeros_like(image_out)
    loss_sum = 0.0
    hinge_count = 0
    for lang in sorted(batch.captions):
        tokens, lengths = batch.captions[lang]
        cap_out, cap_cache = model.encode_captions(lang, tokens, lengths)
        sims = similarity_values(cap_out, image_out, model.mode)
        loss, d_sims, active = ranking_loss(sims, margin)
        loss_sum += loss
        hinge_count += active
        d_caps, d_imgs = similarity_backward(cap_out, image_out, model.mode, d_sims)
        model.encode_captions_backward(lang, d_caps, cap_cache, pset)
        d_images += d_imgs
    model.encode_images_backward(d_images, image_cache, pset)
    return loss_sum, hinge_count


def _validate(model, val_ds, lexicon, config, pools):
    lang = config.primary_language
    reports = {
        I2T: evaluate_fold(model, val_ds, lang, I2T),
        T2I: evaluate_fold(model, val_ds, lang, T2I),
    }
    ratio = align_mod.alignment_ratio(
        lexicon.eval_pairs,
        model.tables[lexicon.source_language].matrix,
        model.tables[lexicon.target_language].matrix,
        model.mapping.matrix,
        config.k,
        src_pool=pools[0],
        tgt_pool=pools[1],
    )
    return reports, ratio


def train(
    config: TrainConfig,
    train_ds: CaptionDataset,
    val_ds: CaptionDataset,
    vocabs: dict[str, Vocabulary],
    embeddings: dict[str, np.ndarray],
    lexicon: BilingualLexicon,
) -> TrainResult:
    """Run the full schedule and return the best checkpoint plus metrics rows."""
    languages = sorted(vocabs)
    if len(languages) != 2:
        raise ConfigError(f"training expects exactly two languages, got {languages}")
    if {lexicon.source_language, lexicon.target_language} != set(languages):
        raise ConfigError(
            f"lexicon languages ({lexicon.source_language!r}, {lexicon.target_language!r}) "
            f"do not match dataset languages {languages}"
        )
    config = replace(config)  # defensive copy; margin default already resolved
    if config.primary_language is None:
        config.primary_language = lexicon.source_language
    if config.primary_language not in languages:
        raise ConfigError(f"primary language {config.primary_language!r} not in {languages}")
    for lang in languages:
        if embeddings[lang].shape != (vocabs[lang].size, config.embed_dim):
            raise ConfigError(
                f"embedding matrix for {lang!r} has shape {embeddings[lang].shape}, "
                f"expected ({vocabs[lang].size}, {config.embed_dim})"
            )
    lexicon.validate(vocabs)
    if not lexicon.eval_pairs:
        raise ConfigError("evaluation lexicon is empty")

    ablation = config.ablation
    model = Model.build(
        languages,
        embeddings,
        joint_dim=config.joint_dim,
        feature_dim=train_ds.images.dim,
        mode=config.mode,
        seed=config.seed,
        trainable_embeddings=ablation != "fme",
    )
    if ablation == "mono":
        train_ds = train_ds.filter_language(config.primary_language)
        val_fit = val_ds.filter_language(config.primary_language)
    else:
        val_fit = val_ds
    train_ds.validate_indices(vocabs)
    val_ds.validate_indices(vocabs)

    pset = model.param_set()
    adam = AdamState()
    pools = (
        model.candidate_pool(lexicon.source_language),
        model.candidate_pool(lexicon.target_language),
    )

    lr = config.learning_rate
    step = 0
    best_score = -np.inf
    best_snapshot = model.snapshot()
    best_step = 0
    stale = 0
    metrics: list[dict] = []

    for epoch in range(config.epochs):
        if epoch == config.decay_epoch:
            lr /= config.decay_factor
        epoch_rank_losses = []
        epoch_align_losses = []
        for batch in make_batches(train_ds, config.batch_size, config.seed, epoch):
            loss, _ = train_step(model, batch, pset, config.margin)
            epoch_rank_losses.append(loss)
            pset.clip_grad_norm(config.grad_clip)
            adam_step(pset, adam, lr)
            step += 1
            if ablation == "ame" and step % config.align_every == 0:
                rng = np.random.default_rng([config.seed, 9176, step])
                align_loss = align_mod.alignment_update(
                    model.tables[lexicon.source_language],
                    model.tables[lexicon.target_language],
                    model.mapping,
                    lexicon.train_pairs,
                    config.k,
                    config.lr_align,
                    src_pool=pools[0],
                    tgt_pool=pools[1],
                    step=step,
                    rng=rng,
                    sample_size=min(len(lexicon.train_pairs), config.align_sample),
                )
                epoch_align_losses.append(align_loss)

        reports, ratio = _validate(model, val_fit, lexicon, config, pools)
        row = {
            "epoch": epoch,
            "step": step,
            "loss_ranking": float(np.mean(epoch_rank_losses)) if epoch_rank_losses else 0.0,
            "loss_align": float(np.mean(epoch_align_losses)) if epoch_align_losses else 0.0,
            "r1_i2t": reports[I2T].r1,
            "r1_t2i": reports[T2I].r1,
            "r5_i2t": reports[I2T].r5,
            "r5_t2i": reports[T2I].r5,
            "mr_i2t": reports[I2T].median_rank,
            "mr_t2i": reports[T2I].median_rank,
            "alignment_ratio": ratio,
            "lr": lr,
        }
        metrics.append(row)

        score = row["r1_i2t"] + row["r1_t2i"] + row["r5_i2t"] + row["r5_t2i"]
        if score > best_score:
            best_score = score
            best_snapshot = model.snapshot()
            best_step = step
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    checkpoint = Checkpoint(
        arrays={k: v.astype(np.float32) for k, v in best_snapshot.items()},
        config=config.as_dict(),
        vocab_hashes=vocab_hashes(vocabs),
        best_score=float(best_score),
        step=best_step,
    )
    return TrainResult(model=model, checkpoint=checkpoint, metrics=metrics)


def metrics_csv(rows: list[dict]) -> str:
    """Render metrics rows with stable byte-exact formatting."""
    lines = [METRICS_HEADER]
    for row in rows:
        lines.append(
            ",".join(
                _fmt(row[key])
                for key in METRICS_HEADER.split(",")
            )
        )
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(metrics_csv(rows))


def checkpoint_from_model(
    model: Model,
    config: TrainConfig,
    vocabs: dict[str, Vocabulary],
    best_score: float = 0.0,
    step: int = 0,
) -> Checkpoint:
    return Checkpoint(
        arrays={k: v.astype(np.float32) for k, v in model.snapshot().items()},
        config=config.as_dict(),
        vocab_hashes=vocab_hashes(vocabs),
        best_score=best_score,
        step=step,
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Serialize to the fixed binary layout (see module docstring in data)."""
    languages = sorted(ckpt.vocab_hashes)
    if len(languages) != 2:
        raise ConfigError("checkpoint requires exactly two languages")
    order = _array_order(languages)
    d = ckpt.arrays[order[0]].shape[1]
    m = ckpt.arrays["gru.w_z"].shape[0]
    feat = ckpt.arrays["proj.weight"].shape[1]
    meta = dict(ckpt.config)
    meta["languages"] = languages
    meta["best_score"] = ckpt.best_score
    meta["step"] = ckpt.step
    payload = json.dumps(meta, sort_keys=True).encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIII", CHECKPOINT_VERSION, d, m, feat))
        for name in order:
            arr = np.atleast_2d(ckpt.arrays[name].astype("<f4"))
            fh.write(struct.pack("<I", arr.shape[0]))
            fh.write(arr.tobytes())
        fh.write(struct.pack("<I", len(languages)))
        for lang in languages:
            fh.write(ckpt.vocab_hashes[lang])
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)


def _read_exact(fh, n: int, what: str) -> bytes:
    blob = fh.read(n)
    if len(blob) != n:
        raise FormatError(f"truncated checkpoint while reading {what}")
    return blob


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read_exact(fh, 8, "magic") != CHECKPOINT_MAGIC:
            raise FormatError("bad checkpoint magic")
        version, d, m, feat = struct.unpack("<IIII", _read_exact(fh, 16, "header"))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        # rows are stored per array; columns follow from the header dims
        cols = {
            "emb": d, "gru.w": d, "gru.u": m, "gru.b": m,
            "proj.weight": feat, "proj.bias": m, "map.w": d,
        }
        raw: list[np.ndarray] = []
        for prefix in (
            "emb", "emb", "gru.w", "gru.w", "gru.w", "gru.u", "gru.u", "gru.u",
            "gru.b", "gru.b", "gru.b", "proj.weight", "proj.bias", "map.w",
        ):
            (rows,) = struct.unpack("<I", _read_exact(fh, 4, "row count"))
            width = cols[prefix]
            data = np.frombuffer(
                _read_exact(fh, 4 * rows * width, "array payload"), dtype="<f4"
            ).reshape(rows, width)
            raw.append(data)
        (n_langs,) = struct.unpack("<I", _read_exact(fh, 4, "hash count"))
        hashes = [_read_exact(fh, 8, "vocab hash") for _ in range(n_langs)]
        (json_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        meta = json.loads(_read_exact(fh, json_len, "config").decode("utf-8"))

    languages = meta.get("languages")
    if not isinstance(languages, list) or len(languages) != n_langs:
        raise FormatError("checkpoint config does not list its languages")
    order = _array_order(languages)
    arrays = {}
    for name, data in zip(order, raw):
        arrays[name] = data[0] if name.startswith("gru.b") or name == "proj.bias" else data
    return Checkpoint(
        arrays=arrays,
        config={k: v for k, v in meta.items() if k not in ("languages", "best_score", "step")},
        vocab_hashes=dict(zip(languages, hashes)),
        best_score=float(meta.get("best_score", 0.0)),
        step=int(meta.get("step", 0)),
    )


def verify_checkpoint(ckpt: Checkpoint, vocabs: dict[str, Vocabulary]) -> None:
    """Raise unless the checkpoint was produced with these vocabularies."""
    expected = vocab_hashes(vocabs)
    if sorted(expected) != sorted(ckpt.vocab_hashes):
        raise IncompatibleCheckpointError(
            f"checkpoint languages {sorted(ckpt.vocab_hashes)} != {sorted(expected)}"
        )
    for lang, digest in expected.items():
        if ckpt.vocab_hashes[lang] != digest:
            raise IncompatibleCheckpointError(f"vocabulary hash mismatch for {lang!r}")


def model_from_checkpoint(ckpt: Checkpoint, vocabs: dict[str, Vocabulary] | None = None) -> Model:
    """Rebuild a model from stored arrays; verifies vocab hashes when given."""
    if vocabs is not None:
        verify_checkpoint(ckpt, vocabs)
    languages = sorted(ckpt.vocab_hashes)
    cfg = ckpt.config
    embeddings = {lang: ckpt.arrays[f"emb.{lang}"].astype(np.float64) for lang in languages}
    model = Model.build(
        languages,
        embeddings,
        joint_dim=int(cfg["joint_dim"]),
        feature_dim=ckpt.arrays["proj.weight"].shape[1],
        mode=cfg["mode"],
        seed=int(cfg.get("seed", 0)),
        trainable_embeddings=cfg.get("ablation") != "fme",
    )
    snapshot = {k: v.astype(np.float64) for k, v in ckpt.arrays.items()}
    model.restore(snapshot)
    return model
