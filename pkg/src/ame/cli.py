"""Command-line front end: train, evaluate, translate.

Exit codes: 0 success, 2 configuration or user error, 3 numeric failure.
The seed in the run config can be overridden with the AME_SEED environment
variable. All outputs land under the chosen output directory with fixed
names: metrics.csv, alignment_curve.svg, model.ckpt, and
report_<task>_<direction>.csv.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import alignment as align_mod
from . import training as train_mod
from .data import (
    BilingualLexicon,
    build_vocabularies,
    encode_dataset,
    load_captions,
    load_embeddings,
    load_features,
)
from .errors import AmeError, ConfigError, NumericError
from .evaluation import caption_caption_eval, evaluate_retrieval
from .fixtures import build_fixture, write_fixture_files

CONFIG_PATH_KEYS = (
    "captions_train",
    "captions_val",
    "captions_test",
    "features",
    "embeddings",
    "lexicon_train",
    "lexicon_eval",
)
CONFIG_EXTRA_KEYS = ("languages", "output_dir")


def _load_run_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    train_keys = set(train_mod.TrainConfig().as_dict())
    allowed = train_keys | set(CONFIG_PATH_KEYS) | set(CONFIG_EXTRA_KEYS)
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown config key(s): {unknown}")
    for key in ("captions_train", "captions_val", "features", "lexicon_train", "lexicon_eval"):
        if key not in doc:
            raise ConfigError(f"missing config key {key!r}")
    if "languages" not in doc or len(doc["languages"]) != 2:
        raise ConfigError("config must list exactly two languages")
    if "embeddings" not in doc or sorted(doc["embeddings"]) != sorted(doc["languages"]):
        raise ConfigError("config needs one embeddings path per language")
    base = os.path.dirname(os.path.abspath(path))
    for key in CONFIG_PATH_KEYS:
        if key not in doc or key == "embeddings":
            continue
        doc[key] = os.path.join(base, doc[key])
        if not os.path.exists(doc[key]):
            raise ConfigError(f"{key} file does not exist: {doc[key]}")
    resolved = {}
    for lang, p in doc["embeddings"].items():
        resolved[lang] = os.path.join(base, p)
        if not os.path.exists(resolved[lang]):
            raise ConfigError(f"embeddings file does not exist: {resolved[lang]}")
    doc["embeddings"] = resolved
    return doc


def _train_config(doc: dict) -> train_mod.TrainConfig:
    kwargs = {k: v for k, v in doc.items() if k in train_mod.TrainConfig().as_dict()}
    if "AME_SEED" in os.environ:
        kwargs["seed"] = int(os.environ["AME_SEED"])
    return train_mod.TrainConfig(**kwargs)


def _load_inputs(doc: dict, config: train_mod.TrainConfig):
    features = load_features(doc["features"])
    train_rows = load_captions(doc["captions_train"])
    vocabs = build_vocabularies(train_rows)
    # config order is meaningful: languages[0] is the lexicon source side
    src_lang, tgt_lang = doc["languages"]
    if sorted(vocabs) != sorted(doc["languages"]):
        raise ConfigError(
            f"caption languages {sorted(vocabs)} do not match config {sorted(doc['languages'])}"
        )
    train_ds = encode_dataset(train_rows, vocabs, features, split="train")
    val_ds = encode_dataset(load_captions(doc["captions_val"]), vocabs, features, split="val")
    embeddings = {
        lang: load_embeddings(doc["embeddings"][lang], vocabs[lang], config.embed_dim, seed=config.seed)
        for lang in vocabs
    }
    lexicon = BilingualLexicon.from_files(
        doc["lexicon_train"], doc["lexicon_eval"], vocabs[src_lang], vocabs[tgt_lang]
    )
    return vocabs, train_ds, val_ds, embeddings, lexicon


def alignment_curve_svg(values: list[float], width: int = 640, height: int = 320) -> str:
    """Minimal line chart of alignment ratio per validation step."""
    pad = 40
    plot_w, plot_h = width - 2 * pad, height - 2 * pad
    n = max(len(values), 1)
    points = []
    for i, v in enumerate(values):
        x = pad + (plot_w * i / max(n - 1, 1))
        y = pad + plot_h * (1.0 - min(max(v, 0.0), 1.0))
        points.append(f"{x:.1f},{y:.1f}")
    ticks = []
    for frac in (0.0, 0.5, 1.0):
        y = pad + plot_h * (1.0 - frac)
        ticks.append(
            f'<text x="{pad - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="12">{frac:.1f}</text>'
        )
        ticks.append(
            f'<line x1="{pad - 4}" y1="{y:.1f}" x2="{pad}" y2="{y:.1f}" stroke="black"/>'
        )
    polyline = (
        f'<polyline fill="none" stroke="steelblue" stroke-width="2" points="{" ".join(points)}"/>'
        if points
        else ""
    )
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>\n'
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>\n'
        f'{"".join(ticks)}\n'
        f"{polyline}\n"
        f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="12">'
        f"validation step</text>\n"
        f'<text x="12" y="{height / 2:.0f}" font-size="12" transform="rotate(-90 12 {height / 2:.0f})" '
        f'text-anchor="middle">alignment ratio</text>\n'
        f"</svg>\n"
    )


def cmd_train(args) -> int:
    doc = _load_run_config(args.config)
    out_dir = args.out or doc.get("output_dir")
    if not out_dir:
        raise ConfigError("no output directory: pass --out or set output_dir in the config")
    os.makedirs(out_dir, exist_ok=True)
    config = _train_config(doc)
    vocabs, train_ds, val_ds, embeddings, lexicon = _load_inputs(doc, config)
    result = train_mod.train(config, train_ds, val_ds, vocabs, embeddings, lexicon)

    train_mod.write_metrics_csv(result.metrics, os.path.join(out_dir, "metrics.csv"))
    curve = [row["alignment_ratio"] for row in result.metrics]
    with open(os.path.join(out_dir, "alignment_curve.svg"), "w", encoding="utf-8") as fh:
        fh.write(alignment_curve_svg(curve))
    train_mod.save_checkpoint(result.checkpoint, os.path.join(out_dir, "model.ckpt"))
    final = result.metrics[-1] if result.metrics else {}
    print(f"trained {len(result.metrics)} epoch(s); outputs in {out_dir}")
    if final:
        print(
            f"final: r1_i2t={final['r1_i2t']:.1f} r1_t2i={final['r1_t2i']:.1f} "
            f"alignment_ratio={final['alignment_ratio']:.3f}"
        )
    return 0


def _report_table(reports, with_alignment) -> str:
    lines = ["direction     R@1    R@5    R@10   Mr     Alignment"]
    for rep in reports:
        align = f"{100.0 * with_alignment:.2f}%" if with_alignment is not None else "-"
        lines.append(
            f"{rep.direction:<12}  {rep.r1:<5.1f}  {rep.r5:<5.1f}  {rep.r10:<6.1f} "
            f"{rep.median_rank:<6.1f} {align}"
        )
    return "\n".join(lines)


def cmd_evaluate(args) -> int:
    doc = _load_run_config(args.config)
    out_dir = args.out or doc.get("output_dir")
    ckpt = train_mod.load_checkpoint(args.checkpoint)
    config = _train_config(doc)
    vocabs, train_ds, val_ds, embeddings, lexicon = _load_inputs(doc, config)
    model = train_mod.model_from_checkpoint(ckpt, vocabs)

    test_path = doc.get("captions_test")
    rows = load_captions(test_path) if test_path else None
    ds = (
        encode_dataset(rows, vocabs, train_ds.images, split="test")
        if rows is not None
        else val_ds
    )

    src_lang, tgt_lang = lexicon.source_language, lexicon.target_language
    ratio = align_mod.alignment_ratio(
        lexicon.eval_pairs,
        model.tables[src_lang].matrix,
        model.tables[tgt_lang].matrix,
        model.mapping.matrix,
        config.k,
        src_pool=model.candidate_pool(src_lang),
        tgt_pool=model.candidate_pool(tgt_lang),
    )

    reports = []
    if args.task == "retrieval":
        language = args.language or config.primary_language or src_lang
        directions = ["i2t", "t2i"] if args.direction == "both" else [args.direction]
        for direction in directions:
            reports.append(evaluate_retrieval(model, ds, language, direction, folds=args.folds))
    else:
        directions = ["x2y", "y2x"] if args.direction == "both" else [args.direction]
        for direction in directions:
            src, tgt = (src_lang, tgt_lang) if direction == "x2y" else (tgt_lang, src_lang)
            reports.append(caption_caption_eval(model, ds, src, tgt))

    print(_report_table(reports, ratio))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        for rep, direction in zip(reports, directions):
            path = os.path.join(out_dir, f"report_{args.task}_{direction}.csv")
            row = rep.as_row()
            row["alignment"] = ratio
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(",".join(row.keys()) + "\n")
                fh.write(",".join(str(v) for v in row.values()) + "\n")
    return 0


def cmd_translate(args) -> int:
    doc = _load_run_config(args.config)
    ckpt = train_mod.load_checkpoint(args.checkpoint)
    config = _train_config(doc)
    vocabs, _, _, _, lexicon = _load_inputs(doc, config)
    model = train_mod.model_from_checkpoint(ckpt, vocabs)
    src_lang, tgt_lang = lexicon.source_language, lexicon.target_language
    src_vocab, tgt_vocab = vocabs[src_lang], vocabs[tgt_lang]
    if args.word not in src_vocab.index or src_vocab.index[args.word] < 2:
        raise ConfigError(f"word {args.word!r} is not in the {src_lang!r} vocabulary")
    topk = args.topk
    pool = model.candidate_pool(tgt_lang)
    if topk > pool.size:
        print(f"warning: --topk {topk} exceeds vocabulary, clipping to {pool.size}", file=sys.stderr)
        topk = pool.size

    query = src_vocab.index[args.word]
    scores, tgt_pool = align_mod.csls_scores(
        [query],
        model.tables[src_lang].matrix,
        model.tables[tgt_lang].matrix,
        model.mapping.matrix,
        config.k,
        src_pool=model.candidate_pool(src_lang),
        tgt_pool=pool,
    )
    order = np.argsort(-scores[0], kind="stable")[:topk]
    for rank, pos in enumerate(order, start=1):
        print(f"{rank}\t{tgt_vocab.tokens[int(tgt_pool[pos])]}\t{scores[0][pos]:.6f}")
    return 0


def cmd_make_fixture(args) -> int:
    fixture = build_fixture(
        n_images=args.images,
        feature_dim=args.feature_dim,
        embed_dim=args.embed_dim,
        lexicon_size=args.lexicon_size,
        seed=args.seed,
    )
    paths = write_fixture_files(fixture, args.out)
    config = {
        "languages": ["en", "de"],
        "captions_train": os.path.basename(paths["captions"]),
        "captions_val": os.path.basename(paths["captions"]),
        "features": os.path.basename(paths["features"]),
        "embeddings": {
            "en": os.path.basename(paths["embeddings_x"]),
            "de": os.path.basename(paths["embeddings_y"]),
        },
        "lexicon_train": os.path.basename(paths["lexicon_train"]),
        "lexicon_eval": os.path.basename(paths["lexicon_eval"]),
        "embed_dim": args.embed_dim,
        "joint_dim": args.joint_dim,
        "batch_size": 16,
        "epochs": 40,
        "decay_epoch": 30,
        "learning_rate": 0.004,
        "align_every": 8,
        "lr_align": 0.5,
        "k": 5,
        "patience": 40,
        "seed": args.seed,
    }
    config_path = os.path.join(args.out, "run.json")
    with open(config_path, "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2)
        fh.write("\n")
    print(f"fixture written to {args.out} (config: {config_path})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ame", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a run config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", help="output directory (overrides config)")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--task", choices=["retrieval", "caption"], default="retrieval")
    p_eval.add_argument("--direction", default="both")
    p_eval.add_argument("--folds", type=int, default=1)
    p_eval.add_argument("--language", help="caption language for retrieval (default: primary)")
    p_eval.add_argument("--out", help="directory for report CSVs")
    p_eval.set_defaults(func=cmd_evaluate)

    p_tr = sub.add_parser("translate", help="translate a source word")
    p_tr.add_argument("--checkpoint", required=True)
    p_tr.add_argument("--config", required=True)
    p_tr.add_argument("--word", required=True)
    p_tr.add_argument("--topk", type=int, default=5)
    p_tr.set_defaults(func=cmd_translate)

    p_fx = sub.add_parser("make-fixture", help="generate a synthetic two-language corpus")
    p_fx.add_argument("--out", required=True)
    p_fx.add_argument("--images", type=int, default=64)
    p_fx.add_argument("--feature-dim", type=int, default=64)
    p_fx.add_argument("--embed-dim", type=int, default=16)
    p_fx.add_argument("--joint-dim", type=int, default=32)
    p_fx.add_argument("--lexicon-size", type=int, default=40)
    p_fx.add_argument("--seed", type=int, default=0)
    p_fx.set_defaults(func=cmd_make_fixture)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (AmeError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
