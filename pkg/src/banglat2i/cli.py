"""Command-line pipeline: toygen, train-damsm, train-gan, train-classifier,
generate, evaluate.

Exit codes are a stable scripting contract: 0 success, 2 usage, 3 I/O,
4 training failure, 5 incompatible components. Every output directory gets
exactly one run manifest; repeated runs with the same seed and config produce
byte-identical numeric artifacts (timestamps live only in the manifest).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoints, textdata
from .attention import top_attended
from .config import config_dict, load_config
from .damsm import history_csv, load_images, train_damsm
from .encoders import text_encode
from .errors import (BanglaT2IError, ConfigError, EmptyCaptionError, IoError,
                     ShapeError, TrainingError)
from .gan import gan_history_csv, generate, train_gan
from .imageio import float_to_u8, write_ppm
from .manifest import ManifestWriter, file_checksum
from .metrics import evaluate_model, train_standin_classifier
from .numerics import RngStream, save_tensor
from .textdata import ToySpec, gen_toy_dataset, load_dataset, split_dataset, tokenize

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_TRAINING = 4
EXIT_INCOMPATIBLE = 5


class IncompatibleError(BanglaT2IError):
    pass


def _sig6(x: float) -> float:
    return float(f"{float(x):.6g}")


def cmd_toygen(args) -> int:
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    if args.size < 16:
        raise ConfigError("--size must be >= 16")
    spec = ToySpec(n_images=args.n, image_size=args.size, seed=args.seed,
                   captions_per_image=args.captions_per_image)
    writer = ManifestWriter("toygen", vars(args), {"toyspec": {
        "n_images": spec.n_images, "image_size": spec.image_size,
        "captions_per_image": spec.captions_per_image, "seed": spec.seed,
        "shapes": spec.shapes, "colors": [c for c, _ in spec.colors],
    }}, seeds={"toy": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = gen_toy_dataset(spec, out)
    writer.finish(out, artifacts={"n_images": len(records),
                                  "n_captions": sum(len(r.captions) for r in records)})
    print(f"wrote {len(records)} images with {spec.captions_per_image} captions each to {out}")
    return EXIT_OK


def _load_split(data_dir, cfg):
    ds = load_dataset(data_dir, max_len=cfg.textdata.max_len, min_freq=cfg.textdata.min_freq)
    split = split_dataset(ds.records, cfg.textdata.train_fraction, cfg.textdata.split_seed)
    return ds, split


def cmd_train_damsm(args) -> int:
    cfg = load_config(args.config, args.set)
    ds, split = _load_split(args.data, cfg)
    rng = RngStream(args.seed, "damsm")
    writer = ManifestWriter("train-damsm", vars(args), config_dict(cfg),
                            seeds={"damsm": args.seed, "split": cfg.textdata.split_seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text_enc, img_enc, history = train_damsm(
        split, len(ds.vocab), cfg.damsm, cfg.encoders, rng,
        log=lambda row: print(f"epoch {int(row['epoch']):3d}  total {row['total']:.4f}  "
                              f"top1 {row['top1_c2i']:.3f}", flush=True))
    (out / "history.csv").write_text(history_csv(history), encoding="utf-8", newline="\n")
    checkpoints.save_damsm_checkpoint(out, text_enc, img_enc, ds.vocab)
    writer.finish(out, artifacts={"epochs": len(history),
                                  "final_total": _sig6(history[-1]["total"])})
    print(f"DAMSM checkpoint written to {out}")
    return EXIT_OK


def cmd_train_gan(args) -> int:
    cfg = load_config(args.config, args.set)
    text_enc, img_enc, vocab, damsm_cfg_full = checkpoints.load_damsm_checkpoint(args.damsm)
    if cfg.encoders.dim != damsm_cfg_full.encoders.dim:
        raise IncompatibleError(
            f"encoder dim mismatch: config wants {cfg.encoders.dim}, "
            f"checkpoint was trained with {damsm_cfg_full.encoders.dim}")
    # caption processing must match the encoders' training-time setup
    cfg.textdata = damsm_cfg_full.textdata
    cfg.encoders = damsm_cfg_full.encoders
    cfg.damsm = damsm_cfg_full.damsm
    ds = load_dataset(args.data, max_len=cfg.textdata.max_len, min_freq=cfg.textdata.min_freq)
    if len(ds.vocab) != len(vocab):
        raise IncompatibleError(
            f"vocabulary size mismatch: dataset gives {len(ds.vocab)}, "
            f"checkpoint holds {len(vocab)}")
    split = split_dataset(ds.records, cfg.textdata.train_fraction, cfg.textdata.split_seed)
    rng = RngStream(args.seed, "gan")
    writer = ManifestWriter("train-gan", vars(args), config_dict(cfg),
                            seeds={"gan": args.seed, "split": cfg.textdata.split_seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gen, discs, history = train_gan(
        split, text_enc, img_enc, cfg.gan, cfg.damsm, rng,
        sample_dir=out / "samples",
        log=lambda row: print(f"epoch {int(row['epoch']):3d}  total {row['total']:.4f}  "
                              f"damsm {row['damsm']:.4f}", flush=True))
    (out / "history.csv").write_text(gan_history_csv(history), encoding="utf-8", newline="\n")
    checkpoints.save_gan_checkpoint(out, gen, discs, text_enc, img_enc, vocab)
    writer.finish(out, artifacts={"epochs": len(history),
                                  "final_total": _sig6(history[-1]["total"])})
    print(f"GAN checkpoint written to {out}")
    return EXIT_OK


def cmd_train_classifier(args) -> int:
    cfg = load_config(args.config, args.set)
    ds, split = _load_split(args.data, cfg)
    dtype = cfg.metrics.np_dtype
    train_images = load_images(split.train, dtype)
    train_labels = np.array([r.class_label for r in split.train])
    test_images = load_images(split.test, dtype)
    test_labels = np.array([r.class_label for r in split.test])
    rng = RngStream(args.seed, "classifier")
    writer = ManifestWriter("train-classifier", vars(args), config_dict(cfg),
                            seeds={"classifier": args.seed, "split": cfg.textdata.split_seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clf, accuracy = train_standin_classifier(
        train_images, train_labels, test_images, test_labels,
        ds.n_classes, ds.image_size, cfg.metrics, rng, n_shapes=args.n_shapes)
    checkpoints.save_classifier_checkpoint(out, clf)
    writer.finish(out, artifacts={"classifier": {
        "n_classes": ds.n_classes, "image_size": ds.image_size,
        "n_shapes": args.n_shapes, "held_out_accuracy": _sig6(accuracy),
    }})
    print(f"classifier written to {out} (held-out accuracy {accuracy:.3f})")
    return EXIT_OK


def cmd_generate(args) -> int:
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    gen, text_enc, _, vocab, cfg = checkpoints.load_gan_checkpoint(args.ckpt)
    tokens = tokenize(args.caption)
    if not tokens:
        raise ConfigError("caption is empty after tokenization")
    caption = textdata.encode_caption(vocab, tokens, cfg.textdata.max_len)
    ids = np.tile(caption.ids, (args.n, 1))
    lengths = np.full(args.n, caption.length)
    rng = RngStream(args.seed, "generate")
    writer = ManifestWriter("generate", vars(args), config_dict(cfg),
                            seeds={"generate": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    words, sentence = text_encode(text_enc, ids, lengths)
    pyramid = generate(gen, rng.normal((args.n, cfg.gan.z_dim)), sentence, words)
    for i in range(args.n):
        for stage, img in enumerate(pyramid.images):
            write_ppm(out / f"img_{i:03d}_stage{stage}.ppm", float_to_u8(img.data[i]))
    for stage_idx, alpha in enumerate(pyramid.attn, start=1):
        save_tensor(out / f"alpha_stage{stage_idx}.t2it", alpha.data)
        lines = []
        for i in range(args.n):
            pairs = top_attended(alpha.data[i], caption, 5, vocab)
            lines.append(json.dumps({
                "item": i, "stage": stage_idx,
                "tokens": [t for t, _ in pairs],
                "scores": [round(s, 6) for _, s in pairs],
            }, ensure_ascii=False))
        (out / f"attn_stage{stage_idx}.jsonl").write_text(
            "".join(line + "\n" for line in lines), encoding="utf-8", newline="\n")
    writer.finish(out, artifacts={"n_pyramids": args.n})
    print(f"wrote {args.n} image pyramids to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.set)
    gen, text_enc, _, vocab, ckpt_cfg = checkpoints.load_gan_checkpoint(args.ckpt)
    clf, clf_meta = checkpoints.load_classifier_checkpoint(args.classifier)
    stage2_size = 32
    if clf.image_size != stage2_size:
        raise IncompatibleError(
            f"classifier expects {clf.image_size}px input, generator produces {stage2_size}px")
    cfg.textdata = ckpt_cfg.textdata
    ds = load_dataset(args.data, max_len=cfg.textdata.max_len, min_freq=cfg.textdata.min_freq)
    if len(ds.vocab) != len(vocab):
        raise IncompatibleError(
            f"vocabulary size mismatch: dataset gives {len(ds.vocab)}, "
            f"checkpoint holds {len(vocab)}")
    split = split_dataset(ds.records, cfg.textdata.train_fraction, cfg.textdata.split_seed)
    rng = RngStream(args.seed, "evaluate")
    writer = ManifestWriter("evaluate", vars(args), config_dict(cfg),
                            seeds={"evaluate": args.seed, "split": cfg.textdata.split_seed})
    real_images = load_images(split.test, cfg.metrics.np_dtype)
    fid_result, is_result, extras = evaluate_model(
        gen, text_enc, clf, split.test, real_images, cfg.metrics, ckpt_cfg.gan.z_dim, rng)
    classifier_id = file_checksum(Path(args.classifier) / checkpoints.CHECKPOINT_DIR / "index.json")
    import time as _time

    writer.record["finished_at"] = _time.strftime("%Y-%m-%dT%H:%M:%S%z")
    report = {
        "fid": _sig6(fid_result.fid),
        "fid_mean_term": _sig6(fid_result.mean_term),
        "fid_trace_term": _sig6(fid_result.trace_term),
        "is_mean": _sig6(is_result.mean),
        "is_std": _sig6(is_result.std),
        "n_samples": extras["n_samples"],
        "splits": is_result.splits,
        "classifier_id": classifier_id,
        "seed": args.seed,
        "manifest": writer.record,
    }
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"fid {report['fid']}  is {report['is_mean']} +/- {report['is_std']} -> {out_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="banglat2i",
        description="Bangla attentional text-to-image pipeline (toy scale, deterministic)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toygen", help="generate the synthetic colored-shapes dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--n", type=int, required=True, help="number of images")
    p.add_argument("--size", type=int, default=32, help="image side length (default 32)")
    p.add_argument("--seed", type=int, default=0, help="generation seed (default 0)")
    p.add_argument("--captions-per-image", type=int, default=10,
                   help="captions per image (default 10)")
    p.set_defaults(func=cmd_toygen)

    def add_common(p):
        p.add_argument("--config", default=None, help="INI-style config file")
        p.add_argument("--seed", type=int, default=0, help="training seed (default 0)")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")

    p = sub.add_parser("train-damsm", help="pretrain the text/image matching encoders")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    add_common(p)
    p.set_defaults(func=cmd_train_damsm)

    p = sub.add_parser("train-gan", help="train the staged generator against the encoders")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--damsm", required=True, help="DAMSM checkpoint directory")
    p.add_argument("--out", required=True, help="output directory")
    add_common(p)
    p.set_defaults(func=cmd_train_gan)

    p = sub.add_parser("train-classifier", help="train the evaluation classifier")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-shapes", type=int, default=3,
                   help="shape count for the factored head (default 3)")
    add_common(p)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("generate", help="generate image pyramids for a caption")
    p.add_argument("--ckpt", required=True, help="GAN checkpoint directory")
    p.add_argument("--caption", required=True, help="Bangla caption text")
    p.add_argument("--n", type=int, default=1, help="number of pyramids (default 1)")
    p.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="compute FID and the diversity score")
    p.add_argument("--ckpt", required=True, help="GAN checkpoint directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--classifier", required=True, help="classifier checkpoint directory")
    p.add_argument("--out", required=True, help="output JSON file")
    add_common(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EmptyCaptionError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IncompatibleError as exc:
        print(f"incompatible components: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except ShapeError as exc:
        print(f"incompatible components: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (IoError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BanglaT2IError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
