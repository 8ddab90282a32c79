"""Command line interface.

Subcommands: synth-data, train, reconstruct, pose-transfer,
subject-transfer, evaluate, visualize-attention. Exit codes: 0 success,
2 usage, 3 config error, 4 data error, 5 numeric error. Failures print one
line to stderr: "error: category=<config|data|numeric> <message>".
"""

from __future__ import annotations

import argparse
import os
import sys

import torch

from . import data as data_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_run_config
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .evaluate import evaluation_report, format_report
from .metrics import (EmbeddingSet, IdentityEmbedder, RandomConvEmbedder,
                      embed_images, frechet_distance, psnr)
from .training import fit, init_state
from .transfer import MixPlan, pose_transfer, reconstruct, subject_transfer
from .visualize import AttentionVizSpec, save_image, visualize_attention


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, default=None,
                        help="override the run seed")
    parser.add_argument("--config", default=None, help="flat key=value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")


def _run_config(args):
    cfg = load_run_config(args.config, args.set)
    if args.seed is not None:
        cfg.train.seed = args.seed
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scam",
                                     description="semantic attention image editing")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the synthetic shapes dataset")
    _common(p)
    p.add_argument("--root", required=True)
    p.add_argument("--train-count", type=int, default=2000)
    p.add_argument("--test-count", type=int, default=200)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--labels", type=int, default=3)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train on a prepared dataset")
    _common(p)
    p.add_argument("--checkpoint", default=None,
                   help="checkpoint path (default: <out_dir>/model.ckpt)")
    p.add_argument("--resume", action="store_true",
                   help="resume from the checkpoint if it exists")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="encode and decode one image")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("pose-transfer", help="decode style codes against a new mask")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--style-image", required=True)
    p.add_argument("--style-mask", required=True)
    p.add_argument("--pose-mask", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pose_transfer)

    p = sub.add_parser("subject-transfer",
                       help="swap a subject into another image's background")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--subject-image", required=True)
    p.add_argument("--subject-mask", required=True)
    p.add_argument("--background-image", required=True)
    p.add_argument("--background-mask", required=True)
    p.add_argument("--pose-mask", default=None,
                   help="defaults to the background mask")
    p.add_argument("--background-labels", default="0",
                   help="comma-separated labels taken from the background image")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_subject_transfer)

    p = sub.add_parser("evaluate", help="metric report for a model, or compare two dirs")
    _common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data-root", default=None)
    p.add_argument("--dir-a", default=None, help="direct mode: first image directory")
    p.add_argument("--dir-b", default=None, help="direct mode: second image directory")
    p.add_argument("--embedder", choices=("conv", "identity"), default="conv")
    p.add_argument("--num-pairs", type=int, default=50)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("visualize-attention",
                       help="color each pixel by its winning latent")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--block", type=int, default=-1)
    p.add_argument("--operation", choices=("op1", "op2", "rgb"), default="op2")
    p.set_defaults(func=cmd_visualize)

    return parser


def cmd_synth_data(args) -> int:
    cfg = _run_config(args)
    spec = data_mod.SyntheticSpec(image_size=args.size, num_labels=args.labels,
                                  train_count=args.train_count,
                                  test_count=args.test_count,
                                  seed=cfg.train.seed)
    data_mod.generate_synthetic(spec, args.root)
    print(f"wrote {args.train_count} train / {args.test_count} test items under {args.root}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    ckpt_path = args.checkpoint or os.path.join(cfg.train.out_dir, "model.ckpt")
    manifest = data_mod.load_manifest(
        cfg.data.root, cfg.data.train_split, cfg.model.num_labels,
        remap_file=cfg.data.remap_file,
        allow_missing_labels=cfg.data.allow_missing_labels)
    images, labels = data_mod.load_split_tensors(manifest)
    if args.resume and os.path.exists(ckpt_path):
        state = load_checkpoint(ckpt_path, expect_model_config=cfg.model)
        # The stored recipe governs optimizers and sampling; the current
        # invocation owns the schedule, so a finished run can be extended.
        state.train_config.steps = cfg.train.steps
        state.train_config.log_every = cfg.train.log_every
        state.train_config.checkpoint_every = cfg.train.checkpoint_every
        print(f"resumed from {ckpt_path} at step {state.step}")
    else:
        state = init_state(cfg.model, cfg.train)
    fit(state, images, labels, checkpoint_path=ckpt_path, log=print)
    print(f"saved {ckpt_path} at step {state.step}")
    return 0


def _load_pair(args_image, args_mask, num_labels):
    image = data_mod.load_image_file(args_image)
    mask = data_mod.load_mask_file(args_mask, num_labels)
    if image.shape[1:] != mask.labels.shape:
        raise DataError(f"image {tuple(image.shape[1:])} and mask "
                        f"{tuple(mask.labels.shape)} dims differ")
    return image, mask.labels


def cmd_reconstruct(args) -> int:
    state = load_checkpoint(args.checkpoint)
    image, labels = _load_pair(args.image, args.mask, state.model_config.num_labels)
    out = reconstruct(state, image, labels)
    save_image(out, args.out)
    print(f"wrote {args.out} (psnr vs input: {psnr(image, out):.2f} dB)")
    return 0


def cmd_pose_transfer(args) -> int:
    state = load_checkpoint(args.checkpoint)
    num_labels = state.model_config.num_labels
    style_image, style_labels = _load_pair(args.style_image, args.style_mask, num_labels)
    pose = data_mod.load_mask_file(args.pose_mask, num_labels)
    out = pose_transfer(state, style_image, style_labels, pose.labels)
    save_image(out, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_subject_transfer(args) -> int:
    state = load_checkpoint(args.checkpoint)
    num_labels = state.model_config.num_labels
    subject_image, subject_labels = _load_pair(
        args.subject_image, args.subject_mask, num_labels)
    background_image, background_labels = _load_pair(
        args.background_image, args.background_mask, num_labels)
    pose_labels = None
    if args.pose_mask:
        pose_labels = data_mod.load_mask_file(args.pose_mask, num_labels).labels
    try:
        bg_labels = tuple(int(v) for v in args.background_labels.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"--background-labels must be comma-separated ints, "
                          f"got {args.background_labels!r}") from None
    plan = MixPlan.default(num_labels, bg_labels)
    out = subject_transfer(state, subject_image, subject_labels,
                           background_image, background_labels,
                           pose_labels=pose_labels, plan=plan)
    save_image(out, args.out)
    print(f"wrote {args.out}")
    return 0


def _dir_images(path: str) -> torch.Tensor:
    files = sorted(f for f in os.listdir(path) if f.lower().endswith(".png"))
    if not files:
        raise DataError(f"no PNG files under {path}")
    return torch.stack([data_mod.load_image_file(os.path.join(path, f)) for f in files])


def cmd_evaluate(args) -> int:
    embedder = RandomConvEmbedder() if args.embedder == "conv" else IdentityEmbedder()
    if args.dir_a or args.dir_b:
        if not (args.dir_a and args.dir_b):
            raise ConfigError("direct mode needs both --dir-a and --dir-b")
        set_a = _dir_images(args.dir_a)
        set_b = _dir_images(args.dir_b)
        fid = frechet_distance(embed_images(set_a, embedder, "a"),
                               embed_images(set_b, embedder, "b"))
        print(f"fid={fid}")
        if set_a.shape == set_b.shape:
            pair_psnr = sum(psnr(a, b) for a, b in zip(set_a, set_b)) / set_a.shape[0]
            print(f"psnr={pair_psnr}")
        return 0
    if not (args.checkpoint and args.data_root):
        raise ConfigError("evaluate needs --checkpoint and --data-root "
                          "(or --dir-a/--dir-b)")
    cfg = _run_config(args)
    state = load_checkpoint(args.checkpoint)
    num_labels = state.model_config.num_labels
    train_manifest = data_mod.load_manifest(
        args.data_root, cfg.data.train_split, num_labels,
        remap_file=cfg.data.remap_file,
        allow_missing_labels=cfg.data.allow_missing_labels)
    test_manifest = data_mod.load_manifest(
        args.data_root, cfg.data.test_split, num_labels,
        remap_file=cfg.data.remap_file,
        allow_missing_labels=cfg.data.allow_missing_labels)
    report = evaluation_report(state, train_manifest, test_manifest,
                               embedder=embedder, num_pairs=args.num_pairs)
    print(format_report(report))
    return 0


def cmd_visualize(args) -> int:
    state = load_checkpoint(args.checkpoint)
    image, labels = _load_pair(args.image, args.mask, state.model_config.num_labels)
    spec = AttentionVizSpec(block_index=args.block, operation=args.operation,
                            out_path=args.out)
    visualize_attention(state, image, labels, spec=spec)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: category=config {exc}", file=sys.stderr)
        return 3
    except (DataError, CheckpointError) as exc:
        print(f"error: category=data {exc}", file=sys.stderr)
        return 4
    except NumericError as exc:
        print(f"error: category=numeric {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
