"""Command-line entry point: ``rtbpn synth|train|eval|predict``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .data import Sample, SynthesisConfig, load_features, load_manifest, load_split, mean_pool, synthesize_corpus, \
    write_corpus
from .errors import RTBPNError
from .evaluation import evaluate, write_predictions, write_report
from .model import RunConfig
from .training import fit, load_checkpoint, predict, save_checkpoint

SEED_ENV = "RTBPN_SEED"
ABLATIONS = ("no_filter", "no_param_sharing", "visual_only", "selector=center", "selector=topk", "selector=all")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def run_config(path, ablations=()) -> RunConfig:
    cfg = RunConfig.from_dict(read_json(path)) if path else RunConfig()
    if os.environ.get(SEED_ENV):
        cfg.seed = int(os.environ[SEED_ENV])
    for flag in ablations:
        cfg = cfg.with_ablation(flag)
    return cfg


def cmd_synth(args) -> int:
    cfg = SynthesisConfig.from_dict(read_json(args.config)) if args.config else SynthesisConfig()
    if os.environ.get(SEED_ENV):
        cfg.seed = int(os.environ[SEED_ENV])
    write_corpus(synthesize_corpus(cfg), args.out)
    print(f"wrote corpus to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = run_config(args.config, args.ablate)
    manifest, train = load_split(args.data, "train", cfg.pool_stride)
    val = []
    if (Path(args.data) / "val" / "manifest.json").exists():
        _, val = load_split(args.data, "val", cfg.pool_stride)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = fit(train, cfg, manifest.vocab_size, manifest.feature_dim, val,
                 on_epoch=lambda e: print(json.dumps({k: v for k, v in e.items() if k != "val"}), flush=True))
    save_checkpoint(out / "last.pt", result.model, result.optimizer, cfg.epochs - 1)
    result.restore_best()
    save_checkpoint(out / "checkpoint.pt", result.model, result.optimizer, result.best_epoch)
    (out / "history.json").write_text(json.dumps(result.history, indent=2))
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    print(f"saved {out / 'checkpoint.pt'} (best epoch {result.best_epoch})")
    return 0


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint, force=args.force)
    _, samples = load_split(args.data, args.split, model.cfg.pool_stride)
    records = [predict(model, s, args.topn) for s in samples]
    report = evaluate(records, [s.gt_span_seconds for s in samples], nms_threshold=model.cfg.nms_threshold)
    write_report(args.report, report)
    if args.predictions:
        write_predictions(args.predictions, records)
    print(report.table())
    return 0


def cmd_predict(args) -> int:
    model, _ = load_checkpoint(args.checkpoint, force=args.force)
    split_dir = Path(args.data) / args.split
    manifest = load_manifest(split_dir / "manifest.json")
    entry = next((e for e in manifest.entries if e.video_id == args.video), None)
    if entry is None:
        raise RTBPNError(f"video {args.video!r} not found in {split_dir}")
    frames = load_features(split_dir / entry.feature_path, entry.seconds_per_index, manifest.feature_dim)
    tokens = [int(t) for t in args.tokens.split()]
    if any(t < 0 or t >= model.vocab_size for t in tokens):
        raise RTBPNError(f"token ids must lie in [0, {model.vocab_size})")
    sample = Sample(entry.video_id, mean_pool(frames, model.cfg.pool_stride), tokens, None, "predict")
    print(json.dumps(predict(model, sample, args.topn).to_json()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rtbpn", description="Weakly-supervised moment retrieval")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a planted-signal synthetic corpus")
    p.add_argument("--config", help="JSON mirroring SynthesisConfig")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on the train split, select on val")
    p.add_argument("--config", help="JSON mirroring RunConfig")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ablate", action="append", default=[], choices=ABLATIONS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a labelled split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--report", required=True)
    p.add_argument("--predictions", help="optional JSONL of ranked spans")
    p.add_argument("--topn", type=int, default=5)
    p.add_argument("--force", action="store_true", help="load despite a config hash mismatch")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="rank spans of one video for a token sequence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--tokens", required=True, help='space-separated ids, e.g. "3 17 4"')
    p.add_argument("--topn", type=int, default=1)
    p.add_argument("--data", required=True, help="corpus directory holding the video")
    p.add_argument("--split", default="test")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (RTBPNError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
