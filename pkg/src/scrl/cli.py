"""Command-line surface: gen-data, train, eval, report.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 non-finite
loss. The serialized config is written into every output directory so a
run can be reproduced bit-for-bit from its artifacts.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_config, write_config_copy

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NONFINITE = 3


def cmd_gen_data(args) -> int:
    from .corpus import InvalidConfigError, generate_paired_corpus
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    corpus_dir = Path(cfg.corpus_dir)
    if corpus_dir.exists() and any(corpus_dir.iterdir()) and not args.force:
        print(f"refusing to overwrite non-empty {corpus_dir} (use --force)",
              file=sys.stderr)
        return EXIT_IO
    try:
        manifest = generate_paired_corpus(cfg.generator, corpus_dir)
    except InvalidConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    write_config_copy(cfg, corpus_dir)
    print(f"wrote {len(manifest['pairs'])} pairs, "
          f"{len(manifest['queries'])} queries, "
          f"splits train/val/test = "
          f"{[len(manifest['splits'][s]) for s in ('train', 'val', 'test')]} "
          f"to {corpus_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .contrast import run_finetuning
    from .corpus import load_manifest
    from .pretrain import run_pretraining
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(cfg.out_dir)
    manifest_path = Path(cfg.corpus_dir) / "manifest.json"
    if not manifest_path.exists():
        print(f"corpus manifest not found: {manifest_path}", file=sys.stderr)
        return EXIT_IO
    stage1_ckpt = out_dir / "pretrain_best.ckpt"
    if args.stage == "contrast" and not args.from_scratch \
            and not stage1_ckpt.exists():
        print("contrast stage requires a pre-training checkpoint "
              "(run --stage pretrain first, or pass --from-scratch)",
              file=sys.stderr)
        return EXIT_CONFIG
    manifest = load_manifest(manifest_path)
    write_config_copy(cfg, out_dir)
    try:
        if args.stage in ("pretrain", "both"):
            stage1_ckpt = run_pretraining(cfg.pretrain, cfg.corpus_dir,
                                          manifest, out_dir,
                                          model_cfg=cfg.model)
            print(f"pretrain checkpoint: {stage1_ckpt}")
        if args.stage in ("contrast", "both"):
            init = None if args.from_scratch else stage1_ckpt
            ckpt = run_finetuning(cfg.contrast, cfg.corpus_dir, manifest,
                                  out_dir, stage1_checkpoint=init,
                                  model_cfg=cfg.model)
            print(f"contrast checkpoint: {ckpt}")
    except FloatingPointError as e:
        print(f"non-finite loss: {e}", file=sys.stderr)
        return EXIT_NONFINITE
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def cmd_eval(args) -> int:
    from .corpus import load_manifest
    from .model import load_checkpoint
    from .retrieval import (evaluate, metrics_line, write_report_csv,
                            write_report_svg)
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    ckpt_path = Path(args.checkpoint)
    manifest_path = Path(cfg.corpus_dir) / "manifest.json"
    for p in (ckpt_path, manifest_path):
        if not p.exists():
            print(f"not found: {p}", file=sys.stderr)
            return EXIT_IO
    mode = args.mode or cfg.eval.mode
    manifest = load_manifest(manifest_path)
    arrays = load_checkpoint(ckpt_path)
    report = evaluate(arrays, manifest, cfg.corpus_dir,
                      clip_len=cfg.eval.clip_len, stride=cfg.eval.stride,
                      mode=mode, iou_threshold=cfg.eval.iou_threshold,
                      model_cfg=cfg.model)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config_copy(cfg, out_dir)
    write_report_csv(out_dir / f"retrieval_report_{mode}.csv", report)
    write_report_svg(out_dir / f"retrieval_report_{mode}.svg", report)
    print(metrics_line(report))
    return EXIT_OK


def cmd_report(args) -> int:
    """Re-print the aggregate metric line from an existing report CSV."""
    import csv as _csv
    path = Path(args.report_csv)
    if not path.exists():
        print(f"not found: {path}", file=sys.stderr)
        return EXIT_IO
    with open(path, newline="") as fh:
        rows = list(_csv.reader(fh))
    agg = [r for r in rows if r and r[0] == "AGGREGATE"]
    if not agg:
        print("no AGGREGATE row in report", file=sys.stderr)
        return EXIT_CONFIG
    print(agg[0][4])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="scrl",
        description="Two-stage self-supervised clip representation learning "
                    "and retrieval evaluation")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic paired corpus")
    g.add_argument("config")
    g.add_argument("--force", action="store_true",
                   help="overwrite a non-empty corpus directory")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run the training stages")
    t.add_argument("config")
    t.add_argument("--stage", choices=("pretrain", "contrast", "both"),
                   default="both")
    t.add_argument("--from-scratch", action="store_true",
                   help="contrast stage with a randomly initialised encoder")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="build the gallery and score all queries")
    e.add_argument("config")
    e.add_argument("checkpoint")
    e.add_argument("--mode", choices=("sliding", "annotated"), default=None)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="print the metric line of a report CSV")
    r.add_argument("report_csv")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
