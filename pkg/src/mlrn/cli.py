"""Command-line surface: dataset generation, training, evaluation,
gradient checking, and multi-seed runs.

Report-producing commands write figures next to their delimited output files.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import figures
from .data import generate_dataset
from .harness import (
    evaluate_by_category,
    multi_seed_run,
    run_gradcheck,
    train,
)
from .storage import read_dataset, write_dataset

log = logging.getLogger("mlrn")


def _add_gen_data(sub) -> None:
    p = sub.add_parser("gen-data", help="generate a micro-scale puzzle dataset")
    p.add_argument("--config", help="key=value config file with generator.* keys")
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--count", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, default=None, help="override the generator seed")


def _add_train(sub) -> None:
    p = sub.add_parser("train", help="train a model and emit metrics, checkpoint, and curves")
    p.add_argument("--config", required=True, help="key=value training config file")
    p.add_argument("--data", help="training dataset path (overrides config)")
    p.add_argument("--val", help="validation dataset path (overrides config)")
    p.add_argument("--out-checkpoint", help="checkpoint output path (overrides config)")
    p.add_argument("--out-metrics", help="metrics CSV output path (overrides config)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--no-figure", action="store_true", help="skip the curves figure")


def _add_eval(sub) -> None:
    p = sub.add_parser("eval", help="evaluate a checkpoint with a per-category report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", help="write the text report here (also printed)")
    p.add_argument("--figure", help="write a category bar chart here (default: next to report)")
    p.add_argument("--no-figure", action="store_true")


def _add_gradcheck(sub) -> None:
    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--scale", choices=("tiny", "small"), default="tiny")
    p.add_argument("--max-elements", type=int, default=None, help="cap checked elements per tensor")
    p.add_argument("--eps", type=float, default=1e-5)


def _add_multiseed(sub) -> None:
    p = sub.add_parser("multiseed", help="repeat training over seeds and summarize")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, required=True, help="number of seeds")
    p.add_argument("--out-dir", default=".", help="directory for summary, metrics, and curves")


def _cmd_gen_data(args) -> int:
    kv = cfgmod.parse_kv_file(args.config) if args.config else {}
    gen_cfg = cfgmod.generator_config_from(kv, seed=args.seed)
    dataset = generate_dataset(gen_cfg, args.count)
    write_dataset(dataset, args.out)
    log.info("wrote %d samples (%dx%d panels) to %s", len(dataset), gen_cfg.image_size, gen_cfg.image_size, args.out)
    return 0


def _cmd_train(args) -> int:
    cfg = cfgmod.load_train_config(
        args.config,
        train_path=args.data,
        val_path=args.val,
        checkpoint_path=args.out_checkpoint,
        metrics_path=args.out_metrics,
    )
    if not cfg.train_path or not cfg.val_path:
        raise SystemExit("training and validation dataset paths are required (--data/--val or config)")
    result = train(cfg, resume_from=args.resume)
    last = result.rows[-1]
    log.info("finished at epoch %d: val acc %.4f", last.epoch, last.validation_acc)
    if cfg.metrics_path and not args.no_figure:
        figure_path = Path(cfg.metrics_path).with_suffix(".png")
        figures.save_training_curves(result.rows, figure_path)
        log.info("curves written to %s", figure_path)
    return 0


def _cmd_eval(args) -> int:
    dataset = read_dataset(args.data)
    report = evaluate_by_category(args.checkpoint, dataset)
    text = report.render_text()
    print(text)
    if args.report:
        Path(args.report).write_text(text + "\n")
    if not args.no_figure:
        figure_path = args.figure or (str(Path(args.report).with_suffix(".png")) if args.report else None)
        if figure_path:
            figures.save_category_bars(report, figure_path)
            log.info("category chart written to %s", figure_path)
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_gradcheck(args.scale, max_elements=args.max_elements, eps=args.eps)
    failed = False
    for name, err, threshold in results:
        ok = err < threshold
        failed |= not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:<28} max rel err {err:.3e} (threshold {threshold:.0e})")
    return 1 if failed else 0


def _cmd_multiseed(args) -> int:
    cfg = cfgmod.load_train_config(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not cfg.checkpoint_path:
        cfg.checkpoint_path = str(out_dir / "model.ckpt")
    if not cfg.metrics_path:
        cfg.metrics_path = str(out_dir / "metrics.csv")
    summary = multi_seed_run(cfg, args.seeds)
    lines = summary.table_lines()
    lines.append(f"# cluster gap: {summary.cluster_gap:.6f}")
    summary_path = out_dir / "multiseed_summary.csv"
    summary_path.write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    figures.save_multiseed_curves(summary.runs, out_dir / "multiseed_curves.png")
    log.info("summary written to %s", summary_path)
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "multiseed": _cmd_multiseed,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mlrn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_gen_data(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_gradcheck(sub)
    _add_multiseed(sub)
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    return _HANDLERS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
