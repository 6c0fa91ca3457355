"""Command line entry point: gen-synthetic, train, predict, evaluate, visualize.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .core import ConfigError, DataError, EvaluationError, NumericError
from .data import SyntheticSceneSpec, generate_synthetic, open_split
from .inference import load_predictions, save_predictions
from .pipeline import (build_model, check_vocabulary, evaluate, load_checkpoint, load_config, predict,
                       run_dir_outputs, save_checkpoint, train, visualize)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def cmd_gen_synthetic(args) -> int:
    values = {}
    if args.spec:
        values = yaml.safe_load(Path(args.spec).read_text()) or {}
    if args.seed is not None:
        values["seed"] = args.seed
    spec = SyntheticSceneSpec.from_dict(values)
    manifests = generate_synthetic(spec, args.out)
    for split, m in manifests.items():
        print(f"{split}: {len(m.frame_ids)} frames -> {m.split_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = {"seed": args.seed, "epochs": args.epochs, "max_steps": args.max_steps}
    model_cfg, train_cfg = load_config(args.config, overrides)
    train_set = open_split(args.data, args.train_split, model_cfg.image_size)
    model = build_model(model_cfg, train_cfg.seed)
    record = train(model, train_set, train_cfg)
    paths = run_dir_outputs(args.out)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    save_checkpoint(paths["checkpoint"], model, train_set.manifest.nouns, train_set.manifest.verbs)
    record.checkpoints.append(str(paths["checkpoint"]))
    eval_dir = Path(args.data) / args.eval_split
    if eval_dir.is_dir():
        eval_set = open_split(args.data, args.eval_split, model_cfg.image_size)
        frames = predict(model, eval_set)
        save_predictions(paths["predictions"], frames)
        report = evaluate(paths["predictions"], eval_set)
        record.add_eval(report, str(paths["checkpoint"]))
        paths["report"].write_text(json.dumps(report.to_dict(), indent=2) + "\n")
        print(report.table())
    record.save(paths["record"])
    print(f"final loss {record.final_loss:.6f}; outputs in {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    dataset = open_split(args.data, args.split, model.config.image_size)
    check_vocabulary(meta, dataset)
    frames = predict(model, dataset, args.k_infer, args.top_verbs)
    save_predictions(args.out, frames)
    print(f"wrote {len(frames)} frames to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if bool(args.checkpoint) == bool(args.predictions):
        raise UsageError("give exactly one of --checkpoint or --predictions")
    if args.checkpoint:
        model, meta = load_checkpoint(args.checkpoint)
        dataset = open_split(args.data, args.split, model.config.image_size)
        source = args.checkpoint
    else:
        dataset = open_split(args.data, args.split)
        source = args.predictions
    report = evaluate(source, dataset, args.k_infer, args.top_verbs, args.iou, args.ttc_tol)
    print(report.table())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_visualize(args) -> int:
    preds = load_predictions(args.predictions)
    if args.frame not in preds:
        raise DataError(f"frame {args.frame!r} not in {args.predictions}")
    nouns = verbs = None
    frame_path = Path(args.frame)
    if args.data:
        root = Path(args.data)
        frame_path = root / args.split / "frames" / f"{args.frame}.png"
        if (root / "nouns.txt").exists():
            nouns = (root / "nouns.txt").read_text().split()
            verbs = (root / "verbs.txt").read_text().split()
    if not frame_path.exists():
        raise DataError(f"frame image not found: {frame_path}")
    visualize(frame_path, preds[args.frame], args.out, nouns, verbs)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sta-cascade", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synthetic", help="write a seeded synthetic dataset")
    p.add_argument("--spec", help="YAML file with synthetic scene settings")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train", help="train the second stage")
    p.add_argument("--config", help="YAML file with model and training keys")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--train-split", default="train")
    p.add_argument("--eval-split", default="eval")
    p.set_defaults(func=cmd_train)

    def inference_flags(p):
        p.add_argument("--data", required=True)
        p.add_argument("--split", default="eval")
        p.add_argument("--k-infer", type=int)
        p.add_argument("--top-verbs", type=int)

    p = sub.add_parser("predict", help="write a predictions file from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    inference_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="top-5 mAP in all four modes")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--ttc-tol", type=float, default=0.25)
    p.add_argument("--out", help="write the report as JSON")
    inference_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("visualize", help="draw the top prediction on a frame")
    p.add_argument("--frame", required=True, help="frame id")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="dataset root holding the frame image")
    p.add_argument("--split", default="eval")
    p.set_defaults(func=cmd_visualize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, EvaluationError, OSError, yaml.YAMLError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
