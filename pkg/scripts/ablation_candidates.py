"""Retrain with 5, 10 and 20 training-time query candidates and tabulate top-5 mAP.

    python scripts/ablation_candidates.py --data runs/learning_check/data --out runs/ablation.json
"""

import argparse
import json
from pathlib import Path

from sta_cascade.data import SyntheticSceneSpec, generate_synthetic, open_split
from sta_cascade.metrics import MetricMode
from sta_cascade.pipeline import candidate_count_ablation, load_config

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "learning_check.yaml"


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--data", type=Path, default=Path("runs/ablation/data"))
    parser.add_argument("--config", type=Path, default=CONFIG)
    parser.add_argument("--counts", type=int, nargs="+", default=[5, 10, 20])
    parser.add_argument("--out", type=Path, default=Path("runs/ablation/report.json"))
    args = parser.parse_args()

    if not (args.data / "nouns.txt").exists():
        generate_synthetic(SyntheticSceneSpec(), args.data)
    model_cfg, train_cfg = load_config(args.config)
    train_set = open_split(args.data, "train", model_cfg.image_size)
    eval_set = open_split(args.data, "eval", model_cfg.image_size)
    reports = candidate_count_ablation(train_set, eval_set, model_cfg, train_cfg, args.counts)

    print("k_train | " + " | ".join(f"{m.label:>8}" for m in MetricMode))
    for k, report in reports.items():
        print(f"{k:7d} | " + " | ".join(f"{100 * report.mAP[m]:8.2f}" for m in MetricMode))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps({str(k): r.to_dict() for k, r in reports.items()}, indent=2) + "\n")


if __name__ == "__main__":
    main()
