#!/usr/bin/env python3
"""Produce the three-row ablation table on a held-out eval set.

Drives the cycflow CLI end to end: generates exactly-labeled train and eval
datasets, trains the flow model and the direct-regression baseline with
identical settings, then runs `cycflow ablate`. Everything lands in
--workdir so the artifacts can be inspected afterwards.

Usage:
    python scripts/ablation_table.py --workdir /tmp/ablation [--train-count 1024]
"""

import argparse
import sys
from pathlib import Path

from cycflow.cli import main as cycflow


def run(argv):
    print("+ cycflow " + " ".join(argv))
    code = cycflow(argv)
    if code != 0:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", required=True)
    parser.add_argument("--n", type=int, default=20)
    parser.add_argument("--train-count", type=int, default=1024)
    parser.add_argument("--eval-count", type=int, default=128)
    parser.add_argument("--epochs", type=int, default=400)
    parser.add_argument("--k", type=int, default=20)
    args = parser.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    train_data = work / "train.txt"
    eval_data = work / "eval.txt"
    flow_ckpt = work / "flow.ckpt"
    direct_ckpt = work / "direct.ckpt"

    run(["gen", "--n", str(args.n), "--count", str(args.train_count), "--seed", "901",
         "--solver", "heldkarp", "--out", str(train_data)])
    run(["gen", "--n", str(args.n), "--count", str(args.eval_count), "--seed", "902",
         "--solver", "heldkarp", "--out", str(eval_data)])
    shared = ["--data", str(train_data), "--epochs", str(args.epochs),
              "--batch-size", "64", "--lr", "6e-4", "--dim", "96", "--layers", "3",
              "--heads", "4", "--t-dim", "32", "--seed", "0"]
    run(["train", *shared, "--objective", "flow", "--out", str(flow_ckpt),
         "--telemetry", str(work / "flow_telemetry.csv")])
    run(["train", *shared, "--objective", "direct", "--out", str(direct_ckpt),
         "--telemetry", str(work / "direct_telemetry.csv")])
    run(["ablate", "--checkpoint", str(flow_ckpt), "--direct-checkpoint",
         str(direct_ckpt), "--data", str(eval_data), "--k", str(args.k),
         "--csv", str(work / "ablation.csv")])


if __name__ == "__main__":
    main()
