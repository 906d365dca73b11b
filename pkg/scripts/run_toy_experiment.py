#!/usr/bin/env python3
"""Run the bundled toy benchmark end to end with mock backends.

Produces a full run directory (records, per-stage metrics, report.md) and a
chunk-size sweep, then prints the rendered Markdown report. Everything is
deterministic, so re-running reproduces identical records and reports.

Usage:
  python scripts/run_toy_experiment.py --out runs/toy
  python scripts/run_toy_experiment.py --out runs/toy --skip-sweep
"""

import argparse
import sys
from pathlib import Path

from cofe.cli import main as cofe

REPO = Path(__file__).resolve().parent.parent
DATASET = str(REPO / "data/toy/dataset.jsonl")
CORPUS = str(REPO / "data/toy/corpus.jsonl")


def run(args_list):
    code = cofe(args_list)
    if code != 0:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/toy")
    parser.add_argument("--skip-sweep", action="store_true")
    args = parser.parse_args()

    run_dir = Path(args.out) / "run"
    run(["run", "--dataset", DATASET, "--corpus", CORPUS, "--out", str(run_dir)])
    run(["eval-retrieval", "--run", str(run_dir), "--stage", "retrieved"])
    run(["eval-retrieval", "--run", str(run_dir), "--stage", "reranked"])
    run(["eval-generation", "--run", str(run_dir)])
    run(["report", "--run", str(run_dir)])

    if not args.skip_sweep:
        sweep_dir = Path(args.out) / "sweep"
        run(["sweep", "--sizes", "128,256,512", "--dataset", DATASET, "--corpus", CORPUS,
             "--out", str(sweep_dir)])
        print((sweep_dir / "sweep.csv").read_text())

    print((run_dir / "report.md").read_text())


if __name__ == "__main__":
    main()
