"""Held-out inflection accuracy of AED vs CA-AED over several seeds.

    python scripts/morphology.py --config configs/morphology.ini --seeds 0-4
"""
import argparse

import numpy as np

from caaed.config import ExperimentConfig
from caaed.experiment import run_pair


def parse_seeds(text):
    if "-" in text:
        lo, hi = (int(x) for x in text.split("-"))
        return list(range(lo, hi + 1))
    return [int(x) for x in text.split(",")]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/morphology.ini")
    ap.add_argument("--seeds", default="0-4")
    args = ap.parse_args()
    cfg = ExperimentConfig.load(args.config)
    print("seed\theld_AED\theld_CAAED\tWER_AED\tWER_CAAED")
    aed, ca = [], []
    for seed in parse_seeds(args.seeds):
        p = run_pair(cfg, seed)
        aed.append(p.aed.held_accuracy)
        ca.append(p.caaed.held_accuracy)
        print(f"{seed}\t{p.aed.held_accuracy:.4f}\t{p.caaed.held_accuracy:.4f}"
              f"\t{p.aed.test_wer:.4f}\t{p.caaed.test_wer:.4f}", flush=True)
    print(f"median\t{np.median(aed):.4f}\t{np.median(ca):.4f}")


if __name__ == "__main__":
    main()
