"""Train both systems on the synthetic corpus and report epochs to 5% dev WER.

    python scripts/convergence.py --config configs/synth.ini --out runs/convergence
"""
import argparse
from dataclasses import replace
from pathlib import Path

from caaed.config import ExperimentConfig
from caaed.experiment import make_splits, make_vocab, run_system


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/synth.ini")
    ap.add_argument("--out", default="runs/convergence")
    ap.add_argument("--full", action="store_true", help="train all epochs instead of stopping at 5%%")
    args = ap.parse_args()
    cfg = ExperimentConfig.load(args.config)
    if not args.full:
        cfg = replace(cfg, train=replace(cfg.train, target_wer=0.05))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    splits = make_splits(cfg)
    vocab = make_vocab(cfg, splits.train)
    vocab.save(out / "vocab.txt")
    for emb in ("lookup", "char"):
        r = run_system(cfg, emb, vocab, splits, out / f"{emb}.log", out / f"{emb}.ckpt")
        print(f"{emb}: {r.n_params} parameters, best dev WER {r.best_dev_wer:.4f}, "
              f"epochs to 5% {r.epochs_to_target}, test WER {r.test_wer:.4f}, {r.seconds:.0f}s")


if __name__ == "__main__":
    main()
