"""``caaed`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure. Failures print a single ``error: ...`` line on stderr.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import ExperimentConfig
from .data import read_dataset, with_labels, write_dataset, write_transcripts
from .decoding import decode_dataset, read_hypotheses, wer, word_accuracy, write_hypotheses
from .errors import CaaedError, DataError, NumericError, UsageError
from .experiment import make_splits, run_pair, summarize
from .model import Model, ModelConfig, count_parameters, embedding_savings, load_model, parameter_reduction_rate
from .training import forward_batch, train
from .vocab import Corpus, Vocab, build_vocab

GRADCHECK_TOL = 1e-4


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config(args) -> ExperimentConfig:
    if not args.config:
        raise UsageError("--config is required")
    return ExperimentConfig.load(args.config)


def _vocab(path) -> Vocab:
    return Vocab.load(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_build_vocab(args):
    cfg = ExperimentConfig.load(args.config).vocab if args.config else None
    kind = args.kind or (cfg.kind if cfg else "word-piece")
    size = args.size if args.size is not None else (cfg.target_size if cfg else 40)
    threshold = args.threshold if args.threshold is not None else (cfg.freq_threshold if cfg else 25)
    if args.corpus:
        corpus = Corpus.read(args.corpus)
    elif args.data:
        corpus = Corpus.from_lines([u.transcript for u in read_dataset(args.data)])
    else:
        raise UsageError("give --corpus (transcripts) or --data (dataset file)")
    vocab = build_vocab(corpus, kind, target_size=size, freq_threshold=threshold)
    vocab.save(args.out)
    print(f"{kind} vocabulary: {len(vocab)} units -> {args.out}")


def cmd_synth_data(args):
    cfg = _config(args)
    splits = make_splits(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = _vocab(args.vocab) if args.vocab else None
    for name, utts in (("train", splits.train), ("dev", splits.dev), ("test", splits.test)):
        if vocab is not None:
            utts = with_labels(utts, vocab)
        write_dataset(out / f"{name}.bin", utts)
        write_transcripts(out / f"{name}.txt", utts)
    (out / "held_out.txt").write_text("".join(w + "\n" for w in splits.held_words), encoding="utf-8")
    print(f"wrote {len(splits.train)}/{len(splits.dev)}/{len(splits.test)} utterances to {out}")


def _labelled(path, vocab, dim):
    utts = read_dataset(path, expect_dim=dim)
    if any(not u.labels for u in utts):
        return with_labels(utts, vocab)
    if any(i >= len(vocab) for u in utts for i in u.labels):
        raise DataError(f"{path}: labels exceed the vocabulary")
    return utts


def cmd_train(args):
    cfg = _config(args)
    vocab = _vocab(args.vocab)
    tc = cfg.train if args.epochs is None else replace(cfg.train, epochs=args.epochs)
    train_set = _labelled(args.train, vocab, None)
    dim = train_set[0].features.shape[1]
    dev = _labelled(args.dev, vocab, dim) if args.dev else []
    model_section = cfg.model if not args.embedding else replace(cfg.model, embedding=args.embedding)
    model = Model(model_section.build(len(vocab), dim, tc.dropout), vocab, seed=tc.seed)
    clock = (lambda: 0.0) if args.no_wall_clock else None
    kw = {"clock": clock} if clock else {}
    result = train(model, train_set, dev, tc, args.log, args.out, **kw)
    print(f"trained {model.cfg.embedding} model ({model.num_parameters()} parameters); "
          f"best dev WER {result.best_wer:.4f} at epoch {result.best_epoch} -> {args.out}")


def cmd_decode(args):
    vocab = _vocab(args.vocab)
    model, _ = load_model(args.model, vocab)
    utts = read_dataset(args.data, expect_dim=model.cfg.input_dim)
    hyps = decode_dataset(model, [u.features for u in utts], args.max_len, on_the_fly=args.on_the_fly)
    write_hypotheses(args.out, [u.transcript for u in utts], [h.text for h in hyps])
    print(f"decoded {len(utts)} utterances -> {args.out}")


def cmd_score(args):
    rows = read_hypotheses(args.hyp)
    refs, hyps = [r[2] for r in rows], [r[3] for r in rows]
    results = [wer(r, h) for r, h in zip(refs, hyps)]
    s, d, i = (sum(getattr(x, k) for x in results) for k in ("substitutions", "deletions", "insertions"))
    n = sum(x.ref_words for x in results)
    print(f"WER {(s + d + i) / max(1, n):.4f} (S={s} D={d} I={i} N={n})")
    if args.targets:
        words = [w.strip() for w in Path(args.targets).read_text(encoding="utf-8").split()]
        print(f"target-word accuracy {word_accuracy(refs, hyps, words):.4f}")


def _print_counts(label, cfg):
    counts = count_parameters(cfg)
    print(f"{label}:")
    for k, v in counts.items():
        print(f"  {k:20s} {v:>12,d}")


def cmd_count_params(args):
    if args.preset:
        vocab_size = {"word-piece": 29190, "mixed-unit": 33755}[args.preset]
        if args.vocab_size:
            vocab_size = args.vocab_size
        base = ModelConfig.full_size(vocab_size, encoder_layers=args.layers)
    elif args.config:
        cfg = _config(args)
        if not args.vocab_size:
            raise UsageError("--vocab-size is required with --config")
        dim = cfg.data.d_raw * cfg.data.stack
        base = cfg.model.build(args.vocab_size, dim, cfg.train.dropout)
    else:
        raise UsageError("give --preset KIND or --config FILE")
    aed, ca = base.replace(embedding="lookup"), base.replace(embedding="char")
    _print_counts("AED", aed)
    _print_counts("CA-AED", ca)
    saved = embedding_savings(base)
    print(f"savings {saved:,d} ({saved / 1e6:.1f}M)")
    print(f"PRR {parameter_reduction_rate(base):.1f}%")


def cmd_gradcheck(args):
    """Finite-difference check of the full loss on a tiny reference model."""
    from .data import Utterance
    from .vocab import CHAR_TO_ID
    with T.precision(64):
        unit_chars = [(0,), (1,), (2,), (CHAR_TO_ID["a"],), (CHAR_TO_ID["a"], CHAR_TO_ID["b"])]
        cfg = ModelConfig(vocab_size=5, input_dim=3, hidden=4, encoder_layers=2, decoder_layers=2,
                          embedding=args.embedding, char_dim=3, char_layers=2, filter_size=3, dropout=0.0)
        model = Model(cfg, seed=args.seed, unit_chars=unit_chars)
        rng = np.random.default_rng(args.seed)
        utts = [Utterance(rng.standard_normal((3, 3)), (0, 3, 4, 1), "x"),
                Utterance(rng.standard_normal((2, 3)), (0, 4, 1), "y")]
        names = list(model.params)
        report = T.grad_check_report(lambda: forward_batch(model, utts, eps=0.1)[1],
                                     [model.params[k] for k in names])
        with T.Tape():
            T.backward(forward_batch(model, utts, eps=0.1)[1])
        fixed_ok = all(t.grad is None for t in model.fixed.values())
    worst = 0.0
    for name, err in zip(names, report.values()):
        print(f"{name:24s} {err:.2e}")
        worst = max(worst, err)
    print(f"max relative error {worst:.2e}; fixed projections untouched: {fixed_ok}")
    if worst >= GRADCHECK_TOL or not fixed_ok:
        raise NumericError(f"gradient check failed (max relative error {worst:.2e})")


def cmd_compare(args):
    cfg = _config(args)
    if args.epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    seeds = [int(s) for s in args.seeds.split(",")]
    if len(seeds) < 3:
        raise UsageError("compare needs at least 3 seeds")
    pairs = []
    print("seed\tWER_AED\tWER_CAAED\trel_change%\tNp_AED\tNp_CAAED\tPRR%\theld_AED\theld_CAAED")
    for seed in seeds:
        p = run_pair(cfg, seed)
        pairs.append(p)
        print(f"{seed}\t{p.aed.test_wer:.4f}\t{p.caaed.test_wer:.4f}\t{p.relative_wer_change:+.1f}"
              f"\t{p.aed.n_params}\t{p.caaed.n_params}\t{p.prr:.1f}"
              f"\t{p.aed.held_accuracy:.4f}\t{p.caaed.held_accuracy:.4f}", flush=True)
    s = summarize(pairs)
    rel = 100.0 * (s["wer_caaed"] - s["wer_aed"]) / s["wer_aed"] if s["wer_aed"] else 0.0
    print(f"median\t{s['wer_aed']:.4f}\t{s['wer_caaed']:.4f}\t{rel:+.1f}\t{pairs[0].aed.n_params}"
          f"\t{pairs[0].caaed.n_params}\t{pairs[0].prr:.1f}\t{s['held_aed']:.4f}\t{s['held_caaed']:.4f}")


# ---------------------------------------------------------------------------


def build_parser() -> Parser:
    ap = Parser(prog="caaed", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("build-vocab", help="learn an output-unit vocabulary")
    p.add_argument("--config")
    p.add_argument("--corpus", help="transcript file, one utterance per line")
    p.add_argument("--data", help="dataset file whose transcripts form the corpus")
    p.add_argument("--kind", choices=["character", "word-piece", "mixed-unit"])
    p.add_argument("--size", type=int, help="word-piece target size")
    p.add_argument("--threshold", type=int, help="mixed-unit whole-word frequency threshold")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_build_vocab)

    p = sub.add_parser("synth-data", help="generate the synthetic corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--vocab", help="label the utterances with this vocabulary")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--embedding", choices=["lookup", "char"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch log path")
    p.add_argument("--no-wall-clock", action="store_true", help="log 0.00 as the wall time")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("decode", help="greedy decoding")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-len", type=int, default=200)
    p.add_argument("--on-the-fly", action="store_true", help="compose embeddings per step")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("score", help="word error rate of a hypothesis file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--targets", help="file of words whose accuracy to report")
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("count-params", help="per-component parameter counts and PRR")
    p.add_argument("--preset", choices=["word-piece", "mixed-unit"])
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--config")
    p.add_argument("--vocab-size", type=int)
    p.set_defaults(fn=cmd_count_params)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    p.add_argument("--embedding", choices=["lookup", "char"], default="char")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("compare", help="AED vs CA-AED over several seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--epochs", type=int)
    p.set_defaults(fn=cmd_compare)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s")
        args.fn(args)
    except CaaedError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (OSError, UnicodeDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return DataError.exit_code
    except (FloatingPointError, ArithmeticError) as e:
        print(f"error: numeric failure: {e}", file=sys.stderr)
        return NumericError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
