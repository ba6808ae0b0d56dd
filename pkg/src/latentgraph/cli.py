"""Command-line entry point: ``latentgraph <subcommand> ...``."""

import argparse
import logging
import sys
import time
from pathlib import Path

from . import gradcheck
from .analysis import export_graph, graph_stats
from .config import format_config, load_config, parse_config_text, preset
from .data import TASKS, gen_synthetic, read_corpus, read_lines, write_corpus, write_lines
from .estimator import LatentGraphTranslator
from .training import load_checkpoint, save_checkpoint, train

logger = logging.getLogger("latentgraph")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _require_file(path, what):
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_estimator(args):
    ckpt = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    overrides = {}
    for key in ("beam_size", "length_penalty", "graph_mode", "max_decode_len"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return LatentGraphTranslator.from_checkpoint(ckpt, **overrides)


def cmd_train(args):
    config = preset(args.preset)
    if args.config:
        config = load_config(_require_file(args.config, "config file"), config)
    if args.set:
        config = parse_config_text("\n".join(args.set), config)
    if args.epochs is not None:
        config = config.replace(epochs=args.epochs)
    config.validate()
    corpus = read_corpus(_require_file(args.src, "source file"), _require_file(args.tgt, "target file"))
    dev = None
    if args.dev_src and args.dev_tgt:
        dev = read_corpus(_require_file(args.dev_src, "dev source"), _require_file(args.dev_tgt, "dev target"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(config))
    started = time.time()
    ckpts, _ = train(config, corpus, dev, checkpoint_dir=out, metrics_path=out / "metrics.csv")
    save_checkpoint(ckpts[-1], out / "final.ckpt")
    print(f"wrote {len(ckpts)} checkpoints to {out} in {time.time() - started:.1f}s")
    return 0


def cmd_translate(args):
    est = _load_estimator(args)
    est.decode = "greedy" if args.greedy else "beam"
    sources = read_lines(_require_file(args.input, "input file"))
    hyps = est._translate_tokens(sources)
    if args.output:
        write_lines(args.output, hyps)
    else:
        for h in hyps:
            print(" ".join(h))
    return 0


def cmd_analyze(args):
    est = _load_estimator(args)
    if not est.latent_graph:
        raise UsageError("checkpoint has no graph component to analyse")
    sources = [s for s in read_lines(_require_file(args.src, "source file")) if len(s) >= 2]
    stats = graph_stats(est.transform(sources))
    sys.stdout.write(stats.report())
    return 0


def cmd_gen_data(args):
    corpus = gen_synthetic(args.task, args.size, args.vocab_size, args.max_len, args.seed,
                           min_len=args.min_len)
    prefix = Path(args.out or args.task)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    src, tgt = Path(f"{prefix}.src"), Path(f"{prefix}.tgt")
    write_corpus(corpus, src, tgt)
    print(f"wrote {len(corpus)} pairs to {src} and {tgt}")
    return 0


def cmd_export_graph(args):
    est = _load_estimator(args)
    if not est.latent_graph:
        raise UsageError("checkpoint has no graph component to export")
    tokens = args.sentence.split()
    if len(tokens) < 2:
        raise UsageError("sentence too short for graph induction")
    (a,) = est.transform([tokens])
    text = export_graph(a, tokens, args.format, args.output, args.threshold)
    if not args.output:
        sys.stdout.write(text)
    return 0


def cmd_grad_check(args):
    started = time.time()
    report = gradcheck.run_suite(trials=args.trials, seed=args.seed, coords=args.coords)
    worst = 0.0
    for label, err in report.items():
        status = "ok" if err < gradcheck.TOLERANCE else "FAIL"
        print(f"{label:45s} {err:.3e} {status}")
        worst = max(worst, err)
    print(f"max relative error {worst:.3e} (tolerance {gradcheck.TOLERANCE:g}) "
          f"in {time.time() - started:.1f}s")
    return 0 if worst < gradcheck.TOLERANCE else 1


def build_parser():
    parser = _Parser(prog="latentgraph", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train a model on a parallel corpus")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--dev-src")
    p.add_argument("--dev-tgt")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--preset", default="desk", choices=["desk", "de-en", "ja-en"])
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", default="run")
    p.set_defaults(func=cmd_train)

    def decoding_flags(p):
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--graph-mode", dest="graph_mode", choices=["sample", "marginal"])

    p = sub.add_parser("translate", help="translate a file of source sentences")
    decoding_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--beam", dest="beam_size", type=int, default=10)
    p.add_argument("--alpha", dest="length_penalty", type=float, default=1.0)
    p.add_argument("--max-len", dest="max_decode_len", type=int)
    p.add_argument("--greedy", action="store_true")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("analyze", help="head distance / entropy statistics of induced graphs")
    decoding_flags(p)
    p.add_argument("--src", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gen-data", help="write a synthetic parallel corpus")
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--size", type=int, default=1000)
    p.add_argument("--vocab-size", type=int, default=20)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--min-len", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output prefix; writes PREFIX.src and PREFIX.tgt")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("export-graph", help="export one sentence's latent graph")
    decoding_flags(p)
    p.add_argument("--sentence", required=True)
    p.add_argument("--format", choices=["dot", "csv"], default="dot")
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--output")
    p.set_defaults(func=cmd_export_graph)

    p = sub.add_parser("grad-check", help="finite-difference check of all gradients")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords", type=int, help="perturb only this many entries per parameter tensor")
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if not getattr(args, "command", None):
            raise UsageError(parser.format_usage() + "latentgraph: error: a subcommand is required")
        return args.func(args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 2
    except (OSError, ValueError) as err:
        print(f"latentgraph: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
