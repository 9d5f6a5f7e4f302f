"""Command-line entry point: ``gfbgcn <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys


from . import textgraph as tg
from .config import ConfigError, load_config
from .gradcheck import format_report, run_gradcheck
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .pooling import GenVecOp
from .synth import synth_corpus
from .train import TrainingDiverged, bench_variants, evaluate, k_scaling, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("gfbgcn")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _open_check(path, what):
    try:
        open(path, "rb").close()
    except OSError as e:
        raise DataError(f"cannot read {what} {path}: {e.strerror}") from None


def _load_graph(path):
    _open_check(path, "graph file")
    try:
        return tg.read_graph(path)
    except ValueError as e:
        raise DataError(str(e)) from None


def cmd_build_graph(args) -> int:
    _open_check(args.corpus, "corpus")
    if args.stopwords:
        _open_check(args.stopwords, "stopword list")
    try:
        corpus = tg.read_corpus(args.corpus)
        stop = tg.read_stopwords(args.stopwords)
        graph = tg.build_graph(corpus, stop, window_size=args.window, min_freq=args.min_freq)
    except ValueError as e:
        raise DataError(str(e)) from None
    tg.write_graph(graph, args.out)
    off_diag = (graph.A.nnz - graph.n_nodes) // 2
    print(f"nodes {graph.n_nodes} (docs {graph.n_docs}, words {graph.n_words}) "
          f"edges {off_diag} nnz {graph.A.nnz} -> {args.out}")
    return EXIT_OK


def _metrics_line(obj) -> str:
    return json.dumps(obj, sort_keys=False)


def cmd_train(args) -> int:
    overrides = {"seed": args.seed, "genvec": args.genvec, "max_epochs": args.max_epochs,
                 "graph": args.graph, "checkpoint": args.checkpoint, "metrics": args.metrics}
    if args.config:
        _open_check(args.config, "config file")
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as e:
        raise UsageError(f"invalid config: {e}") from None
    for key in ("graph", "checkpoint", "metrics"):
        if not cfg.paths[key]:
            raise UsageError(f"missing required path '{key}' (flag or config key)")
    graph = _load_graph(cfg.paths["graph"])
    out = open(cfg.paths["metrics"], "w", encoding="utf-8", newline="\n")
    with out:
        def on_epoch(rec):
            out.write(_metrics_line({
                "epoch": rec.epoch, "train_loss": rec.train_loss, "val_loss": rec.val_loss,
                "val_acc": rec.val_acc, "seconds": 0.0 if args.no_timing else rec.seconds}) + "\n")
        try:
            state, history = train(graph, cfg.train, on_epoch=on_epoch)
        except TrainingDiverged as e:
            print(f"training aborted: {e}", file=sys.stderr)
            return EXIT_DATA
        except ValueError as e:
            raise DataError(str(e)) from None
        test = evaluate(state, graph, graph.test_mask)
        out.write(_metrics_line({
            "summary": True, "best_epoch": history.best_epoch,
            "stopping_epoch": history.stopping_epoch, "stopped_early": history.stopped_early,
            "test": test.to_dict()}) + "\n")
    save_checkpoint(state, cfg.paths["checkpoint"])
    print(f"best epoch {history.best_epoch}, stopped at {history.stopping_epoch}, "
          f"test accuracy {test.accuracy:.4f} macro-F1 {test.macro_f1:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    graph = _load_graph(args.graph)
    _open_check(args.checkpoint, "checkpoint")
    try:
        state = load_checkpoint(args.checkpoint)
    except CheckpointError as e:
        raise DataError(str(e)) from None
    n_in, n_out = state.layer1.W.shape[1], state.layer2.W.shape[0]
    if n_in != graph.n_nodes or n_out != graph.n_classes:
        raise DataError(f"checkpoint expects {n_in} nodes / {n_out} classes, "
                        f"graph has {graph.n_nodes} nodes / {graph.n_classes} classes")
    mask = graph.mask(args.split) if args.split != "train" else (graph.train_mask | graph.val_mask)
    try:
        metrics = evaluate(state, graph, mask)
    except ValueError as e:
        raise DataError(str(e)) from None
    print(json.dumps(metrics.to_dict()))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rows = run_gradcheck(seeds=range(args.seed, args.seed + args.n_seeds), n_nodes=args.nodes,
                         hidden=args.hidden, n_classes=args.classes, k_prime=args.k_prime)
    print(format_report(rows))
    return EXIT_OK if all(r.ok for r in rows) else EXIT_CHECK


BENCH_VARIANTS = ("gcn", "max", "mean", "diag", "topk", "fbp", "bp")


def cmd_bench(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    bad = [v for v in variants if v not in BENCH_VARIANTS]
    if bad:
        raise UsageError(f"unknown variants {bad}; choose from {BENCH_VARIANTS}")
    if "bp" in variants and not args.allow_bp:
        raise UsageError("the bp variant is two orders of magnitude slower; pass --allow-bp to run it")
    if "gcn" not in variants:
        variants.insert(0, "gcn")
    graph = _load_graph(args.graph)
    try:
        cfg = load_config(args.config, {"seed": args.seed}).train
    except ConfigError as e:
        raise UsageError(f"invalid config: {e}") from None
    models = {v: (v, None) if v in ("gcn", "fbp", "bp") else ("gfb", GenVecOp.parse(v, cfg.k_prime))
              for v in variants}
    times = bench_variants(graph, cfg, models, repeats=args.repeats)
    base = times["gcn"]
    print(f"{'variant':<10}{'sec/epoch':>12}{'ratio_vs_gcn':>14}")
    for v, t in times.items():
        print(f"{v:<10}{t:>12.6f}{t / base:>14.3f}")
    if args.ks:
        ks = [int(k) for k in args.ks.split(",")]
        ks, extra, slope = k_scaling(graph, ks, GenVecOp.parse(args.k_genvec, cfg.k_prime))
        print(f"k-scaling ({args.k_genvec}): extra forward seconds over gcn")
        for k, e in zip(ks, extra):
            print(f"  k={k:<5d}{e:.3e}")
        print(f"  log-log slope {slope:.3f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        corpus = synth_corpus(args.n_docs, args.n_classes, args.vocab_size, args.noise, args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    tg.write_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} documents to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gfbgcn", description="GFB-GCN text classification toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("build-graph", help="corpus TSV -> textgraph v1 file")
    s.add_argument("--corpus", required=True)
    s.add_argument("--stopwords", help="one word per line (default: bundled English list)")
    s.add_argument("--out", required=True)
    s.add_argument("--window", type=int, default=20)
    s.add_argument("--min-freq", type=int, default=5)
    s.set_defaults(func=cmd_build_graph)

    s = sub.add_parser("train", help="train on a graph file")
    s.add_argument("--graph")
    s.add_argument("--config", help="key = value file; flags override it")
    s.add_argument("--checkpoint")
    s.add_argument("--metrics")
    s.add_argument("--seed", type=int)
    s.add_argument("--genvec", help="max, mean, diag, topk or none")
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--no-timing", action="store_true", help="write seconds=0 for byte-identical metrics")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--graph", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", choices=("train", "val", "test"), default="test")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-seeds", type=int, default=5)
    s.add_argument("--nodes", type=int, default=6)
    s.add_argument("--hidden", type=int, default=5)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--k-prime", type=int, default=3)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("bench", help="seconds per training epoch per variant")
    s.add_argument("--graph", required=True)
    s.add_argument("--config")
    s.add_argument("--variants", default="gcn,max,mean,diag,topk,fbp")
    s.add_argument("--allow-bp", action="store_true", help="permit the slow bilinear pooling variant")
    s.add_argument("--ks", default="8,16,32,64,128,256", help="output widths for the k-scaling test ('' to skip)")
    s.add_argument("--k-genvec", default="max")
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("synth", help="write a synthetic corpus TSV")
    s.add_argument("--n-docs", type=int, default=200)
    s.add_argument("--n-classes", type=int, default=2)
    s.add_argument("--vocab-size", type=int, default=150)
    s.add_argument("--noise", type=float, default=0.3)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"gfbgcn: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"gfbgcn: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as e:
        print(f"gfbgcn: numerical error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
