#!/usr/bin/env python3
"""Seconds per training epoch for every output layer on one graph.

    python scripts/bench_table.py                     # synthetic fixture
    python scripts/bench_table.py --graph r8.graph    # any textgraph v1 file (skips BP unless --bp)
"""
import argparse

from gfbgcn.pooling import GenVecOp
from gfbgcn.synth import synth_corpus
from gfbgcn.textgraph import build_graph, read_graph
from gfbgcn.train import TrainConfig, bench_variants


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--graph")
    ap.add_argument("--bp", action="store_true", help="include bilinear pooling (slow, memory hungry)")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    graph = read_graph(args.graph) if args.graph else build_graph(synth_corpus())
    include_bp = args.bp or not args.graph
    cfg = TrainConfig()
    rows = [("Text GCN", "gcn", None), ("FBP", "fbp", None)]
    if include_bp:
        rows.append(("BP", "bp", None))
    rows += [(f"GFB+{n}Vec", "gfb", GenVecOp.parse(n)) for n in ("Mean", "Diag", "Max", "Topk")]
    times = bench_variants(graph, cfg, {label: (v, g) for label, v, g in rows}, repeats=args.repeats)
    base = times["Text GCN"]
    for label, t in times.items():
        print(f"{label:<14}{t:>10.4f} s{t / base:>8.2f}x")


if __name__ == "__main__":
    main()
