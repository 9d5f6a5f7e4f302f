#!/usr/bin/env python3
"""R8 reproduction: GCN vs GFB variants over several seeds with the default hyper-parameters.

    python scripts/run_r8.py path/to/r8.tsv --variants none max --seeds 0 1 2

The corpus must be ``doc_id<TAB>train|test<TAB>label<TAB>text``.  Record the
sha256 printed at start-up next to any reported number; public R8 copies differ.
"""
import argparse
import hashlib

import numpy as np

from gfbgcn.textgraph import build_graph, read_corpus, read_stopwords
from gfbgcn.train import TrainConfig, evaluate, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("corpus")
    ap.add_argument("--variants", nargs="+", default=["none", "mean", "diag", "max", "topk"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()
    with open(args.corpus, "rb") as fh:
        print("sha256", hashlib.sha256(fh.read()).hexdigest())
    graph = build_graph(read_corpus(args.corpus), read_stopwords(), window_size=20, min_freq=5)
    print(f"graph: {graph.n_docs} docs, {graph.n_words} words, {graph.n_classes} classes, nnz {graph.A.nnz}")
    for name in args.variants:
        accs, f1s, epochs = [], [], []
        for seed in args.seeds:
            state, hist = train(graph, TrainConfig(genvec=name, seed=seed))
            m = evaluate(state, graph, graph.test_mask)
            accs.append(m.accuracy)
            f1s.append(m.macro_f1)
            epochs.append(hist.stopping_epoch)
            print(f"  {name} seed {seed}: acc {m.accuracy:.4f} macro-F1 {m.macro_f1:.4f} epochs {hist.stopping_epoch}")
        print(f"{name:<6} acc {np.mean(accs):.4f} ± {np.std(accs):.4f}  macro-F1 {np.mean(f1s):.4f}  "
              f"epochs {np.mean(epochs):.1f}")


if __name__ == "__main__":
    main()
