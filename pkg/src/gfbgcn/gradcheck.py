"""Finite-difference verification of the hand-written backward passes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core_math import Rng, dropout_mask, finite_difference_grad, relative_error, to_csr
from .model import ModelState, NodeGraph, forward, init_model, model_backward
from .pooling import TRAINABLE_KINDS, GenVecOp
from .textgraph import normalize_adjacency
from .train import masked_cross_entropy

THRESHOLD = 1e-5


def random_graph(n_nodes: int, n_classes: int, rng: Rng, density: float = 0.5) -> NodeGraph:
    """Symmetric self-looped random graph with positive weights; every node labeled and in train."""
    gen = rng.generator
    upper = np.triu(gen.random((n_nodes, n_nodes)) < density, k=1)
    w = np.triu(gen.uniform(0.1, 1.0, (n_nodes, n_nodes)), k=1) * upper
    A = to_csr(w + w.T + np.eye(n_nodes))
    y = gen.integers(0, n_classes, n_nodes)
    train = np.ones(n_nodes, dtype=bool)
    return NodeGraph(A, normalize_adjacency(A), y, {"train": train, "val": train, "test": train}, n_classes)


def loss_fn(graph, state: ModelState, mask):
    y = graph.node_labels()
    train = graph.mask("train")

    def f(params):
        cache = forward(graph, state.with_params(params), train_mode=True, mask=mask)
        return masked_cross_entropy(cache.probs, y, train)[0]

    return f


def check_state(graph, state: ModelState, mask=None, h: float = 1e-5, backward=model_backward):
    """Relative error per parameter group between analytic and central-difference gradients."""
    params = state.params()
    f = loss_fn(graph, state, mask)
    cache = forward(graph, state, train_mode=True, mask=mask)
    _, d_logits = masked_cross_entropy(cache.probs, graph.node_labels(), graph.mask("train"))
    analytic = backward(graph, state, cache, d_logits)
    errors = {}
    for name, value in params.items():
        def f_one(x, name=name):
            p = dict(params)
            p[name] = x
            return f(p)
        numeric = finite_difference_grad(f_one, value, h)
        errors[name] = relative_error(analytic[name], numeric)
    return errors


@dataclass
class GradcheckRow:
    layer: str
    param: str
    genvec: str
    max_rel_err: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < THRESHOLD


_LAYER_OF = {"W1": "layer1", "W2": "layer2", "lam": "layer2"}


def run_gradcheck(seeds=(0, 1, 2, 3, 4), n_nodes: int = 6, hidden: int = 5, n_classes: int = 4,
                  k_prime: int = 3, dropout: float = 0.5, h: float = 1e-5,
                  backward=model_backward) -> list[GradcheckRow]:
    """Gradient check of every trainable GenVec kind over several random graphs.

    One row per (parameter, GenVec kind) with the worst relative error across seeds.
    """
    worst: dict[tuple[str, str], float] = {}
    for kind in TRAINABLE_KINDS:
        g = GenVecOp(kind, k_prime)
        for seed in seeds:
            rng = Rng(seed).child(kind.value)
            graph = random_graph(n_nodes, n_classes, rng.child("graph"))
            state = init_model(n_nodes, n_classes, rng.child("init"), hidden=hidden, variant="gfb",
                               g=g, lam=float(rng.child("lam").generator.uniform(0.2, 1.0)),
                               dropout=dropout)
            mask = dropout_mask(n_nodes, hidden, dropout, rng.child("mask")) if dropout else None
            for name, err in check_state(graph, state, mask, h, backward).items():
                key = (name, kind.value)
                worst[key] = max(worst.get(key, 0.0), err)
    return [GradcheckRow(_LAYER_OF[p], p, gv, e) for (p, gv), e in worst.items()]


def format_report(rows: list[GradcheckRow]) -> str:
    lines = [f"{'layer':<8}{'param':<6}{'genvec':<8}{'max_rel_err':>14}  status"]
    for r in rows:
        lines.append(f"{r.layer:<8}{r.param:<6}{r.genvec:<8}{r.max_rel_err:>14.3e}  {'ok' if r.ok else 'FAIL'}")
    return "\n".join(lines)
