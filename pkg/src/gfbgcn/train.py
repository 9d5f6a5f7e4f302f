"""Full-graph transductive training, evaluation metrics and epoch timing."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .core_math import Rng
from .model import (
    ModelState, forward, gcn_forward, gfb_forward, init_model, model_backward, node_graph,
)
from .pooling import GenVecOp, GenVecKind

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.02
    dropout: float = 0.5
    max_epochs: int = 200
    patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0
    embedding_dim: int = 200
    genvec: str = "max"           # max | mean | diag | topk, or "none" for the plain GCN
    k_prime: int = 3
    lambda_init: float = 0.1

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")
        if self.genvec != "none":
            op = GenVecOp.parse(self.genvec, self.k_prime)
            if op.kind is GenVecKind.UPPER:
                raise ValueError("upper is an analysis operator and cannot be trained")
            self.genvec = op.name

    @property
    def variant(self) -> str:
        return "gcn" if self.genvec == "none" else "gfb"

    def genvec_op(self) -> GenVecOp | None:
        return None if self.genvec == "none" else GenVecOp.parse(self.genvec, self.k_prime)


# -- loss and optimizer --------------------------------------------------------

def masked_cross_entropy(probs: np.ndarray, labels, mask) -> tuple[float, np.ndarray]:
    """Mean NLL over masked rows and its gradient w.r.t. the pre-softmax logits."""
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("empty mask")
    labels = np.asarray(labels)
    y = labels[idx]
    p = probs[idx, y]
    with np.errstate(divide="ignore"):
        loss = float(-np.mean(np.log(p)))
    grad = np.zeros_like(probs)
    grad[idx] = probs[idx]
    grad[idx, y] -= 1.0
    grad /= idx.size
    return loss, grad


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], **kw) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()}, **kw)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if np.shape(g) != np.shape(p):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {k!r} {np.shape(p)}")
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_p[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


# -- metrics -----------------------------------------------------------------

@dataclass
class Metrics:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: list[dict]

    def to_dict(self) -> dict:
        return asdict(self)


def classification_metrics(pred, truth, n_classes: int, class_names=None) -> Metrics:
    """Accuracy and unweighted per-class means of precision, recall and F1.

    Undefined ratios (no predictions, no support, or both) count as 0.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.size == 0:
        raise ValueError("empty evaluation set")
    names = class_names or [str(c) for c in range(n_classes)]
    rows = []
    for c in range(n_classes):
        tp = int(np.sum((pred == c) & (truth == c)))
        n_pred = int(np.sum(pred == c))
        n_true = int(np.sum(truth == c))
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_true if n_true else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        rows.append({"class": names[c], "precision": p, "recall": r, "f1": f, "support": n_true})
    return Metrics(
        accuracy=float(np.mean(pred == truth)),
        macro_precision=float(np.mean([r["precision"] for r in rows])),
        macro_recall=float(np.mean([r["recall"] for r in rows])),
        macro_f1=float(np.mean([r["f1"] for r in rows])),
        per_class=rows)


def evaluate(state: ModelState, graph, mask) -> Metrics:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty mask")
    probs = forward(graph, state, train_mode=False).probs
    y = graph.node_labels()
    names = getattr(graph, "class_names", None)
    return classification_metrics(probs[mask].argmax(axis=1), y[mask], graph.n_classes, names)


# -- training loop ---------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopping_epoch: int = 0
    stopped_early: bool = False


def prepare_graph(graph, config: TrainConfig):
    """Ensure a validation split exists (drawn from the training docs with the config seed)."""
    if graph.val_mask.any():
        return graph
    return graph.with_validation(config.val_fraction, Rng(config.seed).child("split"))


def train(graph, config: TrainConfig, on_epoch=None) -> tuple[ModelState, TrainHistory]:
    """Adam on the training mask with early stopping on validation loss.

    Stops once validation loss has not strictly improved for ``patience``
    consecutive epochs and returns the parameters of the best epoch.
    """
    if hasattr(graph, "with_validation"):
        graph = prepare_graph(graph, config)
    g = node_graph(graph)
    y = g.node_labels()
    train_mask, val_mask = g.mask("train"), g.mask("val")
    if not train_mask.any() or not val_mask.any():
        raise ValueError("graph needs non-empty train and val masks")
    root = Rng(config.seed)
    state = init_model(g.n_nodes, g.n_classes, root.child("init"), hidden=config.embedding_dim,
                       variant=config.variant, g=config.genvec_op(), lam=config.lambda_init,
                       dropout=config.dropout)
    drop_rng = root.child("dropout")
    params = state.params()
    adam = AdamState.zeros_like(params)
    history = TrainHistory()
    best_loss, best_params, since_best = np.inf, params, 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        cache = forward(g, state, train_mode=True, rng=drop_rng)
        loss, d_logits = masked_cross_entropy(cache.probs, y, train_mask)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite training loss at epoch {epoch}")
        grads = model_backward(g, state, cache, d_logits)
        params, adam = adam_step(params, grads, adam, config.learning_rate)
        state = state.with_params(params)
        probs = forward(g, state, train_mode=False).probs
        val_loss, _ = masked_cross_entropy(probs, y, val_mask)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        val_acc = float(np.mean(probs[val_mask].argmax(axis=1) == y[val_mask]))
        rec = EpochRecord(epoch, loss, val_loss, val_acc, time.perf_counter() - t0)
        history.records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        log.debug("epoch %d train %.4f val %.4f acc %.4f", epoch, loss, val_loss, val_acc)
        if val_loss < best_loss:
            best_loss, best_params, since_best = val_loss, params, 0
            history.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= config.patience:
                history.stopped_early = True
                break
    history.stopping_epoch = len(history.records)
    return state.with_params(best_params), history


# -- timing ------------------------------------------------------------------

class _EpochRunner:
    def __init__(self, graph, config: TrainConfig, variant: str, g: GenVecOp | None, fbp_rank: int):
        self.graph = graph
        self.y = graph.node_labels()
        self.mask = graph.mask("train")
        self.lr = config.learning_rate
        root = Rng(config.seed)
        self.state = init_model(graph.n_nodes, graph.n_classes, root.child("init"),
                                hidden=config.embedding_dim, variant=variant, g=g,
                                lam=config.lambda_init, dropout=config.dropout, fbp_rank=fbp_rank)
        self.params = self.state.params()
        self.adam = AdamState.zeros_like(self.params)
        self.rng = root.child("dropout")
        self.times: list[float] = []

    def step(self, timed: bool):
        t0 = time.perf_counter()
        cache = forward(self.graph, self.state, train_mode=True, rng=self.rng)
        _, d_logits = masked_cross_entropy(cache.probs, self.y, self.mask)
        grads = model_backward(self.graph, self.state, cache, d_logits)
        self.params, self.adam = adam_step(self.params, grads, self.adam, self.lr)
        self.state = self.state.with_params(self.params)
        if timed:
            self.times.append(time.perf_counter() - t0)


def bench_variants(graph, config: TrainConfig, variants, warmup: int = 2, repeats: int = 5,
                   fbp_rank: int = 8) -> dict[str, float]:
    """Median seconds per training step (forward, loss, backward, Adam) for several models.

    ``variants`` maps a label to ``(variant, GenVecOp or None)``.  Models step
    round robin, one epoch each per round, so background load hits all of
    them alike; the first ``warmup`` rounds are not timed.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if hasattr(graph, "with_validation"):
        graph = prepare_graph(graph, config)
    gr = node_graph(graph)
    runners = {label: _EpochRunner(gr, config, v, g, fbp_rank) for label, (v, g) in variants.items()}
    for i in range(warmup + repeats):
        for r in runners.values():
            r.step(timed=i >= warmup)
    return {label: float(np.median(r.times)) for label, r in runners.items()}


def bench_epoch(graph, config: TrainConfig, variant: str = "gcn", g: GenVecOp | None = None,
                warmup: int = 2, repeats: int = 5, fbp_rank: int = 8) -> float:
    """Median wall-clock seconds of one training step of a single model."""
    return bench_variants(graph, config, {variant: (variant, g)}, warmup, repeats, fbp_rank)[variant]


def k_scaling(graph, ks, g: GenVecOp, hidden: int = 64, repeats: int = 7, seed: int = 0,
              min_nodes: int = 20000):
    """Extra forward time of a GFB layer over a GCN layer for several output widths k.

    Small graphs are tiled block-diagonally up to ``min_nodes`` nodes so the
    timings are not dominated by call overhead.  Returns
    ``(ks, extra_seconds, loglog_slope)``; a slope near 1 or below means the
    extra cost grows at most linearly in k.
    """
    import scipy.sparse as sp

    from .model import GcnLayer, GfbLayer

    rng = Rng(seed)
    A = graph.A_norm
    copies = max(1, -(-min_nodes // A.shape[0]))
    if copies > 1:
        A = sp.block_diag([A] * copies, format="csr")
    H = rng.child("H").generator.random((A.shape[0], hidden))
    extra = []
    for k in ks:
        W = rng.child(f"W{k}").generator.standard_normal((k, hidden))
        gcn, gfb = GcnLayer(W, "none"), GfbLayer(W, 0.5, GenVecOp(g.kind, min(g.k_prime, k)))
        tg, tf = [], []
        for _ in range(repeats):
            t0 = time.perf_counter()
            gcn_forward(A, H, gcn)
            t1 = time.perf_counter()
            gfb_forward(A, H, gfb)
            t2 = time.perf_counter()
            tg.append(t1 - t0)
            tf.append(t2 - t1)
        extra.append(max(float(np.median(tf) - np.median(tg)), 1e-9))
    slope = float(np.polyfit(np.log(ks), np.log(extra), 1)[0])
    return list(ks), extra, slope
