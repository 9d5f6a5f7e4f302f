"""Two-layer GCN with a generalized factorized bilinear (GFB) output layer.

Layer 1 is a plain GCN over identity node features (ReLU); layer 2 computes,
per node u,

    z_u = W h_u,    t_u = z_u + lam * genvec_rank1(z_u, g)

and aggregates ``A_norm @ T``.  A row-wise softmax turns the result into
class probabilities.  Every forward pass stores what its hand-written
backward pass needs in a :class:`Cache`.

Bilinear pooling (BP) and factorized bilinear pooling (FBP) output layers are
available for benchmarking; both aggregate the vectorized second-order
features and then apply a linear read-out.
"""
from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np
import scipy.sparse as sp

from .core_math import Rng, dropout_mask, glorot_init, spmm
from .pooling import (
    GenVecKind, GenVecOp, TRAINABLE_KINDS, bilinear_pool, bilinear_pool_backward,
    genvec_rank1, genvec_rank1_backward,
)

log = logging.getLogger(__name__)


@dataclass
class GcnLayer:
    W: np.ndarray                 # out_dim x in_dim
    activation: str = "relu"      # "relu" or "none"

    def __post_init__(self):
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class GfbLayer:
    W: np.ndarray                 # out_dim x in_dim, shared by both branches
    lam: float
    g: GenVecOp
    eps: float = 0.0              # not used by the rank-one path

    def __post_init__(self):
        if self.g.kind not in TRAINABLE_KINDS:
            raise ValueError(f"{self.g.kind.value} is not a trainable GenVec operator")
        self.lam = float(self.lam)


@dataclass
class BpLayer:
    """Bilinear pooling of the full d x d auto-correlation, then a linear read-out."""
    W: np.ndarray                 # out_dim x d(d+1)/2
    eps: float = 0.0


@dataclass
class FbpLayer:
    """Factorized bilinear pooling: (F h)(F h)^T vectorized, then a linear read-out."""
    F: np.ndarray                 # k x d
    V: np.ndarray                 # out_dim x k(k+1)/2
    eps: float = 0.0


OutputLayer = Union[GcnLayer, GfbLayer, BpLayer, FbpLayer]


@dataclass
class ModelState:
    layer1: GcnLayer
    layer2: OutputLayer
    dropout: float = 0.5

    def params(self) -> dict[str, np.ndarray]:
        p = {"W1": self.layer1.W}
        l2 = self.layer2
        if isinstance(l2, GcnLayer):
            p["W2"] = l2.W
        elif isinstance(l2, GfbLayer):
            p["W2"] = l2.W
            p["lam"] = np.array(l2.lam)
        elif isinstance(l2, BpLayer):
            p["W2"] = l2.W
        else:
            p["F"] = l2.F
            p["V"] = l2.V
        return p

    def with_params(self, params: dict[str, np.ndarray]) -> "ModelState":
        l1 = replace(self.layer1, W=params["W1"])
        l2 = self.layer2
        if isinstance(l2, (GcnLayer, BpLayer)):
            l2 = replace(l2, W=params["W2"])
        elif isinstance(l2, GfbLayer):
            l2 = replace(l2, W=params["W2"], lam=float(params["lam"]))
        else:
            l2 = replace(l2, F=params["F"], V=params["V"])
        return replace(self, layer1=l1, layer2=l2)


def init_model(n_nodes: int, n_classes: int, rng: Rng, hidden: int = 200,
               variant: str = "gfb", g: GenVecOp | None = None, lam: float = 0.1,
               dropout: float = 0.5, fbp_rank: int = 8, eps: float = 0.0) -> ModelState:
    """Glorot-initialized two-layer model.  ``variant`` is gcn, gfb, bp or fbp."""
    layer1 = GcnLayer(glorot_init(hidden, n_nodes, rng.child("W1")), "relu")
    if variant == "gcn":
        layer2 = GcnLayer(glorot_init(n_classes, hidden, rng.child("W2")), "none")
    elif variant == "gfb":
        if g is None:
            raise ValueError("the gfb variant needs a GenVec operator")
        if g.kind is GenVecKind.TOPK and g.k_prime > n_classes:
            log.warning("k_prime=%d exceeds output width %d; clamping", g.k_prime, n_classes)
            g = GenVecOp(g.kind, n_classes)
        layer2 = GfbLayer(glorot_init(n_classes, hidden, rng.child("W2")), lam, g, eps)
    elif variant == "bp":
        D = hidden * (hidden + 1) // 2
        layer2 = BpLayer(glorot_init(n_classes, D, rng.child("W2")), eps)
    elif variant == "fbp":
        K = fbp_rank * (fbp_rank + 1) // 2
        layer2 = FbpLayer(glorot_init(fbp_rank, hidden, rng.child("F")),
                          glorot_init(n_classes, K, rng.child("V")), eps)
    else:
        raise ValueError(f"unknown model variant {variant!r}")
    return ModelState(layer1, layer2, dropout)


# -- single layers -----------------------------------------------------------

def _transform(H, W):
    if H is None:
        # identity features: I @ W^T is W^T itself, no n x n matrix needed
        return np.ascontiguousarray(W.T)
    H = np.asarray(H, dtype=np.float64)
    if H.shape[1] != W.shape[1]:
        raise ValueError(f"feature dim {H.shape[1]} does not match layer input dim {W.shape[1]}")
    return H @ W.T


def gcn_forward(A_norm: sp.csr_matrix, H, layer: GcnLayer) -> np.ndarray:
    """act(A_norm @ H @ W^T); ``H=None`` means identity input features."""
    if H is None and layer.W.shape[1] != A_norm.shape[0]:
        raise ValueError(f"identity input needs in_dim == n_nodes ({A_norm.shape[0]}), got {layer.W.shape[1]}")
    out = spmm(A_norm, _transform(H, layer.W))
    if layer.activation == "relu":
        out = np.maximum(out, 0.0)
    return out


def gfb_terms(H, layer: GfbLayer) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-node (z, second-order term, t = z + lam * second-order term)."""
    Z = _transform(H, layer.W)
    G = genvec_rank1(Z, layer.g)
    return Z, G, Z + layer.lam * G


def gfb_forward(A_norm: sp.csr_matrix, H, layer: GfbLayer) -> np.ndarray:
    """A_norm @ T with t_u = W h_u + lam * genvec_rank1(W h_u); pre-softmax."""
    return spmm(A_norm, gfb_terms(H, layer)[2])


def bp_forward(A_norm, H, layer: BpLayer) -> np.ndarray:
    return spmm(A_norm, bilinear_pool(H, layer.eps)) @ layer.W.T


def fbp_forward(A_norm, H, layer: FbpLayer) -> np.ndarray:
    P = bilinear_pool(_transform(H, layer.F), layer.eps)
    return spmm(A_norm, P) @ layer.V.T


def softmax(X: np.ndarray) -> np.ndarray:
    X = X - X.max(axis=1, keepdims=True)
    E = np.exp(X)
    return E / E.sum(axis=1, keepdims=True)


# -- whole model -------------------------------------------------------------

@dataclass
class NodeGraph:
    """Graph view used by the model: adjacency, node labels and split masks."""
    A: sp.csr_matrix
    A_norm: sp.csr_matrix
    y: np.ndarray                 # class index per node, -1 when unlabeled
    splits: dict[str, np.ndarray] = field(default_factory=dict)
    n_classes: int = 0

    @property
    def n_nodes(self) -> int:
        return self.A.shape[0]

    def node_labels(self) -> np.ndarray:
        return self.y

    def mask(self, split: str) -> np.ndarray:
        return self.splits[split]


def node_graph(graph) -> NodeGraph:
    if isinstance(graph, NodeGraph):
        return graph
    return NodeGraph(graph.A, graph.A_norm, graph.node_labels(),
                     {s: graph.mask(s) for s in ("train", "val", "test")}, graph.n_classes)


def permute_graph(graph, perm) -> NodeGraph:
    """Relabel nodes so that new node i is old node ``perm[i]``."""
    g = node_graph(graph)
    perm = np.asarray(perm)
    n = g.n_nodes
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError("perm must be a permutation of range(n_nodes)")
    return NodeGraph(g.A[perm][:, perm].tocsr(), g.A_norm[perm][:, perm].tocsr(), g.y[perm],
                     {s: m[perm] for s, m in g.splits.items()}, g.n_classes)


def permute_state(state: ModelState, perm) -> ModelState:
    """Layer-1 weight columns follow the node relabeling of :func:`permute_graph`."""
    return replace(state, layer1=replace(state.layer1, W=state.layer1.W[:, np.asarray(perm)]))


def invert_permutation(perm) -> np.ndarray:
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return inv


@dataclass
class Cache:
    pre1: np.ndarray
    H1: np.ndarray
    mask: np.ndarray | None
    H1d: np.ndarray
    extra: dict
    logits: np.ndarray
    probs: np.ndarray


def forward(graph, state: ModelState, train_mode: bool = False, rng: Rng | None = None,
            mask: np.ndarray | None = None) -> Cache:
    """Full forward pass keeping intermediates.

    In train mode a dropout mask on the layer-1 output is drawn from ``rng``
    unless ``mask`` is given explicitly.
    """
    A = graph.A_norm
    n = A.shape[0]
    if state.layer1.W.shape[1] != n:
        raise ValueError(f"layer 1 expects {state.layer1.W.shape[1]} nodes, graph has {n}")
    pre1 = spmm(A, _transform(None, state.layer1.W))
    H1 = np.maximum(pre1, 0.0)
    if train_mode and state.dropout > 0.0:
        if mask is None:
            if rng is None:
                raise ValueError("train mode with dropout needs an rng or an explicit mask")
            mask = dropout_mask(*H1.shape, state.dropout, rng)
        H1d = H1 * mask
    else:
        mask = None
        H1d = H1
    l2 = state.layer2
    extra = {}
    if isinstance(l2, GcnLayer):
        logits = spmm(A, _transform(H1d, l2.W))
    elif isinstance(l2, GfbLayer):
        Z, G, T = gfb_terms(H1d, l2)
        extra.update(Z=Z, G=G)
        logits = spmm(A, T)
    elif isinstance(l2, BpLayer):
        Q = spmm(A, bilinear_pool(H1d, l2.eps))
        extra.update(Q=Q)
        logits = Q @ l2.W.T
    else:
        Z = _transform(H1d, l2.F)
        Q = spmm(A, bilinear_pool(Z, l2.eps))
        extra.update(Z=Z, Q=Q)
        logits = Q @ l2.V.T
    return Cache(pre1, H1, mask, H1d, extra, logits, softmax(logits))


def model_forward(graph, state: ModelState, train_mode: bool = False, rng: Rng | None = None) -> np.ndarray:
    """Class probabilities per node (rows sum to one)."""
    return forward(graph, state, train_mode, rng).probs


def _bp_backward_chunks(H, dP, chunk=64):
    out = np.empty_like(H)
    for s in range(0, H.shape[0], chunk):
        out[s:s + chunk] = bilinear_pool_backward(H[s:s + chunk], dP[s:s + chunk])
    return out


def model_backward(graph, state: ModelState, cache: Cache | None, d_logits) -> dict[str, np.ndarray]:
    """Gradients of the loss w.r.t. every parameter, given d loss / d logits."""
    if cache is None:
        raise ValueError("model_backward needs the cache of a forward pass")
    A = graph.A_norm
    AT = A.T.tocsr()
    d_logits = np.asarray(d_logits, dtype=np.float64)
    l2 = state.layer2
    grads = {}
    if isinstance(l2, GcnLayer):
        dZ = spmm(AT, d_logits)
        grads["W2"] = dZ.T @ cache.H1d
        dH1d = dZ @ l2.W
    elif isinstance(l2, GfbLayer):
        Z, G = cache.extra["Z"], cache.extra["G"]
        dT = spmm(AT, d_logits)
        grads["lam"] = np.array(np.sum(dT * G))
        dZ = dT + l2.lam * genvec_rank1_backward(Z, l2.g, dT)
        grads["W2"] = dZ.T @ cache.H1d
        dH1d = dZ @ l2.W
    elif isinstance(l2, BpLayer):
        grads["W2"] = d_logits.T @ cache.extra["Q"]
        dP = spmm(AT, d_logits @ l2.W)
        dH1d = _bp_backward_chunks(cache.H1d, dP)
    else:
        grads["V"] = d_logits.T @ cache.extra["Q"]
        dP = spmm(AT, d_logits @ l2.V)
        dZ = bilinear_pool_backward(cache.extra["Z"], dP)
        grads["F"] = dZ.T @ cache.H1d
        dH1d = dZ @ l2.F
    dH1 = dH1d if cache.mask is None else dH1d * cache.mask
    dpre1 = dH1 * (cache.pre1 > 0.0)
    grads["W1"] = spmm(AT, dpre1).T
    return grads


# -- checkpoints -------------------------------------------------------------

MAGIC = b"GFBGCN-CKPT v1\n"


class CheckpointError(ValueError):
    pass


def save_checkpoint(state: ModelState, path) -> None:
    """Magic line, JSON header line, then W1, W2 (row-major) and lambda as little-endian float64."""
    l1, l2 = state.layer1, state.layer2
    if not isinstance(l2, (GcnLayer, GfbLayer)):
        raise TypeError("only gcn and gfb models can be checkpointed")
    header = {
        "n_nodes": l1.W.shape[1], "hidden": l1.W.shape[0], "n_classes": l2.W.shape[0],
        "layer2": "gfb" if isinstance(l2, GfbLayer) else "gcn",
        "genvec": l2.g.name if isinstance(l2, GfbLayer) else None,
        "k_prime": l2.g.k_prime if isinstance(l2, GfbLayer) else None,
        "eps": l2.eps if isinstance(l2, GfbLayer) else 0.0,
        "dropout": state.dropout,
    }
    lam = l2.lam if isinstance(l2, GfbLayer) else 0.0
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    buf.write(np.ascontiguousarray(l1.W, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(l2.W, dtype="<f8").tobytes())
    buf.write(struct.pack("<d", lam))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a GFBGCN v1 checkpoint (bad magic/version)")
    nl = raw.find(b"\n", len(MAGIC))
    if nl < 0:
        raise CheckpointError(f"{path}: truncated header")
    try:
        h = json.loads(raw[len(MAGIC):nl])
        n, d, c = int(h["n_nodes"]), int(h["hidden"]), int(h["n_classes"])
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from None
    body = raw[nl + 1:]
    expected = 8 * (d * n + c * d + 1)
    if len(body) != expected:
        raise CheckpointError(
            f"{path}: payload is {len(body)} bytes, header shapes need {expected}")
    arr = np.frombuffer(body, dtype="<f8").astype(np.float64)
    W1 = arr[:d * n].reshape(d, n).copy()
    W2 = arr[d * n:d * n + c * d].reshape(c, d).copy()
    lam = float(arr[-1])
    if not (np.all(np.isfinite(W1)) and np.all(np.isfinite(W2)) and np.isfinite(lam)):
        raise CheckpointError(f"{path}: non-finite parameters")
    if h["layer2"] == "gfb":
        layer2 = GfbLayer(W2, lam, GenVecOp(GenVecKind(h["genvec"]), int(h["k_prime"])), float(h["eps"]))
    elif h["layer2"] == "gcn":
        layer2 = GcnLayer(W2, "none")
    else:
        raise CheckpointError(f"{path}: unknown layer2 {h['layer2']!r}")
    return ModelState(GcnLayer(W1, "relu"), layer2, float(h["dropout"]))
