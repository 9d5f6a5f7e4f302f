import numpy as np
import pytest
from hypothesis import given, strategies as st

from gfbgcn.core_math import Rng, dropout_mask, to_csr
from gfbgcn.gradcheck import check_state, random_graph
from gfbgcn.model import (
    CheckpointError, GcnLayer, GfbLayer, forward, gcn_forward, gfb_forward, init_model,
    invert_permutation, load_checkpoint, model_backward, model_forward, permute_graph, permute_state,
    save_checkpoint,
)
from gfbgcn.pooling import DIAGVEC, MAXVEC, MEANVEC, TRAINABLE_KINDS, GenVecOp, genvec, topkvec
from gfbgcn.textgraph import normalize_adjacency

ALL_G = [MAXVEC, MEANVEC, DIAGVEC, topkvec(2)]


def small_graph(seed, n=6, classes=3):
    return random_graph(n, classes, Rng(seed))


def test_gcn_identity_chain():
    X = np.random.default_rng(0).standard_normal((3, 3))
    out = gcn_forward(to_csr(np.eye(3)), X, GcnLayer(np.eye(3), "none"))
    np.testing.assert_array_equal(out, X)


def test_gcn_two_node_hand_case():
    A = to_csr([[1.0, 1.0], [1.0, 1.0]])
    An = normalize_adjacency(A)  # all entries 0.5
    H = np.array([[1.0, 2.0], [3.0, -4.0]])
    W = np.array([[1.0, 0.0], [1.0, 1.0]])
    # HW^T = [[1, 3], [3, -1]], averaged rows = [2, 1]
    np.testing.assert_array_equal(gcn_forward(An, H, GcnLayer(W, "none")), [[2.0, 1.0], [2.0, 1.0]])
    np.testing.assert_array_equal(gcn_forward(An, -H, GcnLayer(W, "relu")), [[0.0, 0.0], [0.0, 0.0]])


def test_gcn_identity_features_without_materializing():
    g = small_graph(1)
    W = np.random.default_rng(1).standard_normal((4, g.n_nodes))
    np.testing.assert_allclose(gcn_forward(g.A_norm, None, GcnLayer(W)),
                               gcn_forward(g.A_norm, np.eye(g.n_nodes), GcnLayer(W)), rtol=0, atol=1e-15)
    assert np.all(gcn_forward(g.A_norm, None, GcnLayer(W)) >= 0)


@pytest.mark.parametrize("g", ALL_G, ids=lambda g: g.name)
def test_lambda_zero_reduces_to_gcn(g):
    gr = small_graph(2)
    rng = np.random.default_rng(2)
    H = rng.standard_normal((gr.n_nodes, 5))
    W = rng.standard_normal((3, 5))
    np.testing.assert_array_equal(gfb_forward(gr.A_norm, H, GfbLayer(W, 0.0, g)),
                                  gcn_forward(gr.A_norm, H, GcnLayer(W, "none")))


def test_gfb_diag_hand_case():
    A = to_csr(np.eye(2))
    H = np.array([[1.0, 2.0], [0.5, 0.0]])
    lam = 0.3
    out = gfb_forward(A, H, GfbLayer(np.eye(2), lam, DIAGVEC))
    np.testing.assert_allclose(out[0], [1 + lam * 1, 2 + lam * 4], rtol=1e-15)


@pytest.mark.parametrize("g", ALL_G, ids=lambda g: g.name)
@pytest.mark.parametrize("seed", range(4))
def test_gfb_matches_explicit_M_oracle(g, seed):
    gr = small_graph(seed)
    rng = np.random.default_rng(seed)
    # nonnegative z: nonnegative features and weights
    H = rng.random((gr.n_nodes, 5))
    W = np.abs(rng.standard_normal((3, 5)))
    lam = 0.7
    A = gr.A_norm.toarray()
    T = np.stack([W @ h + lam * genvec(np.outer(W @ h, W @ h), g) for h in H])
    np.testing.assert_allclose(gfb_forward(gr.A_norm, H, GfbLayer(W, lam, g)), A @ T, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("g", ALL_G, ids=lambda g: g.name)
def test_degree_two_response(g):
    gr = small_graph(5)
    rng = np.random.default_rng(5)
    H = rng.random((gr.n_nodes, 4))
    W = rng.random((3, 4))
    first = gcn_forward(gr.A_norm, H, GcnLayer(W, "none"))
    full = gfb_forward(gr.A_norm, H, GfbLayer(W, 1.0, g))
    second = full - first
    first2 = gcn_forward(gr.A_norm, 2 * H, GcnLayer(W, "none"))
    second2 = gfb_forward(gr.A_norm, 2 * H, GfbLayer(W, 1.0, g)) - first2
    np.testing.assert_array_equal(first2, 2 * first)
    np.testing.assert_allclose(second2, 4 * second, rtol=1e-12, atol=1e-14)


def _state(gr, g=MAXVEC, seed=0, hidden=5, dropout=0.5):
    return init_model(gr.n_nodes, gr.n_classes, Rng(seed), hidden=hidden, variant="gfb", g=g, dropout=dropout)


def test_model_forward_basic():
    gr = small_graph(0)
    st_ = _state(gr)
    p = model_forward(gr, st_)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(p, model_forward(gr, st_))
    st0 = _state(gr, dropout=0.0)
    np.testing.assert_array_equal(model_forward(gr, st0, train_mode=True, rng=Rng(3)), model_forward(gr, st0))


def test_model_forward_dimension_mismatch():
    gr = small_graph(0)
    st_ = init_model(gr.n_nodes + 1, 3, Rng(0), hidden=4, g=MAXVEC)
    with pytest.raises(ValueError):
        model_forward(gr, st_)


def test_train_mode_needs_rng():
    gr = small_graph(0)
    with pytest.raises(ValueError):
        forward(gr, _state(gr), train_mode=True)


@pytest.mark.parametrize("seed", range(20))
def test_permutation_equivariance(seed):
    gr = random_graph(12, 3, Rng(seed))
    st_ = _state(gr, topkvec(2), seed)
    perm = np.random.default_rng(seed).permutation(12)
    out = model_forward(gr, st_)
    out_p = model_forward(permute_graph(gr, perm), permute_state(st_, perm))
    np.testing.assert_allclose(out_p, out[perm], rtol=0, atol=1e-10)


def test_permute_graph_roundtrip():
    gr = random_graph(8, 2, Rng(0))
    ident = permute_graph(gr, np.arange(8))
    assert (ident.A != gr.A).nnz == 0
    perm = np.random.default_rng(0).permutation(8)
    back = permute_graph(permute_graph(gr, perm), invert_permutation(perm))
    assert (back.A != gr.A).nnz == 0
    np.testing.assert_array_equal(back.y, gr.y)
    with pytest.raises(ValueError):
        permute_graph(gr, [0, 0, 1, 2, 3, 4, 5, 6])


@pytest.mark.parametrize("kind", TRAINABLE_KINDS, ids=lambda k: k.value)
@pytest.mark.parametrize("seed", range(3))
def test_backward_matches_finite_differences(kind, seed):
    gr = small_graph(seed, classes=4)
    st_ = init_model(gr.n_nodes, 4, Rng(seed), hidden=5, g=GenVecOp(kind, 3), lam=0.6)
    mask = dropout_mask(gr.n_nodes, 5, 0.5, Rng(seed + 100))
    errs = check_state(gr, st_, mask)
    assert set(errs) == {"W1", "W2", "lam"}
    assert max(errs.values()) < 1e-5, errs


@pytest.mark.parametrize("variant", ["gcn", "bp", "fbp"])
def test_baseline_backward_matches_finite_differences(variant):
    gr = small_graph(7, classes=3)
    st_ = init_model(gr.n_nodes, 3, Rng(7), hidden=4, variant=variant, fbp_rank=3, eps=0.05)
    errs = check_state(gr, st_, dropout_mask(gr.n_nodes, 4, 0.5, Rng(8)))
    assert max(errs.values()) < 1e-5, errs


def test_lambda_gradient_nonzero_at_zero():
    gr = small_graph(3)
    st_ = init_model(gr.n_nodes, gr.n_classes, Rng(3), hidden=5, g=MAXVEC, lam=0.0, dropout=0.0)
    cache = forward(gr, st_)
    d = np.random.default_rng(0).standard_normal(cache.logits.shape)
    assert model_backward(gr, st_, cache, d)["lam"] != 0.0


def test_zero_upstream_zero_grads():
    gr = small_graph(3)
    st_ = _state(gr)
    cache = forward(gr, st_)
    grads = model_backward(gr, st_, cache, np.zeros_like(cache.logits))
    for v in grads.values():
        assert not np.any(v)
    with pytest.raises(ValueError, match="cache"):
        model_backward(gr, st_, None, np.zeros_like(cache.logits))


def test_topk_clamped_to_output_width():
    st_ = init_model(10, 2, Rng(0), hidden=3, g=topkvec(3))
    assert st_.layer2.g.k_prime == 2


@pytest.mark.parametrize("variant,g", [("gfb", MAXVEC), ("gfb", topkvec(2)), ("gcn", None)])
def test_checkpoint_roundtrip(tmp_path, variant, g):
    st_ = init_model(9, 3, Rng(4), hidden=4, variant=variant, g=g, lam=0.123456789)
    p = tmp_path / "ck.bin"
    save_checkpoint(st_, p)
    back = load_checkpoint(p)
    assert back.layer1.W.tobytes() == st_.layer1.W.tobytes()
    assert back.layer2.W.tobytes() == st_.layer2.W.tobytes()
    assert type(back.layer2) is type(st_.layer2)
    if variant == "gfb":
        assert back.layer2.lam == st_.layer2.lam and back.layer2.g == st_.layer2.g
    p2 = tmp_path / "ck2.bin"
    save_checkpoint(back, p2)
    assert p.read_bytes() == p2.read_bytes()


def test_checkpoint_corruption(tmp_path):
    st_ = init_model(9, 3, Rng(4), hidden=4, g=MAXVEC)
    p = tmp_path / "ck.bin"
    save_checkpoint(st_, p)
    raw = p.read_bytes()
    (tmp_path / "trunc.bin").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="bytes"):
        load_checkpoint(tmp_path / "trunc.bin")
    (tmp_path / "magic.bin").write_bytes(b"GFBGCN-CKPT v9\n" + raw[15:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "magic.bin")
