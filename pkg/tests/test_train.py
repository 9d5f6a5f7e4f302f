import math

import numpy as np
import pytest

from gfbgcn.config import ConfigError, dump_config, parse_config
from gfbgcn.model import forward, softmax
from gfbgcn.train import (
    AdamState, TrainConfig, adam_step, bench_epoch, bench_variants, classification_metrics, evaluate,
    masked_cross_entropy, prepare_graph, train,
)


def test_cross_entropy_perfect_and_uniform():
    y = np.array([0, 2, 1])
    loss, grad = masked_cross_entropy(np.eye(3)[y], y, np.ones(3, bool))
    assert loss == 0.0
    loss, _ = masked_cross_entropy(np.full((3, 4), 0.25), y, np.ones(3, bool))
    assert loss == pytest.approx(math.log(4), rel=1e-15)


def test_cross_entropy_gradient_outside_mask_zero():
    p = softmax(np.random.default_rng(0).standard_normal((5, 3)))
    mask = np.array([1, 0, 1, 0, 0], bool)
    _, g = masked_cross_entropy(p, np.array([0, 1, 2, 0, 1]), mask)
    assert not g[~mask].any()
    np.testing.assert_allclose(g[mask].sum(axis=1), 0, atol=1e-16)
    with pytest.raises(ValueError):
        masked_cross_entropy(p, np.zeros(5, int), np.zeros(5, bool))


def test_adam_zero_gradient_keeps_params():
    p = {"w": np.array([1.0, -2.0])}
    new, st = adam_step(p, {"w": np.zeros(2)}, AdamState.zeros_like(p), 0.02)
    np.testing.assert_array_equal(new["w"], p["w"])
    assert st.step == 1


def test_adam_first_step():
    # m_hat = g, v_hat = g^2 after bias correction, so the step is -lr * g/(|g| + eps)
    p = {"w": np.array([0.5])}
    new, _ = adam_step(p, {"w": np.array([1.0])}, AdamState.zeros_like(p), 0.02)
    assert new["w"][0] - 0.5 == pytest.approx(-0.02 * 1 / (1 + 1e-8), rel=1e-9)


def test_adam_shape_mismatch_and_determinism():
    p = {"w": np.ones(3)}
    with pytest.raises(ValueError):
        adam_step(p, {"w": np.ones(2)}, AdamState.zeros_like(p), 0.1)
    rng = np.random.default_rng(0)
    grads = [rng.standard_normal(3) for _ in range(5)]

    def run():
        q, s = dict(p), AdamState.zeros_like(p)
        for g in grads:
            q, s = adam_step(q, {"w": g}, s, 0.02)
        return q["w"]
    assert run().tobytes() == run().tobytes()


# -- metrics -----------------------------------------------------------------------

def test_metrics_all_correct():
    m = classification_metrics([0, 1, 1], [0, 1, 1], 2)
    assert (m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1) == (1, 1, 1, 1)


def test_metrics_hand_case():
    m = classification_metrics([0, 0], [0, 1], 2)
    assert m.accuracy == 0.5
    a, b = m.per_class
    assert (a["precision"], a["recall"]) == (0.5, 1.0)
    assert a["f1"] == pytest.approx(2 / 3)
    assert (b["precision"], b["recall"], b["f1"]) == (0, 0, 0)
    assert m.macro_f1 == pytest.approx(1 / 3)
    assert m.macro_precision == 0.25 and m.macro_recall == 0.5


def test_metrics_class_permutation_invariant():
    rng = np.random.default_rng(0)
    pred, truth = rng.integers(0, 4, 50), rng.integers(0, 4, 50)
    perm = np.array([2, 0, 3, 1])
    m1 = classification_metrics(pred, truth, 4)
    m2 = classification_metrics(perm[pred], perm[truth], 4)
    for k in ("accuracy", "macro_precision", "macro_recall", "macro_f1"):
        assert getattr(m1, k) == pytest.approx(getattr(m2, k), rel=1e-15)


def test_metrics_absent_class_counts_zero():
    m = classification_metrics([0, 1], [0, 1], 3)
    assert m.macro_f1 == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        classification_metrics([], [], 2)


# -- config ------------------------------------------------------------------------

def test_config_defaults_and_rejections():
    c = TrainConfig()
    assert (c.learning_rate, c.dropout, c.max_epochs, c.patience, c.val_fraction,
            c.embedding_dim, c.k_prime) == (0.02, 0.5, 200, 10, 0.1, 200, 3)
    with pytest.raises(ValueError):
        TrainConfig(genvec="median")
    with pytest.raises(ValueError):
        TrainConfig(genvec="upper")
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    assert TrainConfig(genvec="MaxVec").genvec == "max"


def test_run_config_file():
    cfg = parse_config("# comment\nlearning_rate = 0.05\ngenvec=diag\ngraph = g.txt\n", {"seed": 4})
    assert cfg.train.learning_rate == 0.05 and cfg.train.genvec == "diag" and cfg.train.seed == 4
    assert cfg.paths["graph"] == "g.txt"
    assert parse_config(dump_config(cfg)).train == cfg.train
    with pytest.raises(ConfigError, match="unknown"):
        parse_config("learning_rat = 0.1")
    with pytest.raises(ConfigError):
        parse_config("genvec = median")
    with pytest.raises(ConfigError):
        parse_config("max_epochs = many")


# -- training loop -----------------------------------------------------------------

def _cfg(**kw):
    base = dict(seed=0, embedding_dim=32, max_epochs=40)
    base.update(kw)
    return TrainConfig(**base)


def test_patience_stops_exactly_after_best(synth_graph):
    # zero learning rate: val loss is flat, so epoch 1 stays best
    _, h = train(synth_graph, _cfg(learning_rate=0.0, patience=4))
    assert h.best_epoch == 1 and h.stopping_epoch == 5 and h.stopped_early


def test_early_stopping_returns_best_epoch(synth_graph):
    cfg = TrainConfig(seed=1, genvec="max")
    state, h = train(synth_graph, cfg)
    assert h.stopped_early
    assert h.stopping_epoch == h.best_epoch + cfg.patience
    val_losses = [r.val_loss for r in h.records]
    assert min(val_losses) == val_losses[h.best_epoch - 1]
    g = prepare_graph(synth_graph, cfg)
    probs = forward(g, state).probs
    loss, _ = masked_cross_entropy(probs, g.node_labels(), g.val_mask)
    assert loss == val_losses[h.best_epoch - 1]
    assert len(h.records) <= cfg.max_epochs


def test_training_deterministic(synth_graph):
    cfg = _cfg(genvec="topk", max_epochs=15)
    s1, h1 = train(synth_graph, cfg)
    s2, h2 = train(synth_graph, cfg)
    strip = lambda h: [(r.epoch, r.train_loss, r.val_loss, r.val_acc) for r in h.records]
    assert strip(h1) == strip(h2)
    assert s1.layer1.W.tobytes() == s2.layer1.W.tobytes()


@pytest.mark.parametrize("genvec", ["none", "max", "mean", "diag", "topk"])
def test_training_loss_decreases_first_epochs(synth_graph, genvec):
    _, h = train(synth_graph, TrainConfig(seed=0, genvec=genvec, max_epochs=5))
    losses = [r.train_loss for r in h.records]
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_bench_epoch_positive(synth_graph):
    assert bench_epoch(synth_graph, TrainConfig(embedding_dim=16), "gcn", warmup=1, repeats=1) > 0
    with pytest.raises(ValueError):
        bench_epoch(synth_graph, TrainConfig(), repeats=0)


def test_train_on_empty_validation_rejected(synth_graph):
    with pytest.raises(ValueError):
        train(synth_graph, TrainConfig(val_fraction=0.001))


def test_evaluate_mask(synth_graph):
    state, _ = train(synth_graph, _cfg(max_epochs=3))
    m = evaluate(state, synth_graph, synth_graph.test_mask)
    assert sum(r["support"] for r in m.per_class) == synth_graph.test_mask.sum()
    with pytest.raises(ValueError):
        evaluate(state, synth_graph, np.zeros(synth_graph.n_nodes, bool))


@pytest.mark.slow
def test_bench_ratio_stable(synth_graph):
    cfg = TrainConfig()
    from gfbgcn.pooling import MAXVEC
    ratios = []
    for _ in range(3):
        t = bench_variants(synth_graph, cfg, {"gcn": ("gcn", None), "max": ("gfb", MAXVEC)})
        ratios.append(t["max"] / t["gcn"])
    assert max(ratios) / min(ratios) < 1.2 / 0.8


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["max", "mean", "diag"])
def test_extra_cost_subquadratic_in_k(synth_graph, kind):
    from gfbgcn.pooling import GenVecOp
    from gfbgcn.train import k_scaling
    _, _, slope = k_scaling(synth_graph, [8, 16, 32, 64, 128, 256], GenVecOp.parse(kind))
    assert slope < 1.6
