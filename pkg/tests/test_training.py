import itertools
import math

import numpy as np
import pytest

from slac_time.encoder import EncoderParams, HyperParams, load_checkpoint, represent, save_checkpoint
from slac_time.metrics import nmi
from slac_time.numerics import Tensor
from slac_time.pipeline import forecast_sets, init_params, prepare, run_cluster, run_pretrain
from slac_time.synthgen import GeneratorConfig, generate, vocabulary
from slac_time.training import (
    ClusterState,
    TrainConfig,
    Trainer,
    assign,
    classifier_loss,
    cluster_train,
    forecast_head,
    kmeans,
    masked_mse,
    pretrain_trainer,
)

TINY_HP = {"d": 8, "n_blocks": 1, "n_heads": 2}


@pytest.fixture(scope="module")
def tiny_data():
    cfg = GeneratorConfig(k_true=2, n_features=3, n_static=2, n_samples=30, rate=0.08, noise=0.1, p_drop=0.0,
                          seed=3, separation=3.0)
    return prepare(generate(cfg), vocabulary(cfg), seed=3)


# -- losses and heads -----------------------------------------------------------

def test_forecast_head_affine():
    hp = HyperParams(n_features=1, n_static=1, d=2, n_heads=1)
    P = EncoderParams.init(hp, 0)
    rep = Tensor(np.array([[1.0, 2.0, 3.0, 4.0]]))
    P["forecast.W"].data[...] = 0.0
    P["forecast.b"].data[...] = 0.0
    assert forecast_head(rep, P).data.tolist() == [[0.0]]
    P["forecast.b"].data[...] = 0.7
    assert forecast_head(rep, P).data.tolist() == [[0.7]]
    P["forecast.W"].data[...] = [[0.5, -1.0, 0.0, 0.25]]
    assert forecast_head(rep, P).data[0, 0] == pytest.approx(0.5 - 2.0 + 1.0 + 0.7)


def test_masked_mse_examples():
    assert masked_mse(Tensor(np.ones((3, 2))), np.zeros((3, 2)), np.zeros((3, 2))).item() == 0.0
    assert masked_mse(Tensor(np.array([[2.0, 5.0]])), np.array([[1.0, 99.0]]), np.array([[1.0, 0.0]])).item() == 1.0
    rng = np.random.default_rng(0)
    p, z, m = rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), rng.integers(0, 2, (4, 3)).astype(float)
    one = masked_mse(Tensor(p), z, m).item()
    two = masked_mse(Tensor(np.vstack([p, p])), np.vstack([z, z]), np.vstack([m, m])).item()
    assert two == pytest.approx(one, rel=1e-15)
    # divisor is the instance count, not the observed-entry count
    assert one == pytest.approx(((p - z) ** 2 * m).sum() / 4, rel=1e-15)


def test_classifier_loss_examples():
    assert classifier_loss(Tensor(np.zeros((5, 3))), np.array([0, 1, 2, 0, 1])).item() == pytest.approx(
        math.log(3), abs=1e-15)
    assert classifier_loss(Tensor(np.array([[2.0, 0.0]])), np.array([0])).item() == pytest.approx(
        -math.log(math.exp(2) / (math.exp(2) + 1)), abs=1e-12)
    assert classifier_loss(Tensor(np.array([[2.0, 0.0]])), np.array([0])).item() == pytest.approx(0.1269, abs=1e-4)
    assert classifier_loss(Tensor(np.array([[60.0, 0.0]])), np.array([0])).item() < 1e-20
    with pytest.raises(ValueError):
        classifier_loss(Tensor(np.zeros((1, 2))), np.array([2]))


# -- K-means ----------------------------------------------------------------------

def test_kmeans_four_points_exhaustive():
    X = np.array([[0.0], [1.0], [10.0], [11.0]])
    res = kmeans(X, 2, seed=0)
    best = None
    for mask in itertools.product([0, 1], repeat=4):
        lab = np.array(mask)
        if lab.min() == lab.max():
            continue
        obj = sum(((X[lab == j] - X[lab == j].mean()) ** 2).sum() for j in (0, 1))
        if best is None or obj < best[0]:
            best = (obj, lab)
    assert nmi(res.labels, best[1]) == 1.0
    np.testing.assert_allclose(np.sort(res.centroids[:, 0]), [0.5, 10.5])
    assert res.objective == pytest.approx(best[0] / 4)


def test_kmeans_k_equals_n():
    X = np.random.default_rng(0).normal(size=(6, 2))
    res = kmeans(X, 6, seed=1)
    assert sorted(res.labels.tolist()) == list(range(6))
    assert res.objective == 0.0


def test_lloyd_objective_non_increasing():
    rng = np.random.default_rng(5)
    for s in range(10):
        X = rng.normal(size=(80, 3))
        tr = kmeans(X, 5, seed=s, restarts=1).trace
        assert all(b <= a + 1e-12 for a, b in zip(tr, tr[1:]))


def test_kmeans_errors_and_degenerate():
    with pytest.raises(ValueError):
        kmeans(np.zeros((2, 1)), 3, 0)
    with pytest.warns(RuntimeWarning):
        res = kmeans(np.ones((5, 2)), 2, 0)
    assert set(res.labels.tolist()) == {0}


def test_kmeans_no_empty_clusters_and_deterministic():
    X = np.vstack([np.zeros((20, 2)), np.ones((3, 2)) * 5, [[100.0, 100.0]]])
    a = kmeans(X, 4, seed=7)
    b = kmeans(X, 4, seed=7)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert len(set(a.labels.tolist())) == 4
    d2 = ((X[:, None] - a.centroids[None]) ** 2).sum(-1)
    # every point sits at a nearest centroid (ties allowed)
    np.testing.assert_array_equal(d2[np.arange(len(X)), a.labels], d2.min(axis=1))
    assert a.n_iter < 300


def test_assign_nearest():
    C = np.array([[0.0, 0.0], [10.0, 0.0]])
    assert assign(np.array([[1.0, 0.0], [9.0, 1.0]]), C).tolist() == [0, 1]


# -- early stopping ------------------------------------------------------------------

class _Scripted:
    """Validation losses served from a list; the training step is a no-op quadratic."""

    def __init__(self, vals):
        self.vals = list(vals)
        self.i = 0

    def __call__(self):
        v = self.vals[min(self.i, len(self.vals) - 1)]
        self.i += 1
        return v


def _dummy_trainer(vals, patience=3):
    P = EncoderParams.init(HyperParams(n_features=1, n_static=1, d=2, n_heads=1), 0)
    w = P["forecast.b"]

    def batch_loss(idx, rng):
        return (w * 1.0).square().sum()

    cfg = TrainConfig(patience=patience, batch_size=2)
    return Trainer(P, ["forecast.b"], 4, batch_loss, _Scripted(vals), None, cfg, 0, "test")


def test_early_stopping_patience():
    # best at epoch 2, then no improvement: stop at epoch 2 + patience
    tr = _dummy_trainer([5.0, 4.0, 3.0, 3.5, 3.6, 3.7, 3.8, 3.9], patience=3)
    st = tr.fit(100)
    assert st.best_epoch == 2 and st.epoch == 5 and st.stopped


def test_ties_do_not_reset_patience():
    tr = _dummy_trainer([5.0, 3.0, 3.0, 3.0, 3.0, 2.0], patience=3)
    st = tr.fit(100)
    assert st.best_epoch == 1 and st.epoch == 4


def test_restore_best_weights():
    tr = _dummy_trainer([5.0, 1.0, 2.0, 2.0, 2.0], patience=2)
    seen = {}
    tr.fit(100, on_epoch=lambda t: seen.setdefault(t.state.epoch, t.P["forecast.b"].data.copy()))
    np.testing.assert_array_equal(tr.P["forecast.b"].data, seen[1])


def test_history_has_epoch_zero_row():
    st = _dummy_trainer([1.0, 0.5, 0.25], patience=5).fit(2)
    assert [h[0] for h in st.history] == [0, 1, 2]


# -- pretraining ------------------------------------------------------------------------

def test_pretrain_deterministic_and_learns(tiny_data):
    cfg = TrainConfig(max_pretrain_epochs=6)
    P1, h1 = run_pretrain(tiny_data, init_params(tiny_data, TINY_HP, 0), cfg, 0)
    P2, h2 = run_pretrain(tiny_data, init_params(tiny_data, TINY_HP, 0), cfg, 0)
    assert h1 == h2
    assert min(h[2] for h in h1) < h1[0][2]
    for name in P1.names():
        np.testing.assert_array_equal(P1[name].data, P2[name].data)


def test_pretrain_resume_matches_uninterrupted(tiny_data):
    cfg = TrainConfig(max_pretrain_epochs=4, restore_best=False)
    train, val, _ = forecast_sets(tiny_data)
    full = pretrain_trainer(init_params(tiny_data, TINY_HP, 0), train, val, cfg, 0)
    full.fit(4)
    part = pretrain_trainer(init_params(tiny_data, TINY_HP, 0), train, val, cfg, 0)
    part.fit(2)
    arrays, meta = part.snapshot()
    weights = part.P.state()
    fresh = init_params(tiny_data, TINY_HP, 99)
    fresh.load_state(weights)
    cont = pretrain_trainer(fresh, train, val, cfg, 0)
    cont.restore(arrays, meta)
    cont.fit(4)
    assert cont.state.history == full.state.history
    for name in full.P.names():
        np.testing.assert_array_equal(cont.P[name].data, full.P[name].data)


def test_strip_head(tiny_data, tmp_path):
    P = init_params(tiny_data, TINY_HP, 0)
    tr, va = tiny_data.items()
    stripped = P.strip_head()
    np.testing.assert_array_equal(represent(P, tr), represent(stripped, tr))
    assert "forecast.W" not in stripped and "forecast.b" not in stripped
    for name in stripped.names():
        np.testing.assert_array_equal(stripped[name].data, P[name].data)
    save_checkpoint(tmp_path / "ck", stripped)
    assert not any(e["name"].startswith("forecast") for e in
                   __import__("json").loads((tmp_path / "ck" / "manifest.json").read_text())["tensors"])
    from slac_time.numerics import substream

    stripped.attach_forecast_head(substream(5, "init", 1))
    assert not np.array_equal(stripped["forecast.W"].data, P["forecast.W"].data)


# -- clustering alternation -----------------------------------------------------------------

def _cluster(data, k=2, iters=3, seed=0, relabel=None, resume=None, P=None, epochs=3):
    cfg = TrainConfig(cluster_iterations=iters, epochs_per_iteration=epochs, k=k, kmeans_restarts=3)
    P = P or init_params(data, TINY_HP, seed).strip_head()
    return run_cluster(data, P, cfg, seed, relabel=relabel, resume=resume)


def test_cluster_train_deterministic_and_complete(tiny_data):
    a = _cluster(tiny_data)
    b = _cluster(tiny_data)
    assert a.state.nmi_trail == b.state.nmi_trail
    np.testing.assert_array_equal(a.state.labels, b.state.labels)
    N = len(tiny_data.ids)
    for rec in a.records:
        assert rec.labels.shape == (N,) and set(rec.labels.tolist()) <= {0, 1}
    assert [t for t, _ in a.state.nmi_trail] == [1, 2]
    assert all(len(s) == 2 and sum(s) == N for s in a.state.sizes)
    assert a.state.C.shape == (16, 2)


def test_cluster_single_cluster_trail_is_one(tiny_data):
    res = _cluster(tiny_data, k=1, iters=3, epochs=1)
    assert [v for _, v in res.state.nmi_trail] == [1.0, 1.0]


def test_relabel_invariance_k2(tiny_data):
    a = _cluster(tiny_data, k=2, iters=3)
    b = _cluster(tiny_data, k=2, iters=3, relabel=lambda lab: 1 - lab)
    assert a.state.nmi_trail == b.state.nmi_trail
    assert nmi(a.state.labels, b.state.labels) == 1.0


def test_cluster_resume_matches_uninterrupted(tiny_data, tmp_path):
    full = _cluster(tiny_data, iters=3)
    part = _cluster(tiny_data, iters=2)
    rec = part.records[-1]
    save_checkpoint(tmp_path / "it1", part.params)
    P, _, _ = load_checkpoint(tmp_path / "it1")
    st = ClusterState(rec.centroids, rec.labels, part.state.nmi_trail, part.state.sizes)
    cont = _cluster(tiny_data, iters=3, resume=(1, st), P=P)
    assert cont.state.nmi_trail == full.state.nmi_trail
    np.testing.assert_array_equal(cont.state.labels, full.state.labels)
    np.testing.assert_array_equal(cont.representations, full.representations)


def test_cluster_train_needs_validation():
    hp = HyperParams(n_features=2, n_static=1, d=4, n_heads=2)
    P = EncoderParams.init(hp, 0).strip_head()
    item = (np.zeros(1), np.array([0.1]), np.array([0]), np.array([1.0]))
    with pytest.raises(ValueError):
        cluster_train(P, [item] * 3, [], TrainConfig(k=2, cluster_iterations=1), 0)
