import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from slac_time.metrics import (
    best_k_votes,
    calinski_harabasz,
    davies_bouldin,
    dunn,
    nmi,
    pca_project,
    silhouette,
    sweep_k,
    validity_report,
)

X4 = np.array([[0.0], [1.0], [10.0], [11.0]])
L4 = np.array([0, 0, 1, 1])


def test_four_point_hand_values():
    assert silhouette(X4, L4) == pytest.approx((9.5 / 10.5 + 8.5 / 9.5) / 2, abs=1e-12)
    assert silhouette(X4, L4) == pytest.approx(0.89975, abs=1e-5)
    assert calinski_harabasz(X4, L4) == pytest.approx(200.0, abs=1e-9)
    assert dunn(X4, L4) == pytest.approx(9.0, abs=1e-9)
    assert davies_bouldin(X4, L4) == pytest.approx(0.1, abs=1e-9)


def test_silhouette_coincident_clusters():
    X = np.array([[0.0], [0.0], [0.0], [0.0]])
    assert silhouette(X, [0, 0, 1, 1]) <= 0


def test_silhouette_far_clusters():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(size=(10, 2)), rng.normal(size=(10, 2)) + 1e6])
    assert silhouette(X, [0] * 10 + [1] * 10) > 0.99


def test_silhouette_singleton_scores_zero():
    X = np.array([[0.0], [1.0], [10.0]])
    assert silhouette(X, [0, 0, 1]) == pytest.approx((0.9 + 8 / 9) / 3, abs=1e-12)


def test_single_cluster_rejected():
    for fn in (silhouette, calinski_harabasz, dunn, davies_bouldin):
        with pytest.raises(ValueError):
            fn(X4, [0, 0, 0, 0])


def test_degenerate_sentinels():
    X = np.array([[0.0], [0.0], [5.0], [5.0]])
    assert calinski_harabasz(X, L4) == math.inf
    assert dunn(np.array([[0.0], [1.0]]), [0, 1]) == math.inf
    assert davies_bouldin(np.array([[0.0], [1.0], [1.0], [0.0]]), L4) == math.inf


def test_dunn_numerator_monotone():
    base = dunn(X4, L4)
    moved = X4.copy()
    moved[2:] += 5
    assert dunn(moved, L4) > base


def test_db_scale_invariant():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 3))
    lab = rng.integers(0, 3, 30)
    assert davies_bouldin(2 * X, lab) == pytest.approx(davies_bouldin(X, lab), rel=1e-12)


def _blobs(rng, n=40):
    X = np.vstack([rng.normal(size=(n, 2)), rng.normal(size=(n, 2)) + [8, 0]])
    return X, np.repeat([0, 1], n)


def test_comparative_ch_and_db():
    rng = np.random.default_rng(2)
    X, lab = _blobs(rng)
    shuffled = rng.permutation(lab)
    assert calinski_harabasz(X, lab) > calinski_harabasz(X, shuffled)
    assert davies_bouldin(X, lab) < davies_bouldin(X, shuffled)


def _random_instance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 60))
    k = int(rng.integers(2, 6))
    dim = int(rng.integers(1, 5))
    X = rng.normal(size=(n, dim)) + rng.integers(0, 3, (n, 1)) * 2.0
    lab = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    return X, rng.permutation(lab)


@pytest.mark.parametrize("seed", range(25))
def test_indices_match_brute_force(seed):
    X, lab = _random_instance(seed)
    lab = list(lab)
    assert silhouette(X, lab) == pytest.approx(oracles.silhouette(X, lab), abs=1e-9)
    assert calinski_harabasz(X, lab) == pytest.approx(oracles.calinski_harabasz(X, lab), rel=1e-9)
    assert dunn(X, lab) == pytest.approx(oracles.dunn(X, lab), abs=1e-9)
    assert davies_bouldin(X, lab) == pytest.approx(oracles.davies_bouldin(X, lab), abs=1e-9)


def test_silhouette_matches_sklearn():
    from sklearn.metrics import silhouette_score

    X, lab = _random_instance(99)
    assert silhouette(X, lab) == pytest.approx(silhouette_score(X, lab), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_indices_invariant_to_label_permutation(seed):
    X, lab = _random_instance(seed)
    k = lab.max() + 1
    perm = np.random.default_rng(seed).permutation(k)
    new = perm[lab]
    assert silhouette(X, lab) == pytest.approx(silhouette(X, new), abs=1e-12)
    assert calinski_harabasz(X, lab) == pytest.approx(calinski_harabasz(X, new), rel=1e-12)
    assert dunn(X, lab) == dunn(X, new)
    assert davies_bouldin(X, lab) == pytest.approx(davies_bouldin(X, new), rel=1e-12)
    assert -1 <= silhouette(X, lab) <= 1


def test_nmi_examples():
    assert nmi([0, 0, 1, 1, 2], [0, 0, 1, 1, 2]) == pytest.approx(1.0)
    assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-15)
    assert nmi([0, 0, 1, 1], [0, 0, 0, 1]) == pytest.approx(0.3456, abs=1e-4)
    assert nmi([0, 0, 1, 1], [0, 0, 0, 1]) == pytest.approx(oracles.nmi([0, 0, 1, 1], [0, 0, 0, 1]), abs=1e-12)


def test_nmi_single_cluster_convention():
    assert nmi([1, 1, 1], [0, 0, 0]) == 1.0
    assert nmi([1, 1, 1], [0, 1, 0]) == 0.0
    with pytest.raises(ValueError):
        nmi([0, 1], [0, 1, 1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=2, max_size=60), st.integers(0, 2**31))
def test_nmi_symmetry_range_and_permutation(a, seed):
    rng = np.random.default_rng(seed)
    a = np.array(a)
    b = rng.integers(0, 4, len(a))
    v = nmi(a, b)
    assert v == pytest.approx(nmi(b, a), abs=1e-14)
    assert 0 <= v <= 1 + 1e-12
    assert v == pytest.approx(oracles.nmi(list(a), list(b)), abs=1e-12)
    perm = rng.permutation(5)
    assert nmi(perm[a], b) == pytest.approx(v, abs=1e-12)


def test_sweep_k_on_blobs():
    rng = np.random.default_rng(3)
    X, truth = _blobs(rng)
    reps = sweep_k(X, [2], seed=0, truth=truth)
    assert [r.k for r in reps] == [2] and reps[0].external_nmi == pytest.approx(1.0)
    assert sweep_k(X, [2, 3], seed=4) == sweep_k(X, [2, 3], seed=4)
    with pytest.raises(ValueError):
        sweep_k(X, [1], seed=0)


def test_sweep_k_prefers_true_k():
    rng = np.random.default_rng(4)
    X = np.vstack([rng.normal(size=(30, 2)) + c for c in ([0, 0], [10, 0], [0, 10])])
    votes = best_k_votes(sweep_k(X, [3, 4, 5], seed=0))
    assert votes[3] >= 3


def test_validity_report_json():
    rep = validity_report(X4, L4)
    obj = rep.to_json()
    assert set(obj) == {"k", "N", "silhouette", "calinski_harabasz", "dunn", "davies_bouldin"}
    assert validity_report(X4, L4, truth=L4).to_json()["external_nmi"] == pytest.approx(1.0)


def test_pca_rank_one():
    t = np.linspace(-3, 3, 20)[:, None]
    X = np.hstack([t, 2 * t, -t, 0 * t])
    coords, ratios = pca_project(X)
    assert ratios[1] == pytest.approx(0.0, abs=1e-9)
    assert ratios.sum() <= 1 + 1e-12


def test_pca_isometry_for_planar_data():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(15, 2)) @ rng.normal(size=(2, 5))
    coords, ratios = pca_project(X)
    D1 = np.linalg.norm(X[:, None] - X[None], axis=-1)
    D2 = np.linalg.norm(coords[:, None] - coords[None], axis=-1)
    np.testing.assert_allclose(D1, D2, atol=1e-9)
    assert ratios.sum() == pytest.approx(1.0)
    assert ratios[0] >= ratios[1] >= 0
