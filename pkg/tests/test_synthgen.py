import math

import numpy as np
import pytest

from slac_time.dataset import ingest_csv, read_truth_labels
from slac_time.synthgen import (
    ConfigError,
    GeneratorConfig,
    RegimeSpec,
    default_regimes,
    generate,
    separation_report,
    vocabulary,
    write_dataset,
)


def _cfg(**kw):
    base = dict(k_true=3, n_features=5, n_static=4, n_samples=60, rate=0.1, noise=0.3, p_drop=0.0, seed=0)
    return GeneratorConfig(**{**base, **kw})


def test_noiseless_single_regime_on_curve():
    cfg = _cfg(k_true=1, noise=0.0, n_samples=10)
    reg = default_regimes(cfg)[0]
    for s in generate(cfg):
        t, f, v = s.arrays()
        for j in range(cfg.n_features):
            np.testing.assert_array_equal(v[f == j], reg.curve(t[f == j], j))


def test_same_seed_identical():
    a, b = generate(_cfg()), generate(_cfg())
    for x, y in zip(a, b):
        assert x.triplets == y.triplets and x.truth_label == y.truth_label
        np.testing.assert_array_equal(x.static, y.static)
    c = generate(_cfg(seed=1))
    assert any(x.triplets != y.triplets for x, y in zip(a, c))


def test_poisson_triplet_count():
    samples = generate(_cfg(rate=0.5, n_samples=200, horizon=120.0))
    mean = np.mean([s.n for s in samples])
    assert abs(mean - 300) / 300 < 0.10


def test_every_sample_nonempty_and_within_horizon():
    for s in generate(_cfg(p_drop=0.9, rate=0.02, n_samples=80)):
        t, _, _ = s.arrays()
        assert s.n >= 1
        assert t.min() >= 0 and t.max() <= 120.0
        assert np.all(np.diff(t) >= 0)


def test_label_balance_within_three_sigma():
    cfg = _cfg(n_samples=600, rate=0.02)
    labels = np.array([s.truth_label for s in generate(cfg)])
    for c in range(3):
        p = 1 / 3
        sigma = math.sqrt(600 * p * (1 - p))
        assert abs((labels == c).sum() - 600 * p) <= 3 * sigma


def test_missingness_matches_p_drop():
    cfg = _cfg(n_samples=400, p_drop=0.4, rate=0.2)
    samples = generate(cfg)
    absent = sum(cfg.n_features - len(set(s.arrays()[1].tolist())) for s in samples)
    n = 400 * cfg.n_features
    sigma = math.sqrt(n * 0.4 * 0.6)
    # resampling empty samples removes a little missingness; 0.4**5 of samples are affected
    assert abs(absent - n * 0.4) <= 3 * sigma + n * 0.4 ** 5


def test_explicit_regime_weights():
    regs = default_regimes(_cfg(k_true=2))
    regs[0].weight, regs[1].weight = 1.0, 0.0
    assert {s.truth_label for s in generate(_cfg(k_true=2, n_samples=30), regs)} == {0}


def test_separation_identical_and_offset():
    r = default_regimes(_cfg(k_true=1))[0]
    shifted = RegimeSpec(**{**r.__dict__, "baseline": [r.baseline[0] + 2.5] + r.baseline[1:]})
    D = separation_report([r, r, shifted])
    assert D.shape == (3, 3)
    np.testing.assert_allclose(D, D.T)
    np.testing.assert_array_equal(np.diag(D), 0.0)
    assert D[0, 1] == 0.0
    assert D[0, 2] == pytest.approx(2.5 * math.sqrt(121), rel=1e-12)
    with pytest.raises(ValueError):
        separation_report([r])


@pytest.mark.parametrize("field,value", [("p_drop", 1.0), ("rate", 0.0), ("n_samples", 2), ("noise", -1.0),
                                         ("k_true", 0)])
def test_invalid_config(field, value):
    with pytest.raises(ConfigError, match=field):
        generate(_cfg(**{field: value}))


def test_from_json_names_missing_and_unknown_fields():
    obj = _cfg().to_json()
    del obj["rate"]
    with pytest.raises(ConfigError, match="rate"):
        GeneratorConfig.from_json(obj)
    obj = {**_cfg().to_json(), "colour": 1}
    with pytest.raises(ConfigError, match="colour"):
        GeneratorConfig.from_json(obj)


def test_json_round_trip_with_regimes():
    cfg = _cfg(k_true=2)
    cfg.regimes = default_regimes(cfg)
    back = GeneratorConfig.from_json(cfg.to_json())
    assert [s.triplets for s in generate(back)] == [s.triplets for s in generate(cfg)]


def test_bad_regime_variance_rejected():
    cfg = _cfg(k_true=2)
    regs = default_regimes(cfg)
    regs[1].static_var = [0.0] * 4
    cfg.regimes = regs
    with pytest.raises(ConfigError, match="static_var"):
        cfg.validate()


def test_write_dataset_round_trip(tmp_path):
    cfg = _cfg(n_samples=20, static_missing=0.3)
    samples = generate(cfg)
    paths = write_dataset(samples, vocabulary(cfg), tmp_path, {"seed": 0})
    back = ingest_csv(paths["triplets"], paths["static"], vocabulary(cfg))
    truth = read_truth_labels(paths["truth"])
    assert [s.id for s in back] == [s.id for s in samples]
    for a, b in zip(samples, back):
        assert a.triplets == b.triplets
        np.testing.assert_array_equal(a.static, b.static)
        assert truth[a.id] == a.truth_label
    assert b.truth_label is None


def test_write_dataset_byte_identical(tmp_path):
    cfg = _cfg(n_samples=15)
    write_dataset(generate(cfg), vocabulary(cfg), tmp_path / "a")
    write_dataset(generate(cfg), vocabulary(cfg), tmp_path / "b")
    for name in ("triplets.csv", "static.csv", "truth_labels.csv", "vocabulary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
