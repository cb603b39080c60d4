import io
import math

import numpy as np
import pytest

from fasten import data
from fasten.transition import oracle_symmetric, true_transition_empirical


def within_3_sigma(observed, p, n):
    return abs(observed - p) <= 3 * math.sqrt(p * (1 - p) / n)


@pytest.fixture
def blobs():
    return data.generate_blobs(4, 1000, 16, seed=0)


def test_blobs_separable_limit():
    s = data.generate_blobs(5, 200, 8, spread=1e-6, seed=1)
    assert data.bayes_accuracy(s, data.blob_means(5, 8, 1)) == 1.0


def test_blobs_are_reproducible():
    a = data.generate_blobs(3, 50, 4, 0.5, seed=7)
    b = data.generate_blobs(3, 50, 4, 0.5, seed=7)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y_true, b.y_true)
    c = data.generate_blobs(3, 50, 4, 0.5, seed=8)
    assert not np.array_equal(a.x, c.x)


def test_default_spread_calibration():
    # held-out seed, never used by the package defaults
    seed = 12345
    s = data.generate_blobs(4, 1000, 16, data.DEFAULT_SPREAD, seed=seed)
    acc = data.bayes_accuracy(s, data.blob_means(4, 16, seed))
    assert 0.92 <= acc <= 0.97
    assert within_3_sigma(acc, data.CALIBRATED_BAYES_ACCURACY, 4000)


@pytest.mark.parametrize("kwargs", [dict(n_classes=1), dict(dim=1), dict(spread=0.0)])
def test_blobs_reject_bad_arguments(kwargs):
    args = dict(n_classes=3, n_per_class=5, dim=4, spread=1.0) | kwargs
    with pytest.raises(data.ConfigError):
        data.generate_blobs(**args)


def test_split_sizes_and_stratification(blobs):
    sp = data.split(blobs, (0.8, 0.05, 0.05, 0.1), seed=0)
    sizes = [len(s) for s in (sp.noisy_train, sp.clean_train, sp.valid, sp.test)]
    assert sizes == [3200, 200, 200, 400]
    for s, per in zip((sp.noisy_train, sp.clean_train, sp.valid, sp.test), (800, 50, 50, 100)):
        assert s.class_counts(4, "y_true").tolist() == [per] * 4


def test_split_is_disjoint(blobs):
    sp = data.split(blobs, (0.5, 0.1, 0.1, 0.2), seed=3)
    ids = np.concatenate([s.ids for s in (sp.noisy_train, sp.clean_train, sp.valid, sp.test)])
    assert len(np.unique(ids)) == len(ids)


def test_split_paper_sized_fractions():
    s = data.generate_blobs(4, 1200, 16, seed=0)
    sp = data.split(s, (5 / 6, 1 / 24, 1 / 24, 1 / 12), seed=0)
    assert [len(x) for x in (sp.noisy_train, sp.clean_train, sp.valid, sp.test)] == [4000, 200, 200, 400]


def test_split_seed_determinism(blobs):
    a = data.split(blobs, seed=1)
    b = data.split(blobs, seed=1)
    c = data.split(blobs, seed=2)
    assert np.array_equal(a.clean_train.ids, b.clean_train.ids)
    assert not np.array_equal(a.clean_train.ids, c.clean_train.ids)
    assert len(a.clean_train) == len(c.clean_train)


def test_split_insufficient_clean_samples(blobs):
    with pytest.raises(data.ConfigError):
        data.split(blobs, (0.8, 0.005, 0.05, 0.1), min_clean_per_class=10)


def test_split_rejects_bad_fractions(blobs):
    with pytest.raises(data.ConfigError):
        data.split(blobs, (0.8, 0.2, 0.1, 0.1))


def test_symmetric_noise_gamma_zero(blobs):
    s = data.inject_symmetric_noise(blobs, 0.0, seed=0)
    assert np.array_equal(s.y_star, s.y_true)
    assert data.noise_level(s) == 0.0


def test_symmetric_noise_rates():
    s = data.generate_blobs(10, 600, 4, seed=2)
    data.inject_symmetric_noise(s, 0.8, seed=4)
    n = len(s)
    # diagonal 1 - 0.9 * 0.8 = 0.28, each wrong class 0.8 / 10 = 0.08
    assert within_3_sigma(np.mean(s.y_star == s.y_true), 0.28, n)
    assert within_3_sigma(data.noise_level(s), 0.72, n)
    emp = true_transition_empirical(s.y_true, s.y_star, 10)
    off = emp[~np.eye(10, dtype=bool)]
    assert np.all(np.abs(off - 0.08) <= 3 * math.sqrt(0.08 * 0.92 / 600))


def test_noise_injection_writes_y_star_once(blobs):
    s = data.inject_symmetric_noise(blobs, 0.5, seed=0)
    assert np.array_equal(s.y_current, s.y_star)
    assert np.mean(s.y_current != s.y_star) == 0.0
    with pytest.raises(ValueError):
        s.y_star[0] = 1
    copy = s.copy()
    with pytest.raises(ValueError):
        copy.y_star[0] = 1


def test_noise_injection_is_order_independent(blobs):
    a = data.inject_symmetric_noise(blobs.copy(), 0.6, seed=5)
    perm = np.random.default_rng(0).permutation(len(blobs))
    b = data.inject_symmetric_noise(blobs.subset(perm), 0.6, seed=5)
    assert np.array_equal(a.y_star[perm], b.y_star)


def test_asymmetric_noise():
    s = data.generate_blobs(4, 1500, 4, seed=3)
    assert np.array_equal(data.inject_asymmetric_noise(s.copy(), 0.0, seed=1).y_star, s.y_true)
    data.inject_asymmetric_noise(s, 0.4, seed=1)
    assert within_3_sigma(np.mean(s.y_star == s.y_true), 0.6, len(s))
    assert within_3_sigma(data.noise_level(s), 0.4, len(s))
    flipped = s.y_star != s.y_true
    assert np.array_equal(s.y_star[flipped], (s.y_true[flipped] + 1) % 4)


def test_asymmetric_noise_custom_pairing():
    s = data.generate_blobs(4, 500, 4, seed=3)
    pairing = [2, 3, 0, 1]
    data.inject_asymmetric_noise(s, 0.3, pairing, seed=1)
    flipped = s.y_star != s.y_true
    assert np.array_equal(s.y_star[flipped], np.array(pairing)[s.y_true[flipped]])


def test_asymmetric_noise_rejects_fixed_point(blobs):
    with pytest.raises(ValueError):
        data.inject_asymmetric_noise(blobs, 0.2, [0, 2, 3, 1], seed=0)


def test_noise_spec_validation():
    with pytest.raises(data.ConfigError):
        data.NoiseSpec("asymmetric", 0.5)
    with pytest.raises(data.ConfigError):
        data.NoiseSpec("symmetric", 1.0)
    with pytest.raises(data.ConfigError):
        data.NoiseSpec("instance", 0.1)


def test_noise_level_zero_after_full_correction(blobs):
    s = data.inject_symmetric_noise(blobs, 0.6, seed=0)
    s.y_current = s.y_true.copy()
    assert data.noise_level(s) == 0.0


def test_injection_matches_oracle_within_multinomial_bands():
    s = data.generate_blobs(4, 4000, 4, seed=6)
    data.inject_symmetric_noise(s, 0.6, seed=2)
    T = oracle_symmetric(4, 0.6)
    emp = true_transition_empirical(s.y_true, s.y_star, 4)
    assert np.all(np.abs(emp - T) <= 3 * np.sqrt(T * (1 - T) / 4000))


def test_clean_batch_is_class_balanced(blobs):
    rng = np.random.default_rng(0)
    sampler = data.CleanBatchSampler(blobs.y_true, 4, 1, rng)
    assert np.bincount(blobs.y_true[sampler.sample()], minlength=4).tolist() == [1, 1, 1, 1]
    sampler = data.CleanBatchSampler(blobs.y_true, 4, 7, rng)
    for _ in range(50):
        idx = sampler.sample()
        assert len(idx) == 28
        assert len(np.unique(idx)) == 28
        assert np.bincount(blobs.y_true[idx], minlength=4).tolist() == [7] * 4


def test_clean_batch_unequal_class_sizes():
    labels = np.array([0] * 3 + [1] * 9 + [2] * 5)
    sampler = data.CleanBatchSampler(labels, 3, 3, np.random.default_rng(1))
    seen = set()
    for _ in range(200):
        idx = sampler.sample()
        assert np.bincount(labels[idx], minlength=3).tolist() == [3, 3, 3]
        seen.update(idx.tolist())
    assert seen == set(range(len(labels)))


def test_clean_batch_insufficient_class(blobs):
    with pytest.raises(data.ConfigError):
        data.sample_clean_batch(blobs.subset(np.arange(1001)), 2, np.random.default_rng(0), 4)


def test_noisy_batch_epoch_is_a_permutation():
    sampler = data.NoisyBatchSampler(103, 10, np.random.default_rng(0))
    batches = list(sampler.epoch())
    assert len(batches) == len(sampler) == 11
    assert sorted(np.concatenate(batches).tolist()) == list(range(103))
    whole = list(data.NoisyBatchSampler(20, 20, np.random.default_rng(1)).epoch())
    assert len(whole) == 1 and sorted(whole[0].tolist()) == list(range(20))


def test_noisy_batch_seeded_order():
    a = np.concatenate(list(data.NoisyBatchSampler(50, 8, np.random.default_rng(3)).epoch()))
    b = np.concatenate(list(data.NoisyBatchSampler(50, 8, np.random.default_rng(3)).epoch()))
    assert np.array_equal(a, b)


def test_noisy_batch_too_large():
    with pytest.raises(data.ConfigError):
        data.NoisyBatchSampler(5, 6, np.random.default_rng(0))


def test_samples_csv_round_trip_is_byte_exact():
    s = data.generate_blobs(3, 20, 5, seed=4)
    data.inject_symmetric_noise(s, 0.5, seed=1)
    s.y_current[:3] = (s.y_current[:3] + 1) % 3
    text = data.write_samples_csv(s)
    assert text.splitlines()[0] == "x0,x1,x2,x3,x4,y_true,y_star,y_current"
    back = data.read_samples_csv(io.StringIO(text))
    assert np.array_equal(back.x, s.x)
    assert np.array_equal(back.y_current, s.y_current)
    assert data.write_samples_csv(back) == text


def test_samples_csv_file_round_trip(tmp_path):
    s = data.generate_blobs(2, 5, 2, seed=0)
    path = tmp_path / "d.csv"
    data.write_samples_csv(s, path)
    assert path.read_text() == data.write_samples_csv(data.read_samples_csv(path))
