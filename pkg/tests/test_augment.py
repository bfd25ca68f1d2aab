import numpy as np
import pytest
from scipy.stats import chisquare

from blade_rec.augment import (
    AugmentConfig,
    augment_sequence,
    aux_flip,
    cooccur_add,
    freq_mask,
    sample_indices,
)
from blade_rec.data import Interaction, truncate_pad
from blade_rec.stats import BehaviorStats


def stats_of(M=None, m=None, size=3):
    M = np.zeros((size, size)) if M is None else np.asarray(M, dtype=np.float64)
    m = np.zeros(size, dtype=np.int64) if m is None else np.asarray(m, dtype=np.int64)
    return BehaviorStats(counts=np.zeros_like(M, dtype=np.int64), m=m, M=M)


class TestSampleIndices:
    def test_exact_count(self, rng):
        idx = sample_indices(50, 0.2, rng)
        assert idx.size == 10
        assert np.unique(idx).size == 10
        assert idx.min() >= 0 and idx.max() < 50

    def test_floor_to_zero(self, rng):
        assert sample_indices(5, 0.1, rng).size == 0

    def test_uniformity(self):
        # each of 10 positions should be picked with frequency 0.5 +- 0.01
        rng = np.random.default_rng(77)
        hits = np.zeros(10)
        trials = 100_000
        for _ in range(trials):
            hits[sample_indices(10, 0.5, rng)] += 1
        np.testing.assert_allclose(hits / trials, 0.5, atol=0.01)


class TestCooccurAdd:
    def test_monte_carlo_distribution(self):
        # row 0 of M is (0, 0.6, 0.2); normalized to (0.75, 0.25) over absent
        M = np.array([[0.0, 0.6, 0.2], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        b = np.array([1, 0, 0], dtype=np.uint8)
        rng = np.random.default_rng(5)
        added = np.zeros(3)
        trials = 100_000
        for _ in range(trials):
            out = cooccur_add(b, M, rng)
            new = np.flatnonzero(out & ~b)
            assert new.size == 1
            added[new[0]] += 1
        np.testing.assert_allclose(added[1] / trials, 0.75, atol=0.01)
        np.testing.assert_allclose(added[2] / trials, 0.25, atol=0.01)
        # chi-square goodness of fit at alpha = 0.01
        _, p = chisquare(added[1:], trials * np.array([0.75, 0.25]))
        assert p > 0.01

    def test_all_ones_unchanged(self, rng):
        b = np.ones(3, dtype=np.uint8)
        np.testing.assert_array_equal(cooccur_add(b, np.full((3, 3), 0.5), rng), b)

    def test_zero_matrix_unchanged(self, rng):
        b = np.array([1, 0, 0], dtype=np.uint8)
        np.testing.assert_array_equal(cooccur_add(b, np.zeros((3, 3)), rng), b)

    def test_adds_at_most_one_never_removes(self, rng):
        M = rng.random((4, 4))
        np.fill_diagonal(M, 0.0)
        for _ in range(500):
            b = (rng.random(4) < 0.5).astype(np.uint8)
            if b.sum() == 0:
                b[0] = 1
            out = cooccur_add(b, M, rng)
            assert ((out - b) >= 0).all()
            assert out.sum() - b.sum() in (0, 1)


class TestFreqMask:
    def test_monte_carlo_closed_form(self):
        # m = (100, 10, 1), c = 1 -> P = (100, 10, 1) / 111; measured with the
        # non-empty guard off so raw masking decisions are visible
        m = np.array([100, 10, 1])
        expected = m / m.sum()
        b = np.ones(3, dtype=np.uint8)
        rng = np.random.default_rng(6)
        trials = 100_000
        cleared = np.zeros(3)
        for _ in range(trials):
            out = freq_mask(b, m, 1.0, rng, guard_empty=False)
            cleared += (b & ~out)
        freq = cleared / trials
        np.testing.assert_allclose(freq[0], 100 / 111, atol=0.01)
        for i in range(3):
            observed = np.array([cleared[i], trials - cleared[i]])
            _, p = chisquare(observed, trials * np.array([expected[i], 1 - expected[i]]))
            assert p > 0.01, f"behavior {i}"

    def test_zero_exponent_uniform(self):
        # c = 0 gives P_i = 1/|B| regardless of the counts
        m = np.array([1000, 5, 0])
        rng = np.random.default_rng(7)
        trials = 60_000
        cleared = np.zeros(3)
        b = np.ones(3, dtype=np.uint8)
        for _ in range(trials):
            cleared += b & ~freq_mask(b, m, 0.0, rng, guard_empty=False)
        np.testing.assert_allclose(cleared / trials, 1 / 3, atol=0.01)

    def test_guard_restores_single_behavior(self):
        b = np.array([0, 1, 0], dtype=np.uint8)
        m = np.array([0, 10_000, 0])
        rng = np.random.default_rng(8)
        for _ in range(200):
            out = freq_mask(b, m, 1.0, rng)  # P(mask bit 1) = 1
            np.testing.assert_array_equal(out, b)

    def test_guard_restores_rarest_lowest_index(self):
        # all three cleared -> restore the present behavior with smallest m;
        # tie between 0 and 2 resolves to index 0
        b = np.ones(3, dtype=np.uint8)
        m = np.array([1, 9, 1])

        class AlwaysMask:
            def random(self, n):
                return np.zeros(n)

        out = freq_mask(b, m, 1.0, AlwaysMask())
        np.testing.assert_array_equal(out, [1, 0, 0])

    def test_subset_and_nonempty(self, rng):
        m = np.array([50, 20, 5, 2])
        for _ in range(500):
            b = (rng.random(4) < 0.6).astype(np.uint8)
            if b.sum() == 0:
                b[1] = 1
            out = freq_mask(b, m, 0.5, rng)
            assert ((b - out) >= 0).all()  # removes only
            assert out.sum() >= 1


class TestAuxFlip:
    def test_clears_set_bit(self):
        b = np.array([1, 0, 1], dtype=np.uint8)
        np.testing.assert_array_equal(aux_flip(b, 0), [0, 0, 1])

    def test_sets_clear_bit(self):
        b = np.array([0, 0, 1], dtype=np.uint8)
        np.testing.assert_array_equal(aux_flip(b, 0), [1, 0, 1])

    def test_guard_blocks_emptying_flip(self):
        b = np.array([1, 0, 0], dtype=np.uint8)
        np.testing.assert_array_equal(aux_flip(b, 0), b)

    def test_involution_without_guard(self, rng):
        for _ in range(200):
            b = (rng.random(4) < 0.5).astype(np.uint8)
            once = aux_flip(b, 2, guard_empty=False)
            np.testing.assert_array_equal(aux_flip(once, 2, guard_empty=False), b)


def random_sequence(rng, L=12, n_behaviors=4, valid_len=None):
    valid_len = valid_len or int(rng.integers(1, L + 1))
    inters = []
    for _ in range(valid_len):
        b = (rng.random(n_behaviors) < 0.5).astype(np.uint8)
        if b.sum() == 0:
            b[int(rng.integers(n_behaviors))] = 1
        inters.append(Interaction(int(rng.integers(1, 30)), b))
    return truncate_pad(inters, L)


class TestAugmentSequence:
    def test_none_is_identity(self, tiny_stats, rng):
        seq = random_sequence(rng)
        cfg = AugmentConfig(method="none")
        assert augment_sequence(seq, cfg, tiny_stats, 0, rng) is seq

    def test_items_and_mask_preserved(self, tiny_stats, rng):
        for method in ("cooccur_add", "freq_mask", "aux_flip"):
            cfg = AugmentConfig(method=method, rho=0.5)
            for _ in range(50):
                seq = random_sequence(rng)
                out = augment_sequence(seq, cfg, tiny_stats, 0, rng)
                np.testing.assert_array_equal(out.items, seq.items)
                np.testing.assert_array_equal(out.valid_mask, seq.valid_mask)

    def test_cooccur_add_superset(self, tiny_stats, rng):
        cfg = AugmentConfig(method="cooccur_add", rho=0.5)
        for _ in range(100):
            seq = random_sequence(rng)
            out = augment_sequence(seq, cfg, tiny_stats, 0, rng)
            assert ((out.behaviors.astype(int) - seq.behaviors) >= 0).all()

    def test_diff_bounded_by_k(self, tiny_stats, rng):
        cfg = AugmentConfig(method="aux_flip", rho=0.5)
        for _ in range(100):
            seq = random_sequence(rng, valid_len=10)
            out = augment_sequence(seq, cfg, tiny_stats, 0, rng)
            changed = (out.behaviors != seq.behaviors).any(axis=1).sum()
            assert changed <= 5

    def test_deterministic_given_seed(self, tiny_stats):
        seq = random_sequence(np.random.default_rng(0), valid_len=10)
        cfg = AugmentConfig(method="freq_mask", rho=0.5)
        a = augment_sequence(seq, cfg, tiny_stats, 0, np.random.default_rng(42))
        b = augment_sequence(seq, cfg, tiny_stats, 0, np.random.default_rng(42))
        np.testing.assert_array_equal(a.behaviors, b.behaviors)

    def test_rejects_all_padding(self, tiny_stats, rng):
        seq = random_sequence(rng, valid_len=1)
        seq.valid_mask[:] = False
        with pytest.raises(ValueError):
            augment_sequence(seq, AugmentConfig(), tiny_stats, 0, rng)


class TestConfigValidation:
    @pytest.mark.parametrize("kwargs", [
        {"method": "crop"},
        {"rho": 0.0},
        {"rho": 1.0},
        {"c": -0.1},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            AugmentConfig(**kwargs)
