import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from markov_mimic.rng import MARK, POISSON, CounterRNG, philox4x64, poisson_inverse


def numpy_philox(counter, key):
    """Reference block from numpy's Philox, which bumps the counter before its first output."""
    c = np.array(counter, dtype=np.uint64)
    prev = c.copy()
    # borrow through the four 64-bit words
    for i in range(4):
        if prev[i] > 0:
            prev[i] -= np.uint64(1)
            break
        prev[i] = np.uint64(2**64 - 1)
    bg = np.random.Philox(counter=prev, key=np.array(key, dtype=np.uint64))
    return bg.random_raw(4)


class TestPhilox:
    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 2**64 - 1), min_size=4, max_size=4),
           st.lists(st.integers(0, 2**64 - 1), min_size=2, max_size=2))
    def test_matches_numpy(self, counter, key):
        if counter[0] == 0 and all(c == 0 for c in counter):
            return
        got = philox4x64(np.array([counter], dtype=np.uint64), (np.uint64(key[0]), np.uint64(key[1])))[0]
        assert np.array_equal(got, numpy_philox(counter, key))

    def test_vectorized_rows_independent(self):
        ctr = np.array([[i, 3, 4, 0] for i in range(50)], dtype=np.uint64)
        whole = philox4x64(ctr, (1, 2))
        for i in (0, 17, 49):
            assert np.array_equal(whole[i], philox4x64(ctr[i:i + 1], (1, 2))[0])


class TestCounterRNG:
    def test_chunking_invariance(self):
        rng = CounterRNG(42)
        p = np.arange(1000)
        full = rng.uniforms(p, 7, POISSON)
        parts = np.vstack([rng.uniforms(c, 7, POISSON) for c in np.array_split(p, 7)])
        assert np.array_equal(full, parts)

    def test_slots_streams_and_seeds_differ(self):
        p = np.arange(10)
        a = CounterRNG(1).uniforms(p, 0, MARK)
        assert not np.array_equal(a, CounterRNG(1).uniforms(p, 0, MARK + 1))
        assert not np.array_equal(a, CounterRNG(1, stream=1).uniforms(p, 0, MARK))
        assert not np.array_equal(a, CounterRNG(2).uniforms(p, 0, MARK))

    def test_uniform_range_and_moments(self):
        u = CounterRNG(5).uniforms(np.arange(50000), 3, 11).ravel()
        assert u.min() >= 0.0 and u.max() < 1.0
        assert stats.kstest(u, "uniform").pvalue > 1e-3

    def test_normals(self):
        g = CounterRNG(9).normals(np.arange(40000), 12, 6)
        assert g.shape == (40000, 6)
        assert stats.kstest(g.ravel(), "norm").pvalue > 1e-3
        corr = np.corrcoef(g.T)
        assert np.max(np.abs(corr - np.eye(6))) < 0.03

    def test_seed_range(self):
        with pytest.raises(ValueError):
            CounterRNG(-1)
        with pytest.raises(ValueError):
            CounterRNG(2**64)
        CounterRNG(2**64 - 1).uniforms(np.arange(2), 0, 0)


class TestPoissonInverse:
    def test_matches_scipy_ppf(self):
        rng = np.random.default_rng(0)
        u = rng.random(50000)
        mean = rng.uniform(0, 6, 50000)
        assert np.array_equal(poisson_inverse(mean, u), stats.poisson.ppf(u, mean).astype(np.int64))

    def test_zero_mean(self):
        assert np.all(poisson_inverse(np.zeros(5), np.linspace(0, 0.999, 5)) == 0)
