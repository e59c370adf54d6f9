import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from markov_mimic.errors import UnsupportedKernelError
from markov_mimic.kernels import (
    CompensatorAccumulator,
    LevyKernel,
    MixtureKernel,
    TestFunctionFamily,
    TruncationFunction,
    accumulate_compensator,
    convert_truncation,
    drift_truncated_to_canonical,
    kernel_integral,
    min1_sq,
    ramp,
)
from markov_mimic.paths import TimeGrid


def square(xi):
    return np.sum(xi**2, axis=1)


class TestTruncation:
    def test_identity_inside_zero_outside(self):
        h = TruncationFunction(1.0)
        xi = np.array([[0.3], [-0.99], [1.0], [1.5], [-4.0]])
        assert h(xi)[:, 0].tolist() == [0.3, -0.99, 1.0, 0.0, 0.0]

    def test_bounded_by_threshold(self):
        h = TruncationFunction(0.5)
        xi = np.random.default_rng(0).normal(size=(1000, 3))
        assert np.all(np.linalg.norm(h(xi), axis=1) <= 0.5)

    def test_tag(self):
        assert TruncationFunction(0.5).tag == "cutoff:0.5"
        with pytest.raises(ValueError):
            TruncationFunction(0.0)


class TestLevyKernel:
    def test_no_atom_at_origin(self):
        with pytest.raises(ValueError):
            LevyKernel([[0.0, 0.0]], [1.0])

    def test_rates_positive(self):
        with pytest.raises(ValueError):
            LevyKernel([[1.0]], [0.0])

    def test_total_rate_atoms_plus_density(self):
        k = LevyKernel([[1.0], [-2.0]], [2.0, 0.5], density=lambda x: np.full(len(x), 3.0), support=([1.0], [2.0]))
        assert abs(k.total_rate - 5.5) <= 1e-10 * 5.5

    def test_density_needs_support(self):
        with pytest.raises(UnsupportedKernelError):
            LevyKernel(d=1, density=lambda x: np.ones(len(x)))

    def test_config_round_trip(self):
        k = LevyKernel([[1.0, 2.0], [-0.5, 0.25]], [3.0, 0.5])
        back = LevyKernel.from_config(k.to_config(), 2)
        assert np.array_equal(back.locs, k.locs) and np.array_equal(back.rates, k.rates)
        assert k.to_config()[0] == {"xi": [1.0, 2.0], "rate": 3.0}


class TestKernelIntegral:
    def test_zero_function(self):
        k = LevyKernel([[1.0]], [2.0])
        assert kernel_integral(k, lambda x: np.zeros(len(x))) == 0.0

    def test_atom_sum(self):
        k = LevyKernel([[1.0], [-3.0]], [2.0, 0.5])
        assert kernel_integral(k, square) == 6.5

    def test_ramp_member(self):
        k = LevyKernel([[1.0]], [2.0])
        assert kernel_integral(k, ramp(3.0)) == 2.0

    def test_density_quadrature(self):
        # uniform density 2 on [1, 3]: ∫ x^2 = 2 * (27 - 1) / 3
        k = LevyKernel(d=1, density=lambda x: np.full(len(x), 2.0), support=([1.0], [3.0]))
        assert kernel_integral(k, square) == pytest.approx(52.0 / 3.0, rel=1e-12)

    def test_min1_sq_finite(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            locs = rng.normal(size=(5, 2)) * 3
            rates = rng.uniform(0.1, 2, 5)
            k = LevyKernel(locs, rates)
            v = kernel_integral(k, min1_sq)
            assert np.isfinite(v) and v == pytest.approx(float(rates @ min1_sq(locs)), rel=1e-15)


class TestTruncationAlgebra:
    def test_zero_kernel(self):
        b = np.array([0.7])
        k = LevyKernel.zero(1)
        assert np.array_equal(convert_truncation(b, k, TruncationFunction(1), TruncationFunction(2)), b)
        assert np.array_equal(drift_truncated_to_canonical(b, k, TruncationFunction(1)), b)

    def test_same_truncation(self):
        b = np.array([0.7])
        h = TruncationFunction(1.0)
        assert np.array_equal(convert_truncation(b, LevyKernel([[2.0]], [3.0]), h, h), b)

    def test_one_atom_conversion(self):
        k = LevyKernel([[2.0]], [3.0])
        out = convert_truncation([0.5], k, TruncationFunction(1.0), TruncationFunction(2.5))
        assert out[0] == 0.5 + 6.0

    def test_jump_inside_truncation(self):
        k = LevyKernel([[0.5]], [7.0])
        assert drift_truncated_to_canonical([1.25], k, TruncationFunction(1.0))[0] == 1.25

    def test_one_atom_canonical(self):
        k = LevyKernel([[2.0]], [3.0])
        assert drift_truncated_to_canonical([1.0], k, TruncationFunction(1.0))[0] == 7.0

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 3))
    def test_round_trip_and_consistency(self, seed, d):
        rng = np.random.default_rng(seed)
        locs = rng.normal(size=(4, d)) * 2
        norms = np.linalg.norm(locs, axis=1)
        h, h2 = TruncationFunction(0.75), TruncationFunction(1.5)
        if np.any(np.isclose(norms, 0.75)) or np.any(np.isclose(norms, 1.5)):
            return
        k = LevyKernel(locs, rng.uniform(0.1, 3.0, 4))
        b = rng.normal(size=d)
        back = convert_truncation(convert_truncation(b, k, h, h2), k, h2, h)
        assert np.max(np.abs(back - b)) <= 1e-12
        big = TruncationFunction(float(norms.max()) + 1.0)
        assert np.max(np.abs(drift_truncated_to_canonical(b, k, h) - convert_truncation(b, k, h, big))) <= 1e-12


class TestMixture:
    def test_weights_sum_to_one(self):
        with pytest.raises(ValueError):
            MixtureKernel((LevyKernel([[1.0]], [1.0]),), np.array([0.5]))

    def test_linearity(self):
        mix = MixtureKernel((LevyKernel([[1.0]], [1.0]), LevyKernel([[1.0]], [4.0])), np.array([0.5, 0.5]))
        assert mix.integrate(min1_sq) == 2.5
        assert mix.total_rate == 2.5
        flat = mix.flatten()
        assert kernel_integral(flat, min1_sq) == 2.5

    def test_member_choice_is_rate_weighted(self):
        mix = MixtureKernel((LevyKernel([[1.0]], [1.0]), LevyKernel([[2.0]], [3.0])), np.array([0.5, 0.5]))
        assert mix.member_probabilities().tolist() == [0.25, 0.75]
        rng = np.random.default_rng(3)
        marks = np.array([mix.sample(rng)[0] for _ in range(4000)])
        assert abs(np.mean(marks == 2.0) - 0.75) < 4 * np.sqrt(0.75 * 0.25 / 4000)


class TestTestFunctionFamily:
    def test_names(self):
        fam = TestFunctionFamily(2, TruncationFunction(0.5))
        assert fam.names == ["ramp_a=0.25", "ramp_a=0.5", "ramp_a=1", "ramp_a=2", "ramp_a=4", "ramp_a=8",
                             "hh_00", "hh_01", "hh_11", "min1_sq"]

    def test_ramps_bounded_and_vanish_near_zero(self):
        fam = TestFunctionFamily(1, TruncationFunction(0.5))
        xi = np.linspace(-10, 10, 2001)[:, None]
        vals = fam(xi)
        for k, a in enumerate(fam.a_values):
            assert np.all((vals[:, k] >= 0) & (vals[:, k] <= 1))
            assert np.all(vals[np.abs(xi[:, 0]) <= 1 / a, k] == 0)

    def test_vanishes_on_unit_atom_for_quarter_slope(self):
        fam = TestFunctionFamily(1, TruncationFunction(0.5))
        assert fam.member("ramp_a=0.25")(np.array([[1.0]]))[0] == 0.0


class TestCompensatorAccumulator:
    def test_zero_kernel_unchanged(self):
        acc = CompensatorAccumulator(TimeGrid(0.1, 3), 1)
        accumulate_compensator(acc, 1, LevyKernel.zero(1), 0.1)
        assert acc.total_mass() == 0.0

    def test_far_atom(self):
        acc = CompensatorAccumulator(TimeGrid(0.1, 3), 1)
        accumulate_compensator(acc, 1, LevyKernel([[2.0]], [3.0]), 0.1)
        assert acc.masses()[(2.0,)] == pytest.approx(0.3, abs=1e-15)

    def test_near_atom(self):
        acc = CompensatorAccumulator(TimeGrid(0.1, 3), 1)
        accumulate_compensator(acc, 1, LevyKernel([[0.5]], [4.0]), 0.1)
        assert acc.masses()[(0.5,)] == pytest.approx(0.1, abs=1e-15)

    def test_monotone_and_starts_at_zero(self):
        rng = np.random.default_rng(2)
        acc = CompensatorAccumulator(TimeGrid(0.05, 20), 1)
        for s in range(1, 21):
            k = LevyKernel(rng.choice([-1.0, 0.5, 2.0], size=(2, 1)), rng.uniform(0.1, 2, 2))
            accumulate_compensator(acc, s, k, 0.05)
        table = acc.mass_table()
        assert acc.total_mass(0) == 0.0
        assert np.all(np.diff(table, axis=0) >= 0)
        assert acc.measure(20, lambda p: np.abs(p[:, 0]) > 1) == pytest.approx(table[-1][[i for i, l in enumerate(acc.locations) if abs(l[0]) > 1]].sum())

    def test_errors(self):
        acc = CompensatorAccumulator(TimeGrid(0.1, 3), 1)
        with pytest.raises(ValueError):
            accumulate_compensator(acc, 1, LevyKernel.zero(1), -0.1)
        with pytest.raises(ValueError):
            accumulate_compensator(acc, 2, LevyKernel.zero(1), 0.1)
