import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from markov_mimic.kernels import TestFunctionFamily
from markov_mimic.mimic import MimicSource, simulate_mimic
from markov_mimic.paths import TimeGrid
from markov_mimic.scenarios import builtin_scenario
from markov_mimic.simulate import SimConfig, simulate_ensemble
from markov_mimic.validator import (
    compare_marginals,
    compensator_probe,
    default_windows,
    ks_critical,
    ks_statistic,
    martingale_residuals,
    tv_distance,
    tv_to_pmf,
    wasserstein1,
)

GRID = TimeGrid(2**-6, 64)
samples = st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=40)


def accumulated(kind, params=None, n=2000, seed=0):
    scn = builtin_scenario(kind, params)
    fam = TestFunctionFamily(scn.d, scn.truncation)
    return simulate_ensemble(scn, SimConfig(n, GRID, seed=seed, accumulate=True), family=fam)


class TestDistances:
    def test_identical_samples(self):
        x = np.random.default_rng(0).normal(size=500)
        assert ks_statistic(x, x) == 0.0 and wasserstein1(x, x) == 0.0 and tv_distance(x.round(), x.round()) == 0.0

    # scipy's p-value code warns on degenerate samples; only the statistic matters here
    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    @settings(max_examples=200, deadline=None)
    @given(samples, samples)
    def test_match_scipy(self, a, b):
        assert ks_statistic(a, b) == pytest.approx(stats.ks_2samp(a, b, method="asymp").statistic, abs=1e-12)
        assert wasserstein1(a, b) == pytest.approx(stats.wasserstein_distance(a, b), rel=1e-9, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(samples, samples)
    def test_symmetric(self, a, b):
        assert ks_statistic(a, b) == ks_statistic(b, a)
        assert wasserstein1(a, b) == pytest.approx(wasserstein1(b, a), abs=1e-12)

    def test_w1_brute_force_assignment(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            a, b = rng.normal(size=7), rng.normal(size=7)
            best = min(np.abs(a - b[list(p)]).sum() for p in itertools.permutations(range(7))) / 7
            assert wasserstein1(a, b) == pytest.approx(best, abs=1e-12)

    def test_tv_examples(self):
        assert tv_distance([0, 0, 1, 1], [0, 1, 1, 1]) == 0.25
        assert tv_to_pmf([0, 1, 1, 3], np.array([0.5, 0.5])) == 0.25
        assert tv_to_pmf([0, 1], np.array([0.5, 0.5])) == 0.0

    def test_ks_critical(self):
        assert ks_critical(100_000, 100_000) == pytest.approx(0.0072789541601, rel=1e-10)

    def test_empty(self):
        with pytest.raises(ValueError):
            ks_statistic([], [1.0])


class TestCompareMarginals:
    def test_self_comparison_passes(self):
        ens = accumulated("mixed_poisson", n=500)
        rep = compare_marginals(ens, ens, [0.5, 1.0])
        assert rep.passed and all(r["ks"] == 0 and r["tv"] == 0 for r in rep.rows)

    def test_different_laws_fail(self):
        a = accumulated("levy", n=2000)
        b = accumulated("mixed_poisson", n=2000)
        rep = compare_marginals(a, b, [1.0])
        assert not rep.passed and rep.failures()

    def test_tolerance_override_and_discrete_tv(self):
        a = accumulated("mixed_poisson", n=1000, seed=1)
        b = accumulated("mixed_poisson", n=1000, seed=2)
        loose = compare_marginals(a, b, [1.0], {"ks": 1.0, "tv": 1.0})
        assert loose.passed and not np.isnan(loose.rows[0]["tv"])
        assert not compare_marginals(a, b, [1.0], {"ks": 1e-9}).passed

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            compare_marginals(accumulated("levy", n=10), accumulated("sup_dependent_vol", n=10), [1.0])

    def test_summary_lines(self):
        ens = accumulated("levy", n=50)
        lines = compare_marginals(ens, ens, [1.0]).summary_lines()
        assert lines[0].startswith("PASS marginal t=1 coord=0")


class TestMartingaleResiduals:
    def test_drift_only_residual_vanishes(self):
        ens = accumulated("levy", {"b": [0.7], "c": [[0.0]]}, n=50)
        rep = martingale_residuals(ens)
        assert all(r["mean"] == pytest.approx(0.0, abs=1e-12) for r in rep.rows if r["process"] == "i")

    def test_no_jumps_means_zero_jump_residual(self):
        rep = martingale_residuals(accumulated("random_drift_sign", n=200))
        assert all(r["mean"] == 0.0 and r["z"] == 0.0 for r in rep.rows if r["process"] == "iii")

    @pytest.mark.parametrize("kind", ["mixed_poisson", "iterated_integral", "random_drift_sign"])
    def test_residuals_centred(self, kind):
        rep = martingale_residuals(accumulated(kind, n=4000, seed=11))
        assert rep.passed(4.0), max(rep.rows, key=lambda r: abs(r["z"]))

    def test_rare_jumps_without_events(self):
        # expected jump count is about 0.1, so almost surely none occur
        ens = accumulated("levy", {"c": [[0.0]], "kernel": [{"xi": [2.0], "rate": 0.001}]}, n=100)
        assert len(ens.jumps) == 0
        rows = [r for r in martingale_residuals(ens).rows if r["process"] == "iii" and r["component"] == "min1_sq"]
        assert all(r["se"] > 0 and abs(r["z"]) < 1 for r in rows)

    def test_windows(self):
        ens = accumulated("levy", n=10)
        w = default_windows(ens, 16)
        assert len(w) == 16 and w[0][0] == 0.0 and w[-1][1] == 1.0
        with pytest.raises(ValueError):
            default_windows(ens, 100)

    def test_needs_accumulators(self):
        ens = simulate_ensemble(builtin_scenario("levy"), SimConfig(10, GRID))
        with pytest.raises(ValueError):
            martingale_residuals(ens)


class TestCompensatorProbe:
    def test_identical_ensembles(self):
        ens = accumulated("mixed_poisson", n=300)
        rows = compensator_probe(ens, ens, None, [0.5, 1.0])
        assert len(rows) == 2 * len(ens.accumulators.family)
        assert all(r["diff"] == 0.0 and r["z"] == 0.0 for r in rows)

    def test_from_stored_kernels_matches_accumulators(self):
        scn = builtin_scenario("mixed_poisson")
        fam = TestFunctionFamily(1, scn.truncation)
        acc = accumulated("mixed_poisson", n=300, seed=4)
        plain = simulate_ensemble(scn, SimConfig(300, GRID, seed=4))
        rows = compensator_probe(acc, plain, fam, [1.0])
        assert all(abs(r["diff"]) <= 1e-12 * max(1.0, abs(r["mean_a"])) for r in rows)

    def test_oracle_mimic_agrees(self):
        scn = builtin_scenario("mixed_poisson")
        fam = TestFunctionFamily(1, scn.truncation)
        cfg = SimConfig(4000, GRID, seed=6, accumulate=True)
        src = simulate_ensemble(scn, cfg, family=fam)
        mim = simulate_mimic(MimicSource.from_oracle(scn), cfg, family=fam)
        for r in compensator_probe(src, mim, fam, [0.5, 1.0]):
            assert abs(r["z"]) <= 4.0, r
