import json

import numpy as np
import pytest

from markov_mimic import storage
from markov_mimic.kernels import TestFunctionFamily
from markov_mimic.paths import TimeGrid
from markov_mimic.projector import ConditioningScheme, estimate
from markov_mimic.scenarios import builtin_scenario
from markov_mimic.simulate import SimConfig, simulate_ensemble

GRID = TimeGrid(2**-6, 64)


def simulated(kind, n=300, accumulate=True):
    scn = builtin_scenario(kind)
    fam = TestFunctionFamily(scn.d, scn.truncation)
    cfg = SimConfig(n, GRID, seed=5, accumulate=accumulate)
    return scn, cfg, simulate_ensemble(scn, cfg, family=fam)


class TestEnsembleRoundTrip:
    @pytest.mark.parametrize("kind", ["mixed_poisson", "iterated_integral", "sup_dependent_vol"])
    def test_exact(self, kind, tmp_path):
        scn, cfg, ens = simulated(kind)
        files = storage.write_ensemble(ens, tmp_path)
        assert {"ensemble.csv", "kernels.csv", "jumps.csv", "accumulators.csv"} <= set(files)
        back = storage.read_ensemble(tmp_path, cfg, scn.phi.name, scn.truncation.r, scn.name)
        for name in ("Y", "Z", "b", "c"):
            assert np.array_equal(getattr(back, name), getattr(ens, name)), name
        keep = ens.kernel_rates > 0
        assert np.array_equal(back.kernel_rates[keep], ens.kernel_rates[keep])
        assert np.array_equal(back.kernel_locs[keep], ens.kernel_locs[keep])
        assert np.array_equal(back.jumps.xi, ens.jumps.xi)
        assert np.array_equal(back.jumps.step, ens.jumps.step)
        for name in ("yh", "B", "C", "f_nu", "f_mu", "f2_nu"):
            assert np.array_equal(getattr(back.accumulators, name), getattr(ens.accumulators, name)), name

    def test_header_and_row_order(self, tmp_path):
        _, _, ens = simulated("iterated_integral", n=3, accumulate=False)
        storage.write_ensemble(ens, tmp_path)
        lines = (tmp_path / "ensemble.csv").read_text().splitlines()
        assert lines[0].split(",")[:6] == ["particle_id", "t", "z0", "z1", "y0", "y1"]
        assert lines[0].endswith("kernel_id,source_kind")
        assert [ln.split(",")[0] for ln in lines[1:4]] == ["0", "1", "2"]
        assert len(lines) == 1 + 3 * 65
        assert not (tmp_path / "accumulators.csv").exists()

    def test_no_jumps_writes_header_only(self, tmp_path):
        _, _, ens = simulated("random_drift_sign", n=5)
        storage.write_ensemble(ens, tmp_path)
        assert len((tmp_path / "jumps.csv").read_text().splitlines()) == 1

    def test_particle_count_checked(self, tmp_path):
        scn, _, ens = simulated("mixed_poisson", n=10)
        storage.write_ensemble(ens, tmp_path)
        with pytest.raises(ValueError):
            storage.read_ensemble(tmp_path, SimConfig(11, GRID), scn.phi.name, 0.5, scn.name)


class TestProjectionRoundTrip:
    @pytest.mark.parametrize("kind", ["mixed_poisson", "iterated_integral"])
    def test_lookups_agree(self, kind, tmp_path):
        scn, _, ens = simulated(kind, n=1500)
        pc = estimate(ens, ConditioningScheme(stride=16, n_bins=6, min_bin_count=20))
        storage.write_projection(pc, tmp_path)
        back = storage.read_projection(tmp_path, GRID, 16, pc.d, pc.state_dim, 0.5, pc.phi_name, pc.scenario)
        z = ens.Z[-1]
        for t in (0.0, 0.5, 1.0):
            a, b = pc.evaluate(t, z), back.evaluate(t, z)
            assert np.array_equal(a.b, b.b) and np.array_equal(a.c, b.c)
            assert np.array_equal(a.total_rate, b.total_rate)
            assert np.array_equal(a.outside, b.outside)
        for s0, s1 in zip(pc.slices, back.slices):
            assert np.array_equal(s0.weight, s1.weight) and np.array_equal(s0.count, s1.count)

    def test_projection_columns(self, tmp_path):
        _, _, ens = simulated("mixed_poisson", n=800)
        storage.write_projection(estimate(ens, ConditioningScheme(stride=8, n_bins=5, min_bin_count=10)), tmp_path)
        head = (tmp_path / "projection.csv").read_text().splitlines()[0].split(",")
        assert head[:2] == ["t", "bin_id"] and "b_hat0" in head and "mixture_size" in head
        assert (tmp_path / "mixture.csv").read_text().startswith("t,bin_id,member_kernel_id,weight")


class TestHelpers:
    def test_config_hash_ignores_key_order(self):
        assert storage.config_hash({"a": 1, "b": [1, 2]}) == storage.config_hash({"b": [1, 2], "a": 1})
        assert storage.config_hash({"a": 1}) != storage.config_hash({"a": 2})

    def test_write_rows(self, tmp_path):
        storage.write_rows(tmp_path / "r.csv", [{"x": 0.1, "ok": True}, {"x": 2, "ok": False}], ["x", "ok"])
        assert (tmp_path / "r.csv").read_text().splitlines() == ["x,ok", "0.10000000000000001,PASS", "2,FAIL"]

    def test_manifest_round_trip(self, tmp_path):
        storage.write_manifest(tmp_path, {"seed": 3})
        assert storage.read_manifest(tmp_path)["seed"] == 3
        assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 3

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(storage.MissingInputError):
            storage.read_manifest(tmp_path)
