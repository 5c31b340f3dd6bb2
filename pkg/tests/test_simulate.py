import numpy as np
import pytest

from streamgp.kernels import SAMPLED_SITES, st_cov_ff
from streamgp.likelihood import Status
from streamgp.simulate import (
    DEFAULT_CELL_COUNTS,
    SimulationConfig,
    SimulationError,
    make_dataset,
    sample_latent_truth,
)

from conftest import GAMMA_TRUE, TAU_TRUE


@pytest.fixture(scope="module")
def small_sim():
    return SimulationConfig(dense_points=60, obs_per_site=12, replicates=1, master_seed=77)


@pytest.fixture(scope="module")
def small_truth(truth_kernels, truth_inputs, small_sim):
    return sample_latent_truth(truth_kernels, truth_inputs, small_sim, seed=123)


class TestTruthSampling:
    def test_shapes(self, small_truth, small_sim):
        assert small_truth.times.size == small_sim.dense_points
        assert set(small_truth.values) == {(a, s) for a in (1, 2) for s in SAMPLED_SITES}

    def test_deterministic_per_seed(self, truth_kernels, truth_inputs, small_sim):
        t1 = sample_latent_truth(truth_kernels, truth_inputs, small_sim, seed=9)
        t2 = sample_latent_truth(truth_kernels, truth_inputs, small_sim, seed=9)
        for k in t1.values:
            np.testing.assert_array_equal(t1.values[k], t2.values[k])

    def test_moments_over_replicate_draws(self, truth_kernels, truth_inputs):
        sim = SimulationConfig(dense_points=8, obs_per_site=4, replicates=1)
        n_draws = 500
        f1_s1, f1_s2, f1_s3 = [], [], []
        for k in range(n_draws):
            t = sample_latent_truth(truth_kernels, truth_inputs, sim, seed=1000 + k)
            f1_s1.append(t.values[(1, "s1")][0])
            f1_s2.append(t.values[(1, "s2")])
            f1_s3.append(t.values[(1, "s3")])
        f1_s1 = np.array(f1_s1)
        var_expected = float(st_cov_ff(1, 1, "s1", "s1", 0.0, 0.0, truth_kernels,
                                       truth_inputs.__class__(tau=TAU_TRUE, gamma=GAMMA_TRUE,
                                                              hprime=np.ones(3),
                                                              alpha=np.zeros(2))))
        sd = np.sqrt(var_expected)
        assert abs(np.mean(f1_s1)) < 4 * sd / np.sqrt(n_draws)
        assert np.var(f1_s1) == pytest.approx(var_expected, rel=0.35)
        # flow-unconnected sites stay uncorrelated
        cross = np.mean([np.mean(a * b) for a, b in zip(f1_s2, f1_s3)])
        assert abs(cross) < 0.2


class TestMakeDatasetCs1:
    def test_row_count_and_statuses(self, small_truth, small_sim):
        obs, limits = make_dataset(small_truth, small_sim, "cs1", seed=5)
        assert len(obs) == 2 * 3 * small_sim.obs_per_site
        assert limits is None
        assert all(o.status is Status.OBSERVED for o in obs)

    def test_values_are_truth_plus_noise(self, small_truth, small_sim):
        obs, _ = make_dataset(small_truth, small_sim, "cs1", seed=5)
        idx = small_sim.obs_indices()
        resid = []
        for o in obs:
            i = int(np.argmin(np.abs(small_truth.times[idx] - o.time)))
            resid.append(o.value - small_truth.values[(o.function, o.site)][idx][i])
        assert np.std(resid) < 3 * max(small_sim.noise_sd)

    def test_determinism(self, small_truth, small_sim):
        a, _ = make_dataset(small_truth, small_sim, "cs1", seed=5)
        b, _ = make_dataset(small_truth, small_sim, "cs1", seed=5)
        assert a == b

    def test_full_scale_row_count(self, truth_kernels, truth_inputs):
        sim = SimulationConfig()
        truth = sample_latent_truth(truth_kernels, truth_inputs,
                                    SimulationConfig(dense_points=200), seed=3)
        sim = SimulationConfig(dense_points=200, obs_per_site=50)
        obs, _ = make_dataset(truth, sim, "cs1", seed=1)
        assert len(obs) == 300


class TestMakeDatasetCs2:
    @pytest.fixture(scope="class")
    def compatible(self, truth_kernels, truth_inputs):
        # the acceptance truth: per-cell retention targets achievable
        sim = SimulationConfig(master_seed=105)
        truth = sample_latent_truth(truth_kernels, truth_inputs, sim, seed=3552098277)
        return truth, sim

    def test_cell_counts_match_targets(self, compatible):
        truth, sim = compatible
        obs, limits = make_dataset(truth, sim, "cs2", seed=sim.replicate_seed(0))
        counts = {}
        for o in obs:
            if o.status in (Status.OBSERVED, Status.BETWEEN_LIMITS, Status.BELOW_DETECTION):
                tag = {"obs": "obs", "bql": "bql", "bdl": "bdl"}[o.status.value]
                counts[(o.function, o.site, tag)] = counts.get((o.function, o.site, tag), 0) + 1
        for key, want in DEFAULT_CELL_COUNTS.items():
            assert counts.get(key, 0) == want, f"{key}: {counts.get(key, 0)} != {want}"

    def test_limits_ordered_and_values_recoded(self, compatible):
        truth, sim = compatible
        obs, limits = make_dataset(truth, sim, "cs2", seed=sim.replicate_seed(1))
        assert np.all(limits.ld < limits.lq)
        for o in obs:
            if o.status is Status.BETWEEN_LIMITS:
                assert o.value == pytest.approx(limits.lq[o.function - 1])
            elif o.status is Status.BELOW_DETECTION:
                assert o.value == pytest.approx(limits.ld[o.function - 1])
            elif o.status is Status.OBSERVED:
                assert o.value > limits.lq[o.function - 1]

    def test_recensoring_is_idempotent(self, compatible):
        truth, sim = compatible
        obs, limits = make_dataset(truth, sim, "cs2", seed=sim.replicate_seed(0))
        for o in obs:
            if o.status is Status.OBSERVED:
                assert not (o.value <= limits.lq[o.function - 1])

    def test_missing_rows_carry_no_value(self, compatible):
        truth, sim = compatible
        obs, _ = make_dataset(truth, sim, "cs2", seed=sim.replicate_seed(0))
        assert any(o.status is Status.MISSING for o in obs)
        for o in obs:
            if o.status is Status.MISSING:
                assert o.value is None

    def test_incompatible_cell_raises(self, small_truth):
        sim = SimulationConfig(dense_points=60, obs_per_site=12)
        with pytest.raises(SimulationError):
            make_dataset(small_truth, sim, "cs2", seed=0)  # 12-point cells < targets

    def test_removed_interpretation_flag(self, compatible):
        truth, sim0 = compatible
        sim = SimulationConfig(master_seed=105, cell_counts_are_remaining=False,
                               cell_counts={k: 1 for k in DEFAULT_CELL_COUNTS})
        obs, _ = make_dataset(truth, sim, "cs2", seed=sim.replicate_seed(0))
        n_missing = sum(o.status is Status.MISSING for o in obs)
        assert n_missing == 18  # one removed per cell


def test_config_validation():
    with pytest.raises(SimulationError):
        SimulationConfig(censor_quantiles=((0.15, 0.25), (0.35, 0.20)))
    with pytest.raises(SimulationError):
        SimulationConfig(dense_points=10, obs_per_site=50)


def test_unknown_mode_rejected(small_truth, small_sim):
    with pytest.raises(SimulationError):
        make_dataset(small_truth, small_sim, "cs3", seed=0)
