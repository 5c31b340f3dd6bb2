import numpy as np
import pytest

from streamgp.bound import ParamLayout
from streamgp.config import ExperimentConfig
from streamgp.metrics import ReplicateScore
from streamgp.predict import PredictionRequest
from streamgp.runner import (
    clip_geometry,
    fit_framework,
    generate_replicate,
    initial_model_params,
    predict_framework,
    restore_feasibility,
    run_benchmark,
    score_replicate,
    simulate_truth,
)

SMALL = dict(
    case_study="cs1", seed=314, replicates=2, m_t=4,
    simulation={"dense_points": 120, "obs_per_site": 12},
    optimizer={"n_starts": 1, "max_iter": 25, "al_rounds": 2},
)


@pytest.fixture(scope="module")
def small_setup():
    cfg = ExperimentConfig(**SMALL)
    truth = simulate_truth(cfg)
    obs, limits = generate_replicate(cfg, truth, 0)
    return cfg, truth, obs, limits


class TestFrameworkFits:
    def test_gpr_fit_converges(self, small_setup):
        cfg, truth, obs, limits = small_setup
        fw = fit_framework("exact_gpr", obs, limits, cfg, seed=1)
        assert fw.fit_result.converged
        assert np.isfinite(fw.fit_result.objective)

    def test_uncertain_gpr_uses_measured_inputs(self, small_setup):
        cfg, truth, obs, limits = small_setup
        fw = fit_framework("uncertain_gpr", obs, limits, cfg, seed=1)
        assert fw.inputs_which == "measured"

    def test_mo_fit_and_prediction(self, small_setup):
        cfg, truth, obs, limits = small_setup
        fw = fit_framework("mo_bgplvm", obs, limits, cfg, seed=1)
        assert fw.fit_result.converged
        assert fw.fit_result.max_eq_residual <= 1e-6
        assert fw.fit_result.min_slack >= -1e-8
        req = PredictionRequest(rows=[(1, "s1", 2.0), (2, "s3", 8.0)])
        pred = predict_framework(fw, obs, limits, cfg, req)
        assert np.all(np.isfinite(pred.mean_log))
        assert np.all(pred.sd_log > 0)

    def test_independent_fit_zeroes_cross_information(self, small_setup):
        cfg, truth, obs, limits = small_setup
        fw = fit_framework("in_bgplvm", obs, limits, cfg, seed=1)
        assert fw.independent
        # predictions for one function ignore the other function's data
        from streamgp.likelihood import Observation

        req = PredictionRequest(rows=[(1, "s2", 5.0)])
        base = predict_framework(fw, obs, limits, cfg, req)
        shifted = [
            Observation(o.function, o.site, o.time,
                        o.value + (3.0 if o.function == 2 else 0.0), o.status)
            for o in obs
        ]
        moved = predict_framework(fw, shifted, limits, cfg, req)
        assert base.mean_log[0] == pytest.approx(moved.mean_log[0], abs=1e-10)

    def test_unknown_framework(self, small_setup):
        cfg, truth, obs, limits = small_setup
        with pytest.raises(ValueError):
            fit_framework("boost", obs, limits, cfg, seed=1)

    def test_fit_determinism(self, small_setup):
        cfg, truth, obs, limits = small_setup
        a = fit_framework("mo_bgplvm", obs, limits, cfg, seed=9)
        b = fit_framework("mo_bgplvm", obs, limits, cfg, seed=9)
        np.testing.assert_array_equal(a.params, b.params)
        assert a.fit_result.objective == b.fit_result.objective


class TestGeometryProjection:
    def test_clip_respects_caps(self, small_setup):
        cfg, truth, obs, limits = small_setup
        layout = ParamLayout(cfg.m_t, 0)
        params = initial_model_params(obs, limits, cfg, layout)
        v = layout.to_vector(params)
        v[layout.slices["hprime"]] = 1e3
        clipped = layout.from_vector(clip_geometry(v, layout, False))
        from streamgp.bound import constraints_eval

        _, slacks = constraints_eval(clipped)
        assert float(np.min(slacks)) >= -1e-10

    def test_restore_satisfies_equalities_exactly(self, small_setup):
        cfg, truth, obs, limits = small_setup
        layout = ParamLayout(cfg.m_t, 0)
        params = initial_model_params(obs, limits, cfg, layout)
        v = layout.to_vector(params)
        v[layout.slices["mu_gamma"]] = [1.3, 1.1]
        v[layout.slices["alpha"]] = [0.9, 0.9]
        restored = layout.from_vector(restore_feasibility(v, layout, False))
        from streamgp.bound import constraints_eval

        eq, slacks = constraints_eval(restored)
        assert float(np.max(np.abs(eq))) <= 1e-10
        assert float(np.min(slacks)) >= -1e-10


class TestBenchmark:
    def test_scores_for_every_pair(self, small_setup):
        cfg, truth, obs, limits = small_setup
        scores = score_replicate(cfg, truth, 0, frameworks=["exact_gpr", "uncertain_gpr"])
        assert [s.framework for s in scores] == ["exact_gpr", "uncertain_gpr"]
        assert all(np.isfinite(s.rmse) for s in scores)

    def test_run_benchmark_serial_deterministic(self):
        cfg = ExperimentConfig(**{**SMALL, "frameworks": ["exact_gpr"]})
        s1 = run_benchmark(cfg, threads=1)
        s2 = run_benchmark(cfg, threads=1)
        assert [(a.replicate, a.framework, a.rmse, a.mae, a.mnll) for a in s1] == \
               [(b.replicate, b.framework, b.rmse, b.mae, b.mnll) for b in s2]

    def test_parallel_matches_serial(self):
        cfg = ExperimentConfig(**{**SMALL, "frameworks": ["exact_gpr"]})
        ser = run_benchmark(cfg, threads=1)
        par = run_benchmark(cfg, threads=2)
        assert [(a.replicate, a.rmse) for a in ser] == [(b.replicate, b.rmse) for b in par]

    def test_failures_recorded_not_raised(self, small_setup, monkeypatch):
        cfg, truth, obs, limits = small_setup
        import streamgp.runner as runner_mod

        def boom(*a, **k):
            raise RuntimeError("synthetic failure")

        monkeypatch.setattr(runner_mod, "fit_gpr", boom)
        scores = score_replicate(cfg, truth, 0, frameworks=["exact_gpr"])
        assert len(scores) == 1
        assert not scores[0].converged
        assert "synthetic failure" in scores[0].error


def test_noise_sd_recovery_on_large_clean_dataset():
    """Consistency: a long uncensored run recovers the noise level."""
    cfg = ExperimentConfig(
        case_study="cs1", seed=212, truth_seed=1594, replicates=1, m_t=10,
        simulation={"dense_points": 1000, "obs_per_site": 200},
        optimizer={"n_starts": 1, "max_iter": 60, "al_rounds": 2},
    )
    truth = simulate_truth(cfg)
    obs, limits = generate_replicate(cfg, truth, 0)
    fw = fit_framework("mo_bgplvm", obs, limits, cfg, seed=0)
    layout = ParamLayout(cfg.m_t, 0)
    params = layout.from_vector(fw.params)
    assert params.sigma[0] == pytest.approx(0.35, rel=0.2)
    assert params.sigma[1] == pytest.approx(0.25, rel=0.2)
