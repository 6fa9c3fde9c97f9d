import hashlib

import numpy as np
import pandas as pd
import pytest

from factorial.core.errors import ParameterError
from factorial.experiments.base import (
    EXPERIMENT_DEFAULTS,
    RunConfig,
    deterministic_seed,
    run_trials,
    sample_dosage_at_distance,
)
from main import ExperimentHarness


@pytest.fixture
def harness():
    return ExperimentHarness()


def run(harness, cfg):
    return pd.read_csv(harness.run_experiment(cfg))


def pooled_se(a, b):
    return np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)


class TestRunConfig:

    def test_defaults(self):
        cfg = RunConfig.resolve("passive_sweep")
        assert (cfg.p, cfg.k, cfg.n, cfg.trials, cfg.dosages_per_distance) == (10, 2, 200, 20, 100)
        assert cfg.distances == (0.0, 0.1, 0.2, 0.3, 0.4)

    def test_uniform_grid_default(self):
        assert RunConfig.resolve("uniform_sweep").dosage_grid == EXPERIMENT_DEFAULTS["uniform_sweep"]["dosage_grid"]
        assert len(EXPERIMENT_DEFAULTS["uniform_sweep"]["dosage_grid"]) == 11

    def test_layering(self):
        cfg = RunConfig.resolve(
            "passive_sweep",
            {"p": "6", "n": "30", "distances": "0, 0.1", "seed": "11"},
            {"p": 4, "n": None},
        )
        assert (cfg.p, cfg.n, cfg.master_seed) == (4, 30, 11)
        assert cfg.distances == (0.0, 0.1)

    def test_optional_values_from_file(self):
        cfg = RunConfig.resolve("active_compare", {"L": "none", "round_sigmas": "", "save_model": "yes"})
        assert cfg.L is None and cfg.round_sigmas is None and cfg.save_model is True

    def test_unknown_key(self):
        with pytest.raises(ParameterError, match="unknown configuration key"):
            RunConfig.resolve("passive_sweep", {"colour": "blue"})

    def test_unparseable_value(self):
        with pytest.raises(ParameterError, match="invalid value for n"):
            RunConfig.resolve("passive_sweep", overrides={"n": "many"})

    @pytest.mark.parametrize("experiment, overrides", [
        ("passive_sweep", {"distances": "0,0.5"}),
        ("passive_sweep", {"distances": ","}),
        ("constrained_sweep", {"distances": ""}),
        ("uniform_sweep", {"dosage_grid": ","}),
        ("uniform_sweep", {"dosage_grid": "0.5,1.2"}),
        ("constrained_sweep", {"L": "none"}),
        ("misspecified_sweep", {"k_assumed": 5}),
        ("active_compare", {"strategies": "optimal,greedy"}),
        ("active_compare", {"rounds": 3, "round_sigmas": "1,2"}),
        ("active_compare", {"rounds": 2, "round_sigmas": "1,0"}),
        ("passive_sweep", {"estimator": "lasso"}),
        ("passive_sweep", {"k": 11}),
        ("passive_sweep", {"trials": 0}),
        ("emulate", {}),
    ])
    def test_rejects(self, experiment, overrides):
        with pytest.raises(ParameterError):
            RunConfig.resolve(experiment, overrides=overrides)

    def test_unknown_experiment(self):
        with pytest.raises(ParameterError):
            RunConfig.resolve("bandit_sweep")


class TestDeterministicSeed:

    def test_sha256_prefix(self):
        expected = int(hashlib.sha256(b"7|passive_sweep|model").hexdigest()[:16], 16)
        assert deterministic_seed(7, "passive_sweep", "model") == expected

    def test_parts_matter(self):
        assert deterministic_seed(0, "a", 1) != deterministic_seed(0, "a", 2)
        assert deterministic_seed(0, "a", 1) < 2 ** 64


class TestSampleDosageAtDistance:

    def test_zero_distance_returns_center(self):
        center = np.array([0.2, 0.7])
        np.testing.assert_array_equal(sample_dosage_at_distance(center, 0.0, np.random.default_rng(0)), center)

    @pytest.mark.parametrize("center", [np.full(5, 0.5), np.array([0.0, 0.95, 0.3])])
    def test_exact_distance_inside_box(self, center):
        rng = np.random.default_rng(1)
        for _ in range(200):
            d = sample_dosage_at_distance(center, 0.3, rng)
            assert np.max(np.abs(d - center)) == pytest.approx(0.3)
            assert np.all((d >= 0.0) & (d <= 1.0))

    def test_budget(self):
        rng = np.random.default_rng(2)
        center = np.full(10, 0.2)
        for _ in range(100):
            assert sample_dosage_at_distance(center, 0.1, rng, budget=2.0).sum() <= 2.0 + 1e-9

    def test_center_over_budget(self):
        with pytest.raises(ParameterError):
            sample_dosage_at_distance(np.array([0.3, 0.3]), 0.0, np.random.default_rng(0), budget=0.5)

    def test_no_feasible_coordinate(self):
        with pytest.raises(ParameterError):
            sample_dosage_at_distance(np.array([0.5]), 0.6, np.random.default_rng(0))

    def test_budget_never_met(self):
        with pytest.raises(ParameterError):
            sample_dosage_at_distance(np.full(2, 0.5), 0.1, np.random.default_rng(0), budget=0.5, max_attempts=50)


def test_run_trials_keeps_order():
    items = list(range(40))
    assert run_trials(lambda i: i * i, items, workers=4) == [i * i for i in items]


class TestHarnessRuns:

    def test_passive_sweep(self, harness, tmp_path):
        cfg = RunConfig.resolve("passive_sweep", overrides=dict(
            p=4, k=1, n=50, trials=2, dosages_per_distance=3, distances="0,0.2", out=str(tmp_path),
        ))
        frame = run(harness, cfg)
        assert len(frame) == 12
        assert sorted(frame["value"].unique()) == [0.0, 0.2]
        assert sorted(frame["trial"].unique()) == list(range(6))
        assert set(frame["strategy"]) == {"passive"}
        assert (frame["ols"] + frame["ridge"] + frame["null"] == 1).all()
        assert len(pd.read_csv(tmp_path / "summary.csv")) == 2
        assert "[config]" in (tmp_path / "manifest").read_text()

    def test_reproducible_across_workers(self, harness, tmp_path):
        outputs = []
        for workers, name in ((1, "a"), (1, "b"), (3, "c")):
            cfg = RunConfig.resolve("passive_sweep", overrides=dict(
                p=4, k=2, n=40, trials=3, dosages_per_distance=2, distances="0,0.1,0.3",
                workers=workers, master_seed=5, out=str(tmp_path / name),
            ))
            path = harness.run_experiment(cfg)
            outputs.append((path.read_bytes(), (path.parent / "summary.csv").read_bytes()))
        assert outputs[0] == outputs[1] == outputs[2]

    def test_seed_changes_results(self, harness, tmp_path):
        frames = [
            run(harness, RunConfig.resolve("uniform_sweep", overrides=dict(
                p=3, k=1, n=30, trials=2, dosage_grid="0.5", master_seed=seed, out=str(tmp_path / str(seed)),
            )))
            for seed in (1, 2)
        ]
        assert not np.array_equal(frames[0]["mse"], frames[1]["mse"])

    def test_uniform_sweep(self, harness, tmp_path):
        frame = run(harness, RunConfig.resolve("uniform_sweep", overrides=dict(
            p=3, k=2, n=40, trials=4, dosage_grid="0.3,0.5", out=str(tmp_path),
        )))
        assert len(frame) == 8
        assert set(frame["strategy"]) == {"uniform"}
        assert sorted(frame["value"].unique()) == [0.3, 0.5]

    def test_uniform_sweep_shares_trial_seeds(self, harness, tmp_path):
        frame = run(harness, RunConfig.resolve("uniform_sweep", overrides=dict(
            p=3, k=1, n=30, trials=3, dosage_grid="0.45,0.5,0.55", out=str(tmp_path),
        )))
        assert frame.groupby("trial")["seed"].nunique().eq(1).all()
        assert frame["seed"].nunique() == 3

    def test_constrained_sweep(self, harness, tmp_path):
        frame = run(harness, RunConfig.resolve("constrained_sweep", overrides=dict(
            p=5, k=1, n=60, L=1.0, trials=2, dosages_per_distance=2, distances="0,0.1", out=str(tmp_path),
        )))
        assert len(frame) == 8
        assert set(frame["strategy"]) == {"constrained"}

    def test_misspecified_sweep(self, harness, tmp_path):
        frame = run(harness, RunConfig.resolve("misspecified_sweep", overrides=dict(
            p=3, k_assumed=1, n=60, trials=2, dosages_per_distance=2, distances="0,0.2",
            save_model=True, out=str(tmp_path),
        )))
        assert len(frame) == 8
        header = (tmp_path / "misspecified_sweep.model").read_text().splitlines()[:2]
        assert header == ["p 3", "k 3"]

    def test_fractional_compare(self, harness, tmp_path):
        frame = run(harness, RunConfig.resolve("fractional_compare", overrides=dict(
            p=5, k=2, n=16, trials=3, out=str(tmp_path),
        )))
        assert len(frame) == 6
        assert set(frame["strategy"]) == {"fractional", "half"}
        assert pd.read_csv(tmp_path / "fractional_design.csv").shape == (16, 5)

    def test_fractional_compare_resizes(self, harness, tmp_path):
        run(harness, RunConfig.resolve("fractional_compare", overrides=dict(
            p=5, k=1, n=40, trials=1, out=str(tmp_path),
        )))
        assert pd.read_csv(tmp_path / "fractional_design.csv").shape == (40, 5)

    def test_active_compare(self, harness, tmp_path):
        frame = run(harness, RunConfig.resolve("active_compare", overrides=dict(
            p=3, k=1, n=20, rounds=3, trials=2, strategies="optimal,random,half", out=str(tmp_path),
        )))
        assert len(frame) == 18
        assert sorted(frame["round"].unique()) == [1, 2, 3]
        acquisitions = pd.read_csv(tmp_path / "acquisitions.csv")
        assert len(acquisitions) == 4
        assert set(acquisitions["round"]) == {2, 3}

    def test_active_arms_share_observations(self, harness, tmp_path):
        frame = run(harness, RunConfig.resolve("active_compare", overrides=dict(
            p=3, k=1, n=20, rounds=2, trials=3, strategies="optimal,half", out=str(tmp_path),
        )))
        first = frame[frame["round"] == 1].pivot(index="trial", columns="strategy", values="mse")
        np.testing.assert_array_equal(first["optimal"], first["half"])
        assert frame.groupby(["trial", "round"])["seed"].nunique().eq(1).all()

    def test_active_compare_budget_and_partial(self, harness, tmp_path):
        frame = run(harness, RunConfig.resolve("active_compare", overrides=dict(
            p=5, k=1, n=16, rounds=2, trials=1, L=1.5, strategies="optimal,half,partial", out=str(tmp_path),
        )))
        assert set(frame["strategy"]) == {"optimal", "half", "partial"}
        acquisitions = pd.read_csv(tmp_path / "acquisitions.csv")
        for dosage in acquisitions["dosage"]:
            assert sum(float(v) for v in dosage.split(";")) <= 1.5 + 1e-5
        assert pd.read_csv(tmp_path / "partial_design.csv").shape == (16, 5)

    def test_active_compare_round_noise(self, harness, tmp_path):
        frame = run(harness, RunConfig.resolve("active_compare", overrides=dict(
            p=3, k=1, n=20, rounds=3, trials=2, strategies="optimal,half",
            round_sigmas="1,2,0.5", out=str(tmp_path),
        )))
        assert len(frame) == 12
        assert np.isfinite(frame["mse"]).all()

    def test_emulate(self, harness, tmp_path):
        target = tmp_path / "target.txt"
        target.write_text("# anti-correlated pair\n++ 0.5\n-- 0.5\n")
        cfg = RunConfig.resolve("emulate", overrides=dict(distribution=str(target), comparators=20, out=str(tmp_path)))
        harness.run_experiment(cfg)
        report = pd.read_csv(tmp_path / "emulate.csv")
        assert len(report) == 21
        assert report["candidate"].iloc[0] == "emulated"
        summary = pd.read_csv(tmp_path / "summary.csv").iloc[0]
        assert summary["emulated_kl"] == pytest.approx(np.log(2))
        assert summary["product_entropy_gap"] == pytest.approx(np.log(2))
        assert summary["min_random_kl"] >= summary["emulated_kl"]


class TestCommandLine:

    def test_success(self, harness, tmp_path):
        status = harness.run(["uniform_sweep", "--p", "3", "--k", "1", "--n", "20", "--trials", "2",
                              "--dosage-grid", "0.5", "--out", str(tmp_path)])
        assert status == 0
        assert (tmp_path / "uniform_sweep.csv").exists()

    def test_config_file_with_flag_override(self, harness, tmp_path):
        config = tmp_path / "run.env"
        config.write_text("p=4\nk=1\nn=30\ntrials=2\ndosage_grid=0.5\nseed=3\n")
        status = harness.run(["uniform_sweep", "--config", str(config), "--p", "3", "--out", str(tmp_path)])
        assert status == 0
        manifest = (tmp_path / "manifest").read_text()
        assert "p = 3\n" in manifest
        assert "master_seed = 3\n" in manifest
        assert "n = 30\n" in manifest

    def test_invalid_parameter_exits_2(self, harness, tmp_path):
        assert harness.run(["passive_sweep", "--distances", "0,0.6", "--out", str(tmp_path)]) == 2

    def test_unsupported_fraction_exits_2(self, harness, tmp_path):
        status = harness.run(["active_compare", "--p", "6", "--k", "1", "--n", "16", "--rounds", "1",
                              "--trials", "1", "--strategies", "partial", "--out", str(tmp_path)])
        assert status == 2

    def test_bad_distribution_exits_2(self, harness, tmp_path):
        target = tmp_path / "target.txt"
        target.write_text("++ 0.5\n-x 0.5\n")
        assert harness.run(["emulate", "--distribution", str(target), "--out", str(tmp_path)]) == 2

    def test_empty_distance_grid_exits_2(self, harness, tmp_path):
        assert harness.run(["passive_sweep", "--distances", ",", "--out", str(tmp_path)]) == 2
        assert not (tmp_path / "manifest").exists()

    def test_malformed_model_exits_2(self, harness, tmp_path):
        model = tmp_path / "broken.model"
        model.write_text("p 3\nk 1\nsigma 1.0\nB oops\n")
        status = harness.run(["passive_sweep", "--p", "3", "--k", "1", "--n", "20", "--trials", "1",
                              "--dosages-per-distance", "1", "--distances", "0",
                              "--model", str(model), "--out", str(tmp_path / "run")])
        assert status == 2

    def test_missing_config_exits_1(self, harness, tmp_path):
        assert harness.run(["passive_sweep", "--config", str(tmp_path / "absent.env")]) == 1

    def test_missing_distribution_exits_1(self, harness, tmp_path):
        assert harness.run(["emulate", "--distribution", str(tmp_path / "absent.txt"), "--out", str(tmp_path)]) == 1

    def test_model_replay(self, harness, tmp_path):
        common = ["--p", "4", "--k", "2", "--n", "40", "--trials", "2", "--dosages-per-distance", "2",
                  "--distances", "0,0.2", "--seed", "9"]
        assert harness.run(["passive_sweep", *common, "--save-model", "--out", str(tmp_path / "first")]) == 0
        model = tmp_path / "first" / "passive_sweep.model"
        assert harness.run(["passive_sweep", *common, "--model", str(model), "--out", str(tmp_path / "second")]) == 0
        assert (tmp_path / "first" / "passive_sweep.csv").read_bytes() == \
            (tmp_path / "second" / "passive_sweep.csv").read_bytes()

    def test_model_shape_mismatch_exits_2(self, harness, tmp_path):
        assert harness.run(["passive_sweep", "--p", "4", "--k", "1", "--n", "20", "--trials", "1",
                            "--dosages-per-distance", "1", "--distances", "0",
                            "--save-model", "--out", str(tmp_path)]) == 0
        status = harness.run(["passive_sweep", "--p", "5", "--k", "1", "--n", "20", "--trials", "1",
                              "--dosages-per-distance", "1", "--distances", "0",
                              "--model", str(tmp_path / "passive_sweep.model"), "--out", str(tmp_path / "b")])
        assert status == 2


@pytest.mark.slow
class TestReferenceSimulations:

    def test_fractional_beats_half(self, harness, tmp_path):
        frame = run(harness, RunConfig.resolve("fractional_compare", overrides=dict(out=str(tmp_path))))
        means = frame.groupby("strategy")["mse"].mean()
        assert means["fractional"] == pytest.approx(0.14, abs=0.03)
        assert means["half"] == pytest.approx(0.16, abs=0.03)

    def test_error_grows_away_from_half(self, harness, tmp_path):
        frame = run(harness, RunConfig.resolve("passive_sweep", overrides=dict(
            dosages_per_distance=20, trials=10, distances="0,0.4", out=str(tmp_path / "distance"),
        )))
        near = frame.loc[frame["value"] == 0.0, "mse"].to_numpy()
        far = frame.loc[frame["value"] == 0.4, "mse"].to_numpy()
        assert far.mean() - near.mean() >= 2 * pooled_se(near, far)

        frame = run(harness, RunConfig.resolve("uniform_sweep", overrides=dict(out=str(tmp_path / "uniform"))))
        assert frame["value"].nunique() == 11
        means = frame.groupby("value")["mse"].mean()
        assert means.idxmin() == 0.5

    def test_half_dosage_rate(self, harness, tmp_path):
        frame = run(harness, RunConfig.resolve("passive_sweep", overrides=dict(
            k=1, n=10 ** 4, trials=200, dosages_per_distance=1, distances="0", out=str(tmp_path),
        )))
        assert frame["mse"].mean() <= 0.0023

    def test_acquisition_matches_or_beats_baselines(self, harness, tmp_path):
        # B well above the model norm so the truncation rule keeps the OLS fit
        frame = run(harness, RunConfig.resolve("active_compare", overrides=dict(
            p=5, k=1, n=16, sigma=5.0, rounds=10, trials=50, B=50.0, out=str(tmp_path),
        )))
        assert frame.loc[frame["strategy"] != "random", "null"].mean() < 0.05
        means = frame.groupby(["round", "strategy"])["mse"].mean().unstack()
        for rnd in range(2, 5):
            assert means.loc[rnd, "optimal"] <= means.loc[rnd, "half"]
        assert (means["random"] >= means["optimal"]).all()

    def test_constrained_error_grows_with_distance(self, harness, tmp_path):
        frame = run(harness, RunConfig.resolve("constrained_sweep", overrides=dict(
            dosages_per_distance=10, trials=10, distances="0,0.1,0.2", out=str(tmp_path),
        )))
        means = frame.groupby("value")["mse"].mean()
        assert means.is_monotonic_increasing
        assert means[0.2] > means[0.0]

    def test_misspecified_error_is_lowest_at_half(self, harness, tmp_path):
        frame = run(harness, RunConfig.resolve("misspecified_sweep", overrides=dict(
            dosages_per_distance=20, trials=10, distances="0,0.2,0.4", out=str(tmp_path),
        )))
        means = frame.groupby("value")["mse"].mean()
        assert means.idxmin() == 0.0
        assert means[0.4] > means[0.0]
