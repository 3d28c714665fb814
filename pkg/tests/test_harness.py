"""Monte Carlo harness, toy beam study, and command-line entry points.

Statistical oracles used here: a blind estimator's mean squared error equals
the sampled prior spread, an estimator returning the truth scores exactly
zero, and common random numbers make the drawn channels bitwise identical
across methods run under the same seed.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.linalg import null_space

from beamalign import cli
from beamalign.channel import ArrayConfig, grid_angles, snr_to_power, steering_matrix
from beamalign.codebook import load_codebook
from beamalign.evaluate import (
    METHODS,
    ExperimentConfig,
    ResultRow,
    draw_trials,
    monte_carlo_eval,
    parse_report,
    register_method,
    write_report,
)
from beamalign.posterior import uniform_grid_posterior
from beamalign.toy import draw_toy_samples, g_estimate, toy_one_step

DESK = dict(num_antennas=16, grid_size=16, num_frames=8)


class TestExperimentConfig:
    def test_bisection_frame_budget_enforced(self):
        with pytest.raises(ValueError):
            ExperimentConfig(method="hiebs", grid_size=16, num_frames=10)

    def test_dnn_needs_checkpoint(self):
        with pytest.raises(ValueError):
            ExperimentConfig(method="dnn-known", **DESK)

    def test_grid_searchers_are_on_grid_only(self):
        for method in ("omp", "hiebs", "hiepm-known"):
            with pytest.raises(ValueError):
                ExperimentConfig(method=method, scenario="gridless",
                                 **DESK)

    def test_levels(self):
        assert ExperimentConfig(**DESK).levels == 4


class TestResultRow:
    def test_probability_range(self):
        with pytest.raises(ValueError):
            ResultRow("m", 0.0, "detect_error_prob", 1.2, 0.0, 10, 0)

    def test_mse_sign(self):
        with pytest.raises(ValueError):
            ResultRow("m", 0.0, "mse_rad2", -0.1, 0.0, 10, 0)


class TestCommonRandomNumbers:
    def test_channels_identical_across_methods(self):
        a = draw_trials(ExperimentConfig(method="hiebs", trials=64, seed=7,
                                         **DESK), snr_to_power(0.0))
        b = draw_trials(ExperimentConfig(method="omp", trials=64, seed=7,
                                         **DESK), snr_to_power(0.0))
        assert np.array_equal(a.phi_index, b.phi_index)
        assert np.array_equal(a.alpha, b.alpha)
        assert np.array_equal(a.noise, b.noise)

    def test_seed_changes_channels(self):
        cfg = ExperimentConfig(method="hiebs", trials=64, **DESK)
        a = draw_trials(cfg, snr_to_power(0.0))
        b = draw_trials(ExperimentConfig(method="hiebs", trials=64, seed=1,
                                         **DESK), snr_to_power(0.0))
        assert not np.array_equal(a.alpha, b.alpha)

    def test_on_grid_truth_consistent(self):
        cfg = ExperimentConfig(method="hiebs", trials=32, **DESK)
        block = draw_trials(cfg, snr_to_power(0.0))
        assert_allclose(block.phi, block.grid[block.phi_index])

    def test_noiseless_flag(self):
        cfg = ExperimentConfig(method="hiebs", trials=8, noiseless=True,
                               **DESK)
        assert np.all(draw_trials(cfg, 1.0).noise == 0.0)


class TestRegisteredMethods:
    def test_blind_estimator_scores_prior_spread(self):
        register_method("always-zero", lambda block: np.zeros(block.cfg.trials))
        try:
            cfg = ExperimentConfig(scenario="gridless", method="always-zero",
                                   num_antennas=4, num_coarse=4,
                                   samples_per_interval=2, num_frames=2,
                                   trials=10**4, seed=3)
            row, = monte_carlo_eval(cfg)
        finally:
            METHODS.pop("always-zero")
        # uniform truth on (-pi/3, pi/3): E[phi^2] = span^2 / 12
        assert row.metric == "mse_rad2"
        assert_allclose(row.value, (2 * np.pi / 3) ** 2 / 12, rtol=0.03)

    def test_truth_oracle_scores_zero(self):
        register_method("oracle", lambda block: block.phi.copy())
        try:
            cfg = ExperimentConfig(scenario="gridless", method="oracle",
                                   num_antennas=4, num_coarse=4,
                                   samples_per_interval=2, num_frames=2,
                                   trials=100)
            row, = monte_carlo_eval(cfg)
        finally:
            METHODS.pop("oracle")
        assert row.value == 0.0
        assert row.stderr == 0.0

    def test_unknown_method_rejected(self):
        cfg = ExperimentConfig(method="nope", **DESK)
        with pytest.raises(ValueError, match="unknown method"):
            monte_carlo_eval(cfg)


class TestHarnessBehavior:
    def test_noiseless_bisection_is_exact(self):
        cfg = ExperimentConfig(method="hiebs", trials=40, noiseless=True,
                               snr_db=(30.0,), **DESK)
        row, = monte_carlo_eval(cfg)
        assert row.value == 0.0

    def test_single_trial_report(self):
        cfg = ExperimentConfig(method="hiebs", trials=1, noiseless=True,
                               snr_db=(30.0,), **DESK)
        row, = monte_carlo_eval(cfg)
        assert row.value in (0.0, 1.0)
        assert row.value == 0.0

    @pytest.mark.parametrize("method", ["hiebs", "omp", "random-known",
                                        "hiepm-known"])
    def test_error_decreases_with_snr(self, method):
        cfg = ExperimentConfig(method=method, trials=600,
                               snr_db=(-10.0, 5.0, 20.0), seed=11, **DESK)
        rows = monte_carlo_eval(cfg)
        vals = [r.value for r in rows]
        ses = [r.stderr for r in rows]
        assert vals[0] > vals[2] + 2 * (ses[0] + ses[2])
        for lo, hi in ((0, 1), (1, 2)):
            assert vals[hi] <= vals[lo] + 2 * (ses[lo] + ses[hi])

    def test_posterior_refinement_beats_bisection(self):
        # paired comparison on common channels at +10 dB
        power = snr_to_power(10.0)
        base = dict(trials=800, seed=5, **DESK)
        block_pm = draw_trials(ExperimentConfig(method="hiepm-known", **base),
                               power)
        block_bs = draw_trials(ExperimentConfig(method="hiebs", **base),
                               power)
        e_pm = (METHODS["hiepm-known"](block_pm) != block_pm.phi_index)
        e_bs = (METHODS["hiebs"](block_bs) != block_bs.phi_index)
        d = e_bs.astype(float) - e_pm.astype(float)
        se = d.std(ddof=1) / np.sqrt(d.size)
        assert d.mean() > 2 * se


class TestReports:
    ROWS = [ResultRow("omp", 5.0, "detect_error_prob", 0.25, 0.01, 100, 0),
            ResultRow("blind", -5.0, "mse_rad2", 0.36, 0.02, 100, 0)]

    def test_round_trip(self, tmp_path):
        path = tmp_path / "report.csv"
        write_report(path, self.ROWS)
        back = parse_report(path)
        assert [r.method for r in back] == ["blind", "omp"]
        assert_allclose([r.value for r in back], [0.36, 0.25])

    def test_degree_columns_only_for_mse(self, tmp_path):
        path = tmp_path / "report.csv"
        write_report(path, self.ROWS)
        lines = path.read_text().splitlines()
        blind, omp = lines[1], lines[2]
        assert ",,," in omp                      # empty deg^2 fields
        assert_allclose(float(blind.split(",")[5]),
                        0.36 * (180 / np.pi) ** 2, rtol=1e-9)

    def test_empty_report_is_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        write_report(path, [])
        lines = path.read_text().splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("method,snr_db,metric,value")

    def test_same_seed_bitwise_identical(self, tmp_path):
        cfg = ExperimentConfig(method="hiebs", trials=100,
                               snr_db=(-5.0, 5.0), seed=9, **DESK)
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        write_report(pa, monte_carlo_eval(cfg))
        write_report(pb, monte_carlo_eval(cfg))
        assert pa.read_bytes() == pb.read_bytes()


class TestToyStudy:
    def test_scale_guard(self):
        big = uniform_grid_posterior(grid_angles(32, -np.pi / 3, np.pi / 3))
        with pytest.raises(ValueError, match="toy study is limited"):
            toy_one_step(big, 10.0, 4)
        small = uniform_grid_posterior(grid_angles(8, -np.pi / 3, np.pi / 3))
        with pytest.raises(ValueError, match="toy study is limited"):
            toy_one_step(small, 10.0, 16)

    def test_uninformative_beam_scores_prior_spread(self):
        # a beam orthogonal to every steering column measures pure noise, so
        # the posterior never moves and the error is the prior spread over
        # the drawn sample set
        angles = grid_angles(2, -np.pi / 3, np.pi / 3)
        prior = uniform_grid_posterior(angles)
        steer = steering_matrix(angles, ArrayConfig(4))
        w = null_space(steer.conj().T)[:, 0]
        rng = np.random.default_rng(21)
        samples = draw_toy_samples(prior, 500, rng, 4)
        mu = prior.probs @ angles
        expected = np.mean((mu - angles[samples.index]) ** 2)
        assert_allclose(g_estimate(w, prior, 10.0, samples), expected,
                        rtol=1e-12)

    def test_high_power_resolves_truth(self):
        angles = grid_angles(6, -np.pi / 3, np.pi / 3)
        prior = uniform_grid_posterior(angles)
        rng = np.random.default_rng(22)
        samples = draw_toy_samples(prior, 200, rng, 4)
        w = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        w /= np.linalg.norm(w)
        assert g_estimate(w, prior, 1e6, samples) < 1e-12

    def test_descent_is_monotone(self):
        prior = uniform_grid_posterior(grid_angles(8, -np.pi / 3, np.pi / 3))
        res = toy_one_step(prior, 10.0, 4, mc_samples=400, cd_steps=150,
                           rng=np.random.default_rng(23))
        assert np.all(np.diff(res.trajectory) < 0)
        assert res.accepted == res.trajectory.size - 1
        assert_allclose(np.linalg.norm(res.w), 1.0, atol=1e-12)
        assert res.g == res.trajectory[-1]
        assert res.g < res.trajectory[0]

    def test_final_estimate_reproducible_on_shared_samples(self):
        prior = uniform_grid_posterior(grid_angles(8, -np.pi / 3, np.pi / 3))
        rng = np.random.default_rng(24)
        samples = draw_toy_samples(prior, 300, rng, 4)
        res = toy_one_step(prior, 10.0, 4, cd_steps=100, rng=rng,
                           samples=samples)
        assert_allclose(g_estimate(res.w, prior, 10.0, samples), res.g,
                        rtol=1e-12)

    def test_warm_start_respected(self):
        prior = uniform_grid_posterior(grid_angles(8, -np.pi / 3, np.pi / 3))
        w0 = np.ones(4, dtype=complex)
        res = toy_one_step(prior, 10.0, 4, mc_samples=200, cd_steps=0,
                           rng=np.random.default_rng(25), w0=w0)
        assert_allclose(res.w, w0 / 2.0, atol=1e-12)


class TestCommandLine:
    def test_codebook_build_and_cache(self, tmp_path):
        out = tmp_path / "cb.bacb"
        rc = cli.main(["codebook", "--set", "num_antennas=8",
                       "--set", "grid_size=8", "--out", str(out)])
        assert rc == 0
        cb = load_codebook(out)
        assert cb.vectors.shape == (2 + 4 + 8, 8)

    def test_codebook_pattern_dump(self, tmp_path):
        csv_path = tmp_path / "patterns.csv"
        rc = cli.main(["codebook", "--set", "num_antennas=4",
                       "--set", "grid_size=4", "--set", "pattern_points=16",
                       "--pattern-csv", str(csv_path)])
        assert rc == 0
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "stage,k,phi_rad,gain"
        assert len(lines) == 1 + (2 + 4) * 16

    def test_train_writes_artifacts(self, tmp_path):
        cfgfile = tmp_path / "train.cfg"
        cfgfile.write_text(
            "num_antennas = 4\ngrid_size = 4\nnum_frames = 2\n"
            "hidden = 8\nsnr_range_db = -5, 5\nbatch_size = 16\n"
            "batches_per_epoch = 1\nmax_epochs = 2\nval_size = 16\n")
        rc = cli.main(["train", "--config", str(cfgfile),
                       "--out", str(tmp_path / "run"), "--log-every", "1"])
        assert rc == 0
        assert (tmp_path / "run" / "best.bapn").exists()
        assert (tmp_path / "run" / "training_log.csv").exists()

    def test_eval_writes_report(self, tmp_path):
        cfgfile = tmp_path / "eval.cfg"
        cfgfile.write_text(
            "method = hiebs\nnum_antennas = 8\ngrid_size = 8\n"
            "num_frames = 6\ntrials = 25\nsnr_db = 0\n")
        out = tmp_path / "results.csv"
        rc = cli.main(["eval", "--config", str(cfgfile), "--out", str(out)])
        assert rc == 0
        row, = parse_report(out)
        assert row.method == "hiebs"
        assert row.trials == 25

    def test_sweep_collects_methods(self, tmp_path):
        cfgfile = tmp_path / "sweep.cfg"
        cfgfile.write_text(
            "methods = hiebs omp\nnum_antennas = 8\ngrid_size = 8\n"
            "num_frames = 6\ntrials = 20\nsnr_db = 0, 10\n")
        out = tmp_path / "sweep.csv"
        rc = cli.main(["sweep", "--config", str(cfgfile), "--out", str(out)])
        assert rc == 0
        rows = parse_report(out)
        assert sorted({r.method for r in rows}) == ["hiebs", "omp"]
        assert len(rows) == 4

    def test_toy_writes_beam_and_trajectory(self, tmp_path):
        out = tmp_path / "toy.csv"
        rc = cli.main(["toy", "--set", "num_antennas=4", "--set",
                       "grid_size=8", "--set", "mc_samples=200",
                       "--set", "cd_steps=40", "--out", str(out)])
        assert rc == 0
        kinds = {line.split(",")[0] for line in
                 out.read_text().splitlines()[1:]}
        assert kinds == {"beam", "trajectory"}

    def test_seed_flag_overrides_config(self, tmp_path):
        cfgfile = tmp_path / "eval.cfg"
        cfgfile.write_text(
            "method = hiebs\nnum_antennas = 8\ngrid_size = 8\n"
            "num_frames = 6\ntrials = 10\nsnr_db = 0\nseed = 3\n")
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert cli.main(["eval", "--config", str(cfgfile), "--out",
                         str(a)]) == 0
        assert cli.main(["eval", "--config", str(cfgfile), "--seed", "3",
                         "--out", str(b)]) == 0
        ra, rb = parse_report(a), parse_report(b)
        assert ra[0].value == rb[0].value and ra[0].seed == rb[0].seed == 3

    def test_unknown_method_exits_2(self, tmp_path):
        assert cli.main(["eval", "--set", "method=nope",
                         "--out", str(tmp_path / "r.csv")]) == 2

    def test_missing_config_exits_2(self):
        assert cli.main(["train", "--config", "/nonexistent.cfg"]) == 2

    def test_bad_value_exits_2(self, tmp_path):
        assert cli.main(["eval", "--set", "trials=many",
                         "--out", str(tmp_path / "r.csv")]) == 2
