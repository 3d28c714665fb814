"""Posterior tracking: known-fading, MMSE, Kalman, and gridless variants.

The heavyweight oracle here is the batch least-squares identity: a Kalman
bank that measures a static scalar through known gains is algebraically the
recursive form of the regularized least-squares estimate, so both paths must
agree to float accuracy, not approximately.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from beamalign.channel import ArrayConfig, array_response, grid_angles, steering_matrix
from beamalign.posterior import (
    GridPosterior,
    GridlessPosterior,
    MeasurementHistory,
    degeneracy,
    gains,
    gridless_mmse_posterior,
    gridless_update,
    gridless_update_kalman,
    interval_probs,
    kalman_init,
    kalman_loglik,
    kalman_step,
    kalman_step_arrays,
    loglik_known_alpha,
    map_detect,
    mmse_alpha,
    mmse_alpha_all,
    mmse_estimate,
    posterior_step,
    uniform_grid_posterior,
    uniform_gridless_posterior,
    update_kalman_posterior,
    update_known_alpha,
    update_mmse_posterior,
)

CFG = ArrayConfig(8)
SPAN = (-np.pi / 3, np.pi / 3)


def random_unit_beam(rng, m=8):
    w = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    return w / np.linalg.norm(w)


class TestUniformPriors:
    def test_grid(self):
        p = uniform_grid_posterior(grid_angles(4, *SPAN))
        assert_allclose(p.probs, [0.25, 0.25, 0.25, 0.25])
        assert p.probs.sum() == 1.0

    def test_gridless(self):
        gp = uniform_gridless_posterior(2, 2, *SPAN)
        assert_allclose(gp.masses, np.full((2, 2), 0.25))

    def test_validation(self):
        with pytest.raises(ValueError):
            GridPosterior(np.zeros(3), np.array([0.5, 0.6, 0.1]))
        with pytest.raises(ValueError):
            GridPosterior(np.zeros(2), np.array([1.5, -0.5]))


class TestKnownAlphaUpdate:
    def test_orthogonal_beam_leaves_posterior(self):
        angles = grid_angles(6, *SPAN)
        steer = steering_matrix(angles, CFG)
        _, _, vh = np.linalg.svd(steer.conj().T, full_matrices=True)
        w = vh[-1].conj()
        w /= np.linalg.norm(w)
        assert np.abs(np.conj(w) @ steer).max() < 1e-12
        p = GridPosterior(angles, np.array([0.1, 0.2, 0.3, 0.15, 0.15, 0.1]))
        q = update_known_alpha(p, 0.7 - 0.2j, w, 5.0, 0.3 + 1j, CFG)
        assert_allclose(q.probs, p.probs, atol=1e-12)

    def test_two_hypothesis_brute_force(self):
        # independent scalar arithmetic, no shared helpers
        angles = np.array([-0.5, 0.4])
        w = random_unit_beam(np.random.default_rng(0))
        y, alpha, power = 0.8 - 0.3j, 0.6 + 0.2j, 3.0
        p = GridPosterior(angles, np.array([0.3, 0.7]))
        q = update_known_alpha(p, y, w, power, alpha, CFG)

        weights = []
        for prior, phi in zip((0.3, 0.7), angles):
            g = 0.0j
            for m in range(8):
                a_m = complex(np.exp(2j * np.pi * 0.5 * m * math.sin(phi)))
                g += w[m].conjugate() * a_m
            g *= math.sqrt(power)
            weights.append(prior * math.exp(-abs(y - alpha * g) ** 2))
        expect = np.array(weights) / sum(weights)
        assert_allclose(q.probs, expect, atol=1e-12)

    def test_zero_mass_stays_zero(self):
        p = GridPosterior(np.array([-0.2, 0.2]), np.array([1.0, 0.0]))
        q = update_known_alpha(p, 1.0 + 0j, random_unit_beam(np.random.default_rng(1)),
                               2.0, 1.0 + 0j, CFG)
        assert_allclose(q.probs, [1.0, 0.0])

    def test_sequential_equals_batch(self):
        rng = np.random.default_rng(2)
        angles = grid_angles(8, *SPAN)
        steer = steering_matrix(angles, CFG)
        p = uniform_grid_posterior(angles)
        alpha, power = 0.5 - 0.8j, 2.0
        total_ll = np.zeros(8)
        for _ in range(6):
            w = random_unit_beam(rng)
            y = complex(rng.standard_normal() + 1j * rng.standard_normal())
            p = update_known_alpha(p, y, w, power, alpha, CFG)
            total_ll += loglik_known_alpha(y, gains(w, steer, power), alpha)
        batch = posterior_step(np.full(8, 1 / 8), total_ll)
        assert_allclose(p.probs, batch, atol=1e-12)


class TestPosteriorStep:
    def test_log_shift_invariance(self):
        rng = np.random.default_rng(3)
        probs = rng.dirichlet(np.ones(16))
        ll = rng.normal(size=16) * 30
        base = posterior_step(probs, ll)
        for shift in (-1e4, -17.3, 250.0):
            assert_allclose(posterior_step(probs, ll + shift), base,
                            atol=1e-12)

    def test_degenerate_update_counted_and_unchanged(self):
        degeneracy.reset()
        probs = np.array([0.4, 0.6])
        out = posterior_step(probs, np.array([-np.inf, -np.inf]))
        assert_allclose(out, probs)
        assert degeneracy.count == 1
        degeneracy.reset()

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_normalized_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        probs = rng.dirichlet(np.ones(12))
        out = posterior_step(probs, rng.normal(size=12) * 50)
        assert np.all(out >= 0)
        assert abs(out.sum() - 1.0) < 1e-9

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        probs = rng.dirichlet(np.ones(10))
        ll = rng.normal(size=10) * 10
        perm = rng.permutation(10)
        assert_allclose(posterior_step(probs[perm], ll[perm]),
                        posterior_step(probs, ll)[perm], atol=1e-12)


class TestMmseAlpha:
    def test_empty_history_returns_prior_mean(self):
        assert mmse_alpha(MeasurementHistory(), 0.2, 4.0, CFG) == 0.0

    def test_single_matched_noiseless_measurement(self):
        phi, power = 0.3, 2.5
        a = array_response(phi, CFG)
        w = a / np.sqrt(8)
        y = np.sqrt(power) * np.vdot(w, a)  # alpha = 1, no noise
        hist = MeasurementHistory()
        hist.append(y, w)
        pm = power * 8
        assert_allclose(mmse_alpha(hist, phi, power, CFG), pm / (pm + 1.0),
                        rtol=1e-12)

    def test_converges_to_alpha_with_many_matched_beams(self):
        phi, power, alpha = -0.4, 4.0, 0.7 - 0.6j
        a = array_response(phi, CFG)
        w = a / np.sqrt(8)
        hist = MeasurementHistory()
        for _ in range(200):
            hist.append(alpha * np.sqrt(power) * np.vdot(w, a), w)
        est = mmse_alpha(hist, phi, power, CFG)
        # noiseless: alpha_hat = alpha * |c|^2/(|c|^2+1), |c|^2 = t*P*M
        assert abs(est - alpha) < abs(alpha) / (200 * power * 8) * 1.01

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(4)
        angles = grid_angles(5, *SPAN)
        steer = steering_matrix(angles, CFG)
        hist = MeasurementHistory()
        for _ in range(3):
            hist.append(complex(rng.standard_normal() + 1j * rng.standard_normal()),
                        random_unit_beam(rng))
        alpha_hat, _ = mmse_alpha_all(hist, steer, 3.0)
        for i, phi in enumerate(angles):
            assert_allclose(alpha_hat[i], mmse_alpha(hist, phi, 3.0, CFG),
                            atol=1e-12)


class TestMmsePosterior:
    def test_matches_scalar_recomputation(self):
        rng = np.random.default_rng(5)
        angles = grid_angles(4, *SPAN)
        power = 2.0
        hist = MeasurementHistory()
        for _ in range(3):
            hist.append(complex(rng.standard_normal() + 1j * rng.standard_normal()),
                        random_unit_beam(rng))
        post = update_mmse_posterior(hist, power, angles, CFG)

        weights = []
        ws, ys = hist.beams(), hist.observations()
        for phi in angles:
            c = np.array([np.sqrt(power) * np.vdot(w, array_response(phi, CFG))
                          for w in ws])
            ah = np.vdot(c, ys) / (np.vdot(c, c).real + 1.0)
            ll = -sum(abs(y - ah * ci) ** 2 for y, ci in zip(ys, c))
            weights.append(math.exp(ll) / 4)
        assert_allclose(post.probs, np.array(weights) / sum(weights),
                        atol=1e-12)

    def test_duplicate_hypotheses_get_equal_mass(self):
        rng = np.random.default_rng(6)
        angles = np.array([0.3, -0.1, 0.3])
        hist = MeasurementHistory()
        for _ in range(2):
            hist.append(complex(rng.standard_normal()), random_unit_beam(rng))
        post = update_mmse_posterior(hist, 1.5, angles, CFG)
        assert_allclose(post.probs[0], post.probs[2], atol=1e-15)

    def test_empty_history_returns_prior(self):
        angles = grid_angles(4, *SPAN)
        post = update_mmse_posterior(MeasurementHistory(), 1.0, angles, CFG)
        assert_allclose(post.probs, 0.25)


class TestKalmanBank:
    def test_zero_gain_is_identity(self):
        bank = kalman_init(4)
        mu, gamma = kalman_step_arrays(bank.mu, bank.gamma, 0.5 + 0.5j,
                                       np.zeros(4, dtype=complex))
        assert_allclose(mu, bank.mu)
        assert_allclose(gamma, bank.gamma)

    def test_gamma_strictly_decreases(self):
        rng = np.random.default_rng(7)
        gamma = np.ones(6)
        mu = np.zeros(6, dtype=complex)
        for _ in range(10):
            g = rng.standard_normal(6) + 1j * rng.standard_normal(6)
            mu, new_gamma = kalman_step_arrays(mu, gamma, 0.1 + 0j, g)
            assert np.all(new_gamma < gamma)
            assert np.all(new_gamma > 0)
            gamma = new_gamma

    def test_matches_batch_mmse_every_step(self):
        rng = np.random.default_rng(8)
        angles = grid_angles(8, *SPAN)
        steer = steering_matrix(angles, CFG)
        power = 3.0
        bank = kalman_init(8)
        hist = MeasurementHistory()
        for _ in range(14):
            w = random_unit_beam(rng)
            y = complex(rng.standard_normal() + 1j * rng.standard_normal())
            bank = kalman_step(bank, y, w, power, steer)
            hist.append(y, w)
            alpha_hat, c = mmse_alpha_all(hist, steer, power)
            gamma_batch = 1.0 / (np.sum(np.abs(c) ** 2, axis=0) + 1.0)
            assert np.max(np.abs(bank.mu - alpha_hat)) <= 1e-9
            assert np.max(np.abs(bank.gamma - gamma_batch)) <= 1e-9


class TestKalmanPosterior:
    def test_identical_hypotheses_leave_posterior(self):
        angles = np.zeros(3)  # same gain everywhere
        p = GridPosterior(angles, np.array([0.2, 0.5, 0.3]))
        bank = kalman_init(3)
        q, _ = update_kalman_posterior(p, bank, 0.4 - 0.1j,
                                       random_unit_beam(np.random.default_rng(9)),
                                       2.0, CFG)
        assert_allclose(q.probs, p.probs, atol=1e-12)

    def test_small_gamma_recovers_known_alpha(self):
        rng = np.random.default_rng(10)
        angles = grid_angles(5, *SPAN)
        alpha = 0.3 + 0.9j
        p = uniform_grid_posterior(angles)
        bank = kalman_init(5)
        bank = type(bank)(mu=np.full(5, alpha), gamma=np.full(5, 1e-12))
        w = random_unit_beam(rng)
        y = 0.2 + 0.6j
        q_kal, _ = update_kalman_posterior(p, bank, y, w, 2.0, CFG)
        q_known = update_known_alpha(p, y, w, 2.0, alpha, CFG)
        assert_allclose(q_kal.probs, q_known.probs, atol=1e-6)

    @pytest.mark.parametrize("mode", ["predictive", "paper-literal"])
    def test_three_hypothesis_brute_force(self, mode):
        rng = np.random.default_rng(11)
        angles = grid_angles(3, *SPAN)
        power = 1.7
        w = random_unit_beam(rng)
        y = 0.5 - 0.4j
        mu0 = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        gamma0 = rng.uniform(0.2, 1.0, 3)
        p = GridPosterior(angles, np.array([0.5, 0.2, 0.3]))
        bank = kalman_init(3)
        bank = type(bank)(mu=mu0.copy(), gamma=gamma0.copy())
        q, new_bank = update_kalman_posterior(p, bank, y, w, power, CFG,
                                              mode=mode)

        weights = []
        for i, phi in enumerate(angles):
            g = np.sqrt(power) * np.vdot(w, array_response(phi, CFG))
            denom = gamma0[i] * abs(g) ** 2 + 1.0
            mu1 = mu0[i] + gamma0[i] * g.conjugate() * (y - mu0[i] * g) / denom
            gamma1 = gamma0[i] / denom
            if mode == "predictive":
                ll = -abs(y - mu0[i] * g) ** 2 / denom
            else:
                ll = -abs(y - mu1 * g) ** 2 / (gamma1 * abs(g) ** 2 + 1.0)
            weights.append(p.probs[i] * math.exp(ll))
            assert_allclose(new_bank.mu[i], mu1, atol=1e-12)
            assert_allclose(new_bank.gamma[i], gamma1, atol=1e-12)
        assert_allclose(q.probs, np.array(weights) / sum(weights), atol=1e-12)

    def test_rejects_unknown_mode(self):
        p = uniform_grid_posterior(grid_angles(4, *SPAN))
        with pytest.raises(ValueError):
            update_kalman_posterior(p, kalman_init(4), 0j,
                                    random_unit_beam(np.random.default_rng(0)),
                                    1.0, CFG, mode="bogus")


class TestGridless:
    def test_midpoint_layout(self):
        gp = uniform_gridless_posterior(4, 3, *SPAN)
        width_c = (SPAN[1] - SPAN[0]) / 4
        width_s = width_c / 3
        mids = gp.midpoints()
        assert mids.shape == (4, 3)
        assert_allclose(mids[0, 0], SPAN[0] + 0.5 * width_s)
        assert_allclose(mids[2, 1], SPAN[0] + 2 * width_c + 1.5 * width_s)

    def test_known_alpha_matches_on_grid_path(self):
        rng = np.random.default_rng(12)
        gp = uniform_gridless_posterior(2, 2, *SPAN)
        p = uniform_grid_posterior(gp.flat_midpoints())
        alpha, power = 0.8 + 0.1j, 2.2
        for _ in range(3):
            w = random_unit_beam(rng)
            y = complex(rng.standard_normal() + 1j * rng.standard_normal())
            gp = gridless_update(gp, y, w, power, CFG, alpha)
            p = update_known_alpha(p, y, w, power, alpha, CFG)
        assert_allclose(gp.masses.ravel(), p.probs, atol=1e-9)

    def test_kalman_matches_on_grid_path(self):
        rng = np.random.default_rng(13)
        gp = uniform_gridless_posterior(2, 3, *SPAN)
        p = uniform_grid_posterior(gp.flat_midpoints())
        bank_g = kalman_init(6)
        bank_p = kalman_init(6)
        steer = steering_matrix(p.angles, CFG)
        for _ in range(3):
            w = random_unit_beam(rng)
            y = complex(rng.standard_normal() + 1j * rng.standard_normal())
            gp, bank_g = gridless_update_kalman(gp, bank_g, y, w, 1.5, CFG)
            p, bank_p = update_kalman_posterior(p, bank_p, y, w, 1.5, CFG,
                                                steering=steer)
        assert_allclose(gp.masses.ravel(), p.probs, atol=1e-12)

    def test_mmse_recompute_matches_on_grid_path(self):
        rng = np.random.default_rng(14)
        prior = uniform_gridless_posterior(2, 2, *SPAN)
        hist = MeasurementHistory()
        for _ in range(3):
            hist.append(complex(rng.standard_normal() - 1j * rng.standard_normal()),
                        random_unit_beam(rng))
        gp = gridless_mmse_posterior(hist, 2.0, prior, CFG)
        p = update_mmse_posterior(hist, 2.0, prior.flat_midpoints(), CFG)
        assert_allclose(gp.masses.ravel(), p.probs, atol=1e-12)

    def test_orthogonal_beam_leaves_masses(self):
        gp = uniform_gridless_posterior(2, 2, *SPAN)
        steer = steering_matrix(gp.flat_midpoints(), CFG)
        _, _, vh = np.linalg.svd(steer.conj().T, full_matrices=True)
        w = vh[-1].conj()
        w /= np.linalg.norm(w)
        out = gridless_update(gp, 0.3 + 0.2j, w, 4.0, CFG, 1.0 + 0j)
        assert_allclose(out.masses, gp.masses, atol=1e-12)

    def test_refining_samples_converges(self):
        # doubling N_s barely moves the interval masses at moderate SNR
        rng = np.random.default_rng(15)
        w = random_unit_beam(rng)
        y = 0.4 + 0.2j
        coarse = uniform_gridless_posterior(8, 10, *SPAN)
        fine = uniform_gridless_posterior(8, 20, *SPAN)
        pc = interval_probs(gridless_update(coarse, y, w, 1.0, CFG, 1.0 + 0j))
        pf = interval_probs(gridless_update(fine, y, w, 1.0, CFG, 1.0 + 0j))
        assert np.max(np.abs(pc - pf)) < 1e-3

    def test_interval_probs(self):
        gp = uniform_gridless_posterior(4, 5, *SPAN)
        assert_allclose(interval_probs(gp), 0.25)
        masses = np.zeros((4, 5))
        masses[2, 3] = 1.0
        one_hot = GridlessPosterior(*SPAN, masses)
        assert_allclose(interval_probs(one_hot), [0, 0, 1, 0], atol=1e-15)


class TestEstimators:
    def test_map_detect(self):
        angles = grid_angles(3, *SPAN)
        assert map_detect(GridPosterior(angles, np.array([0.1, 0.7, 0.2]))) == 1
        assert map_detect(uniform_grid_posterior(angles)) == 0
        one_hot = np.zeros(3)
        one_hot[2] = 1.0
        assert map_detect(GridPosterior(angles, one_hot)) == 2

    def test_mmse_estimate(self):
        gp = uniform_gridless_posterior(2, 2, *SPAN)
        masses = np.zeros((2, 2))
        masses[0, 0] = 1.0
        point = GridlessPosterior(*SPAN, masses)
        assert_allclose(mmse_estimate(point), point.midpoints()[0, 0])
        assert_allclose(mmse_estimate(gp), 0.0, atol=1e-15)
        rng = np.random.default_rng(16)
        m = rng.dirichlet(np.ones(4)).reshape(2, 2)
        gp_r = GridlessPosterior(*SPAN, m)
        assert_allclose(mmse_estimate(gp_r), np.sum(gp_r.midpoints() * m))


class TestKalmanLoglikShape:
    def test_batched_rows(self):
        rng = np.random.default_rng(17)
        g = rng.standard_normal((5, 4)) + 1j * rng.standard_normal((5, 4))
        mu = np.zeros((5, 4), dtype=complex)
        gamma = np.ones((5, 4))
        y = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        ll = kalman_loglik(mu, gamma, y, g)
        assert ll.shape == (5, 4)
        assert_allclose(ll[2], kalman_loglik(mu[2], gamma[2], y[2], g[2]))
