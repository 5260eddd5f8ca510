"""Tests for the LS/LMMSE estimators, dispatch, and the estimator facade."""

import numpy as np
import pytest

from mimoest.channel import (
    ChannelConfig,
    draw_channels,
    exponential_correlation,
    generate_pilots,
    noise_variance,
    transmit_pilots_batch,
)
from mimoest.dataset import ChannelSample
from mimoest.errors import ConfigurationError, IdentifiabilityError, ParameterError
from mimoest.estimators import (
    DnnEstimator,
    EstimatorContext,
    EstimatorKind,
    LeastSquaresEstimator,
    LmmseEstimator,
    LmmsePrior,
    estimate,
    lmmse_estimate,
    ls_estimate,
)
from mimoest.metrics import nmse_linear_batch
from mimoest.numerics import RngStream, frobenius_norm_sq


def make_observations(cfg, snr_db, n, seed):
    xp = generate_pilots(cfg.nt, cfg.pilot_len, cfg.pilot_energy)
    rng = RngStream(seed, 0)
    h = draw_channels(cfg, rng, n)
    y = transmit_pilots_batch(h, xp, snr_db, rng, cfg.pilot_energy)
    return xp, h, y


class TestLeastSquares:
    def test_noiseless_exact_recovery(self):
        cfg = ChannelConfig()
        xp = generate_pilots(4, 4, 1.0)
        h = draw_channels(cfg, RngStream(0, 0), 1)[0]
        assert frobenius_norm_sq(ls_estimate(h @ xp, xp) - h) < 1e-20

    def test_orthogonal_pilot_simplification(self):
        # With Xp Xp^H = 4 I the generic formula reduces to Y Xp^H / 4.
        cfg = ChannelConfig()
        xp, h, y = make_observations(cfg, 10.0, 8, seed=1)
        generic = ls_estimate(y, xp)
        simplified = y @ xp.conj().T / 4.0
        assert np.max(np.abs(generic - simplified)) < 1e-12

    def test_monte_carlo_matches_analytic_nmse(self):
        cfg = ChannelConfig(spatial_rho=0.0)
        xp, h, y = make_observations(cfg, 10.0, 10_000, seed=2)
        sigma2 = noise_variance(10.0)
        gram_inv = np.linalg.inv(xp @ xp.conj().T)
        analytic_db = 10 * np.log10(sigma2 * np.trace(gram_inv).real / cfg.nt)
        measured_db = 10 * np.log10(np.mean(nmse_linear_batch(h, ls_estimate(y, xp))))
        assert measured_db == pytest.approx(analytic_db, abs=0.3)

    def test_singular_pilots_rejected(self):
        xp = np.ones((2, 4), dtype=complex)  # identical rows: Gram is singular
        with pytest.raises(IdentifiabilityError):
            ls_estimate(np.ones((2, 4), dtype=complex), xp)


class TestLmmse:
    def test_vanishing_noise_matches_ls(self):
        cfg = ChannelConfig()
        xp, h, y = make_observations(cfg, 10.0, 4, seed=3)
        prior = LmmsePrior(
            r_rx=np.eye(4, dtype=complex), r_tx=np.eye(4, dtype=complex), noise_var=1e-14
        )
        assert np.max(np.abs(lmmse_estimate(y, xp, prior) - ls_estimate(y, xp))) < 1e-8

    def test_scalar_wiener(self):
        xp = np.array([[1.0 + 0j]])
        prior = LmmsePrior(
            r_rx=np.eye(1, dtype=complex), r_tx=np.eye(1, dtype=complex), noise_var=1.0
        )
        y = np.array([[0.8 - 0.4j]])
        np.testing.assert_allclose(lmmse_estimate(y, xp, prior), y / 2.0, rtol=1e-14)

    def test_infinite_noise_shrinks_to_zero(self):
        cfg = ChannelConfig()
        xp, h, y = make_observations(cfg, 10.0, 2, seed=4)
        prior = LmmsePrior(
            r_rx=np.eye(4, dtype=complex), r_tx=np.eye(4, dtype=complex), noise_var=1e12
        )
        assert np.max(np.abs(lmmse_estimate(y, xp, prior))) < 1e-6

    def test_non_pd_prior_rejected(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]], dtype=complex)  # eigenvalues 3, -1
        with pytest.raises(ParameterError):
            LmmsePrior(r_rx=np.eye(2, dtype=complex), r_tx=bad, noise_var=0.1)

    def test_non_unit_diagonal_rejected(self):
        with pytest.raises(ParameterError):
            LmmsePrior(
                r_rx=np.eye(2, dtype=complex),
                r_tx=2.0 * np.eye(2, dtype=complex),
                noise_var=0.1,
            )

    def test_linear_in_observation(self):
        cfg = ChannelConfig()
        xp, h, y = make_observations(cfg, 5.0, 3, seed=5)
        prior = LmmsePrior(
            r_rx=np.eye(4, dtype=complex),
            r_tx=exponential_correlation(4, 0.7),
            noise_var=noise_variance(5.0),
        )
        # Power-of-two scaling is exact in floating point.
        assert np.array_equal(
            lmmse_estimate(2.0 * y, xp, prior), 2.0 * lmmse_estimate(y, xp, prior)
        )
        alpha = 0.731 - 1.42j
        a = lmmse_estimate(alpha * y, xp, prior)
        b = alpha * lmmse_estimate(y, xp, prior)
        assert np.max(np.abs(a - b)) < 1e-12 * np.max(np.abs(b))


class TestDispatch:
    def test_ls_dispatch_identity(self):
        cfg = ChannelConfig()
        xp, h, y = make_observations(cfg, 10.0, 1, seed=6)
        sample = ChannelSample(h_true=h[0], y=y[0], snr_db=10.0, doppler_kmh=0.0)
        ctx = EstimatorContext(xp=xp)
        assert np.array_equal(estimate(EstimatorKind.LS, sample, ctx), ls_estimate(y[0], xp))

    def test_lmmse_dispatch_identity(self):
        cfg = ChannelConfig()
        xp, h, y = make_observations(cfg, 10.0, 1, seed=7)
        sample = ChannelSample(h_true=h[0], y=y[0], snr_db=10.0, doppler_kmh=0.0)
        ctx = EstimatorContext(xp=xp)
        prior = LmmsePrior(
            r_rx=np.eye(4, dtype=complex),
            r_tx=np.eye(4, dtype=complex),
            noise_var=noise_variance(10.0),
        )
        assert np.array_equal(
            estimate(EstimatorKind.LMMSE, sample, ctx), lmmse_estimate(y[0], xp, prior)
        )

    def test_dnn_dispatch_requires_model(self):
        cfg = ChannelConfig()
        xp, h, y = make_observations(cfg, 10.0, 1, seed=8)
        sample = ChannelSample(h_true=h[0], y=y[0], snr_db=10.0, doppler_kmh=0.0)
        with pytest.raises(ConfigurationError):
            estimate(EstimatorKind.DNN, sample, EstimatorContext(xp=xp))


class TestOrderingProperties:
    def test_matched_lmmse_never_worse_than_ls(self):
        cfg = ChannelConfig(spatial_rho=0.0)
        xp = generate_pilots(cfg.nt, cfg.pilot_len, cfg.pilot_energy)
        for k, snr in enumerate(range(-10, 31, 5)):
            rng = RngStream(100 + k, 0)
            h = draw_channels(cfg, rng, 10_000)
            y = transmit_pilots_batch(h, xp, snr, rng, cfg.pilot_energy)
            prior = LmmsePrior(
                r_rx=np.eye(4, dtype=complex),
                r_tx=np.eye(4, dtype=complex),
                noise_var=noise_variance(snr),
            )
            ls_db = 10 * np.log10(np.mean(nmse_linear_batch(h, ls_estimate(y, xp))))
            lmmse_db = 10 * np.log10(
                np.mean(nmse_linear_batch(h, lmmse_estimate(y, xp, prior)))
            )
            assert lmmse_db <= ls_db + 0.1, f"LMMSE worse than LS at {snr} dB"

    def test_ls_slope_minus_one(self):
        cfg = ChannelConfig(spatial_rho=0.0)
        xp = generate_pilots(cfg.nt, cfg.pilot_len, cfg.pilot_energy)
        grid = np.arange(-10, 31, 5, dtype=float)
        points = []
        for k, snr in enumerate(grid):
            rng = RngStream(200 + k, 0)
            h = draw_channels(cfg, rng, 10_000)
            y = transmit_pilots_batch(h, xp, snr, rng, cfg.pilot_energy)
            points.append(10 * np.log10(np.mean(nmse_linear_batch(h, ls_estimate(y, xp)))))
        slope = np.polyfit(grid, points, 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.05)


class TestFacade:
    def test_predict_requires_fit(self):
        with pytest.raises(ConfigurationError):
            LeastSquaresEstimator().predict([])

    def test_ls_facade_matches_function(self):
        cfg = ChannelConfig()
        xp, h, y = make_observations(cfg, 10.0, 5, seed=9)
        samples = [
            ChannelSample(h_true=h[i], y=y[i], snr_db=10.0, doppler_kmh=0.0) for i in range(5)
        ]
        pred = LeastSquaresEstimator().fit([], xp).predict(samples)
        assert np.array_equal(pred, ls_estimate(y, xp))

    def test_lmmse_facade_groups_mixed_snr(self):
        cfg = ChannelConfig()
        xp, h, y = make_observations(cfg, 10.0, 4, seed=10)
        snrs = [0.0, 10.0, 0.0, 20.0]
        samples = [
            ChannelSample(h_true=h[i], y=y[i], snr_db=snrs[i], doppler_kmh=0.0)
            for i in range(4)
        ]
        est = LmmseEstimator().fit([], xp)
        pred = est.predict(samples)
        for i, s in enumerate(samples):
            prior = LmmsePrior(
                r_rx=np.eye(4, dtype=complex),
                r_tx=np.eye(4, dtype=complex),
                noise_var=noise_variance(s.snr_db),
            )
            assert np.array_equal(pred[i], lmmse_estimate(s.y, xp, prior))

    def test_get_params_roundtrip(self):
        est = LmmseEstimator(spatial_rho=0.7, pilot_energy=2.0)
        params = est.get_params()
        assert params["spatial_rho"] == 0.7
        clone = LmmseEstimator(**params)
        assert clone.pilot_energy == 2.0

    def test_dnn_facade_params(self):
        est = DnnEstimator(hidden=(16, 8), max_epochs=3)
        assert est.get_params()["hidden"] == (16, 8)
