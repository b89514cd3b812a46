"""Market simulation and state-transform tests."""

import numpy as np
import pytest

from qhedge import (MarketParams, OptionContract, ensemble_from_prices,
                    from_state, simulate_gbm, terminal_payoff, to_state)


def make_params(**kw):
    base = dict(s0=100.0, mu=0.05, sigma=0.2, r=0.03, maturity=1.0, n_steps=12)
    base.update(kw)
    return MarketParams(**base)


class TestSimulateGBM:
    def test_zero_vol_is_pure_drift(self):
        """sigma = 0 collapses every path to s0 * exp(mu t) at each step."""
        params = make_params(mu=0.05, sigma=0.0, n_steps=1)
        paths = simulate_gbm(params, 50, seed=1)
        np.testing.assert_allclose(paths.s_paths[:, 1], 100.0 * np.exp(0.05),
                                   rtol=1e-14)

    def test_zero_vol_every_step(self):
        params = make_params(mu=0.07, sigma=0.0, n_steps=8)
        paths = simulate_gbm(params, 10, seed=3)
        expected = 100.0 * np.exp(0.07 * params.times())
        np.testing.assert_allclose(paths.s_paths,
                                   np.tile(expected, (10, 1)), rtol=1e-13)

    def test_seeded_determinism(self):
        params = make_params()
        a = simulate_gbm(params, 500, seed=42)
        b = simulate_gbm(params, 500, seed=42)
        assert np.array_equal(a.s_paths, b.s_paths)
        assert np.array_equal(a.x_paths, b.x_paths)
        c = simulate_gbm(params, 500, seed=43)
        assert not np.array_equal(a.s_paths, c.s_paths)

    def test_lognormal_mean(self):
        """Sample mean of S_T within 3 standard errors of s0 exp(mu T).

        The standard error uses the closed-form lognormal variance
        s0^2 e^{2 mu T} (e^{sigma^2 T} - 1).
        """
        params = make_params(mu=0.05, sigma=0.2, maturity=1.0)
        n = 100_000
        paths = simulate_gbm(params, n, seed=7)
        target = 100.0 * np.exp(0.05)
        se = 100.0 * np.exp(0.05) * np.sqrt(np.exp(0.04) - 1.0) / np.sqrt(n)
        assert abs(paths.s_paths[:, -1].mean() - target) < 3 * se

    def test_state_increments_driftless(self):
        """Pooled mean of X increments is 0 up to 4 sigma sqrt(dt) / sqrt(N T)."""
        params = make_params(mu=0.08, sigma=0.25, n_steps=16)
        n = 20_000
        paths = simulate_gbm(params, n, seed=11)
        inc = np.diff(paths.x_paths, axis=1)
        bound = 4 * params.sigma * np.sqrt(params.dt) / np.sqrt(n * params.n_steps)
        assert abs(inc.mean()) <= bound

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            make_params(s0=-1.0)
        with pytest.raises(ValueError):
            make_params(sigma=-0.1)
        with pytest.raises(ValueError):
            make_params(n_steps=0)
        with pytest.raises(ValueError):
            simulate_gbm(make_params(), 0, seed=1)


class TestStateTransform:
    def test_log_one_is_zero(self):
        assert to_state(1.0, 0.0, make_params()) == 0.0

    def test_drift_term_vanishes_when_mu_is_half_var(self):
        params = make_params(mu=0.02, sigma=0.2)  # mu == sigma^2 / 2
        for t in (0.0, 0.5, 3.0):
            np.testing.assert_allclose(to_state(7.5, t, params), np.log(7.5),
                                       rtol=1e-15)

    def test_roundtrip(self):
        """from_state(to_state(s, t), t) == s to 1e-12 relative over a wide range."""
        params = make_params()
        rng = np.random.default_rng(5)
        s = np.exp(rng.uniform(np.log(1e-4), np.log(1e6), size=2000))
        for t in (0.0, 0.37, 1.0):
            np.testing.assert_allclose(from_state(to_state(s, t, params), t, params),
                                       s, rtol=1e-12)

    def test_from_state_trivials(self):
        params = make_params()
        assert from_state(0.0, 0.0, params) == 1.0
        p2 = make_params(mu=0.02, sigma=0.2)
        np.testing.assert_allclose(from_state(0.0, 2.0, p2), 1.0, rtol=1e-15)
        np.testing.assert_allclose(from_state(np.log(100.0), 0.0, params), 100.0,
                                   rtol=1e-14)

    def test_rejects_nonpositive_price(self):
        with pytest.raises(ValueError):
            to_state(0.0, 0.0, make_params())
        with pytest.raises(ValueError):
            to_state(-3.0, 0.0, make_params())


class TestTerminalPayoff:
    def test_put_and_call(self):
        put = OptionContract("put", 100.0)
        call = OptionContract("call", 100.0)
        assert terminal_payoff(90.0, put) == 10.0
        assert terminal_payoff(120.0, put) == 0.0
        assert terminal_payoff(120.0, call) == 20.0
        np.testing.assert_array_equal(
            terminal_payoff(np.array([90.0, 100.0, 130.0]), call),
            [0.0, 0.0, 30.0])

    def test_bad_contract(self):
        with pytest.raises(ValueError):
            OptionContract("straddle", 100.0)
        with pytest.raises(ValueError):
            OptionContract("put", -5.0)


class TestPathEnsemble:
    def test_transform_consistency(self):
        params = make_params()
        paths = simulate_gbm(params, 100, seed=2)
        times = params.times()
        np.testing.assert_allclose(
            paths.x_paths, to_state(paths.s_paths, times[None, :], params),
            rtol=1e-14)
        assert paths.s_paths[:, 0].min() == paths.s_paths[:, 0].max() == 100.0

    def test_immutable(self):
        paths = simulate_gbm(make_params(), 10, seed=2)
        with pytest.raises(ValueError):
            paths.s_paths[0, 0] = 1.0

    def test_from_prices_validates(self):
        params = make_params(n_steps=2)
        good = np.full((3, 3), 100.0)
        ens = ensemble_from_prices(good, params)
        assert ens.n_paths == 3
        with pytest.raises(ValueError):
            ensemble_from_prices(np.array([[100.0, -1.0, 100.0]]), params)
