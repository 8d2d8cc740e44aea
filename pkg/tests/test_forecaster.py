import numpy as np
import pytest

from dfport.forecaster import (ForecastHead, IdentityEncoder, LinearForecaster,
                               forecast, linear_forecast, load_checkpoint,
                               save_checkpoint)
from dfport.preprocess import NormStats, normalize


def stats_for(n, mu=0.01, sigma=0.05):
    return NormStats(np.full(n, mu), np.full(n, sigma), 1e-8)


class TestForecast:
    def test_zero_head_gives_means(self):
        rng = np.random.default_rng(0)
        cm = rng.standard_normal((3, 6))
        cs = rng.standard_normal((3, 6))
        head = ForecastHead(np.zeros((6, 2)))
        out = forecast(cm, cs, IdentityEncoder(), head, stats_for(3))
        assert out.shape == (2, 3)
        assert np.allclose(out, 0.01)

    def test_additive_fusion(self):
        rng = np.random.default_rng(1)
        cm = rng.standard_normal((3, 6))
        head = ForecastHead(rng.standard_normal((6, 1)))
        stats = stats_for(3, mu=0.0, sigma=1.0)
        only_market = forecast(cm, np.zeros_like(cm), IdentityEncoder(), head, stats)
        assert np.allclose(only_market, (cm @ head.wf).T)

    def test_linearity_in_contexts(self):
        rng = np.random.default_rng(2)
        cm = rng.standard_normal((4, 5))
        cs = rng.standard_normal((4, 5))
        head = ForecastHead(rng.standard_normal((5, 2)))
        stats = stats_for(4, mu=0.0, sigma=1.0)
        once = forecast(cm, cs, IdentityEncoder(), head, stats)
        twice = forecast(2 * cm, 2 * cs, IdentityEncoder(), head, stats)
        assert np.allclose(twice, 2 * once)

    def test_denormalization_uses_window_stats(self):
        rng = np.random.default_rng(3)
        window = rng.standard_normal((8, 2)) * 0.03 + 0.01
        _, stats = normalize(window)
        cm = rng.standard_normal((2, 4))
        cs = rng.standard_normal((2, 4))
        head = ForecastHead(rng.standard_normal((4, 1)))
        out = forecast(cm, cs, IdentityEncoder(), head, stats)
        z = cm + cs
        assert np.allclose(out, ((z @ head.wf).T * stats.sigma + stats.mu))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            forecast(np.zeros((3, 4)), np.zeros((2, 4)), IdentityEncoder(),
                     ForecastHead(np.zeros((4, 1))), stats_for(3))


class TestLinearForecaster:
    def test_zero_map(self):
        model = LinearForecaster.zeros(4, 3, 2)
        assert np.all(linear_forecast(np.ones((4, 3)), model) == 0.0)

    def test_copy_map(self):
        # theta that copies the last window row into the single-step forecast
        L, N = 3, 2
        model = LinearForecaster.zeros(L, N, 1)
        for i in range(N):
            model.theta[(L - 1) * N + i, i] = 1.0
        window = np.arange(6.0).reshape(L, N)
        assert np.allclose(model.predict(window), window[-1])

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        model = LinearForecaster.random(3, 2, 2, seed=4)
        window = rng.standard_normal((3, 2))
        jac = model.pred_jacobian(window)
        theta0 = model.get_theta()
        eps = 1e-6
        fd = np.zeros_like(jac)
        for p in range(theta0.size):
            tp = theta0.copy()
            tp[p] += eps
            model.set_theta(tp)
            up = model.predict(window).ravel()
            tm = theta0.copy()
            tm[p] -= eps
            model.set_theta(tm)
            dn = model.predict(window).ravel()
            fd[:, p] = (up - dn) / (2 * eps)
        model.set_theta(theta0)
        assert np.max(np.abs(jac - fd)) / max(np.max(np.abs(fd)), 1.0) <= 1e-6

    def test_window_shape_checked(self):
        with pytest.raises(ValueError):
            LinearForecaster.zeros(4, 3, 1).predict(np.ones((3, 3)))


class TestCheckpoints:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        blocks = {"theta": rng.standard_normal((3, 4)),
                  "wf": rng.standard_normal(6)}
        path = tmp_path / "ckpt.csv"
        save_checkpoint(path, blocks)
        back = load_checkpoint(path)
        assert set(back) == {"theta", "wf"}
        for name in blocks:
            assert np.array_equal(back[name], blocks[name])
            assert back[name].shape == blocks[name].shape

    def test_rejects_non_checkpoint(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("something,else\n1,2\n")
        with pytest.raises(ValueError):
            load_checkpoint(path)
