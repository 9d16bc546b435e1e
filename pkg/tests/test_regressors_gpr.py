import numpy as np
import pytest

from multigap import (
    NumericalError,
    RqGpr,
    load_regressor,
    rq_kernel,
    rq_kernel_matrix,
    save_regressor,
)

from oracles import gpr_mean_oracle, inv3x3_adjugate


class TestRqKernel:
    def test_self_similarity_is_sigma2(self):
        x = np.array([1.0, -2.0])
        assert rq_kernel(x, x, sigma2=3.5, length_scale=1.2, alpha=0.7) == 3.5

    def test_scalar_hand_value(self):
        # x=0, y=2, sigma2=1, l=1, alpha=1: (1 + 4/2)^-1 = 1/3
        k = rq_kernel([0.0], [2.0], sigma2=1.0, length_scale=1.0, alpha=1.0)
        assert k == pytest.approx(1.0 / 3.0, abs=1e-15)

    def test_large_alpha_recovers_squared_exponential(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x, y = rng.normal(size=(2, 5))
            ell = 1.3
            k_rq = rq_kernel(x, y, sigma2=1.0, length_scale=ell, alpha=1e6)
            d2 = float(((x - y) ** 2).sum())
            k_se = np.exp(-d2 / (2.0 * ell**2))
            assert k_rq == pytest.approx(k_se, abs=1e-3)

    def test_range_and_positivity(self):
        rng = np.random.default_rng(1)
        x, y = rng.normal(size=(2, 3))
        k = rq_kernel(x, y, sigma2=2.0, length_scale=0.5, alpha=1.5)
        assert 0.0 < k <= 2.0

    def test_rejects_bad_hyperparameters(self):
        with pytest.raises(ValueError):
            rq_kernel([0.0], [1.0], sigma2=-1.0, length_scale=1.0, alpha=1.0)
        with pytest.raises(ValueError):
            rq_kernel([0.0], [1.0], sigma2=1.0, length_scale=0.0, alpha=1.0)
        with pytest.raises(ValueError):
            rq_kernel([0.0], [1.0, 2.0], sigma2=1.0, length_scale=1.0, alpha=1.0)

    def test_matrix_symmetric_and_psd(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(20, 4))
        K = rq_kernel_matrix(X, sigma2=1.7, length_scale=2.0, alpha=0.8)
        assert np.array_equal(K, K.T)
        np.testing.assert_array_equal(np.diagonal(K), np.full(20, 1.7))
        assert np.linalg.eigvalsh(K).min() >= -1e-8


class TestGprTraining:
    def test_zero_targets_zero_weights(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(8, 2))
        model = RqGpr(length_scale=1.0, alpha=1.0, signal_variance=1.0,
                      noise_variance=0.1).fit(X, np.zeros(8))
        np.testing.assert_array_equal(model.weights_, np.zeros(8))
        np.testing.assert_array_equal(model.predict(X), np.zeros(8))

    def test_three_point_hand_built_system(self):
        # X = 0, 1, 2 on the line; l = alpha = sigma2 = 1; noise 0.5:
        # K = [[1, 2/3, 1/3], [2/3, 1, 2/3], [1/3, 2/3, 1]]
        X = np.array([[0.0], [1.0], [2.0]])
        y = np.array([1.0, 2.0, 3.0])
        K = np.array([
            [1.0, 2.0 / 3.0, 1.0 / 3.0],
            [2.0 / 3.0, 1.0, 2.0 / 3.0],
            [1.0 / 3.0, 2.0 / 3.0, 1.0],
        ])
        expected = inv3x3_adjugate(K + 0.5 * np.eye(3)) @ y
        model = RqGpr(length_scale=1.0, alpha=1.0, signal_variance=1.0,
                      noise_variance=0.5).fit(X, y)
        np.testing.assert_allclose(model.weights_, expected, atol=1e-12)

    def test_near_noise_free_interpolation(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(-2, 2, size=(20, 2))
        y = np.sin(X[:, 0]) + X[:, 1]
        model = RqGpr(length_scale=1.5, alpha=1.0, signal_variance=1.0,
                      noise_variance=1e-10).fit(X, y)
        np.testing.assert_allclose(model.predict(X), y, atol=1e-4)

    def test_predictive_mean_matches_explicit_solve(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(25, 3))
        y = rng.normal(size=25)
        params = dict(sigma2=2.0, length_scale=1.8, alpha=0.9)
        noise = 0.05
        model = RqGpr(length_scale=params["length_scale"], alpha=params["alpha"],
                      signal_variance=params["sigma2"], noise_variance=noise).fit(X, y)
        X_test = rng.normal(size=(10, 3))
        K_train = rq_kernel_matrix(X, **params)
        K_test = rq_kernel_matrix(X_test, X, **params)
        np.testing.assert_allclose(
            model.predict(X_test),
            gpr_mean_oracle(K_train, K_test, y, noise),
            atol=1e-8,
        )

    def test_signal_variance_defaults_to_var_y(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(10, 2))
        y = rng.normal(loc=3.0, scale=2.0, size=10)
        model = RqGpr(noise_variance=0.1).fit(X, y)
        assert model.signal_variance_ == pytest.approx(np.var(y))

    def test_monotone_noise_effect(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(15, 3))
        y = rng.normal(size=15)
        norms = []
        for noise in (1e-3, 1e-2, 1e-1, 1.0, 10.0):
            model = RqGpr(length_scale=1.0, alpha=1.0, signal_variance=1.0,
                          noise_variance=noise).fit(X, y)
            norms.append(np.linalg.norm(model.weights_))
        assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(20, 3))
        y = rng.normal(size=20)
        X_test = rng.normal(size=(7, 3))
        a = RqGpr(length_scale=1.5, alpha=1.0, signal_variance=1.0,
                  noise_variance=0.01).fit(X, y)
        perm = rng.permutation(20)
        b = RqGpr(length_scale=1.5, alpha=1.0, signal_variance=1.0,
                  noise_variance=0.01).fit(X[perm], y[perm])
        np.testing.assert_allclose(a.predict(X_test), b.predict(X_test), atol=1e-6)

    def test_jitter_recovers_duplicate_rows(self):
        # duplicated inputs with zero noise make K singular; the jitter ladder
        # must rescue the factorization
        X = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        y = np.array([1.0, 1.0, 2.0])
        model = RqGpr(length_scale=1.0, alpha=1.0, signal_variance=1.0,
                      noise_variance=0.0).fit(X, y)
        assert model.jitter_ > 0.0
        assert np.all(np.isfinite(model.weights_))

    def test_single_training_point(self):
        model = RqGpr(length_scale=1.0, alpha=1.0, signal_variance=1.0,
                      noise_variance=1e-6).fit([[0.5]], [2.0])
        assert model.predict([[0.5]])[0] == pytest.approx(2.0, abs=1e-4)


class TestGprSerialization:
    def test_round_trip_preserves_predictions(self, tmp_path):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(12, 3))
        y = rng.normal(size=12)
        model = RqGpr(length_scale=1.2, alpha=0.8, signal_variance=1.5,
                      noise_variance=0.02).fit(X, y)
        path = tmp_path / "gpr.npz"
        save_regressor(model, path)
        loaded = load_regressor(path)
        X_test = rng.normal(size=(6, 3))
        np.testing.assert_allclose(
            loaded.predict(X_test), model.predict(X_test), rtol=0, atol=1e-12
        )
