import numpy as np
import pytest

from multigap import RbfSvr, load_regressor, rbf_kernel, rbf_kernel_matrix, save_regressor

from oracles import svr_dual_qp_oracle, svr_predict_from_dual


class TestRbfKernel:
    def test_self_similarity_is_one(self):
        x = np.array([0.3, -1.2, 4.0])
        assert rbf_kernel(x, x, gamma=0.7) == 1.0

    def test_scalar_hand_value(self):
        # x=0, y=1, gamma=1 -> e^-1
        assert rbf_kernel([0.0], [1.0], 1.0) == pytest.approx(
            0.36787944117144233, abs=1e-16
        )

    def test_symmetry_exact(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x, y = rng.normal(size=(2, 6))
            assert rbf_kernel(x, y, 0.3) == rbf_kernel(y, x, 0.3)

    def test_range(self):
        rng = np.random.default_rng(1)
        x, y = rng.normal(size=(2, 4))
        k = rbf_kernel(x, y, 2.0)
        assert 0.0 < k <= 1.0

    def test_matrix_symmetric_and_psd(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(20, 5))
        K = rbf_kernel_matrix(X, gamma=0.5)
        assert np.array_equal(K, K.T)
        np.testing.assert_array_equal(np.diagonal(K), np.ones(20))
        assert np.linalg.eigvalsh(K).min() >= -1e-8

    def test_matrix_matches_scalar(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(5, 3))
        Y = rng.normal(size=(4, 3))
        K = rbf_kernel_matrix(X, Y, gamma=0.9)
        for i in range(5):
            for j in range(4):
                assert K[i, j] == pytest.approx(rbf_kernel(X[i], Y[j], 0.9), abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            rbf_kernel([1.0, 2.0], [1.0], 1.0)


class TestSvrTraining:
    def test_constant_targets_no_support_vectors(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(12, 3))
        model = RbfSvr(C=10.0, epsilon=0.1, gamma=0.5).fit(X, np.full(12, 2.75))
        assert len(model.dual_coef_) == 0
        np.testing.assert_allclose(model.predict(rng.normal(size=(5, 3))), 2.75)

    def test_two_point_instance_against_qp(self):
        # {(0, 0), (1, 1)}, C=10, eps=0.01, gamma=1: |beta| has the closed
        # form (1 - 2 eps) / (2 (1 - e^-1)) and the bias is exactly 0.5
        X = np.array([[0.0], [1.0]])
        y = np.array([0.0, 1.0])
        model = RbfSvr(C=10.0, epsilon=0.01, gamma=1.0, tol=1e-6).fit(X, y)
        K = rbf_kernel_matrix(X, gamma=1.0)
        beta_qp, bias_qp = svr_dual_qp_oracle(K, y, 10.0, 0.01)
        beta = np.zeros(2)
        beta[model.support_] = model.dual_coef_
        np.testing.assert_allclose(beta, beta_qp, atol=1e-4)
        magnitude = (1.0 - 0.02) / (2.0 * (1.0 - np.exp(-1.0)))
        np.testing.assert_allclose(np.abs(beta), magnitude, atol=1e-9)
        assert model.intercept_ == pytest.approx(0.5, abs=1e-9)

    def test_thirty_points_predictions_match_qp(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(30, 5))
        y = rng.normal(size=30)
        C, eps, gamma = 10.0, 0.1, 0.2
        model = RbfSvr(C=C, epsilon=eps, gamma=gamma).fit(X, y)
        K = rbf_kernel_matrix(X, gamma=gamma)
        beta_qp, bias_qp = svr_dual_qp_oracle(K, y, C, eps)
        X_test = rng.normal(size=(40, 5))
        K_test = rbf_kernel_matrix(X_test, X, gamma=gamma)
        rms = np.sqrt(np.mean(
            (model.predict(X_test) - svr_predict_from_dual(K_test, beta_qp, bias_qp)) ** 2
        ))
        assert rms <= 1e-3

    def test_dual_feasibility(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(25, 4))
        y = rng.normal(size=25)
        C = 5.0
        model = RbfSvr(C=C, epsilon=0.05, gamma=0.3).fit(X, y)
        assert np.all(np.abs(model.dual_coef_) <= C + 1e-12)
        assert np.all(np.abs(model.dual_coef_) > 0)
        assert abs(model.dual_coef_.sum()) <= 1e-6 * C
        assert model.kkt_violation_ <= 1e-3
        assert model.converged_

    def test_duality_gap(self):
        # primal: 0.5 b'Kb + C sum max(0, |residual| - eps)
        # dual:  -0.5 b'Kb - eps sum|b| + y'b
        rng = np.random.default_rng(7)
        X = rng.normal(size=(30, 5))
        y = np.sin(X[:, 0]) + 0.1 * rng.normal(size=30)
        C, eps, gamma = 10.0, 0.1, 0.2
        model = RbfSvr(C=C, epsilon=eps, gamma=gamma, tol=1e-5).fit(X, y)
        beta = np.zeros(30)
        beta[model.support_] = model.dual_coef_
        K = rbf_kernel_matrix(X, gamma=gamma)
        reg = 0.5 * beta @ K @ beta
        residuals = y - (K @ beta + model.intercept_)
        primal = reg + C * np.clip(np.abs(residuals) - eps, 0.0, None).sum()
        dual = -reg - eps * np.abs(beta).sum() + y @ beta
        assert primal - dual >= -1e-9
        assert primal - dual <= 1e-3 * primal

    def test_prediction_at_free_support_vector_within_tube(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(20, 3))
        y = np.cos(X).sum(axis=1)
        C, eps = 50.0, 0.1
        model = RbfSvr(C=C, epsilon=eps, gamma=0.4, tol=1e-6).fit(X, y)
        pred = model.predict(model.support_vectors_)
        free = np.abs(model.dual_coef_) < C - 1e-9
        assert free.any()
        np.testing.assert_array_less(
            np.abs(pred[free] - y[model.support_][free]), eps + 1e-6
        )

    def test_permutation_invariance(self):
        # tight tol isolates ordering effects from solver tolerance
        rng = np.random.default_rng(9)
        X = rng.normal(size=(18, 4))
        y = X[:, 0] - 0.5 * X[:, 1] + 0.05 * rng.normal(size=18)
        X_test = rng.normal(size=(10, 4))
        a = RbfSvr(C=5.0, epsilon=0.05, gamma=0.25, tol=1e-8).fit(X, y)
        perm = rng.permutation(18)
        b = RbfSvr(C=5.0, epsilon=0.05, gamma=0.25, tol=1e-8).fit(X[perm], y[perm])
        np.testing.assert_allclose(a.predict(X_test), b.predict(X_test), atol=1e-6)

    def test_deterministic(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(15, 3))
        y = rng.normal(size=15)
        a = RbfSvr(C=2.0, epsilon=0.1, gamma=0.5).fit(X, y)
        b = RbfSvr(C=2.0, epsilon=0.1, gamma=0.5).fit(X, y)
        np.testing.assert_array_equal(a.predict(X), b.predict(X))
        np.testing.assert_array_equal(a.dual_coef_, b.dual_coef_)

    def test_max_iter_warning(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(30, 2))
        y = rng.normal(size=30)
        with pytest.warns(Warning, match="SMO stopped"):
            model = RbfSvr(C=100.0, epsilon=0.001, gamma=1.0, max_iter=3).fit(X, y)
        assert not model.converged_

    def test_rejects_bad_inputs(self):
        X = np.ones((3, 2))
        with pytest.raises(ValueError):
            RbfSvr(C=-1.0).fit(X, np.arange(3.0))
        with pytest.raises(ValueError):
            RbfSvr().fit(X[:1], np.arange(1.0))
        with pytest.raises(ValueError):
            RbfSvr().fit(X * np.nan, np.arange(3.0))

    def test_sklearn_get_params_round_trip(self):
        model = RbfSvr(C=3.0, epsilon=0.2, gamma=0.1)
        params = model.get_params()
        assert params["C"] == 3.0
        clone = RbfSvr(**params)
        assert clone.get_params() == params


class TestSvrSerialization:
    def test_round_trip_preserves_predictions(self, tmp_path):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(20, 4))
        y = rng.normal(size=20)
        model = RbfSvr(C=5.0, epsilon=0.1, gamma=0.3).fit(X, y)
        path = tmp_path / "svr.npz"
        save_regressor(model, path)
        loaded = load_regressor(path)
        X_test = rng.normal(size=(10, 4))
        np.testing.assert_allclose(
            loaded.predict(X_test), model.predict(X_test), rtol=0, atol=1e-12
        )
