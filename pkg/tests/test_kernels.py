import math

import numpy as np
import pytest

from tsforge.errors import ModelError
from tsforge.kernels import (
    EmbeddingSpec,
    KernelSpec,
    embed,
    forecast_recursive,
    from_json,
    gram,
    krr_fit,
    krr_predict,
    svr_fit,
    svr_predict,
    to_json,
)


def svr_dual_oracle(K, y, C, epsilon, steps=100_000):
    """Accelerated projected gradient on the stacked box QP, run to convergence.

    Independent of the SMO path: full-gradient steps with Nesterov momentum,
    projecting onto the box intersected with the balance hyperplane through
    a bisection on the hyperplane multiplier.
    """
    n = len(y)
    z = np.r_[np.ones(n), -np.ones(n)]
    p = np.r_[epsilon - y, epsilon + y]
    Q = np.outer(z, z) * np.tile(K, (2, 2))
    lr = 1.0 / (np.linalg.eigvalsh(Q).max() + 1e-9)

    def project(v):
        lo_l, hi_l = -(np.abs(v).max() + C + 1.0), (np.abs(v).max() + C + 1.0)
        for _ in range(100):
            mid = 0.5 * (lo_l + hi_l)
            if z @ np.clip(v - mid * z, 0.0, C) > 0:
                lo_l = mid
            else:
                hi_l = mid
        return np.clip(v - 0.5 * (lo_l + hi_l) * z, 0.0, C)

    u = project(np.zeros(2 * n))
    carry = u.copy()
    t_acc = 1.0
    for _ in range(steps):
        u_next = project(carry - lr * (Q @ carry + p))
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_acc * t_acc))
        carry = u_next + ((t_acc - 1.0) / t_next) * (u_next - u)
        u, t_acc = u_next, t_next
    return float(0.5 * u @ Q @ u + p @ u)


class TestEmbed:
    def test_definition(self):
        X, y = embed(np.array([1.0, 2.0, 3.0, 4.0]), EmbeddingSpec(2))
        np.testing.assert_array_equal(X, [[1, 2], [2, 3]])
        np.testing.assert_array_equal(y, [3, 4])

    def test_pair_count(self, rng):
        X, y = embed(rng.normal(0, 1, 100), EmbeddingSpec(5))
        assert X.shape == (95, 5) and len(y) == 95

    def test_window_zero_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingSpec(0)

    def test_too_short(self):
        with pytest.raises(ValueError, match="too short"):
            embed(np.arange(3.0), EmbeddingSpec(3))


class TestGram:
    def test_rbf_diagonal_is_one(self, rng):
        X = rng.normal(0, 1, (6, 3))
        K = gram(KernelSpec.rbf(0.7), X, X)
        np.testing.assert_allclose(np.diag(K), 1.0, atol=1e-15)

    def test_rbf_closed_form(self):
        X = np.array([[0.0, 0.0]])
        Y = np.array([[1.0, 1.0]])  # squared distance 2
        K = gram(KernelSpec.rbf(0.5), X, Y)
        assert K[0, 0] == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_linear_is_dot_product(self, rng):
        X = rng.normal(0, 1, (4, 3))
        np.testing.assert_allclose(gram(KernelSpec.linear(), X, X), X @ X.T, atol=1e-12)

    def test_polynomial(self):
        X = np.array([[1.0, 2.0]])
        K = gram(KernelSpec.polynomial(2, coef0=1.0), X, X)
        assert K[0, 0] == pytest.approx((5.0 + 1.0) ** 2)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError, match="dimension"):
            gram(KernelSpec.linear(), rng.normal(0, 1, (3, 2)), rng.normal(0, 1, (3, 4)))

    def test_kernel_spec_validation(self):
        with pytest.raises(ValueError):
            KernelSpec.rbf(-1.0)
        with pytest.raises(ValueError):
            KernelSpec(kind="rbf")
        with pytest.raises(ValueError):
            KernelSpec(kind="linear", gamma=1.0)
        with pytest.raises(ValueError):
            KernelSpec(kind="sigmoid")


class TestKrr:
    def test_near_zero_lambda_interpolates(self, rng):
        X = rng.normal(0, 1, (10, 2))
        y = rng.normal(0, 1, 10)
        model = krr_fit(X, y, 1e-12, KernelSpec.rbf(0.5))
        np.testing.assert_allclose(krr_predict(model, X), y, atol=1e-5)

    def test_single_pair_closed_form(self):
        x = np.array([[2.0, 1.0]])
        model = krr_fit(x, np.array([3.0]), 0.5, KernelSpec.linear(), standardize=False)
        assert model.alpha[0] == pytest.approx(3.0 / (5.0 + 0.5))

    def test_huge_lambda_shrinks_to_zero(self, rng):
        X = rng.normal(0, 1, (30, 3))
        y = rng.normal(0, 1, 30)
        y -= y.mean()
        model = krr_fit(X, y, 1e6, KernelSpec.rbf(1.0))
        preds = krr_predict(model, X)
        assert np.all(np.abs(preds) < 1e-3 * np.abs(y).max())

    def test_linear_solve_residual_small(self, rng):
        for n in (20, 100, 200):
            X = rng.normal(0, 1, (n, 4))
            y = rng.normal(0, 1, n)
            model = krr_fit(X, y, 0.1, KernelSpec.rbf(0.3))
            Xs = model.standardizer.transform(X)
            K = gram(model.kernel, Xs, Xs)
            residual = (K + model.lam * np.eye(n)) @ model.alpha - y
            assert np.linalg.norm(residual) < 1e-8 * np.linalg.norm(y)

    def test_prediction_matches_direct_product(self, rng):
        X = rng.normal(0, 1, (15, 3))
        y = rng.normal(0, 1, 15)
        model = krr_fit(X, y, 0.2, KernelSpec.rbf(0.4))
        Xnew = rng.normal(0, 1, (6, 3))
        direct = gram(model.kernel, model.standardizer.transform(Xnew), model.standardizer.transform(X)) @ model.alpha
        np.testing.assert_allclose(krr_predict(model, Xnew), direct, atol=1e-12)

    def test_permutation_invariance(self, rng):
        X = rng.normal(0, 1, (12, 2))
        y = rng.normal(0, 1, 12)
        perm = rng.permutation(12)
        a = krr_fit(X, y, 0.3, KernelSpec.rbf(0.5))
        b = krr_fit(X[perm], y[perm], 0.3, KernelSpec.rbf(0.5))
        probe = rng.normal(0, 1, (5, 2))
        np.testing.assert_allclose(krr_predict(a, probe), krr_predict(b, probe), atol=1e-9)

    def test_singular_at_zero_lambda(self):
        X = np.array([[1.0, 0.0], [1.0, 0.0], [2.0, 1.0]])  # duplicate rows
        with pytest.raises(ModelError, match="singular"):
            krr_fit(X, np.array([1.0, 2.0, 3.0]), 0.0, KernelSpec.linear(), standardize=False)

    def test_dimension_check_on_predict(self, rng):
        model = krr_fit(rng.normal(0, 1, (8, 3)), rng.normal(0, 1, 8), 0.1, KernelSpec.linear())
        with pytest.raises(ValueError, match="dimension"):
            krr_predict(model, rng.normal(0, 1, (2, 5)))


class TestSvr:
    def test_constant_targets_all_in_tube(self, rng):
        X = rng.normal(0, 1, (12, 2))
        y = np.full(12, 4.2)
        model = svr_fit(X, y, C=1.0, epsilon=0.1, kernel=KernelSpec.rbf(0.5))
        np.testing.assert_allclose(model.beta, 0.0, atol=1e-12)
        assert model.b == pytest.approx(4.2, abs=1e-9)
        np.testing.assert_allclose(model.xi, 0.0, atol=1e-12)
        np.testing.assert_allclose(model.xi_star, 0.0, atol=1e-12)

    def test_dual_feasibility_and_kkt_random(self, rng):
        for trial in range(8):
            n = int(rng.integers(10, 51))
            X = rng.normal(0, 1, (n, 3))
            y = np.sin(X[:, 0]) + 0.1 * rng.normal(0, 1, n)
            C = float(rng.choice([0.5, 1.0, 10.0]))
            eps = float(rng.choice([0.01, 0.1, 0.3]))
            model = svr_fit(X, y, C=C, epsilon=eps, kernel=KernelSpec.rbf(0.5), tol=1e-3)
            assert model.converged
            assert abs(model.beta.sum()) < 1e-6
            assert np.all(np.abs(model.beta) <= C + 1e-12)
            fitted = svr_predict(model, X)
            inside = np.abs(fitted - y) < eps - 1e-3
            np.testing.assert_allclose(model.beta[inside], 0.0, atol=1e-9)

    def test_six_point_dual_matches_qp_oracle(self):
        rng = np.random.default_rng(123)
        X = rng.normal(0, 1, (6, 2))
        y = rng.normal(0, 1, 6)
        model = svr_fit(X, y, C=2.0, epsilon=0.05, kernel=KernelSpec.linear(),
                        tol=1e-8, standardize=False)
        K = gram(KernelSpec.linear(), X, X)
        oracle = svr_dual_oracle(K, y, C=2.0, epsilon=0.05)
        assert model.dual_objective == pytest.approx(oracle, abs=1e-4)

    def test_monotone_dual_descent(self, rng):
        # objective after convergence is never above an early-stopped run
        X = rng.normal(0, 1, (25, 2))
        y = np.cos(X[:, 1]) + 0.05 * rng.normal(0, 1, 25)
        partial = svr_fit(X, y, C=5.0, epsilon=0.02, kernel=KernelSpec.rbf(1.0), max_passes=3)
        full = svr_fit(X, y, C=5.0, epsilon=0.02, kernel=KernelSpec.rbf(1.0))
        assert not partial.converged and full.converged
        assert full.dual_objective <= partial.dual_objective + 1e-12

    def test_non_support_point_leaves_predictions_unchanged(self, rng):
        # fixed feature map (no refitted scaling) so the dual optima coincide
        X = rng.normal(0, 1, (20, 2))
        y = np.sin(X[:, 0])
        kw = dict(C=10.0, epsilon=0.2, kernel=KernelSpec.rbf(0.5), tol=1e-8,
                  max_passes=100_000, standardize=False)
        model = svr_fit(X, y, **kw)
        inside = np.abs(svr_predict(model, X) - y) < 0.2 - 1e-3
        assert inside.any(), "test setup should leave some points inside the tube"
        idx = int(np.flatnonzero(inside)[0])
        assert model.beta[idx] == 0.0
        keep = np.arange(20) != idx
        refit = svr_fit(X[keep], y[keep], **kw)
        probe = rng.normal(0, 1, (8, 2))
        np.testing.assert_allclose(
            svr_predict(refit, probe), svr_predict(model, probe), atol=1e-3
        )

    def test_three_point_manual_kernel_sum(self):
        X = np.array([[0.0], [1.0], [2.0]])
        y = np.array([0.0, 1.0, 0.0])
        model = svr_fit(X, y, C=3.0, epsilon=0.01, kernel=KernelSpec.linear(),
                        tol=1e-6, standardize=False)
        manual = np.array([np.dot(model.beta, (X @ x)) for x in X]) + model.b
        np.testing.assert_allclose(svr_predict(model, X), manual, atol=1e-12)

    def test_interpolation_limit_matches_krr(self):
        X = np.linspace(-3, 3, 10)[:, None]
        y = np.sin(X[:, 0])
        krr = krr_fit(X, y, 1e-12, KernelSpec.rbf(0.5))
        svr = svr_fit(X, y, C=1e6, epsilon=0.0, kernel=KernelSpec.rbf(0.5),
                      tol=1e-6, max_passes=200_000)
        probe = np.linspace(-2.5, 2.5, 9)[:, None]
        np.testing.assert_allclose(krr_predict(krr, probe), svr_predict(svr, probe), atol=1e-3)
        np.testing.assert_allclose(svr_predict(svr, X), y, atol=1e-3)

    def test_permutation_invariance(self, rng):
        X = rng.normal(0, 1, (15, 2))
        y = np.sin(X[:, 0])
        perm = rng.permutation(15)
        a = svr_fit(X, y, C=2.0, epsilon=0.1, kernel=KernelSpec.rbf(0.5), tol=1e-6)
        b = svr_fit(X[perm], y[perm], C=2.0, epsilon=0.1, kernel=KernelSpec.rbf(0.5), tol=1e-6)
        probe = rng.normal(0, 1, (5, 2))
        np.testing.assert_allclose(svr_predict(a, probe), svr_predict(b, probe), atol=1e-4)


class TestForecastRecursive:
    def test_horizon_one_equals_predict_on_last_window(self, rng):
        series = rng.normal(0, 1, 60)
        X, y = embed(series, EmbeddingSpec(4))
        model = krr_fit(X, y, 0.1, KernelSpec.rbf(0.5))
        fc = forecast_recursive(model, series, 1, EmbeddingSpec(4))
        assert fc[0] == pytest.approx(float(krr_predict(model, series[-4:][None, :])[0]))

    def test_teacher_forced_count_and_values(self, rng):
        series = rng.normal(0, 1, 50)
        X, y = embed(series, EmbeddingSpec(3))
        model = krr_fit(X, y, 0.5, KernelSpec.linear())
        test = rng.normal(0, 1, 7)
        preds = forecast_recursive(model, series, 99, EmbeddingSpec(3), test_values=test)
        assert len(preds) == 7
        first = krr_predict(model, series[-3:][None, :])[0]
        assert preds[0] == pytest.approx(float(first))

    def test_constant_model_is_flat(self):
        # a model trained on constant targets predicts the constant forever
        X = np.arange(12.0).reshape(6, 2)
        model = svr_fit(X, np.full(6, 2.5), C=1.0, epsilon=0.01, kernel=KernelSpec.rbf(0.1))
        fc = forecast_recursive(model, np.array([1.0, 2.0]), 5, EmbeddingSpec(2))
        np.testing.assert_allclose(fc, 2.5, atol=1e-9)

    def test_history_too_short(self):
        X = np.arange(12.0).reshape(6, 2)
        model = svr_fit(X, np.zeros(6), C=1.0, epsilon=0.1, kernel=KernelSpec.linear())
        with pytest.raises(ValueError, match="shorter than window"):
            forecast_recursive(model, np.array([1.0]), 3, EmbeddingSpec(2))

    def test_bad_horizon(self, rng):
        series = rng.normal(0, 1, 20)
        X, y = embed(series, EmbeddingSpec(2))
        model = krr_fit(X, y, 0.1, KernelSpec.linear())
        with pytest.raises(ValueError, match="horizon"):
            forecast_recursive(model, series, 0, EmbeddingSpec(2))


class TestSerialization:
    def test_krr_round_trip(self, rng):
        X = rng.normal(0, 1, (10, 3))
        y = rng.normal(0, 1, 10)
        model = krr_fit(X, y, 0.2, KernelSpec.rbf(0.4))
        clone = from_json(to_json(model))
        probe = rng.normal(0, 1, (4, 3))
        np.testing.assert_array_equal(krr_predict(clone, probe), krr_predict(model, probe))

    def test_svr_round_trip(self, rng):
        X = rng.normal(0, 1, (10, 2))
        y = np.sin(X[:, 0])
        model = svr_fit(X, y, C=2.0, epsilon=0.05, kernel=KernelSpec.polynomial(2))
        clone = from_json(to_json(model))
        probe = rng.normal(0, 1, (4, 2))
        np.testing.assert_array_equal(svr_predict(clone, probe), svr_predict(model, probe))
        assert clone.converged == model.converged
