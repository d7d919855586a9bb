import json

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_diff
from slicedscore import models as M
from slicedscore.autodiff import ShapeMismatch


PREC = np.array([[2.0, 0.5], [0.5, 1.0]])


@pytest.fixture
def gaussian2d():
    return M.GaussianModel.from_precision([0.3, -0.2], PREC)


@pytest.fixture
def kef2d():
    rng = np.random.default_rng(11)
    return M.KefModel(inducing_points=rng.normal(size=(4, 2)), alpha=0.4 * rng.normal(size=4))


class TestGaussianModel:
    def test_log_density_at_center_is_zero(self):
        g = M.GaussianModel.standard(2)
        assert g.log_unnorm(np.zeros(2)) == 0.0

    def test_standard_score_is_negated_input(self):
        g = M.GaussianModel.standard(3)
        x = np.random.default_rng(0).normal(size=(5, 3))
        npt.assert_array_equal(g.score_field().value(x), -x)

    def test_precision_roundtrip(self, gaussian2d):
        npt.assert_allclose(gaussian2d.precision(), PREC, atol=1e-14)

    def test_analytic_and_autodiff_paths_agree(self, gaussian2d):
        rng = np.random.default_rng(1)
        x, v, w = (rng.normal(size=(6, 2)) for _ in range(3))
        fa = gaussian2d.score_field()
        fd = gaussian2d.score_field(method="autodiff")
        npt.assert_allclose(fa.value(x), fd.value(x), atol=1e-10)
        npt.assert_allclose(
            fa.directional_jacobian(x, v), fd.directional_jacobian(x, v), atol=1e-10
        )
        npt.assert_allclose(
            fa.bind(x).jacobian_trace().values, fd.bind(x).jacobian_trace().values, atol=1e-10
        )
        npt.assert_allclose(fa.value(x), (gaussian2d.mean - x) @ PREC, atol=1e-12)

    def test_hessian_constant(self, gaussian2d):
        npt.assert_allclose(gaussian2d.hessian(), -PREC, atol=1e-14)

    def test_sampling_deterministic(self, gaussian2d):
        npt.assert_array_equal(gaussian2d.sample(100, 7), gaussian2d.sample(100, 7))

    def test_sample_mean_clt_bound(self):
        g = M.GaussianModel.standard(2)
        x = M.sample_data(g, 10**5, seed=3)
        assert np.all(np.abs(x.mean(axis=0)) <= 4 / np.sqrt(10**5))

    def test_sample_covariance_matches_inverse_precision(self, gaussian2d):
        x = gaussian2d.sample(2 * 10**5, 5)
        npt.assert_allclose(np.cov(x.T), np.linalg.inv(PREC), atol=0.02)

    def test_dimension_mismatch_raises(self, gaussian2d):
        with pytest.raises(ShapeMismatch):
            gaussian2d.log_unnorm(np.zeros(3))


class TestKefModel:
    def test_zero_alpha_reduces_to_base_measure(self, kef2d):
        k0 = kef2d.with_alpha(np.zeros(4))
        x = np.random.default_rng(2).normal(size=(5, 2))
        npt.assert_array_equal(k0.score_field().value(x), -x / k0.base_scale**2)
        npt.assert_allclose(k0.log_unnorm(x), k0.log_base(x), atol=1e-14)

    def test_analytic_field_matches_autodiff(self, kef2d):
        rng = np.random.default_rng(3)
        x, v = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
        fa = kef2d.score_field()
        fd = kef2d.score_field(method="autodiff")
        npt.assert_allclose(fa.value(x), fd.value(x), atol=1e-10)
        npt.assert_allclose(
            fa.directional_jacobian(x, v), fd.directional_jacobian(x, v), atol=1e-10
        )
        npt.assert_allclose(
            fa.bind(x).jacobian_trace().values, fd.bind(x).jacobian_trace().values, atol=1e-10
        )

    def test_score_1d_matches_finite_differences(self):
        kef = M.KefModel(inducing_points=np.array([[0.5]]), alpha=np.array([0.8]))
        x0 = np.array([0.2])
        fd = central_diff(lambda x: kef.log_unnorm(x), x0, eps=1e-5)
        score = kef.score_field().value(x0)
        assert abs(score[0] - fd[0]) / abs(fd[0]) <= 1e-6

    def test_kernel_gradient_vanishes_at_coincidence(self, kef2d):
        z = kef2d.inducing_points[0]
        grad_proj, _ = M.kernel_derivatives(kef2d, z, z, np.array([1.0, -2.0]))
        assert grad_proj == 0.0

    def test_single_kernel_hessian_at_coincidence(self):
        rho, sig = 0.7, 1.3
        kef = M.KefModel(
            inducing_points=np.zeros((1, 2)),
            alpha=np.ones(1),
            bandwidths=np.array([sig]),
            weights=np.array([rho]),
        )
        v = np.array([1.0, 2.0])
        _, hess_quad = M.kernel_derivatives(kef, np.zeros(2), np.zeros(2), v)
        npt.assert_allclose(hess_quad, -rho * np.sum(v**2) / sig**2, rtol=1e-14)

    def test_kernel_derivatives_match_autodiff(self, kef2d):
        # isolate the kernel part by subtracting the analytic base-measure term
        rng = np.random.default_rng(4)
        x, z, v = rng.normal(size=2), kef2d.inducing_points[1], rng.normal(size=2)
        probe = M.KefModel(
            inducing_points=z[None, :],
            alpha=np.ones(1),
            bandwidths=kef2d.bandwidths,
            weights=kef2d.weights,
            base_scale=kef2d.base_scale,
        )
        fld = probe.score_field(method="autodiff")
        score = fld.value(x)
        base_score = -x / probe.base_scale**2
        grad_proj, hess_quad = M.kernel_derivatives(kef2d, x, z, v)
        npt.assert_allclose(v @ (score - base_score), grad_proj, atol=1e-10)
        dir_jac = fld.directional_jacobian(x, v)
        base_dir = -v / probe.base_scale**2
        npt.assert_allclose(v @ (dir_jac - base_dir), hess_quad, atol=1e-10)

    def test_invalid_hyperparameters_rejected(self):
        with pytest.raises(ValueError):
            M.KefModel(np.zeros((1, 1)), np.zeros(1), weights=np.array([-1.0, 1, 1]))

    def test_feature_net_field_matches_finite_differences(self):
        kef = M.KefModel(
            inducing_points=np.random.default_rng(5).normal(size=(3, 2)),
            alpha=np.array([0.3, -0.2, 0.5]),
            feature_net=M.KefFeatureNet.init(2, seed=6),
        )
        x0 = np.array([0.1, -0.4])
        fd = central_diff(lambda x: kef.log_unnorm(x), x0, eps=1e-6)
        npt.assert_allclose(kef.score_field(method="autodiff").value(x0), fd, atol=1e-7)

    def test_closed_forms_require_plain_kernel(self):
        kef = M.KefModel(np.zeros((1, 2)), np.ones(1), feature_net=M.KefFeatureNet.init(2))
        with pytest.raises(ValueError, match="feature_net"):
            kef.kernel_grad_proj(np.zeros((1, 2)), np.ones((1, 2)))


class TestMlpEnergy:
    def test_value_matches_independent_forward_pass(self):
        mlp = M.MlpEnergy.init(3, hidden=(8, 8), seed=12)
        x = np.random.default_rng(13).normal(size=(4, 3))

        def by_hand(xb):
            h = xb
            for i in range(2):
                h = np.logaddexp(0.0, h @ mlp.layers[f"w{i}"].T + mlp.layers[f"b{i}"])
            return (h @ mlp.layers["w2"].T + mlp.layers["b2"])[:, 0]

        npt.assert_array_equal(mlp.log_unnorm(x), by_hand(x))

    def test_score_matches_finite_differences(self):
        mlp = M.MlpEnergy.init(3, hidden=(8,), seed=14)
        x0 = np.random.default_rng(15).normal(size=3)
        fd = central_diff(lambda x: mlp.log_unnorm(x), x0, eps=1e-5)
        npt.assert_allclose(mlp.score_field().value(x0), fd, rtol=1e-7, atol=1e-10)


class TestScoreFieldSymmetry:
    # model scores are gradients, so the directional Jacobian is symmetric:
    # v' J(x) w == w' J(x) v; a free-form score network is exempt.
    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10**6))
    def test_model_scores_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(1, 2))
        v, w = rng.normal(size=(1, 2)), rng.normal(size=(1, 2))
        models = [
            M.GaussianModel.from_precision(rng.normal(size=2), PREC),
            M.MlpEnergy.init(2, hidden=(8,), seed=seed % 100),
            M.KefModel(inducing_points=rng.normal(size=(3, 2)), alpha=0.3 * rng.normal(size=3)),
        ]
        for model in models:
            fld = model.score_field()
            lhs = float(np.sum(v * fld.directional_jacobian(x, w)))
            rhs = float(np.sum(w * fld.directional_jacobian(x, v)))
            npt.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-11)


class TestScoreNetwork:
    def test_value_is_raw_network_output(self):
        net = M.ScoreNetwork.init(2, hidden=(8,), seed=16)
        x = np.random.default_rng(17).normal(size=(5, 2))
        npt.assert_array_equal(net.score_field().value(x), net.forward(x))

    def test_output_dimension_matches_input(self):
        net = M.ScoreNetwork.init(3, hidden=(4, 4), seed=0)
        assert net.forward(np.zeros((2, 3))).shape == (2, 3)


class TestReparamGaussian:
    def test_sampling_rule_and_determinism(self):
        rp = M.ReparamGaussian(np.array([1.0, -1.0]), np.array([0.5, -0.3]))
        x1, eps = rp.sample(50, 9, return_eps=True)
        npt.assert_array_equal(x1, rp.mean + np.exp(rp.log_scales) * eps)
        npt.assert_array_equal(x1, rp.sample(50, 9))

    def test_sample_variance_within_tolerance(self):
        rp = M.ReparamGaussian(np.zeros(2), np.zeros(2))
        x = M.sample_data(rp, 10**5, seed=21)
        npt.assert_allclose(np.var(x, axis=0), 1.0, rtol=0.05)

    def test_entropy_formula(self):
        rp = M.ReparamGaussian(np.array([3.0]), np.array([0.7]))
        assert rp.entropy() == pytest.approx(0.7 + 0.5 * (1 + np.log(2 * np.pi)))

    def test_empirical_covariance_converges(self):
        rp = M.ReparamGaussian(np.array([0.0, 1.0]), np.array([0.4, -0.6]))
        x = rp.sample(2 * 10**5, 22)
        npt.assert_allclose(np.cov(x.T), np.diag(np.exp(2 * rp.log_scales)), atol=0.02)

    def test_marginal_gaussian_equivalence(self):
        rp = M.ReparamGaussian(np.array([0.5, -0.5]), np.array([0.2, 0.1]))
        x = np.random.default_rng(23).normal(size=(6, 2))
        npt.assert_allclose(rp.as_gaussian().score(x), rp.marginal_score(x), atol=1e-12)


class TestSerialization:
    def test_roundtrip_exact(self, gaussian2d, kef2d):
        models = [
            gaussian2d,
            kef2d,
            M.MlpEnergy.init(2, hidden=(4,), seed=1),
            M.ScoreNetwork.init(2, hidden=(4,), seed=2),
            M.ReparamGaussian(np.array([1.0]), np.array([-0.2])),
        ]
        for model in models:
            doc = M.model_to_json(model)
            schema = json.loads(doc)
            assert set(schema) == {"model", "params", "dim"}
            clone = M.model_from_json(doc)
            assert type(clone) is type(model)
            npt.assert_array_equal(
                clone.score_field().value(np.zeros((1, model.dim)) + 0.3)
                if not isinstance(model, M.ReparamGaussian)
                else clone.mean,
                model.score_field().value(np.zeros((1, model.dim)) + 0.3)
                if not isinstance(model, M.ReparamGaussian)
                else model.mean,
            )

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown model kind"):
            M.model_from_json('{"model": "mystery", "params": {}, "dim": 1}')


class TestSampleData:
    def test_requires_positive_count(self):
        with pytest.raises(ValueError):
            M.sample_data(M.GaussianModel.standard(1), 0, seed=0)

    def test_log_unnormalized_density_helper(self, gaussian2d):
        x = np.array([0.1, 0.2])
        assert M.log_unnormalized_density(gaussian2d, x) == gaussian2d.log_unnorm(x)
