import numpy as np
import numpy.testing as npt
import pytest
from scipy.optimize import minimize

from slicedscore import models as M
from slicedscore import objectives as O
from slicedscore import training as T


PREC = np.array([[2.0, 0.5], [0.5, 1.0]])


def params_equal(a, b):
    return all(np.array_equal(a[k], b[k]) for k in a)


class TestTrain:
    def test_one_dimensional_precision_recovery(self):
        data = M.GaussianModel.standard(1).sample(20000, 42)
        model = M.GaussianModel.from_precision([0.0], [[0.4]])
        cfg = T.TrainConfig(objective="ssm_vr", steps=5000, seed=1, patience=None, eval_every=250)
        report = T.train(model, data, cfg)
        assert abs(report.final_model.precision()[0, 0] - 1.0) <= 0.05

    def test_zero_learning_rate_leaves_parameters_bitwise(self):
        data = np.random.default_rng(0).normal(size=(500, 2))
        model = M.GaussianModel.standard(2)
        cfg = T.TrainConfig(objective="ssm_vr", learning_rate=0.0, steps=8, patience=None)
        report = T.train(model, data, cfg)
        assert params_equal(report.final_model.param_arrays(), model.param_arrays())

    def test_seeded_determinism_end_to_end(self):
        data = np.random.default_rng(1).normal(size=(3000, 2))
        model = M.GaussianModel.standard(2)
        cfg = T.TrainConfig(objective="ssm", steps=300, seed=5, eval_every=50)
        r1, r2 = T.train(model, data, cfg), T.train(model, data, cfg)
        assert r1.curve == r2.curve
        assert params_equal(r1.final_model.param_arrays(), r2.final_model.param_arrays())
        assert r1.backward_passes == r2.backward_passes

    def test_divergence_guard_reports_step(self):
        data = np.random.default_rng(2).normal(size=(1000, 2))
        mlp = M.MlpEnergy.init(2, hidden=(16,), seed=0)
        cfg = T.TrainConfig(objective="ssm_vr", optimizer="sgd", learning_rate=1e10,
                            steps=50, patience=None, eval_every=5)
        with np.errstate(all="ignore"), pytest.raises(T.TrainingDiverged) as err:
            T.train(mlp, data, cfg)
        assert 0 <= err.value.step < 50

    def test_two_dimensional_sm_and_ssm_vr_both_recover(self):
        generator = M.GaussianModel.from_precision([0.0, 0.0], PREC)
        data = generator.sample(50000, 7)
        model = M.GaussianModel.standard(2)
        for objective in ("sm_exact", "ssm_vr"):
            cfg = T.TrainConfig(objective=objective, steps=4000, seed=3, patience=None, eval_every=500)
            report = T.train(model, data, cfg)
            err = np.linalg.norm(report.final_model.precision() - PREC)
            assert err <= 0.1, (objective, err)

    def test_early_stopping_respects_patience(self):
        data = np.random.default_rng(3).normal(size=(2000, 1))
        model = M.GaussianModel.standard(1)
        cfg = T.TrainConfig(objective="ssm_vr", steps=4000, seed=4, patience=3, eval_every=10)
        report = T.train(model, data, cfg)
        assert report.stopped_at < 4000
        assert len(report.curve) <= 4000

    def test_projection_metadata_recorded(self):
        data = np.random.default_rng(4).normal(size=(500, 1))
        report = T.train(M.GaussianModel.standard(1), data,
                         T.TrainConfig(steps=5, patience=None))
        assert report.metadata["projection_resampling"] == "per-step"

    def test_dsm_objective_requires_sigma(self):
        with pytest.raises(ValueError, match="dsm_sigma"):
            T.TrainConfig(objective="dsm")

    def test_invalid_batch_size_rejected(self):
        with pytest.raises(ValueError):
            T.TrainConfig(batch_size=0)

    def test_report_serialization(self, tmp_path):
        data = np.random.default_rng(5).normal(size=(400, 1))
        report = T.train(M.GaussianModel.standard(1), data,
                         T.TrainConfig(steps=20, eval_every=5, patience=None))
        doc = report.to_json()
        assert '"projection_resampling"' in doc
        csv_path = tmp_path / "curve.csv"
        report.curve_to_csv(csv_path)
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "step,train,val"
        assert len(lines) == len(report.curve) + 1


class TestOptimizers:
    def test_sgd_step_decreases_loss_for_small_rate(self):
        # quadratic objective in the Gaussian parameters on a fixed batch
        data = np.random.default_rng(6).normal(size=(200, 2)) * 2.0
        model = M.GaussianModel.standard(2)
        blk = O.ProjectionSampler("rademacher", 2, seed=1).sample(200, 1)

        def loss_and_grads(m):
            from slicedscore import autodiff as ad

            tape = ad.Tape()
            fld = m.score_field(tape)
            est = O.ssm_vr(fld, data, blk)
            names = list(fld.params)
            grads = ad.grad(est.value_tensor, [fld.params[k] for k in names])
            return est.value, {k: g.values for k, g in zip(names, grads)}

        loss0, grads = loss_and_grads(model)
        stepped = model.with_param_arrays(T.Sgd(1e-3).step(model.param_arrays(), grads))
        loss1, _ = loss_and_grads(stepped)
        assert loss1 < loss0

    def test_adam_moments_give_invariant_first_step_scale(self):
        params = {"w": np.array([1.0, -2.0])}
        grads = {"w": np.array([100.0, -0.001])}
        new = T.Adam(lr=0.1).step(params, grads)
        # first Adam step moves every coordinate by ~lr regardless of scale
        npt.assert_allclose(np.abs(new["w"] - params["w"]), 0.1, rtol=1e-4)


class TestFitKefAlpha:
    @pytest.fixture
    def kef(self):
        rng = np.random.default_rng(8)
        return M.KefModel(inducing_points=rng.normal(size=(5, 2)), alpha=np.zeros(5))

    @pytest.fixture
    def batch_and_block(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(300, 2))
        blk = O.ProjectionSampler("rademacher", 2, seed=10).sample(300, 2)
        return x, blk

    def test_requires_positive_ridge(self, kef, batch_and_block):
        with pytest.raises(ValueError):
            T.fit_kef_alpha(kef, batch_and_block[0], batch_and_block[1], 0.0)

    def test_large_ridge_dominates(self, kef, batch_and_block):
        # alpha = -(G + lam I)^{-1} b implies ||alpha|| <= ||b|| / lam;
        # at huge lam, alpha ~ -b/lam recovers b for the bound
        x, blk = batch_and_block
        alpha_small = T.fit_kef_alpha(kef, x, blk, 1e6)
        alpha_tiny = T.fit_kef_alpha(kef, x, blk, 1e9)
        b_norm = np.linalg.norm(1e9 * alpha_tiny)
        assert np.linalg.norm(alpha_small) <= b_norm / 1e6 * (1 + 1e-6)
        assert np.linalg.norm(alpha_tiny) <= np.linalg.norm(alpha_small)

    def test_degenerate_inducing_points_raise_singular_error(self):
        kef = M.KefModel(inducing_points=np.zeros((3, 2)), alpha=np.zeros(3))
        x = np.random.default_rng(11).normal(size=(50, 2))
        blk = O.ProjectionSampler("rademacher", 2, seed=1).sample(50, 1)
        with pytest.raises(np.linalg.LinAlgError, match="singular"):
            T.fit_kef_alpha(kef, x, blk, 1e-18)

    def test_single_inducing_point_scalar_solve(self):
        kef = M.KefModel(inducing_points=np.array([[0.4]]), alpha=np.zeros(1))
        x = np.array([[0.1], [0.9]])
        v = np.ones((2, 1, 1))
        lam = 0.05
        grad_proj = kef.kernel_grad_proj(x, v[:, 0, :])
        hess_quad = kef.kernel_hess_quad(x, v[:, 0, :])
        base_proj = np.sum(v[:, 0, :] * kef.base_score(x), axis=1)
        g = np.mean(grad_proj[:, 0] ** 2)
        b = np.mean(hess_quad[:, 0] + base_proj * grad_proj[:, 0])
        expected = -b / (g + lam)
        alpha = T.fit_kef_alpha(kef, x, v, lam)
        npt.assert_allclose(alpha, [expected], rtol=1e-12)

    def test_matches_brute_force_quadratic_minimizer(self, kef, batch_and_block):
        x, blk = batch_and_block
        lam = 0.01
        alpha_closed = T.fit_kef_alpha(kef, x, blk, lam)

        def ridge_objective(a):
            est = O.ssm(kef.with_alpha(a).score_field(), x, blk)
            return est.value + 0.5 * lam * np.sum(a**2)

        res = minimize(ridge_objective, np.zeros(5), method="BFGS", options={"gtol": 1e-12})
        npt.assert_allclose(alpha_closed, res.x, atol=1e-6)

    def test_beats_random_probes(self, kef, batch_and_block):
        x, blk = batch_and_block
        lam = 0.01
        alpha_closed = T.fit_kef_alpha(kef, x, blk, lam)

        def ridge_objective(a):
            est = O.ssm(kef.with_alpha(a).score_field(), x, blk)
            return est.value + 0.5 * lam * np.sum(a**2)

        base = ridge_objective(alpha_closed)
        rng = np.random.default_rng(12)
        for _ in range(25):
            assert ridge_objective(alpha_closed + 0.5 * rng.normal(size=5)) >= base


class TestEvaluate:
    def test_sliced_fisher_zero_at_truth(self):
        gen = M.GaussianModel.from_precision([0.0, 0.0], PREC)
        batch = gen.sample(2000, 13)
        val = T.evaluate(gen, batch, "sliced_fisher_exact", data_score=gen.score)
        assert val == 0.0

    def test_deterministic(self):
        gen = M.GaussianModel.standard(2)
        batch = gen.sample(100, 14)
        a = T.evaluate(gen, batch, "ssm_vr", seed=3)
        b = T.evaluate(gen, batch, "ssm_vr", seed=3)
        assert a == b

    def test_training_improves_held_out_loss(self):
        gen = M.GaussianModel.from_precision([0.0, 0.0], PREC)
        data = gen.sample(20000, 15)
        held_out = gen.sample(4000, 16)
        init = M.GaussianModel.from_precision([1.0, -1.0], 0.3 * np.eye(2))
        report = T.train(init, data, T.TrainConfig(objective="ssm_vr", steps=2500, seed=6,
                                                   patience=None, eval_every=250))
        assert T.evaluate(report.final_model, held_out, "sm_exact") < T.evaluate(init, held_out, "sm_exact")

    def test_unknown_metric_rejected(self):
        with pytest.raises(ValueError):
            T.evaluate(M.GaussianModel.standard(1), np.zeros((2, 1)), "nats")
