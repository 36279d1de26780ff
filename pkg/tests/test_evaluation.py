import numpy as np
import pytest

from stfusion.data import SampleSet, prepare_dataset, synth_traffic
from stfusion.errors import UndefinedMetricError
from stfusion.evaluation import build_report, evaluate, mae, mape, rmse
from stfusion.graphs import FusionLayout, fusion_graph
from stfusion.model import ModelConfig
from stfusion.training import init_params


class TestPointMetrics:
    def test_perfect(self):
        assert mae(np.ones(4), np.ones(4)) == 0
        assert rmse(np.ones(4), np.ones(4)) == 0

    def test_mae_rmse_example(self):
        pred = np.array([3.0, -1.0])
        target = np.zeros(2)
        assert mae(pred, target) == 2
        assert rmse(pred, target) == pytest.approx(np.sqrt(5))

    def test_single_error(self):
        assert mae(np.array([4.0]), np.zeros(1)) == 4
        assert rmse(np.array([4.0]), np.zeros(1)) == 4

    def test_mape_examples(self):
        assert mape(np.array([10.0]), np.array([10.0])) == 0
        assert mape(np.array([11.0]), np.array([10.0])) == pytest.approx(10.0)
        # zero targets excluded at epsilon 0
        assert mape(np.array([5.0, 10.0]), np.array([0.0, 10.0])) == 0

    def test_mape_all_masked(self):
        with pytest.raises(UndefinedMetricError):
            mape(np.ones(3), np.zeros(3))

    def test_empty_after_mask(self):
        with pytest.raises(UndefinedMetricError):
            mae(np.ones(3), np.ones(3), mask=np.zeros(3, dtype=bool))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mae(np.ones(3), np.ones(4))

    def test_masking_monotonicity(self):
        rng = np.random.default_rng(0)
        target = rng.normal(size=200)
        counts = [np.count_nonzero(np.abs(target) > e)
                  for e in (0.0, 0.1, 0.5, 1.0)]
        assert counts == sorted(counts, reverse=True)

    def test_observation_mask(self):
        pred = np.array([1.0, 100.0])
        target = np.array([1.0, 0.0])
        keep = np.array([True, False])
        assert mae(pred, target, mask=keep) == 0


class TestReport:
    def make(self, seed=1, count=6, horizons=4, nodes=3):
        rng = np.random.default_rng(seed)
        target = rng.uniform(1, 10, size=(count, horizons, nodes, 1))
        pred = target + rng.normal(0, 0.5, size=target.shape)
        return pred, target

    def test_pooling_identity(self):
        pred, target = self.make()
        rep = build_report(pred, target)
        # equal element counts per horizon: pooled = mean of per-horizon values
        assert rep.overall_mae == pytest.approx(rep.horizon_mae.mean())
        mse = rep.horizon_rmse ** 2
        assert rep.overall_rmse == pytest.approx(np.sqrt(mse.mean()))

    def test_per_horizon_shape(self):
        pred, target = self.make(horizons=12)
        rep = build_report(pred, target)
        assert rep.horizons == 12
        assert rep.horizon_mae.shape == (12,)
        assert rep.sample_count == 6

    def test_rmse_dominates_mae(self):
        pred, target = self.make(seed=3)
        rep = build_report(pred, target)
        assert rep.overall_rmse >= rep.overall_mae >= 0

    def test_csv_and_text(self, tmp_path):
        pred, target = self.make()
        rep = build_report(pred, target)
        path = tmp_path / "report.csv"
        rep.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "horizon,mae,mape,rmse"
        assert lines[-1].startswith("overall,")
        assert len(lines) == rep.horizons + 2
        text = rep.render_text()
        assert "overall" in text and "MAPE" in text

    def test_masked_out_count(self):
        pred = np.ones((1, 2, 2, 1))
        target = np.ones((1, 2, 2, 1))
        target[0, 0, 0, 0] = 0
        rep = build_report(pred, target)
        assert rep.masked_out == 1


class TestEvaluate:
    def setup_problem(self):
        sig, _, sg = synth_traffic(5, 2, 80, 0.1, seed=2)
        bundle = prepare_dataset(sig, 6, 6)
        cfg = ModelConfig(window=3, glu_depth=1, channels=4, layers=1,
                          history=6, horizon=6, out_hidden=8)
        adj = fusion_graph(sg, np.zeros_like(sg), FusionLayout(3)).astype(np.float32)
        params = init_params(cfg, 0)
        return bundle, cfg, adj, params

    def test_oracle_hook_gives_zero_metrics(self):
        bundle, cfg, adj, params = self.setup_problem()
        rep = evaluate(params, bundle.test, adj, bundle.normalizer, cfg,
                       predict_fn=lambda inputs: bundle.test.targets)
        assert rep.overall_mae == 0
        assert rep.overall_rmse == 0
        assert np.all(rep.horizon_mape == 0)

    def test_sample_order_invariance(self):
        bundle, cfg, adj, params = self.setup_problem()
        rep1 = evaluate(params, bundle.test, adj, bundle.normalizer, cfg)
        perm = np.random.default_rng(0).permutation(len(bundle.test))
        shuffled = SampleSet(bundle.test.inputs[perm], bundle.test.targets[perm])
        rep2 = evaluate(params, shuffled, adj, bundle.normalizer, cfg)
        assert rep1.overall_mae == pytest.approx(rep2.overall_mae, rel=1e-9)
        assert rep1.overall_rmse == pytest.approx(rep2.overall_rmse, rel=1e-9)

    def test_batch_size_invariance(self):
        bundle, cfg, adj, params = self.setup_problem()
        rep1 = evaluate(params, bundle.test, adj, bundle.normalizer, cfg,
                        batch_size=3)
        rep2 = evaluate(params, bundle.test, adj, bundle.normalizer, cfg,
                        batch_size=100)
        np.testing.assert_allclose(rep1.horizon_mae, rep2.horizon_mae, rtol=1e-6)

    def test_zero_params_predict_training_mean(self):
        bundle, cfg, adj, params = self.setup_problem()
        zeros = {k: np.zeros_like(v) for k, v in params.items()}
        rep = evaluate(zeros, bundle.test, adj, bundle.normalizer, cfg)
        manual = np.abs(bundle.test.targets - bundle.normalizer.mean).mean()
        assert rep.overall_mae == pytest.approx(manual, rel=1e-5)
