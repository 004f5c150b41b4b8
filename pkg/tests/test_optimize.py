from __future__ import annotations

import numpy as np
import pytest

from cubitopo.grid import GridShape, ProbSegmentation
from cubitopo.loss import BettiPrior
from cubitopo.optimize import AdamState, OptimizerConfig, adam_step, post_process, softmax
from cubitopo.phantom import Defect, PhantomSpec, generate


class TestAdam:
    def cfg(self, lr=1e-3):
        return OptimizerConfig(learning_rate=lr)

    def test_zero_gradient_keeps_params(self):
        state = AdamState.init(np.array([1.0, -2.0]), self.cfg())
        new = adam_step(state, np.zeros(2))
        np.testing.assert_array_equal(new.params, state.params)

    def test_first_step_closed_form(self):
        state = AdamState.init(np.zeros(1), self.cfg(lr=1e-3))
        new = adam_step(state, np.ones(1))
        # bias correction makes the first step exactly -lr/(1+eps)
        assert new.params[0] == pytest.approx(-1e-3, rel=1e-6)

    def test_constant_gradient_approaches_sign_step(self):
        state = AdamState.init(np.zeros(1), self.cfg(lr=1e-3))
        for _ in range(400):
            prev = state.params.copy()
            state = adam_step(state, np.full(1, 7.0))
        assert prev[0] - state.params[0] == pytest.approx(1e-3, rel=1e-3)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OptimizerConfig(iterations=0)
        with pytest.raises(ValueError):
            OptimizerConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            OptimizerConfig(adam_beta1=1.0)
        with pytest.raises(ValueError):
            OptimizerConfig(lam=-1.0)


class TestSoftmax:
    def test_simplex(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(4, 5, 5)) * 10
        p = softmax(z)
        np.testing.assert_allclose(p.sum(axis=0), 1.0, atol=1e-12)
        assert np.all(p > 0)


class TestPostProcess:
    def prior2(self):
        return BettiPrior(2, ("bg", "fg"), {(2,): (1, 0)})

    def seg_blob(self, extra=False):
        field = np.full((16, 16), 0.02)
        field[3:8, 3:8] = 0.95
        if extra:
            field[12:14, 12:14] = 0.85
        probs = np.stack([1.0 - field, field])
        return ProbSegmentation(GridShape((16, 16)), probs)

    def test_satisfied_prior_is_a_fixed_point(self):
        seg = self.seg_blob()
        cfg = OptimizerConfig(iterations=10, learning_rate=1e-2, lam=100.0, threads=1)
        final, trace = post_process(seg, self.prior2(), cfg)
        assert max(trace.topo) <= trace.topo[0] + 1e-9
        np.testing.assert_allclose(final.probs, seg.probs, atol=0.05)

    def test_removes_spurious_blob(self):
        seg = self.seg_blob(extra=True)
        cfg = OptimizerConfig(iterations=250, learning_rate=0.1, lam=10.0, threads=1)
        final, trace = post_process(seg, self.prior2(), cfg)
        lab = np.argmax(final.probs, axis=0)
        from cubitopo.metrics import betti_oracle

        assert betti_oracle(lab == 1, "V") == (1, 0)
        assert trace.combined[-1] < trace.combined[0]
        # the topology term improves at the cost of a small similarity rise
        assert trace.topo[-1] < trace.topo[0]
        assert trace.mse[-1] > trace.mse[0]

    def test_huge_lambda_pins_to_initial(self):
        seg = self.seg_blob(extra=True)
        cfg = OptimizerConfig(iterations=30, learning_rate=1e-2, lam=1e9, threads=1)
        final, _ = post_process(seg, self.prior2(), cfg)
        np.testing.assert_allclose(final.probs, seg.probs, atol=1e-3)

    def test_zero_probabilities_rejected_with_hint(self):
        probs = np.stack([np.ones((4, 4)), np.zeros((4, 4))])
        seg = ProbSegmentation(GridShape((4, 4)), probs)
        with pytest.raises(ValueError, match="clamp"):
            post_process(seg, self.prior2(), OptimizerConfig(iterations=1))
        final, trace = post_process(
            seg, self.prior2(), OptimizerConfig(iterations=1, threads=1), clamp=True
        )
        assert len(trace) == 1

    def test_trace_shape_and_simplex(self):
        seg = self.seg_blob()
        cfg = OptimizerConfig(iterations=5, learning_rate=1e-2, threads=1)
        final, trace = post_process(seg, self.prior2(), cfg)
        assert len(trace) == 5
        assert len(trace.ms) == 5
        np.testing.assert_allclose(final.probs.sum(axis=0), 1.0, atol=1e-9)

    def test_seed_determinism(self):
        seg, _, prior = generate(PhantomSpec("shortaxis2d", seed=4, defects=(Defect("extra-component", "rv", 2.0),)))
        cfg = OptimizerConfig(iterations=8, learning_rate=0.05, lam=33.0, seed=7, threads=1)
        f1, t1 = post_process(seg, prior, cfg)
        f2, t2 = post_process(seg, prior, cfg)
        np.testing.assert_array_equal(f1.probs, f2.probs)
        assert t1.topo == t2.topo and t1.combined == t2.combined

    def test_thread_count_does_not_change_output(self):
        seg, _, prior = generate(PhantomSpec("shortaxis2d", seed=5, defects=(Defect("hole-puncture", "my", 1.7),)))
        f1, _ = post_process(seg, prior, OptimizerConfig(iterations=6, learning_rate=0.05, lam=33.0, threads=1))
        f2, _ = post_process(seg, prior, OptimizerConfig(iterations=6, learning_rate=0.05, lam=33.0, threads=2))
        np.testing.assert_array_equal(f1.probs, f2.probs)

    def test_trace_csv_format(self):
        seg = self.seg_blob()
        _, trace = post_process(seg, self.prior2(), OptimizerConfig(iterations=3, threads=1))
        lines = trace.to_csv().strip().split("\n")
        assert lines[0] == "iter,L_topo,L_mse,L_TP,ms"
        assert len(lines) == 4
        assert lines[1].split(",")[0] == "0"

    def test_descent_property_over_phantom_runs(self):
        # the combined loss should end below its start in >= 90% of runs
        from cubitopo.loss import combined_loss

        down = 0
        runs = 10
        for seed in range(runs):
            seg, _, prior = generate(
                PhantomSpec("shortaxis2d", seed=seed, defects=(Defect("extra-component", "rv", 2.0),))
            )
            cfg = OptimizerConfig(iterations=60, learning_rate=0.08, lam=33.0, threads=2)
            final, trace = post_process(seg, prior, cfg)
            end_bd, _ = combined_loss(final, seg, prior, cfg.lam, cfg.construction, threads=2)
            down += end_bd.combined <= trace.combined[0]
        assert down >= 0.9 * runs

    def test_lambda_zero_drains_unwanted_persistence(self):
        # demanding an empty foreground with no similarity leash must
        # strictly shrink the total foreground persistence
        from cubitopo.loss import BettiPrior
        from cubitopo.persistence import barcode_of_field
        from cubitopo.grid import union_field

        seg = self.seg_blob(extra=True)
        prior = BettiPrior(2, ("bg", "fg"), {(2,): (0, 0)})
        cfg = OptimizerConfig(iterations=80, learning_rate=0.1, lam=0.0, threads=1)
        final, _ = post_process(seg, prior, cfg)
        total0 = barcode_of_field(union_field(seg, {2}), "V").persistences.sum()
        total1 = barcode_of_field(union_field(final, {2}), "V").persistences.sum()
        assert total1 < total0
