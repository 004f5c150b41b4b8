from __future__ import annotations

import math

import numpy as np
import pytest

from cubitopo.grid import GridShape, LabelMap, ProbSegmentation
from cubitopo.metrics import (
    TopoReport,
    aggregate,
    betti_error,
    betti_oracle,
    cca_baseline,
    dice,
    euler_characteristic,
    evaluate_case,
    gdice,
    hausdorff,
)
from cubitopo.phantom import shortaxis_prior


def labmap(arr, K=0):
    arr = np.asarray(arr)
    return LabelMap(GridShape(arr.shape), arr, K=K)


class TestBettiOracle:
    def test_ring(self):
        ring = np.ones((3, 3), dtype=bool)
        ring[1, 1] = False
        assert betti_oracle(ring, "V") == (1, 1)

    def test_hollow_cube(self):
        cube = np.ones((3, 3, 3), dtype=bool)
        cube[1, 1, 1] = False
        assert betti_oracle(cube, "V") == (1, 0, 1)

    def test_empty(self):
        assert betti_oracle(np.zeros((4, 4), dtype=bool), "V") == (0, 0)
        assert betti_oracle(np.zeros((3, 3, 3), dtype=bool), "T") == (0, 0, 0)

    def test_diagonal_pair(self):
        m = np.eye(2, dtype=bool)
        assert betti_oracle(m, "V") == (2, 0)
        assert betti_oracle(m, "T") == (1, 0)

    def test_solid_torus(self):
        m = np.zeros((3, 5, 5), dtype=bool)
        m[1, :, :] = True
        m[1, 1:4, 1:4] = True
        m[1, 2, 2] = False
        assert betti_oracle(m, "V") == (1, 1, 0)

    def test_euler_characteristic_values(self):
        ring = np.ones((3, 3), dtype=bool)
        ring[1, 1] = False
        assert euler_characteristic(ring, "V") == 0
        assert euler_characteristic(np.ones((2, 2), dtype=bool), "V") == 1


class TestBettiError:
    def make_clean(self):
        lab = np.ones((24, 24), dtype=np.int64)
        yy, xx = np.mgrid[0:24, 0:24]
        d = np.hypot(yy - 12, xx - 13)
        lab[d <= 6] = 3
        lab[d <= 3] = 4
        band = (d > 6) & (d <= 9) & (xx < 10)
        lab[band] = 2
        return labmap(lab, K=4)

    def test_clean_is_zero(self):
        be, _ = betti_error(self.make_clean(), shortaxis_prior())
        assert be == 0

    def test_extra_component_costs_three(self):
        lab = np.array(self.make_clean().labels)
        lab[1, 1] = 2  # remote rv speck
        be, detail = betti_error(labmap(lab, K=4), shortaxis_prior())
        assert be == 3
        assert detail["rv"][0] == (2, 0)
        assert detail["rv|my"][0][0] == 2
        assert detail["rv|lv"][0][0] == 3

    def test_missing_subset_rejected(self):
        with pytest.raises(ValueError, match="missing"):
            betti_error(self.make_clean(), shortaxis_prior().restrict(1))


class TestDice:
    def test_identical(self):
        lab = labmap(np.array([[1, 2], [2, 2]]), K=2)
        assert dice(lab, lab, 2) == 1.0
        assert gdice(lab, lab) == 1.0

    def test_disjoint(self):
        a = labmap(np.array([[2, 1], [1, 1]]), K=2)
        b = labmap(np.array([[1, 2], [1, 1]]), K=2)
        assert dice(a, b, 2) == 0.0

    def test_half_overlap(self):
        a = labmap(np.array([[2, 2, 1, 1]]), K=2)
        b = labmap(np.array([[1, 2, 2, 1]]), K=2)
        assert dice(a, b, 2) == 0.5

    def test_both_empty_is_one(self):
        a = labmap(np.array([[1, 1]]), K=3)
        assert dice(a, a, 3) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        a = labmap(rng.integers(1, 4, (6, 6)), K=3)
        b = labmap(rng.integers(1, 4, (6, 6)), K=3)
        for c in (2, 3):
            assert dice(a, b, c) == dice(b, a, c)
        assert gdice(a, b) == gdice(b, a)

    def test_gdice_bounds(self):
        rng = np.random.default_rng(1)
        a = labmap(rng.integers(1, 4, (8, 8)), K=3)
        b = labmap(rng.integers(1, 4, (8, 8)), K=3)
        assert 0.0 <= gdice(a, b) <= 1.0


class TestHausdorff:
    def test_identical_zero(self):
        lab = labmap(np.array([[1, 2, 2], [1, 1, 1]]), K=2)
        assert hausdorff(lab, lab, 2) == 0.0

    def test_three_voxels_apart_with_spacing(self):
        a = np.ones((1, 5), dtype=np.int64)
        b = np.ones((1, 5), dtype=np.int64)
        a[0, 0] = 2
        b[0, 3] = 2
        d = hausdorff(labmap(a, K=2), labmap(b, K=2), 2, spacing=(1.25, 1.25))
        assert d == pytest.approx(3.75)

    def test_empty_mask_is_undefined_sentinel(self):
        a = labmap(np.ones((2, 2), dtype=np.int64), K=2)
        b = labmap(np.array([[1, 2], [1, 1]]), K=2)
        assert math.isinf(hausdorff(a, b, 2))

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a = labmap(rng.integers(1, 3, (7, 7)), K=2)
        b = labmap(rng.integers(1, 3, (7, 7)), K=2)
        assert hausdorff(a, b, 2) == hausdorff(b, a, 2)


class TestCcaBaseline:
    def seg(self, lab):
        lab = labmap(lab, K=3)
        from cubitopo.grid import one_hot

        oh = one_hot(lab)
        probs = np.clip(oh.probs, 0.01, None)
        probs /= probs.sum(axis=0)
        return ProbSegmentation(oh.shape, probs)

    def test_single_components_unchanged(self):
        lab = np.ones((6, 6), dtype=np.int64)
        lab[1:3, 1:3] = 2
        lab[4:6, 4:6] = 3
        out = cca_baseline(self.seg(lab))
        np.testing.assert_array_equal(out.labels, lab)

    def test_small_component_removed(self):
        lab = np.ones((8, 8), dtype=np.int64)
        lab[0:4, 0:4] = 2  # size 16
        lab[6, 6] = 2  # size 1 speck
        out = cca_baseline(self.seg(lab))
        assert out.labels[6, 6] == 1
        assert (out.labels[0:4, 0:4] == 2).all()

    def test_loops_unchanged(self):
        lab = np.ones((5, 5), dtype=np.int64)
        lab[1:4, 1:4] = 2
        lab[2, 2] = 1  # a loop-type error: CCA cannot touch it
        out = cca_baseline(self.seg(lab))
        np.testing.assert_array_equal(out.labels, lab)

    def test_never_leaves_multiple_components(self):
        rng = np.random.default_rng(3)
        from scipy import ndimage

        for _ in range(10):
            lab = rng.integers(1, 4, (12, 12))
            out = cca_baseline(self.seg(lab))
            for c in (2, 3):
                _, n = ndimage.label(out.labels == c)
                assert n <= 1


class TestAggregate:
    def rep(self, be, ts, g=0.9):
        return TopoReport(be, ts, {2: 0.9}, g, {2: 1.0}, {}, {})

    def test_all_success(self):
        summary = aggregate([self.rep(0, 1) for _ in range(40)])
        assert summary["TS"]["rho"] == 100.0
        assert summary["TS"]["sigma_rho"] == 0.0

    def test_three_quarters(self):
        summary = aggregate([self.rep(0, 1), self.rep(0, 1), self.rep(0, 1), self.rep(2, 0)])
        assert summary["TS"]["rho"] == 75.0
        assert summary["TS"]["sigma_rho"] == pytest.approx(100 * math.sqrt(0.75 * 0.25 / 4))

    def test_median(self):
        summary = aggregate([self.rep(0, 1), self.rep(1, 0), self.rep(5, 0)])
        assert summary["BE"]["P50"] == 1.0
        assert summary["BE"]["P100"] == 5.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_undefined_hdd_skipped(self):
        reps = [self.rep(0, 1), TopoReport(0, 1, {2: 1.0}, 1.0, {2: math.inf}, {}, {})]
        summary = aggregate(reps)
        assert summary["HDD"]["2"]["undefined"] == 1


class TestEvaluateCase:
    def test_identical_prediction(self):
        lab = TestBettiError().make_clean()
        rep = evaluate_case(lab, lab, shortaxis_prior())
        assert rep.BE == 0 and rep.TS == 1 and rep.gdsc == 1.0
        assert all(v == 0.0 for v in rep.hdd.values())
        assert rep.betti_pred["my"] == (1, 1)

    def test_ts_iff_be_zero(self):
        clean = TestBettiError().make_clean()
        lab = np.array(clean.labels)
        lab[1, 1] = 2
        rep = evaluate_case(labmap(lab, K=4), clean, shortaxis_prior())
        assert rep.BE == 3 and rep.TS == 0
