from __future__ import annotations

import numpy as np
import pytest

from cubitopo.grid import GridShape, LabelMap, ProbSegmentation, one_hot
from cubitopo.loss import BettiPrior, combined_loss, mse_loss, prior_from_json, topo_loss
from cubitopo.phantom import shortaxis_prior, wholeheart_prior


def seg_from(probs, validate=True):
    probs = np.asarray(probs, dtype=np.float64)
    return ProbSegmentation(GridShape(probs.shape[1:]), probs, validate=validate)


def two_class(field):
    field = np.asarray(field, dtype=np.float64)
    return seg_from(np.stack([1.0 - field, field]))


FG_PRIOR = lambda b: BettiPrior(2, ("bg", "fg"), {(2,): b})


def fd_check(seg, prior, grad, construction="V", eps=1e-4, rtol=1e-4):
    g = grad.data
    probs = seg.probs
    for c, i, j in np.argwhere(np.abs(g) > 1e-12):
        pp = np.array(probs)
        pp[c, i, j] += eps
        lp, _ = topo_loss(seg_from(pp, validate=False), prior, construction)
        pm = np.array(probs)
        pm[c, i, j] -= eps
        lm, _ = topo_loss(seg_from(pm, validate=False), prior, construction)
        fd = (lp.total - lm.total) / (2 * eps)
        assert abs(fd - g[c, i, j]) <= rtol * max(1.0, abs(g[c, i, j])), (c, i, j, fd, g[c, i, j])


class TestTopoLoss:
    def test_perfect_one_hot_is_zero(self):
        lab = np.ones((10, 10), dtype=np.int64)
        lab[2:5, 2:5] = 2
        seg = one_hot(LabelMap(GridShape((10, 10)), lab, K=2))
        bd, grad = topo_loss(seg, FG_PRIOR((1, 0)), "V")
        assert bd.total == 0.0
        # only the matched component's birth point keeps pressure (toward
        # probability above 1, which the simplex parameterization caps)
        nz = np.argwhere(grad.data != 0.0)
        assert len(nz) == 1 and grad.data[tuple(nz[0])] == -1.0

    @staticmethod
    def ring_field(dither=0.0):
        field = np.full((5, 5), 0.1)
        field[1:4, 1:4] = 0.9
        field[2, 2] = 0.2
        if dither:  # unique values, topology unchanged: needed for FD checks
            rng = np.random.default_rng(42)
            field += dither * rng.permutation(np.arange(25)).reshape(5, 5)
        return field

    def test_matched_ring_term_and_gradient(self):
        # one loop born at 0.9 (wall) and filled at 0.2 (center): with a
        # demanded loop the term is 1 - 0.7; flipping the demand flips signs
        seg = two_class(self.ring_field())
        bd, grad = topo_loss(seg, FG_PRIOR((1, 1)), "V")
        (B, A, Z) = bd.per_term[("fg", 1)]
        assert (B, A, Z) == (1, pytest.approx(0.7), 0.0)
        assert bd.per_term[("fg", 0)] == (1, pytest.approx(0.9), 0.0)
        assert bd.total == pytest.approx((1 - 0.9) + (1 - 0.7))
        # the loop's birth point is a wall pixel, its death point the center
        assert grad.data[1, 2, 2] == pytest.approx(1.0)

    def test_unmatched_ring_flips_signs(self):
        seg = two_class(self.ring_field())
        prior = FG_PRIOR((1, 0))
        bd, grad = topo_loss(seg, prior, "V")
        assert bd.per_term[("fg", 1)] == (0, 0.0, pytest.approx(0.7))
        assert grad.data[1, 2, 2] == pytest.approx(-1.0)

    @pytest.mark.parametrize("betti", [(1, 1), (1, 0), (2, 1)])
    def test_ring_finite_differences_nondegenerate(self, betti):
        # ties excluded by construction: every grid value is distinct
        seg = two_class(self.ring_field(dither=1e-3))
        _, grad = topo_loss(seg, FG_PRIOR(betti), "V")
        fd_check(seg, FG_PRIOR(betti), grad)

    def test_two_component_field_matched_and_not(self):
        field = np.array([[0.95, 0.2, 0.9]])
        seg = two_class(field)
        bd2, _ = topo_loss(seg, BettiPrior(2, ("bg", "fg"), {(2,): (2, 0)}), "V")
        assert bd2.per_term[("fg", 0)] == (2, pytest.approx(0.95 + 0.7), 0.0)
        bd1, _ = topo_loss(seg, FG_PRIOR((1, 0)), "V")
        assert bd1.per_term[("fg", 0)] == (1, pytest.approx(0.95), pytest.approx(0.7))

    def test_pair_union_gradient_broadcasts(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(3, 6, 6))
        e = np.exp(logits - logits.max(axis=0))
        seg = seg_from(e / e.sum(axis=0))
        prior = BettiPrior(2, ("bg", "a", "b"), {(2,): (1, 0), (3,): (1, 0), (2, 3): (1, 0)})
        bd, grad = topo_loss(seg, prior, "V")
        fd_check(seg, prior, grad)

    def test_subset_symmetry(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(3, 5, 5))
        e = np.exp(logits - logits.max(axis=0))
        seg = seg_from(e / e.sum(axis=0))
        p_ab = BettiPrior(2, ("bg", "a", "b"), {(2, 3): (1, 0)})
        bd, _ = topo_loss(seg, p_ab, "V")
        # subsets normalize to sorted order, so {a,b} and {b,a} are one key
        assert ("a|b", 0) in bd.per_term

    def test_lower_bound(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            logits = rng.normal(size=(2, 7, 7))
            e = np.exp(logits - logits.max(axis=0))
            seg = seg_from(e / e.sum(axis=0))
            prior = FG_PRIOR((2, 1))
            bd, _ = topo_loss(seg, prior, "V")
            assert bd.total >= -3.0  # sum of demanded Betti numbers

    def test_gradient_support_is_critical_points(self):
        field = np.full((6, 6), 0.05)
        field[1:3, 1:3] = 0.85
        field[4, 4] = 0.6
        seg = two_class(field)
        bd, grad = topo_loss(seg, FG_PRIOR((1, 0)), "V")
        # nonzero gradient only where some bar is born or dies
        nz = set(map(tuple, np.argwhere(np.abs(grad.data[1]) > 0)))
        allowed = {(1, 1), (1, 2), (2, 1), (2, 2), (4, 4)} | set(map(tuple, np.argwhere(field <= 0.05)))
        assert nz <= allowed

    def test_background_subset_rejected(self):
        with pytest.raises(ValueError):
            BettiPrior(2, ("bg", "fg"), {(1,): (1, 0)})

    def test_prior_class_count_mismatch(self):
        seg = two_class(np.full((3, 3), 0.4))
        prior = BettiPrior(2, ("bg", "a", "b"), {(2,): (1, 0)})
        with pytest.raises(ValueError):
            topo_loss(seg, prior, "V")


class TestMseLoss:
    def test_identity_is_zero(self):
        seg = two_class(np.full((4, 4), 0.3))
        val, grad = mse_loss(seg, seg)
        assert val == 0.0 and np.all(grad.data == 0.0)

    def test_hand_arithmetic_single_point(self):
        a = seg_from([[[0.6]], [[0.4]]])
        b = seg_from([[[0.5]], [[0.5]]])
        val, grad = mse_loss(a, b)
        assert val == pytest.approx(0.02)
        assert grad.data[0, 0, 0] == pytest.approx(0.2)
        assert grad.data[1, 0, 0] == pytest.approx(-0.2)

    def test_grid_size_invariance(self):
        a1 = seg_from(np.stack([np.full((2, 2), 0.6), np.full((2, 2), 0.4)]))
        b1 = seg_from(np.stack([np.full((2, 2), 0.5), np.full((2, 2), 0.5)]))
        a2 = seg_from(np.stack([np.full((4, 4), 0.6), np.full((4, 4), 0.4)]))
        b2 = seg_from(np.stack([np.full((4, 4), 0.5), np.full((4, 4), 0.5)]))
        assert mse_loss(a1, b1)[0] == pytest.approx(mse_loss(a2, b2)[0])

    def test_finite_difference(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(2, 3, 3))
        e = np.exp(logits - logits.max(axis=0))
        cur = seg_from(e / e.sum(axis=0))
        ref = two_class(np.full((3, 3), 0.25))
        val, grad = mse_loss(cur, ref)
        eps = 1e-6
        for c, i, j in [(0, 1, 1), (1, 2, 0)]:
            pp = np.array(cur.probs)
            pp[c, i, j] += eps
            vp, _ = mse_loss(seg_from(pp, validate=False), ref)
            pm = np.array(cur.probs)
            pm[c, i, j] -= eps
            vm, _ = mse_loss(seg_from(pm, validate=False), ref)
            assert (vp - vm) / (2 * eps) == pytest.approx(grad.data[c, i, j], rel=1e-5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss(two_class(np.zeros((2, 2))), two_class(np.zeros((3, 3))))


class TestCombinedLoss:
    def test_lambda_zero_reduces_to_topo(self):
        field = np.full((5, 5), 0.1)
        field[1:4, 1:4] = 0.9
        seg = two_class(field)
        ref = two_class(np.full((5, 5), 0.1))
        bd, _ = combined_loss(seg, ref, FG_PRIOR((1, 0)), 0.0, "V")
        bd_topo, _ = topo_loss(seg, FG_PRIOR((1, 0)), "V")
        assert bd.combined == bd_topo.total

    def test_combined_identity(self):
        field = np.full((4, 4), 0.2)
        field[1:3, 1:3] = 0.8
        seg = two_class(field)
        ref = two_class(np.full((4, 4), 0.3))
        lam = 1000.0
        bd, grad = combined_loss(seg, ref, FG_PRIOR((1, 0)), lam, "V")
        assert bd.combined == pytest.approx(bd.total + lam * bd.mse)
        assert bd.total == pytest.approx(sum(b - a + z for (b, a, z) in bd.per_term.values()))

    def test_negative_lambda_rejected(self):
        seg = two_class(np.full((3, 3), 0.4))
        with pytest.raises(ValueError):
            combined_loss(seg, seg, FG_PRIOR((1, 0)), -1.0, "V")


class TestPriorJson:
    def test_shortaxis_prior_values(self):
        p = shortaxis_prior()
        names = p.class_names
        assert names == ("bg", "rv", "my", "lv")
        get = lambda *cls: p.entries[tuple(sorted(names.index(c) + 1 for c in cls))]
        assert get("rv") == (1, 0)
        assert get("my") == (1, 1)
        assert get("lv") == (1, 0)
        assert get("rv", "my") == (1, 1)
        assert get("rv", "lv") == (2, 0)
        assert get("my", "lv") == (1, 0)

    def test_wholeheart_prior_shape(self):
        p = wholeheart_prior()
        sizes = [len(s) for s in p.entries]
        assert sizes.count(1) == 5 and sizes.count(2) == 10 and sizes.count(3) == 10
        get = lambda *cls: p.entries[tuple(sorted(p.class_names.index(c) + 1 for c in cls))]
        assert get("la", "ra") == (2, 0, 0)
        assert get("my", "la") == (1, 0, 0)
        assert get("ra", "rv") == (1, 0, 0)
        assert get("la", "lv", "ra") == (2, 0, 0)

    def test_roundtrip(self):
        p = shortaxis_prior()
        q = prior_from_json(p.to_json())
        assert q.entries == p.entries and q.class_names == p.class_names

    def test_wrong_vector_length(self):
        with pytest.raises(ValueError, match="length"):
            prior_from_json('{"dims": 2, "classes": ["bg", "a"], "betti": {"a": [1, 0, 0]}}')

    def test_unknown_class_named(self):
        with pytest.raises(ValueError, match="zz"):
            prior_from_json('{"dims": 2, "classes": ["bg", "a"], "betti": {"zz": [1, 0]}}')

    def test_missing_key(self):
        with pytest.raises(ValueError, match="betti"):
            prior_from_json('{"dims": 2, "classes": ["bg", "a"]}')

    def test_restrict_to_singletons(self):
        p = shortaxis_prior().restrict(1)
        assert all(len(s) == 1 for s in p.entries)
        assert len(p.entries) == 3
