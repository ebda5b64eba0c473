import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mapvec.geometry import BevExtent, Box2D, MapInstance
from mapvec.scores import (EPS, FocalParams, GcsConfig, LossWeights, combine_scores,
                           cross_entropy, dir_loss, focal_cost, gcs_combined, gcs_components,
                           gcs_dir, gcs_giou, gcs_p2p, gfc, gfc_grad, gfl, gfl_positive,
                           p2p_loss, total_loss)

probs = st.floats(0, 1)
inner = st.floats(0.01, 0.99)


def ref_ce(p, t):
    p = min(max(p, 1e-6), 1 - 1e-6)
    return -(t * math.log(p) + (1 - t) * math.log(1 - p))


def ref_gfc(p, s, alpha=0.25, gamma=2.0):
    pc = min(max(p, 1e-6), 1 - 1e-6)
    return s * ref_ce(p, s) - alpha * pc ** gamma * -math.log(1 - pc)


class TestConfigs:
    def test_defaults(self):
        assert FocalParams() == FocalParams(0.25, 2.0)
        w = LossWeights()
        assert (w.lambda_cls, w.lambda_p2p, w.lambda_dir, w.lambda_mgf, w.lambda_dice) == (
            2, 4, 0.005, 30, 3)
        assert GcsConfig() == GcsConfig(True, True, False, "product")

    def test_invalid(self):
        with pytest.raises(ValueError):
            GcsConfig(False, False, False)
        with pytest.raises(ValueError):
            GcsConfig(combine="max")
        with pytest.raises(ValueError):
            FocalParams(alpha=-1)


class TestGcs:
    def test_p2p_examples(self):
        pts = np.random.default_rng(0).random((20, 2))
        assert gcs_p2p(pts, pts) == 1.0
        assert gcs_p2p([[0, 0]], [[1, 1]]) == 0.0
        # per-point Manhattan distances 0.2 and 0.6
        assert gcs_p2p([[0.1, 0.1], [0.3, 0.3]], [[0.2, 0.2], [0.6, 0.6]]) == pytest.approx(0.8)

    def test_p2p_mismatch(self):
        with pytest.raises(ValueError):
            gcs_p2p(np.zeros((2, 2)), np.zeros((3, 2)))

    def test_dir_examples(self):
        e = [[1, 0], [0, 1]]
        assert gcs_dir(e, e) == 1.0
        assert gcs_dir(e, [[-1, 0], [0, -1]]) == 0.0
        assert gcs_dir([[1, 0], [1, 0]], [[1, 0], [0, 1]]) == 0.75
        with pytest.raises(ValueError):
            gcs_dir(e, [[1, 0]])

    def test_zero_edge_counts_as_orthogonal(self):
        assert gcs_dir([[0, 0]], [[1, 0]]) == 0.5

    def test_giou_examples(self):
        unit = Box2D((0, 0), (1, 1))
        assert gcs_giou(unit, unit) == 1.0
        assert gcs_giou(unit, Box2D((2, 0), (3, 1))) == pytest.approx(1 / 3)
        far = gcs_giou(unit, Box2D((1e9, 1e9), (1e9 + 1, 1e9 + 1)))
        assert far == pytest.approx(0.0, abs=1e-8)

    def test_combine_examples(self):
        parts = {"p2p": 0.8, "dir": 0.75, "giou": 0.1}
        assert combine_scores(parts) == pytest.approx(0.6)
        assert combine_scores(parts, GcsConfig(combine="mean")) == pytest.approx(0.775)

    def test_perfect_prediction_any_config(self):
        inst = MapInstance("lane_divider", [[0, 0], [1, 2], [3, 3]])
        for cfg in (GcsConfig(), GcsConfig(True, True, True), GcsConfig(False, False, True, "mean")):
            assert gcs_combined(inst, inst, cfg) == 1.0

    @given(st.integers(0, 10_000), st.floats(0, 5))
    def test_scores_bounded(self, seed, sigma):
        rng = np.random.default_rng(seed)
        gt = MapInstance("lane_divider", rng.uniform(-15, 15, (6, 2)))
        pred = gt.with_points(gt.points + rng.normal(0, sigma + 1e-9, (6, 2)) * 10)
        parts = gcs_components(pred, gt)
        for v in list(parts.values()) + [gcs_combined(pred, gt, GcsConfig(True, True, True))]:
            assert 0.0 <= v <= 1.0

    def test_components_use_extent(self):
        gt = MapInstance("lane_divider", [[0, 0], [0, 2]])
        pred = gt.with_points([[1, 0], [1, 2]])
        small = gcs_components(pred, gt, BevExtent(-1, 1, -1, 1))["p2p"]
        big = gcs_components(pred, gt)["p2p"]
        assert small == pytest.approx(0.75)
        assert big == pytest.approx(1 - 1 / 60)


class TestFocal:
    def test_cross_entropy_soft_target(self):
        assert cross_entropy(0.5, 0.5) == pytest.approx(math.log(2))
        assert cross_entropy(0.3, 0.7) == pytest.approx(ref_ce(0.3, 0.7))

    def test_gfl_examples(self):
        assert gfl([(1 - EPS, 1 - EPS)], []) == pytest.approx(0.0, abs=1e-4)
        assert gfl([], [EPS]) == pytest.approx(0.0, abs=1e-12)
        assert gfl([(0.5, 0.5)], []) == pytest.approx(0.3466, abs=5e-5)
        assert gfl([(0.5, 0.5)], []) == pytest.approx(0.5 * math.log(2), rel=1e-12)

    def test_gfl_range_errors(self):
        with pytest.raises(ValueError):
            gfl([(1.2, 0.5)], [])
        with pytest.raises(ValueError):
            gfl([], [-0.1])

    def test_gfl_matches_reference_sum(self):
        pos = [(0.2, 0.7), (0.9, 0.4)]
        neg = [0.3, 0.8]
        ref = sum(s * ref_ce(p, s) for p, s in pos)
        ref += sum(0.25 * p ** 2 * -math.log(1 - p) for p in neg)
        assert gfl(pos, neg) == pytest.approx(ref, rel=1e-12)

    @given(st.lists(inner, max_size=6))
    def test_negative_only_is_focal_negative(self, ps):
        ref = math.fsum(0.25 * p ** 2 * -math.log(1 - p) for p in ps)
        assert gfl([], ps) == pytest.approx(ref, rel=1e-12, abs=1e-15)

    def test_gfc_examples(self):
        for p in (EPS, 0.3, 0.9):
            c = gfc(p, 0.0)
            assert c <= 0
        assert gfc(EPS, 0.0) == pytest.approx(0.0, abs=1e-12)
        assert gfc(0.5, 1.0) == pytest.approx(0.6498, abs=5e-5)
        assert gfc(0.9, 0.9) < gfc(0.1, 0.9)

    @given(probs, probs)
    def test_gfc_matches_reference(self, p, s):
        assert gfc(p, s) == pytest.approx(ref_gfc(p, s), rel=1e-10, abs=1e-12)

    def test_gfc_broadcasts(self):
        out = gfc(np.array([0.2, 0.5]), np.array([[0.5], [1.0]]))
        assert out.shape == (2, 2)
        assert out[1, 1] == pytest.approx(gfc(0.5, 1.0))

    @given(st.floats(0.9, 0.99), st.floats(0.55, 0.99), st.floats(0.001, 0.01))
    def test_gfc_decreasing_in_sgeo_for_confident(self, p, s, ds):
        s2 = min(1.0, s + ds)
        assert gfc(p, s2) <= gfc(p, s) + 1e-12

    def test_gfc_not_monotone_below_balance_point(self):
        # below s* = b / (2 (b - a)) the positive branch still rises with s_geo
        assert gfc(0.9, 0.3) > gfc(0.9, 0.1)

    @given(st.floats(0.05, 0.95), st.floats(0, 1))
    def test_gfc_grad_central_difference(self, p, s):
        h = 1e-6
        num = (ref_gfc(p + h, s) - ref_gfc(p - h, s)) / (2 * h)
        assert float(gfc_grad(p, s)) == pytest.approx(num, rel=1e-4, abs=1e-5)

    def test_focal_cost_prefers_confident(self):
        assert focal_cost(0.9) < focal_cost(0.1)

    def test_positive_minimum_at_target(self):
        p = np.arange(1, 1000) / 1000
        for s in (0.2, 0.5, 0.8):
            assert p[np.argmin(gfl_positive(p, s))] == pytest.approx(s, abs=1e-3)


class TestRegression:
    def test_p2p_examples(self):
        a = np.random.default_rng(1).random((20, 2))
        assert p2p_loss(a, a) == 0.0
        assert p2p_loss(a + 0.5, a) == pytest.approx(0.125)
        assert p2p_loss(a + 2.0, a) == pytest.approx(1.5)
        with pytest.raises(ValueError):
            p2p_loss(a, a[:3])

    def test_dir_examples(self):
        e = np.array([[1, 0], [0, 1.0]])
        assert dir_loss(e, e) == 0.0
        assert dir_loss(-e, e) == 2.0
        assert dir_loss([[0, 1], [1, 0]], e) == 1.0


class TestTotal:
    def test_examples(self):
        assert total_loss({}, {})[0] == 0
        ones = dict.fromkeys(("cls", "p2p", "dir"), 1.0)
        total, parts = total_loss(ones, {"mgf": 1.0, "dice": 1.0})
        assert total == pytest.approx(39.005)
        assert set(parts) == {"cls", "p2p", "dir", "mgf", "dice"}
        assert total_loss({"cls": 0.5}, {})[0] == 1.0

    def test_errors(self):
        with pytest.raises(ValueError):
            total_loss({"cls": float("nan")}, {})
        with pytest.raises(ValueError):
            total_loss({"depth": 1.0}, {})

    @given(st.dictionaries(st.sampled_from(("cls", "p2p", "dir", "mgf", "dice")),
                           st.floats(0, 100), min_size=1),
           st.sampled_from(("cls", "p2p", "dir", "mgf", "dice")))
    def test_linear_in_each_term(self, terms, name):
        w = LossWeights()
        base = terms.get(name, 0.0)
        det = {k: v for k, v in terms.items() if k in ("cls", "p2p", "dir")}
        seg = {k: v for k, v in terms.items() if k not in det}
        t0, _ = total_loss(det, seg, w)
        doubled = dict(terms, **{name: 2 * base})
        det2 = {k: v for k, v in doubled.items() if k in ("cls", "p2p", "dir")}
        seg2 = {k: v for k, v in doubled.items() if k not in det2}
        t1, _ = total_loss(det2, seg2, w)
        assert t1 - t0 == pytest.approx(getattr(w, f"lambda_{name}") * base, rel=1e-9, abs=1e-9)
