import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapvec.evaluation import EvalConfig, average_precision, evaluate, match_frame
from mapvec.geometry import CLASSES, MapInstance
from mapvec.io import MapFrame


def line(x, score=1.0, cls="lane_divider", n=5):
    pts = np.c_[np.full(n, x, dtype=float), np.linspace(-10, 10, n)]
    return MapInstance(cls, pts, False, score)


def random_dataset(seed, n_frames=4):
    rng = np.random.default_rng(seed)
    data = []
    for _ in range(n_frames):
        gts, preds = [], []
        for c in CLASSES:
            for _ in range(int(rng.integers(0, 4))):
                x = float(rng.uniform(-14, 14))
                gts.append(line(x, cls=c))
                if rng.random() < 0.8:
                    preds.append(line(x + float(rng.normal(0, 0.8)), float(rng.random()), c))
            for _ in range(int(rng.integers(0, 2))):
                preds.append(line(float(rng.uniform(-14, 14)), float(rng.random()), c))
        data.append((MapFrame(instances=preds), MapFrame(instances=gts)))
    return data


class TestMatchFrame:
    def test_identical_is_tp(self):
        assert match_frame([line(0)], [line(0)], 0.5).tolist() == [True]

    def test_threshold_rule(self):
        pred = [line(0.7)]
        assert match_frame(pred, [line(0)], 0.5).tolist() == [False]
        assert match_frame(pred, [line(0)], 1.0).tolist() == [True]

    def test_higher_score_wins(self):
        preds = [line(0.1, 0.4), line(0.2, 0.9)]
        assert match_frame(preds, [line(0)], 0.5).tolist() == [False, True]

    def test_takes_nearest_unmatched(self):
        preds = [line(0.3, 0.9), line(0.35, 0.8)]
        gts = [line(0.0), line(0.6)]
        assert match_frame(preds, gts, 0.5).tolist() == [True, True]


class TestAveragePrecision:
    def test_examples(self):
        assert average_precision([0.9], [True], 1) == 1.0
        assert average_precision([0.9, 0.8], [True, False], 1) == 1.0
        assert average_precision([0.9, 0.8], [False, True], 1) == 0.5

    def test_empty_conventions(self):
        assert average_precision([], [], 0) is None
        assert average_precision([0.5], [False], 0) == 0.0
        assert average_precision([], [], 3) == 0.0

    def test_envelope(self):
        # TP FP TP with 2 GTs: precision envelope 1 up to recall 0.5, 2/3 to recall 1
        ap = average_precision([0.9, 0.8, 0.7], [True, False, True], 2)
        assert ap == pytest.approx(0.5 + 0.5 * 2 / 3)

    def test_curve(self):
        ap, curve = average_precision([0.9, 0.8], [False, True], 1, return_curve=True)
        assert curve == [(0.0, 0.0), (1.0, 0.5)]


class TestEvaluate:
    def test_perfect(self):
        gts = [line(-5.0, cls=c) for c in CLASSES]
        rep = evaluate([(gts, gts)])
        assert rep.mAP == 1.0

    def test_empty_predictions(self):
        gts = [line(-5.0, cls=c) for c in CLASSES]
        assert evaluate([([], gts)]).mAP == 0.0

    def test_half_coverage(self):
        data = []
        for k in range(4):
            gts = [line(-10 + 5 * j, cls=c) for c in CLASSES for j in range(2)]
            preds = [g for g in gts if int(g.points[0, 0]) == -10]
            data.append((preds, gts))
        rep = evaluate(data)
        assert all(v == 0.5 for d in rep.ap.values() for v in d.values())
        assert abs(rep.mAP - 0.5) <= 1e-9

    def test_class_mismatch(self):
        with pytest.raises(ValueError):
            evaluate([([line(0)], [line(0, cls="road_boundary")])],
                     EvalConfig(classes=("road_boundary",)))

    def test_absent_class_excluded(self):
        gts = [line(0, cls="lane_divider")]
        rep = evaluate([(gts, gts)])
        assert rep.class_ap["road_boundary"] is None
        assert rep.mAP == 1.0

    def test_score_floor(self):
        gts = [line(0)]
        preds = [line(5, 0.9), line(0, 0.3)]
        assert evaluate([(preds, gts)]).class_ap["lane_divider"] == 0.5
        floor = evaluate([(preds, gts)], EvalConfig(score_floor=0.5))
        assert floor.class_ap["lane_divider"] == 0.0

    def test_threads_match_serial(self):
        data = random_dataset(3, 8)
        assert evaluate(data, workers=4).to_dict() == evaluate(data).to_dict()

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EvalConfig(thresholds=(1.0, 0.5))
        with pytest.raises(ValueError):
            EvalConfig(thresholds=(0.0, 0.5))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_invariants(self, seed):
        data = random_dataset(seed)
        rep = evaluate(data)
        for c, by_t in rep.ap.items():
            vals = [by_t[t] for t in sorted(by_t)]
            if vals[0] is None:
                continue
            assert all(0.0 <= v <= 1.0 for v in vals)
            assert all(b >= a for a, b in zip(vals, vals[1:]))
        doubled = evaluate(data + data)
        scaled = evaluate([([MapInstance(i.class_id, i.points, i.closed, 0.5 * i.score)
                             for i in p.instances], g) for p, g in data])
        for other in (doubled, scaled):
            for c, by_t in rep.ap.items():
                for t, v in by_t.items():
                    assert other.ap[c][t] == (None if v is None else pytest.approx(v, abs=1e-12))

    def test_report_dict(self):
        gts = [line(0)]
        d = evaluate([(gts, gts)]).to_dict()
        assert set(d) == {"mAP", "class_ap", "ap"}
        assert set(d["ap"]["lane_divider"]) == {"0.5", "1", "1.5"}
