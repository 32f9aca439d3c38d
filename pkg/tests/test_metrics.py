import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zsikit.annotations import CategoryRecord, ClassSplit, Dataset, ImageRecord, InstanceAnnotation
from zsikit.maskgeom import BinaryMask, BoundingBox, Polygon, rle_encode
from zsikit.metrics import (
    EvalSetting,
    EvaluationError,
    Prediction,
    ap_from_flags,
    average_precision,
    evaluate,
    harmonic_mean,
    match_greedy,
    parse_predictions,
    predictions_to_json,
    recall_at_k,
)

from .oracles import Scene, oracle_ap, oracle_recall, split_for


def gt(i, img, cat, box):
    x, y, w, h = box
    return InstanceAnnotation(i, img, cat, BoundingBox(*box), (Polygon((x, y, x + w, y, x + w, y + h, x, y + h)),))


def pred(img, cat, score, box, mask=None):
    return Prediction(img, cat, score, BoundingBox(*box), mask)


class TestMatchGreedy:
    def test_single_match(self):
        # IoU 0.9: 9x10 box inside 10x10
        assert match_greedy([pred(1, 1, 0.5, (0, 0, 9, 10))], [gt(1, 1, 1, (0, 0, 10, 10))], 0.5) == [(0, 0)]

    def test_class_aware(self):
        assert match_greedy([pred(1, 2, 0.5, (0, 0, 9, 10))], [gt(1, 1, 1, (0, 0, 10, 10))], 0.5) == []

    def test_two_preds_one_gt(self):
        preds = [pred(1, 1, 0.8, (0, 0, 10, 9)), pred(1, 1, 0.9, (0, 0, 9, 10))]
        gts = [gt(1, 1, 1, (0, 0, 10, 10))]
        # exhaustive assignment: each GT at most once, score order decides
        assert match_greedy(preds, gts, 0.5) == [(1, 0)]

    def test_prefers_highest_iou(self):
        preds = [pred(1, 1, 0.9, (0, 0, 10, 10))]
        gts = [gt(1, 1, 1, (0, 0, 10, 7)), gt(2, 1, 1, (0, 0, 10, 9))]
        assert match_greedy(preds, gts, 0.5) == [(0, 1)]

    def test_mask_kind_requires_masks(self):
        with pytest.raises(EvaluationError):
            match_greedy([pred(1, 1, 0.5, (0, 0, 2, 2))], [gt(1, 1, 1, (0, 0, 2, 2))], 0.5, kind="mask")

    def test_mask_kind(self):
        m = np.zeros((6, 6), np.uint8)
        m[0:2, 0:2] = 1
        p = pred(1, 1, 0.5, (0, 0, 2, 2), rle_encode(BinaryMask.from_array(m)))
        assert match_greedy([p], [gt(1, 1, 1, (0, 0, 2, 2))], 0.99, kind="mask") == [(0, 0)]

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_optimal_assignment_when_all_above_threshold(self, seed):
        rng = np.random.default_rng(seed)
        P, G = (int(v) for v in rng.integers(1, 4, 2))
        iou = rng.permutation(np.linspace(0.55, 0.95, P * G)).reshape(P, G)
        pc = rng.integers(1, 3, P)
        gc = rng.integers(1, 3, G)
        scores = rng.permutation(P) / P

        # exhaustive optimum: largest class-consistent one-to-one assignment
        best = 0
        for perm in itertools.permutations(range(max(P, G)), P):
            best = max(best, sum(1 for p, g in enumerate(perm) if g < G and pc[p] == gc[g]))

        preds, gts = [], []
        for g in range(G):
            gts.append(InstanceAnnotation(g + 1, 1, int(gc[g]), BoundingBox(0, 0, 1, 1), (Polygon((0, 0, 1, 0, 1, 1)),)))
        for p in range(P):
            preds.append(Prediction(1, int(pc[p]), float(scores[p]), BoundingBox(0, 0, 1, 1)))

        import zsikit.metrics as M

        order = M.score_order(scores)
        matched = M._greedy(order, pc, gc, iou, 0.5)
        assert int((matched >= 0).sum()) == best
        # greedy's documented rule: each claim is the best still-free same-class GT
        taken = set()
        for p in order:
            free = [g for g in range(G) if g not in taken and gc[g] == pc[p]]
            if free:
                assert matched[p] == max(free, key=lambda g: iou[p, g])
                taken.add(matched[p])
            else:
                assert matched[p] == -1


class TestRecall:
    def test_all_matched(self):
        gts = [gt(1, 1, 1, (0, 0, 4, 4)), gt(2, 2, 1, (1, 1, 4, 4))]
        preds = [pred(1, 1, 0.9, (0, 0, 4, 4)), pred(2, 1, 0.9, (1, 1, 4, 4))]
        assert recall_at_k(preds, gts)[0.5] == 1.0

    def test_two_of_three(self):
        gts = [gt(1, 1, 1, (0, 0, 4, 4)), gt(2, 1, 1, (6, 6, 4, 4)), gt(3, 2, 1, (0, 0, 4, 4))]
        preds = [pred(1, 1, 0.9, (0, 0, 4, 4)), pred(2, 1, 0.9, (0, 0, 4, 4))]
        assert recall_at_k(preds, gts)[0.5] == pytest.approx(2 / 3)

    def test_no_ground_truth_is_error(self):
        with pytest.raises(EvaluationError):
            recall_at_k([pred(1, 1, 0.9, (0, 0, 4, 4))], [])

    def test_top_k_budget_is_per_image(self):
        gts = [gt(1, 1, 1, (0, 0, 4, 4)), gt(2, 2, 1, (0, 0, 4, 4))]
        preds = [
            pred(1, 1, 0.9, (10, 10, 4, 4)),
            pred(1, 1, 0.1, (0, 0, 4, 4)),
            pred(2, 1, 0.5, (0, 0, 4, 4)),
        ]
        assert recall_at_k(preds, gts, k=1)[0.5] == 0.5
        assert recall_at_k(preds, gts, k=2)[0.5] == 1.0

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            sc = Scene(rng)
            if not sc.gts:
                continue
            r = recall_at_k(sc.to_predictions(), list(sc.to_dataset().annotations))
            assert r[0.4] >= r[0.5] >= r[0.6]


class TestAP:
    def test_perfect(self):
        per, m = average_precision([pred(1, 1, 0.9, (0, 0, 4, 4))], [gt(1, 1, 1, (0, 0, 4, 4))])
        assert per == {1: 1.0} and m == 1.0

    def test_tp_then_fp(self):
        preds = [pred(1, 1, 0.9, (0, 0, 4, 4)), pred(1, 1, 0.5, (8, 8, 2, 2))]
        _, m = average_precision(preds, [gt(1, 1, 1, (0, 0, 4, 4))])
        assert m == 1.0

    def test_fp_then_tp(self):
        # PR points (0, 0) then (1, 1/2): envelope carries 1/2 at recall 1
        preds = [pred(1, 1, 0.9, (8, 8, 2, 2)), pred(1, 1, 0.5, (0, 0, 4, 4))]
        _, m = average_precision(preds, [gt(1, 1, 1, (0, 0, 4, 4))])
        assert m == 0.5

    def test_fp_only(self):
        _, m = average_precision([pred(1, 1, 0.9, (8, 8, 2, 2))], [gt(1, 1, 1, (0, 0, 4, 4))])
        assert m == 0.0

    def test_class_without_gt_excluded(self):
        preds = [pred(1, 1, 0.9, (0, 0, 4, 4)), pred(1, 2, 0.9, (0, 0, 4, 4))]
        per, m = average_precision(preds, [gt(1, 1, 1, (0, 0, 4, 4))])
        assert per == {1: 1.0} and m == 1.0

    def test_interpolation(self):
        # TP FP TP with 2 GT: precision 1, 1/2, 2/3 -> envelope 1, 2/3, 2/3
        assert ap_from_flags([True, False, True], 2) == pytest.approx(0.5 * 1 + 0.5 * 2 / 3)


class TestHarmonicMean:
    @pytest.mark.parametrize(
        "s,u,expect",
        [(46.51, 4.83, 8.75), (70.76, 53.85, 61.16), (62.30, 38.14, 47.31)],
    )
    def test_reported_values(self, s, u, expect):
        assert harmonic_mean(s, u) == pytest.approx(expect, abs=0.01)

    @given(st.floats(0, 1e6))
    def test_equal_inputs(self, x):
        assert harmonic_mean(x, x) == pytest.approx(x)

    def test_zero(self):
        assert harmonic_mean(0, 0) == 0.0
        assert harmonic_mean(0.7, 0) == 0.0

    def test_negative(self):
        with pytest.raises(ValueError):
            harmonic_mean(-1, 1)


def _scene_dataset():
    images = [ImageRecord(i, 20, 20) for i in (1, 2)]
    cats = [CategoryRecord(1, "dog"), CategoryRecord(2, "cat"), CategoryRecord(3, "fork")]
    anns = [
        gt(1, 1, 1, (0, 0, 5, 5)),
        gt(2, 1, 2, (8, 8, 6, 6)),
        gt(3, 2, 3, (2, 2, 7, 7)),
        gt(4, 2, 1, (12, 1, 5, 5)),
    ]
    return Dataset(images, cats, anns), ClassSplit("t", ("dog",), ("cat", "fork"))


def _perfect(ds):
    out = []
    for a in ds.annotations:
        m = rle_encode(BinaryMask.from_array(_poly_mask(a)))
        out.append(Prediction(a.image_id, a.category_id, 0.9, a.bbox, m))
    return out


def _poly_mask(a):
    from zsikit.maskgeom import rasterize

    return rasterize(a.segmentation, 20, 20).bits


class TestEvaluate:
    @pytest.mark.parametrize("name", ["zsd", "zsi", "gzsd", "gzsi"])
    def test_perfect_predictor(self, name):
        ds, split = _scene_dataset()
        rep = evaluate(ds, _perfect(ds), split, EvalSetting.from_name(name))
        assert all(v == 1.0 for v in rep.recall.values())
        assert rep.map == 1.0
        if name.startswith("g"):
            assert rep.hm["map"] == 1.0 and rep.seen.num_gt == 2 and rep.unseen.num_gt == 2

    def test_unseen_regime_drops_seen_predictions_before_top_k(self):
        ds, split = _scene_dataset()
        preds = _perfect(ds)
        # a flood of high-scoring seen-class predictions must not eat the budget
        flood = [pred(1, 1, 0.99, (0, 0, 5, 5)) for _ in range(5)]
        rep = evaluate(ds, flood + preds, split, EvalSetting.from_name("zsd"), top_k=2)
        assert rep.recall[0.5] == 1.0
        rep = evaluate(ds, flood + preds, split, EvalSetting.from_name("gzsd"), top_k=2)
        assert rep.unseen.recall[0.5] == 0.5

    def test_generalized_hm(self):
        ds, split = _scene_dataset()
        preds = [p for p in _perfect(ds) if p.category_id != 3]
        rep = evaluate(ds, preds, split, EvalSetting.from_name("gzsd"))
        assert rep.seen.recall[0.5] == 1.0
        assert rep.unseen.recall[0.5] == 0.5
        assert rep.hm["recall"][0.5] == pytest.approx(harmonic_mean(1.0, 0.5))
        assert rep.metadata["map_classes"] == "seen+unseen"

    def test_unknown_image(self):
        ds, split = _scene_dataset()
        with pytest.raises(EvaluationError, match="image"):
            evaluate(ds, [pred(9, 1, 0.5, (0, 0, 1, 1))], split, EvalSetting.from_name("zsd"))

    def test_unknown_category(self):
        ds, split = _scene_dataset()
        with pytest.raises(EvaluationError, match="category"):
            evaluate(ds, [pred(1, 9, 0.5, (0, 0, 1, 1))], split, EvalSetting.from_name("zsd"))

    def test_missing_mask_in_segmentation_mode(self):
        ds, split = _scene_dataset()
        with pytest.raises(EvaluationError, match="segmentation"):
            evaluate(ds, [pred(1, 2, 0.5, (0, 0, 1, 1))], split, EvalSetting.from_name("zsi"))

    def test_bad_setting(self):
        with pytest.raises(EvaluationError):
            EvalSetting.from_name("zss")

    def test_detection_ignores_masks(self):
        ds, split = _scene_dataset()
        preds = _perfect(ds)
        garbage = rle_encode(BinaryMask.zeros(20, 20))
        perturbed = [Prediction(p.image_id, p.category_id, p.score, p.bbox, garbage) for p in preds]
        a = evaluate(ds, preds, split, EvalSetting.from_name("gzsd")).to_dict()
        b = evaluate(ds, perturbed, split, EvalSetting.from_name("gzsd")).to_dict()
        assert a == b

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        sc = Scene(rng, kind="mask")
        while not any(g[1] in (1, 2) for g in sc.gts):
            sc = Scene(rng, kind="mask")
        args = (sc.to_dataset(), sc.to_predictions(), split_for(sc), EvalSetting.from_name("gzsi"))
        try:
            first = json.dumps(evaluate(*args).to_dict())
        except EvaluationError:
            pytest.skip("scene lacks seen ground truth")
        assert all(json.dumps(evaluate(*args).to_dict()) == first for _ in range(3))


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
    def test_score_scaling_invariance(self, seed, c):
        sc = Scene(np.random.default_rng(seed))
        if not sc.gts:
            return
        preds = sc.to_predictions()
        gts = list(sc.to_dataset().annotations)
        scaled = [Prediction(p.image_id, p.category_id, p.score * c, p.bbox) for p in preds]
        assert recall_at_k(preds, gts) == recall_at_k(scaled, gts)
        assert average_precision(preds, gts) == average_precision(scaled, gts)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0, 1))
    def test_zero_overlap_fp_never_helps(self, seed, score):
        sc = Scene(np.random.default_rng(seed))
        if not sc.gts:
            return
        preds = sc.to_predictions()
        gts = list(sc.to_dataset().annotations)
        # the oracle grid is 12x12; this box lies outside it
        fp = Prediction(1, 1, score, BoundingBox(50, 50, 3, 3))
        r0, r1 = recall_at_k(preds, gts), recall_at_k(preds + [fp], gts)
        assert all(r1[t] <= r0[t] for t in r0)
        assert average_precision(preds + [fp], gts)[1] <= average_precision(preds, gts)[1] + 1e-12

    def test_oracle_samples(self):
        rng = np.random.default_rng(99)
        for i in range(30):
            sc = Scene(rng, kind="mask" if i % 2 else "box")
            classes = set(sc.classes)
            if not sc.gts:
                continue
            kind = sc.kind
            preds, gts = sc.to_predictions(), list(sc.to_dataset().annotations)
            r = recall_at_k(preds, gts, kind=kind)
            for t in (0.4, 0.5, 0.6):
                assert r[t] == pytest.approx(float(oracle_recall(sc, classes, t)), abs=1e-12)
            _, m = average_precision(preds, gts, kind=kind)
            assert m == pytest.approx(float(oracle_ap(sc, classes, 0.5)[1]), abs=1e-12)


class TestPredictionFiles:
    def test_round_trip(self):
        ds, _ = _scene_dataset()
        preds = _perfect(ds)
        again = parse_predictions(predictions_to_json(preds))
        assert [(p.image_id, p.category_id, p.score, p.bbox) for p in again] == [
            (p.image_id, p.category_id, p.score, p.bbox) for p in preds
        ]
        assert all(a.segmentation == b.segmentation for a, b in zip(again, preds))

    def test_bbox_from_mask(self):
        m = np.zeros((4, 5), np.uint8)
        m[1:3, 2:4] = 1
        seg = rle_encode(BinaryMask.from_array(m)).to_coco()
        (p,) = parse_predictions(json.dumps([{"image_id": 1, "category_id": 1, "score": 0.5, "segmentation": seg}]))
        assert p.bbox == BoundingBox(2, 1, 2, 2)

    def test_malformed(self):
        with pytest.raises(EvaluationError):
            parse_predictions('[{"image_id": 1}]')
        with pytest.raises(EvaluationError):
            parse_predictions("{}")
        with pytest.raises(EvaluationError):
            parse_predictions('[{"image_id": 1, "category_id": 1, "score": NaN, "bbox": [0, 0, 1, 1]}]')
