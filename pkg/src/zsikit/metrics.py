"""Zero-shot detection / instance-segmentation evaluation.

Recall@k at several IoU thresholds, all-point-interpolated AP, and the
seen/unseen harmonic mean used for the generalized settings. Matching is
class-aware and greedy in descending score order; ties in score keep the
input order.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .annotations import ClassSplit, Dataset, InstanceAnnotation
from .maskgeom import (
    BoundingBox,
    MaskError,
    RleMask,
    box_iou_matrix,
    mask_iou_matrix,
    rasterize,
    rle_decode,
    rle_encode,
)

DEFAULT_THRESHOLDS = (0.4, 0.5, 0.6)
DEFAULT_TOP_K = 100

SETTINGS = {
    "zsd": ("detection", "unseen"),
    "zsi": ("segmentation", "unseen"),
    "gzsd": ("detection", "generalized"),
    "gzsi": ("segmentation", "generalized"),
}


class EvaluationError(ValueError):
    pass


class PredictionParseError(EvaluationError):
    """Predictions file that is not valid JSON."""


@dataclass(frozen=True)
class Prediction:
    image_id: int
    category_id: int
    score: float
    bbox: BoundingBox
    segmentation: RleMask | None = None

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise EvaluationError(f"non-finite score {self.score!r} for image {self.image_id}")


@dataclass(frozen=True)
class EvalSetting:
    task: str
    regime: str

    def __post_init__(self):
        if (self.task, self.regime) not in SETTINGS.values():
            raise EvaluationError(f"invalid setting task={self.task!r} regime={self.regime!r}")

    @classmethod
    def from_name(cls, name: str) -> "EvalSetting":
        try:
            return cls(*SETTINGS[name.lower()])
        except KeyError:
            raise EvaluationError(f"unknown setting {name!r}; expected one of {sorted(SETTINGS)}") from None

    @property
    def name(self) -> str:
        return next(k for k, v in SETTINGS.items() if v == (self.task, self.regime))

    @property
    def kind(self) -> str:
        return "box" if self.task == "detection" else "mask"


@dataclass
class EvalReport:
    recall: dict[float, float]
    map: float
    per_class_ap: dict[int, float]
    num_gt: int
    top_k: int = DEFAULT_TOP_K
    ap_threshold: float = 0.5
    setting: str = ""
    seen: "EvalReport | None" = None
    unseen: "EvalReport | None" = None
    hm: dict | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "setting": self.setting,
            "top_k": self.top_k,
            "num_gt": self.num_gt,
            "recall": {f"{t:g}": v for t, v in sorted(self.recall.items())},
            "map": self.map,
            "ap_threshold": self.ap_threshold,
            "per_class_ap": {str(c): v for c, v in sorted(self.per_class_ap.items())},
        }
        if self.seen is not None:
            out["seen"] = self.seen.to_dict()
            out["unseen"] = self.unseen.to_dict()
            out["hm"] = {
                "recall": {f"{t:g}": v for t, v in sorted(self.hm["recall"].items())},
                "map": self.hm["map"],
            }
        if self.metadata:
            out["metadata"] = self.metadata
        return out


def harmonic_mean(seen: float, unseen: float) -> float:
    if seen < 0 or unseen < 0:
        raise ValueError("harmonic mean needs non-negative inputs")
    if seen + unseen == 0:
        return 0.0
    return 2.0 * seen * unseen / (seen + unseen)


# --------------------------------------------------------------------------
# matching


def score_order(scores: Sequence[float]) -> np.ndarray:
    """Indices by descending score; equal scores keep input order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def _greedy(order, pred_cats, gt_cats, iou, t) -> np.ndarray:
    """Matched GT index per prediction (-1 when unmatched)."""
    matched = np.full(len(pred_cats), -1, dtype=np.int64)
    taken = np.zeros(len(gt_cats), dtype=bool)
    if len(gt_cats) == 0:
        return matched
    gt_cats = np.asarray(gt_cats)
    for p in order:
        ok = (~taken) & (gt_cats == pred_cats[p]) & (iou[p] >= t)
        if not ok.any():
            continue
        cand = np.where(ok, iou[p], -1.0)
        g = int(np.argmax(cand))
        matched[p] = g
        taken[g] = True
    return matched


def _ann_mask(ann: InstanceAnnotation, width: int, height: int) -> RleMask:
    if isinstance(ann.segmentation, RleMask):
        return ann.segmentation
    return rle_encode(rasterize(ann.segmentation, width, height))


def _iou(preds, gts, kind, size=None) -> np.ndarray:
    if not preds or not gts:
        return np.zeros((len(preds), len(gts)))
    if kind == "box":
        return box_iou_matrix([p.bbox for p in preds], [g.bbox for g in gts])
    if kind != "mask":
        raise EvaluationError(f"unknown IoU kind {kind!r}")
    for p in preds:
        if p.segmentation is None:
            raise EvaluationError(f"prediction on image {p.image_id} has no mask")
    if size is None:
        s = preds[0].segmentation
        size = (s.width, s.height)
    gmasks = [g if isinstance(g, RleMask) else _ann_mask(g, *size) for g in gts]
    try:
        return mask_iou_matrix([p.segmentation for p in preds], gmasks)
    except MaskError as exc:
        raise EvaluationError(str(exc)) from None


def match_greedy(
    preds: Sequence[Prediction],
    gts: Sequence[InstanceAnnotation],
    t: float,
    kind: str = "box",
) -> list[tuple[int, int]]:
    """Greedy class-aware matching on one image.

    Returns ``(prediction index, gt index)`` pairs in processing order. Each
    prediction, taken by descending score, claims the unmatched same-class
    ground truth with the highest IoU >= ``t``.
    """
    iou = _iou(list(preds), list(gts), kind)
    order = score_order([p.score for p in preds])
    matched = _greedy(
        order, [p.category_id for p in preds], [g.category_id for g in gts], iou, t
    )
    return [(int(p), int(matched[p])) for p in order if matched[p] >= 0]


# --------------------------------------------------------------------------
# aggregation


def ap_from_flags(tp: Sequence[bool], npos: int) -> float:
    """All-point interpolated AP from TP flags already in score order."""
    if npos <= 0:
        raise EvaluationError("AP undefined without ground truth")
    tp = np.asarray(tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    tps = np.cumsum(tp)
    fps = np.cumsum(1.0 - tp)
    precision = tps / (tps + fps)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum(envelope[tp > 0]) / npos)


@dataclass
class _Matched:
    """Per-prediction TP flags at each threshold after top-k selection."""

    pred_cats: np.ndarray
    scores: np.ndarray
    index: np.ndarray  # global input index, for stable tie-breaking
    flags: dict  # threshold -> bool array over kept predictions
    gt_cats: np.ndarray
    gt_matched: dict  # threshold -> bool array over gts


def _match_all(by_image, thresholds, kind, top_k, sizes=None) -> _Matched:
    cats, scores, index, gcat = [], [], [], []
    flags = {t: [] for t in thresholds}
    gflags = {t: [] for t in thresholds}
    for image_id in sorted(by_image):
        preds, gts = by_image[image_id]
        idx = [i for i, _ in preds]
        pl = [p for _, p in preds]
        order = score_order([p.score for p in pl])
        if top_k is not None:
            order = order[:top_k]
        kept = [pl[i] for i in order]
        kept_idx = [idx[i] for i in order]
        size = sizes.get(image_id) if sizes else None
        iou = _iou(kept, gts, kind, size)
        pc = np.array([p.category_id for p in kept], dtype=np.int64)
        gc = np.array([g.category_id for g in gts], dtype=np.int64)
        local = np.arange(len(kept))
        for t in thresholds:
            m = _greedy(local, pc, gc, iou, t)
            flags[t].append(m >= 0)
            g = np.zeros(len(gts), dtype=bool)
            g[m[m >= 0]] = True
            gflags[t].append(g)
        cats.append(pc)
        scores.append(np.array([p.score for p in kept], dtype=np.float64))
        index.append(np.array(kept_idx, dtype=np.int64))
        gcat.append(gc)

    def cat(xs, dtype):
        return np.concatenate(xs).astype(dtype) if xs else np.zeros(0, dtype)

    return _Matched(
        pred_cats=cat(cats, np.int64),
        scores=cat(scores, np.float64),
        index=cat(index, np.int64),
        flags={t: cat(v, bool) for t, v in flags.items()},
        gt_cats=cat(gcat, np.int64),
        gt_matched={t: cat(v, bool) for t, v in gflags.items()},
    )


def _summarize(m: _Matched, classes, thresholds, ap_t):
    classes = set(classes)
    gmask = np.isin(m.gt_cats, list(classes))
    num_gt = int(gmask.sum())
    if num_gt == 0:
        raise EvaluationError("no ground truth for the evaluated classes; recall is undefined")
    recall = {t: float(m.gt_matched[t][gmask].sum()) / num_gt for t in thresholds}
    per_class = {}
    for c in sorted(classes):
        npos = int((m.gt_cats == c).sum())
        if npos == 0:
            continue
        sel = np.flatnonzero(m.pred_cats == c)
        # descending score, then input order
        order = sel[np.lexsort((m.index[sel], -m.scores[sel]))]
        per_class[c] = ap_from_flags(m.flags[ap_t][order], npos)
    mean_ap = float(np.mean(list(per_class.values())))
    return recall, mean_ap, per_class, num_gt


def _group(preds, gts):
    by_image: dict = {}
    for i, p in enumerate(preds):
        by_image.setdefault(p.image_id, ([], []))[0].append((i, p))
    for g in gts:
        by_image.setdefault(g.image_id, ([], []))[1].append(g)
    return by_image


def recall_at_k(
    preds: Sequence[Prediction],
    gts: Sequence[InstanceAnnotation],
    k: int = DEFAULT_TOP_K,
    thresholds: Iterable[float] = DEFAULT_THRESHOLDS,
    kind: str = "box",
) -> dict[float, float]:
    """Fraction of ground truths matched by each image's top-``k`` predictions."""
    thresholds = tuple(thresholds)
    m = _match_all(_group(preds, gts), thresholds, kind, k)
    if len(m.gt_cats) == 0:
        raise EvaluationError("no ground truth; recall is undefined")
    return {t: float(m.gt_matched[t].sum()) / len(m.gt_cats) for t in thresholds}


def average_precision(
    preds: Sequence[Prediction],
    gts: Sequence[InstanceAnnotation],
    t: float = 0.5,
    kind: str = "box",
    k: int | None = None,
) -> tuple[dict[int, float], float]:
    """Per-class AP and their unweighted mean over classes with ground truth."""
    m = _match_all(_group(preds, gts), (t,), kind, k)
    classes = set(m.gt_cats.tolist())
    if not classes:
        raise EvaluationError("no ground truth; AP is undefined")
    _, mean_ap, per_class, _ = _summarize(m, classes, (t,), t)
    return per_class, mean_ap


def evaluate(
    test: Dataset,
    preds: Sequence[Prediction],
    split: ClassSplit,
    setting: EvalSetting,
    top_k: int = DEFAULT_TOP_K,
    thresholds: Iterable[float] = DEFAULT_THRESHOLDS,
    ap_threshold: float = 0.5,
) -> EvalReport:
    """Full report for one of the ZSD / ZSI / GZSD / GZSI settings.

    In the unseen-only settings predictions for other classes are dropped
    before top-k selection. In the generalized settings top-k is applied to
    the combined pool, then seen and unseen sub-reports and their harmonic
    means are computed.
    """
    thresholds = tuple(sorted(set(float(t) for t in thresholds)))
    all_t = tuple(sorted(set(thresholds) | {float(ap_threshold)}))
    names = {c.id: c.name for c in test.categories}
    seen_ids = {cid for cid, n in names.items() if split.role(n) == "seen"}
    unseen_ids = {cid for cid, n in names.items() if split.role(n) == "unseen"}
    classes = unseen_ids if setting.regime == "unseen" else seen_ids | unseen_ids
    kind = setting.kind

    sizes = {im.id: (im.width, im.height) for im in test.images}
    for i, p in enumerate(preds):
        if not test.has_image(p.image_id):
            raise EvaluationError(f"prediction {i} references unknown image_id {p.image_id}")
        if not test.has_category(p.category_id):
            raise EvaluationError(f"prediction {i} references unknown category_id {p.category_id}")
        if kind == "mask":
            if p.segmentation is None:
                raise EvaluationError(f"prediction {i} has no segmentation in {setting.name} mode")
            if (p.segmentation.width, p.segmentation.height) != sizes[p.image_id]:
                raise EvaluationError(f"prediction {i}: mask size does not match image {p.image_id}")

    kept_preds = [p for p in preds if p.category_id in classes]
    gts = [a for a in test.annotations if not a.iscrowd and a.category_id in classes]
    m = _match_all(_group(kept_preds, gts), all_t, kind, top_k, sizes)

    def sub(cls, tag):
        recall, mean_ap, per_class, n = _summarize(m, cls, thresholds, ap_threshold)
        return EvalReport(
            recall=recall, map=mean_ap, per_class_ap=per_class, num_gt=n,
            top_k=top_k, ap_threshold=ap_threshold, setting=tag,
        )

    report = sub(classes, setting.name)
    report.metadata = {
        "task": setting.task,
        "regime": setting.regime,
        "split": split.name,
        "iou": "mask" if kind == "mask" else "box",
        "map_classes": "unseen" if setting.regime == "unseen" else "seen+unseen",
    }
    if setting.regime == "generalized":
        report.seen = sub(seen_ids, f"{setting.name}/seen")
        report.unseen = sub(unseen_ids, f"{setting.name}/unseen")
        report.hm = {
            "recall": {t: harmonic_mean(report.seen.recall[t], report.unseen.recall[t]) for t in thresholds},
            "map": harmonic_mean(report.seen.map, report.unseen.map),
        }
    return report


# --------------------------------------------------------------------------
# COCO results files


def _bbox_from_mask(r: RleMask) -> BoundingBox:
    bits = rle_decode(r).bits
    rows = np.flatnonzero(bits.any(1))
    cols = np.flatnonzero(bits.any(0))
    if rows.size == 0:
        raise EvaluationError("cannot derive a box from an empty mask")
    return BoundingBox(float(cols[0]), float(rows[0]), float(cols[-1] - cols[0] + 1), float(rows[-1] - rows[0] + 1))


def parse_predictions(raw: bytes | str) -> list[Prediction]:
    """Parse a COCO results array.

    Each entry needs ``image_id``, ``category_id``, ``score`` and a ``bbox``
    or a compressed-RLE ``segmentation`` (the box is then derived from it).
    """
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise PredictionParseError(f"invalid predictions JSON: {exc}") from None
    if not isinstance(doc, list):
        raise EvaluationError("predictions file must hold a JSON array")
    out = []
    for i, obj in enumerate(doc):
        try:
            seg = obj.get("segmentation")
            rle = RleMask.from_coco(seg) if seg is not None else None
            if "bbox" in obj:
                bbox = BoundingBox(*(float(v) for v in obj["bbox"]))
            elif rle is not None:
                bbox = _bbox_from_mask(rle)
            else:
                raise EvaluationError("entry has neither bbox nor segmentation")
            out.append(Prediction(int(obj["image_id"]), int(obj["category_id"]), float(obj["score"]), bbox, rle))
        except (KeyError, TypeError, ValueError) as exc:
            raise EvaluationError(f"prediction {i}: {exc}") from None
    return out


def load_predictions(path) -> list[Prediction]:
    with open(path, "rb") as f:
        return parse_predictions(f.read())


def predictions_to_json(preds: Sequence[Prediction]) -> str:
    rows = []
    for p in preds:
        row = {"image_id": p.image_id, "category_id": p.category_id, "score": p.score, "bbox": p.bbox.as_xywh()}
        if p.segmentation is not None:
            row["segmentation"] = p.segmentation.to_coco()
        rows.append(row)
    return json.dumps(rows)
