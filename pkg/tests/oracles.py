"""Brute-force evaluation oracle and random scene generator.

Everything here works on explicit pixel sets and exact ``Fraction``
arithmetic, and shares no code with ``zsikit.metrics``.
"""
from fractions import Fraction

import numpy as np

from zsikit.annotations import CategoryRecord, ClassSplit, Dataset, ImageRecord, InstanceAnnotation
from zsikit.maskgeom import BinaryMask, BoundingBox, RleMask, rle_encode
from zsikit.metrics import Prediction

GRID = 12


def box_pixels(x, y, w, h):
    return frozenset((i, j) for i in range(x, x + w) for j in range(y, y + h))


def iou(a, b):
    union = len(a | b)
    return Fraction(len(a & b), union) if union else Fraction(0)


class Scene:
    """One random scene set: GT objects and predictions as pixel sets."""

    def __init__(self, rng, n_images=5, max_objects=6, max_preds=8, n_classes=4, kind="box"):
        self.kind = kind
        self.classes = list(range(1, n_classes + 1))
        self.gts = []  # (image, cat, pixels, box)
        self.preds = []  # (image, cat, score, pixels, box)
        score_pool = np.round(rng.uniform(0, 1, 6), 2)  # small pool forces score ties
        for img in range(1, int(rng.integers(1, n_images + 1)) + 1):
            objs = []
            for _ in range(int(rng.integers(0, max_objects + 1))):
                obj = self._shape(rng)
                objs.append(obj)
                self.gts.append((img, int(rng.choice(self.classes))) + obj)
            for _ in range(int(rng.integers(0, max_preds + 1))):
                if objs and rng.random() < 0.7:
                    # jitter a GT so that IoUs spread across the thresholds
                    base = objs[int(rng.integers(len(objs)))][1]
                    x, y, w, h = base
                    x = int(np.clip(x + rng.integers(-2, 3), 0, GRID - 1))
                    y = int(np.clip(y + rng.integers(-2, 3), 0, GRID - 1))
                    w = int(np.clip(w + rng.integers(-2, 3), 1, GRID - x))
                    h = int(np.clip(h + rng.integers(-2, 3), 1, GRID - y))
                    obj = self._shape(rng, (x, y, w, h))
                else:
                    obj = self._shape(rng)
                cat = int(rng.choice(self.classes)) if rng.random() < 0.3 else None
                if cat is None:
                    cat = self.gts[-1][1] if self.gts and self.gts[-1][0] == img else int(rng.choice(self.classes))
                self.preds.append((img, cat, float(rng.choice(score_pool))) + obj)
        self.n_images = img

    def _shape(self, rng, box=None):
        if box is None:
            x, y = (int(v) for v in rng.integers(0, GRID - 1, 2))
            w = int(rng.integers(1, GRID - x + 1))
            h = int(rng.integers(1, GRID - y + 1))
            box = (x, y, w, h)
        pix = box_pixels(*box)
        if self.kind == "mask":
            # carve random holes so mask IoU differs from box IoU
            pix = frozenset(p for p in pix if rng.random() < 0.8) or pix
        return pix, box

    # -- conversion into zsikit objects ---------------------------------

    def to_dataset(self):
        images = [ImageRecord(i, GRID, GRID) for i in range(1, self.n_images + 1)]
        cats = [CategoryRecord(c, f"c{c}") for c in self.classes]
        anns = []
        for k, (img, cat, pix, box) in enumerate(self.gts, start=1):
            anns.append(
                InstanceAnnotation(k, img, cat, BoundingBox(*box), _pix_to_rle(pix), area=float(len(pix)))
            )
        return Dataset(images, cats, anns)

    def to_predictions(self):
        return [
            Prediction(img, cat, score, BoundingBox(*box), _pix_to_rle(pix))
            for img, cat, score, pix, box in self.preds
        ]


def _pix_to_rle(pix) -> RleMask:
    a = np.zeros((GRID, GRID), dtype=np.uint8)
    for i, j in pix:
        a[j, i] = 1
    return rle_encode(BinaryMask.from_array(a))


def brute_force(scene, classes, t, top_k=100):
    """TP flag for every kept prediction plus matched-GT bookkeeping.

    Returns (records, gt_matched) where records are (cat, score, input index,
    is_tp) and gt_matched maps GT index to True.
    """
    records = []
    gt_matched = {}
    for img in range(1, scene.n_images + 1):
        cand = [(k, p) for k, p in enumerate(scene.preds) if p[0] == img and p[1] in classes]
        cand.sort(key=lambda kp: (-kp[1][2], kp[0]))
        cand = cand[:top_k]
        gts = [(g, gt) for g, gt in enumerate(scene.gts) if gt[0] == img and gt[1] in classes]
        claimed = set()
        for k, p in cand:
            ppix = p[3] if scene.kind == "mask" else box_pixels(*p[4])
            best, best_iou = None, None
            for g, gt in gts:
                if g in claimed or gt[1] != p[1]:
                    continue
                gpix = gt[2] if scene.kind == "mask" else box_pixels(*gt[3])
                v = iou(ppix, gpix)
                if v >= t and (best_iou is None or v > best_iou):
                    best, best_iou = g, v
            if best is not None:
                claimed.add(best)
                gt_matched[best] = True
            records.append((p[1], p[2], k, best is not None))
    return records, gt_matched


def oracle_recall(scene, classes, t, top_k=100):
    _, matched = brute_force(scene, classes, Fraction(str(t)), top_k)
    total = sum(1 for gt in scene.gts if gt[1] in classes)
    return Fraction(len(matched), total)


def oracle_ap(scene, classes, t, top_k=100):
    records, _ = brute_force(scene, classes, Fraction(str(t)), top_k)
    per_class = {}
    for c in classes:
        npos = sum(1 for gt in scene.gts if gt[1] == c)
        if npos == 0:
            continue
        ranked = sorted((r for r in records if r[0] == c), key=lambda r: (-r[1], r[2]))
        points = []
        tp = 0
        for i, r in enumerate(ranked, start=1):
            tp += r[3]
            points.append((Fraction(tp, npos), Fraction(tp, i)))
        ap = Fraction(0)
        prev = Fraction(0)
        for level in sorted({rec for rec, _ in points}):
            if level == 0:
                continue
            best = max(p for rec, p in points if rec >= level)
            ap += (level - prev) * best
            prev = level
        per_class[c] = ap
    mean = sum(per_class.values(), Fraction(0)) / len(per_class)
    return per_class, mean


def split_for(scene, unseen=(1, 2)):
    seen = [f"c{c}" for c in scene.classes if c not in unseen]
    return ClassSplit("oracle", tuple(seen), tuple(f"c{c}" for c in unseen))
