"""COCO-style annotation ingestion and seen/unseen benchmark construction."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Union

from .maskgeom import BoundingBox, MaskError, Polygon, RleMask

log = logging.getLogger(__name__)

Segmentation = Union[tuple, RleMask]

BUILTIN_SPLITS = {
    "48/17": "coco_48_17.json",
    "65/15": "coco_65_15.json",
}


class AnnotationError(ValueError):
    """Base class for annotation ingestion failures."""


class AnnotationParseError(AnnotationError):
    """Malformed document. ``offset`` is a byte offset into the input when known."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class IntegrityError(AnnotationError):
    """Referential or geometric invariant violated by one annotation."""

    def __init__(self, message: str, annotation_id=None):
        self.annotation_id = annotation_id
        super().__init__(message)


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class CategoryRecord:
    id: int
    name: str

    def __post_init__(self):
        if not self.name:
            raise AnnotationParseError(f"category {self.id} has an empty name")


@dataclass(frozen=True)
class ImageRecord:
    id: int
    width: int
    height: int
    file_name: str = ""


@dataclass(frozen=True)
class InstanceAnnotation:
    id: int
    image_id: int
    category_id: int
    bbox: BoundingBox
    # tuple of Polygon, or a single RleMask
    segmentation: Segmentation
    iscrowd: bool = False
    area: float | None = None

    @property
    def is_rle(self) -> bool:
        return isinstance(self.segmentation, RleMask)


@dataclass(frozen=True)
class ClassSplit:
    name: str
    seen: tuple[str, ...]
    unseen: tuple[str, ...]
    _seen_set: frozenset = field(default=frozenset(), init=False, repr=False, compare=False)
    _unseen_set: frozenset = field(default=frozenset(), init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "seen", tuple(self.seen))
        object.__setattr__(self, "unseen", tuple(self.unseen))
        object.__setattr__(self, "_seen_set", frozenset(self.seen))
        object.__setattr__(self, "_unseen_set", frozenset(self.unseen))
        if not self.seen or not self.unseen:
            raise SplitError(f"split {self.name!r}: seen and unseen lists must be non-empty")
        for label, names in (("seen", self.seen), ("unseen", self.unseen)):
            if len(set(names)) != len(names):
                raise SplitError(f"split {self.name!r}: duplicate names in {label} list")
        overlap = set(self.seen) & set(self.unseen)
        if overlap:
            raise SplitError(f"split {self.name!r}: classes in both lists: {sorted(overlap)}")

    def role(self, name: str) -> str | None:
        """'seen', 'unseen', or None for classes outside the split."""
        if name in self._seen_set:
            return "seen"
        if name in self._unseen_set:
            return "unseen"
        return None


@dataclass(frozen=True)
class Dataset:
    images: tuple[ImageRecord, ...] = ()
    categories: tuple[CategoryRecord, ...] = ()
    annotations: tuple[InstanceAnnotation, ...] = ()
    _image_index: dict = field(default=None, init=False, repr=False, compare=False)
    _category_index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "categories", tuple(self.categories))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        images = {}
        for im in self.images:
            if im.id in images:
                raise IntegrityError(f"duplicate image id {im.id}")
            images[im.id] = im
        cats = {}
        for c in self.categories:
            if c.id in cats:
                raise IntegrityError(f"duplicate category id {c.id}")
            cats[c.id] = c
        seen_ids = set()
        for a in self.annotations:
            if a.id in seen_ids:
                raise IntegrityError(f"duplicate annotation id {a.id}", a.id)
            seen_ids.add(a.id)
            if a.image_id not in images:
                raise IntegrityError(
                    f"annotation {a.id} references unknown image_id {a.image_id}", a.id
                )
            if a.category_id not in cats:
                raise IntegrityError(
                    f"annotation {a.id} references unknown category_id {a.category_id}", a.id
                )
        object.__setattr__(self, "_image_index", images)
        object.__setattr__(self, "_category_index", cats)

    def image(self, image_id: int) -> ImageRecord:
        return self._image_index[image_id]

    def category(self, category_id: int) -> CategoryRecord:
        return self._category_index[category_id]

    def has_image(self, image_id: int) -> bool:
        return image_id in self._image_index

    def has_category(self, category_id: int) -> bool:
        return category_id in self._category_index

    def category_by_name(self) -> dict[str, CategoryRecord]:
        return {c.name: c for c in self.categories}

    def annotations_by_image(self) -> dict[int, list[InstanceAnnotation]]:
        out: dict[int, list[InstanceAnnotation]] = {im.id: [] for im in self.images}
        for a in self.annotations:
            out[a.image_id].append(a)
        return out

    def counts(self) -> tuple[int, int, int]:
        return len(self.images), len(self.categories), len(self.annotations)


# --------------------------------------------------------------------------
# parsing / serialization


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


def _require(obj, key, ctx):
    try:
        return obj[key]
    except (KeyError, TypeError):
        raise AnnotationParseError(f"{ctx}: missing required key {key!r}") from None


def _parse_segmentation(seg, ann_id, image: ImageRecord) -> Segmentation:
    if isinstance(seg, dict):
        try:
            rle = RleMask.from_coco(seg)
        except MaskError as exc:
            raise IntegrityError(f"annotation {ann_id}: {exc}", ann_id) from None
        if (rle.width, rle.height) != (image.width, image.height):
            raise IntegrityError(
                f"annotation {ann_id}: RLE size {rle.size} does not match image "
                f"{image.id} ({image.height}x{image.width})",
                ann_id,
            )
        return rle
    if isinstance(seg, list):
        polys = []
        for ring in seg:
            if not isinstance(ring, list) or len(ring) < 6 or len(ring) % 2:
                # COCO ships a handful of degenerate rings; they carry no area
                log.warning("annotation %s: dropping degenerate polygon ring", ann_id)
                continue
            polys.append(Polygon(tuple(ring)))
        if not polys:
            raise IntegrityError(f"annotation {ann_id}: empty segmentation", ann_id)
        return tuple(polys)
    raise IntegrityError(f"annotation {ann_id}: unsupported segmentation type", ann_id)


def parse_dataset(raw: bytes | str) -> Dataset:
    """Parse a COCO annotation document and validate its referential invariants.

    An empty (whitespace-only) document yields an empty :class:`Dataset`.
    """
    text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
    if not text.strip():
        return Dataset()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationParseError(exc.msg, _byte_offset(text, exc.pos)) from None
    if not isinstance(doc, dict):
        raise AnnotationParseError("top-level JSON value must be an object", 0)

    try:
        images = []
        for obj in doc.get("images", []):
            iid = int(_require(obj, "id", "image"))
            w = int(_require(obj, "width", f"image {iid}"))
            h = int(_require(obj, "height", f"image {iid}"))
            if w <= 0 or h <= 0:
                raise AnnotationParseError(f"image {iid}: non-positive size {w}x{h}")
            images.append(ImageRecord(iid, w, h, str(obj.get("file_name", ""))))
        categories = [
            CategoryRecord(int(_require(obj, "id", "category")), str(_require(obj, "name", "category")))
            for obj in doc.get("categories", [])
        ]
    except (TypeError, ValueError) as exc:
        if isinstance(exc, AnnotationError):
            raise
        raise AnnotationParseError(f"bad image/category record: {exc}") from None

    image_index = {im.id: im for im in images}
    cat_ids = {c.id for c in categories}
    annotations = []
    for obj in doc.get("annotations", []):
        aid = _require(obj, "id", "annotation")
        image_id = _require(obj, "image_id", f"annotation {aid}")
        category_id = _require(obj, "category_id", f"annotation {aid}")
        if image_id not in image_index:
            raise IntegrityError(f"annotation {aid} references unknown image_id {image_id}", aid)
        if category_id not in cat_ids:
            raise IntegrityError(
                f"annotation {aid} references unknown category_id {category_id}", aid
            )
        image = image_index[image_id]
        bbox_raw = _require(obj, "bbox", f"annotation {aid}")
        try:
            bbox = BoundingBox(*(float(v) for v in bbox_raw)).clip(image.width, image.height)
        except (TypeError, MaskError) as exc:
            raise IntegrityError(f"annotation {aid}: invalid bbox {bbox_raw}: {exc}", aid) from None
        seg = _parse_segmentation(_require(obj, "segmentation", f"annotation {aid}"), aid, image)
        area = obj.get("area")
        annotations.append(
            InstanceAnnotation(
                id=int(aid),
                image_id=int(image_id),
                category_id=int(category_id),
                bbox=bbox,
                segmentation=seg,
                iscrowd=bool(obj.get("iscrowd", 0)),
                area=None if area is None else float(area),
            )
        )
    return Dataset(images, categories, annotations)


def load_dataset(path: str | os.PathLike) -> Dataset:
    with open(path, "rb") as f:
        return parse_dataset(f.read())


def dataset_to_dict(d: Dataset) -> dict:
    def seg_json(seg):
        if isinstance(seg, RleMask):
            return seg.to_coco()
        return [list(p.points) for p in seg]

    anns = []
    for a in d.annotations:
        obj = {
            "id": a.id,
            "image_id": a.image_id,
            "category_id": a.category_id,
            "bbox": a.bbox.as_xywh(),
            "segmentation": seg_json(a.segmentation),
            "iscrowd": int(a.iscrowd),
        }
        if a.area is not None:
            obj["area"] = a.area
        anns.append(obj)
    return {
        "images": [
            {"id": im.id, "width": im.width, "height": im.height, "file_name": im.file_name}
            for im in d.images
        ],
        "categories": [{"id": c.id, "name": c.name} for c in d.categories],
        "annotations": anns,
    }


def serialize_dataset(d: Dataset) -> bytes:
    """Deterministic COCO JSON encoding (RLE segmentations are written compressed)."""
    return json.dumps(dataset_to_dict(d), separators=(",", ":")).encode("utf-8")


# --------------------------------------------------------------------------
# splits


def split_from_dict(obj: dict, default_name: str = "custom") -> ClassSplit:
    try:
        seen = obj["seen"]
        unseen = obj["unseen"]
    except (KeyError, TypeError):
        raise SplitError("split config needs 'seen' and 'unseen' lists") from None
    if not all(isinstance(n, str) for n in list(seen) + list(unseen)):
        raise SplitError("split class names must be strings")
    return ClassSplit(str(obj.get("name", default_name)), tuple(seen), tuple(unseen))


def load_split(name_or_path: str | os.PathLike) -> ClassSplit:
    """Load a built-in split (``"48/17"``, ``"65/15"``) or a JSON split config file."""
    key = str(name_or_path)
    if key in BUILTIN_SPLITS:
        ref = resources.files("zsikit") / "data" / "splits" / BUILTIN_SPLITS[key]
        return split_from_dict(json.loads(ref.read_text()), key)
    if not os.path.isfile(key):
        raise SplitError(
            f"unknown split {key!r}: not a built-in ({', '.join(BUILTIN_SPLITS)}) or a file"
        )
    with open(key) as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as exc:
            raise SplitError(f"{key}: invalid JSON: {exc}") from None
    return split_from_dict(obj, os.path.splitext(os.path.basename(key))[0])


def _roles_per_image(d: Dataset, s: ClassSplit) -> dict[int, set]:
    names = {c.id: c.name for c in d.categories}
    roles: dict[int, set] = {im.id: set() for im in d.images}
    for a in d.annotations:
        if a.iscrowd:
            continue
        r = s.role(names[a.category_id])
        if r is not None:
            roles[a.image_id].add(r)
    return roles


def _subset(d: Dataset, image_ids: set, keep_names: set) -> Dataset:
    cats = tuple(c for c in d.categories if c.name in keep_names)
    keep_cat_ids = {c.id for c in cats}
    images = tuple(im for im in d.images if im.id in image_ids)
    anns = tuple(
        a
        for a in d.annotations
        if a.image_id in image_ids and a.category_id in keep_cat_ids and not a.iscrowd
    )
    return Dataset(images, cats, anns)


def build_training_set(d: Dataset, s: ClassSplit) -> Dataset:
    """Images with at least one seen instance and no unseen instance; seen annotations only."""
    roles = _roles_per_image(d, s)
    keep = {iid for iid, r in roles.items() if "seen" in r and "unseen" not in r}
    return _subset(d, keep, set(s.seen))


def build_test_set(d: Dataset, s: ClassSplit) -> Dataset:
    """Images with at least one unseen instance, keeping their seen and unseen annotations."""
    roles = _roles_per_image(d, s)
    keep = {iid for iid, r in roles.items() if "unseen" in r}
    return _subset(d, keep, set(s.seen) | set(s.unseen))


def split_summary(d: Dataset) -> list[tuple[str, int, int]]:
    """Per-class (name, image count, instance count) in category order."""
    imgs: dict[int, set] = {c.id: set() for c in d.categories}
    inst: dict[int, int] = {c.id: 0 for c in d.categories}
    for a in d.annotations:
        imgs[a.category_id].add(a.image_id)
        inst[a.category_id] += 1
    return [(c.name, len(imgs[c.id]), inst[c.id]) for c in d.categories]


def category_ids_for(d: Dataset, names: Iterable[str]) -> list[int]:
    by_name = d.category_by_name()
    return [by_name[n].id for n in names if n in by_name]
