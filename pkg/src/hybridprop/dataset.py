"""Scene datasets: labeled boxes, annotation JSON IO, feature sidecars,
class splits, label subsampling, and synthetic scene generation.

Annotations use a COCO-style layout (``images``, ``annotations`` with
top-left ``bbox`` [x, y, w, h], ``categories``) extended with two optional
per-annotation fields, ``is_pseudo`` and ``pseudo_score``, and an optional
top-level ``feature_meta`` block describing the per-anchor feature sidecar.
Unknown fields are ignored on load and our extensions round-trip.

Synthetic scenes place non-overlapping class-typed boxes and derive one
feature vector per anchor: per-class coverage channels (how much of the
anchor each class covers) followed by a class-agnostic geometry block (the
clipped delta coding of the nearest object plus a proximity decay), with
seeded gaussian noise. The geometry block is noisier than the coverage
channels, which is what makes classification crisper than quality
regression on these scenes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from hybridprop.anchors import generate_anchors
from hybridprop.geometry import Box, encode_deltas_array, pairwise_iou

PSEUDO_CLASS_ID = 0

# Class-agnostic block: any-class coverage, clipped deltas to the nearest
# object, proximity decay.
GEOMETRY_CHANNELS = 6

# Relative noise scale per feature block. The class signature is noisier
# than the any-object coverage channel: identity stays decodable, but
# per-anchor overlap regression favors the cleaner class-agnostic
# channel when both carry the same gradation.
SIGNATURE_NOISE_SCALE = 0.4
COVERAGE_NOISE_SCALE = 0.25
DELTA_XY_NOISE_SCALE = 1.0
DELTA_WH_NOISE_SCALE = 1.0
PROXIMITY_NOISE_SCALE = 1.0

DELTA_XY_CLIP = 1.5
DELTA_WH_CLIP = 1.2


@dataclass(frozen=True)
class LabeledBox:
    """A box with its class; pseudo-labels carry the score they were
    selected with, ground truth is pinned at 1.
    """

    box: Box
    class_id: int
    is_pseudo: bool = False
    pseudo_score: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.pseudo_score <= 1.0:
            raise ValueError(f"pseudo_score must be in [0, 1], got {self.pseudo_score}")
        if not self.is_pseudo and self.pseudo_score != 1.0:
            raise ValueError("ground-truth labels must have pseudo_score 1.0")


@dataclass(frozen=True)
class SplitConfig:
    """Names the classes treated as in-distribution; everything else in the
    class universe is out-of-distribution.
    """

    name: str
    id_class_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.id_class_ids:
            raise ValueError("a split needs at least one in-distribution class")
        if len(set(self.id_class_ids)) != len(self.id_class_ids):
            raise ValueError(f"duplicate class ids in split: {self.id_class_ids}")

    @classmethod
    def load(cls, path: str | Path) -> SplitConfig:
        with open(path) as f:
            raw = json.load(f)
        try:
            return cls(name=str(raw["name"]), id_class_ids=tuple(int(c) for c in raw["id_class_ids"]))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed split config {path}: {exc}") from exc

    def save(self, path: str | Path) -> None:
        _dump_json({"name": self.name, "id_class_ids": sorted(self.id_class_ids)}, path)


@dataclass(frozen=True)
class FeatureMeta:
    """Shape of the per-anchor feature tensor and the grid it was built on."""

    stride: float
    anchor_size: float
    class_channels: int
    feature_dim: int

    def __post_init__(self) -> None:
        if self.feature_dim != self.class_channels + GEOMETRY_CHANNELS:
            raise ValueError(
                f"feature_dim {self.feature_dim} != class_channels "
                f"{self.class_channels} + {GEOMETRY_CHANNELS}"
            )

    def to_dict(self) -> dict:
        return {
            "stride": self.stride,
            "anchor_size": self.anchor_size,
            "class_channels": self.class_channels,
            "feature_dim": self.feature_dim,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> FeatureMeta:
        return cls(
            stride=float(raw["stride"]),
            anchor_size=float(raw["anchor_size"]),
            class_channels=int(raw["class_channels"]),
            feature_dim=int(raw["feature_dim"]),
        )


@dataclass
class Scene:
    """One image-like unit: extent, labels, and optional anchor features."""

    scene_id: int
    extent: tuple[float, float]
    labels: list[LabeledBox]
    withheld: list[LabeledBox] = field(default_factory=list)
    features: Optional[np.ndarray] = None


@dataclass
class Dataset:
    scenes: list[Scene]
    class_universe: tuple[int, ...]
    feature_meta: Optional[FeatureMeta] = None

    def __len__(self) -> int:
        return len(self.scenes)

    def total_instances(self) -> int:
        """Count of non-pseudo labels across scenes."""
        return sum(1 for s in self.scenes for lb in s.labels if not lb.is_pseudo)

    def class_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for s in self.scenes:
            for lb in s.labels:
                hist[lb.class_id] = hist.get(lb.class_id, 0) + 1
        return hist


def _dump_json(obj: dict, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def save_annotations(dataset: Dataset, path: str | Path) -> None:
    """Write the COCO-style annotation JSON (deterministic byte layout)."""
    images = [
        {"id": s.scene_id, "width": s.extent[0], "height": s.extent[1]}
        for s in dataset.scenes
    ]
    annotations = []
    ann_id = 1
    has_pseudo = False
    for s in dataset.scenes:
        for lb in s.labels:
            b = lb.box
            ann: dict = {
                "id": ann_id,
                "image_id": s.scene_id,
                "category_id": lb.class_id,
                "bbox": [b.x_min, b.y_min, b.width, b.height],
            }
            if lb.is_pseudo:
                ann["is_pseudo"] = True
                ann["pseudo_score"] = lb.pseudo_score
                has_pseudo = True
            annotations.append(ann)
            ann_id += 1
    cat_ids = sorted(dataset.class_universe)
    categories = [{"id": c, "name": f"class_{c}"} for c in cat_ids]
    if has_pseudo:
        categories.insert(0, {"id": PSEUDO_CLASS_ID, "name": "proposal"})
    doc: dict = {"images": images, "annotations": annotations, "categories": categories}
    if dataset.feature_meta is not None:
        doc["feature_meta"] = dataset.feature_meta.to_dict()
    _dump_json(doc, path)


def load_annotations(path: str | Path) -> Dataset:
    """Read annotation JSON, validating references and box sanity.

    Raises ValueError naming the offending annotation and image on bad
    boxes, dangling references, or duplicate ids.
    """
    with open(path) as f:
        raw = json.load(f)
    for key in ("images", "annotations", "categories"):
        if key not in raw:
            raise ValueError(f"{path}: missing top-level key {key!r}")

    scenes_by_id: dict[int, Scene] = {}
    for img in raw["images"]:
        sid = int(img["id"])
        if sid in scenes_by_id:
            raise ValueError(f"{path}: duplicate image id {sid}")
        w, h = float(img["width"]), float(img["height"])
        if w <= 0 or h <= 0:
            raise ValueError(f"image {sid}: extent must be positive, got {(w, h)}")
        scenes_by_id[sid] = Scene(scene_id=sid, extent=(w, h), labels=[])

    cat_ids = {int(c["id"]) for c in raw["categories"]}
    seen_ann: set[int] = set()
    for ann in raw["annotations"]:
        ann_id = int(ann["id"])
        if ann_id in seen_ann:
            raise ValueError(f"annotation {ann_id}: duplicate annotation id")
        seen_ann.add(ann_id)
        image_id = int(ann["image_id"])
        if image_id not in scenes_by_id:
            raise ValueError(f"annotation {ann_id}: unknown image id {image_id}")
        cat = int(ann["category_id"])
        if cat not in cat_ids:
            raise ValueError(
                f"annotation {ann_id} in image {image_id}: unknown category id {cat}"
            )
        bbox = ann["bbox"]
        if len(bbox) != 4 or not all(math.isfinite(float(v)) for v in bbox):
            raise ValueError(
                f"annotation {ann_id} in image {image_id}: malformed bbox {bbox}"
            )
        x, y, w, h = (float(v) for v in bbox)
        if w < 0 or h < 0:
            raise ValueError(
                f"annotation {ann_id} in image {image_id}: negative bbox size {(w, h)}"
            )
        is_pseudo = bool(ann.get("is_pseudo", False))
        score = float(ann.get("pseudo_score", 1.0))
        if not 0.0 <= score <= 1.0:
            raise ValueError(
                f"annotation {ann_id} in image {image_id}: pseudo_score {score} outside [0, 1]"
            )
        scenes_by_id[image_id].labels.append(
            LabeledBox(Box(x, y, x + w, y + h), cat, is_pseudo=is_pseudo, pseudo_score=score)
        )

    universe = tuple(sorted(cat_ids - {PSEUDO_CLASS_ID}))
    meta = None
    if "feature_meta" in raw:
        meta = FeatureMeta.from_dict(raw["feature_meta"])
    # Insertion order matches the images array, which is what feature
    # sidecar rows are aligned to.
    return Dataset(
        scenes=list(scenes_by_id.values()),
        class_universe=universe,
        feature_meta=meta,
    )


def save_features(dataset: Dataset, path: str | Path) -> None:
    """Write the (scenes, anchors, dim) feature stack as a plain .npy."""
    if dataset.feature_meta is None:
        raise ValueError("dataset has no feature_meta; nothing to save")
    stacks = []
    for s in dataset.scenes:
        if s.features is None:
            raise ValueError(f"scene {s.scene_id} has no features")
        stacks.append(s.features)
    arr = np.stack(stacks).astype(np.float64)
    np.save(path, arr)


def load_features(dataset: Dataset, path: str | Path) -> None:
    """Attach a feature sidecar to a loaded dataset, validating shapes."""
    meta = dataset.feature_meta
    if meta is None:
        raise ValueError("dataset has no feature_meta; cannot interpret features")
    arr = np.load(path)
    if arr.ndim != 3 or arr.shape[0] != len(dataset.scenes) or arr.shape[2] != meta.feature_dim:
        raise ValueError(
            f"feature stack shape {arr.shape} does not match "
            f"{len(dataset.scenes)} scenes x anchors x {meta.feature_dim}"
        )
    for i, s in enumerate(dataset.scenes):
        grid = generate_anchors(s.extent, meta.stride, meta.anchor_size)
        if arr.shape[1] != len(grid):
            raise ValueError(
                f"scene {s.scene_id}: {arr.shape[1]} feature rows != {len(grid)} anchors"
            )
        s.features = arr[i]


def save_dataset(dataset: Dataset, stem: str | Path) -> tuple[Path, Optional[Path]]:
    """Write ``<stem>.json`` and, when features exist, ``<stem>.npy``."""
    stem = Path(stem)
    ann_path = stem.with_suffix(".json")
    save_annotations(dataset, ann_path)
    feat_path = None
    if dataset.feature_meta is not None and all(s.features is not None for s in dataset.scenes):
        feat_path = stem.with_suffix(".npy")
        save_features(dataset, feat_path)
    return ann_path, feat_path


def load_dataset(ann_path: str | Path, features_path: str | Path | None = None) -> Dataset:
    """Load annotations plus the feature sidecar when present.

    With no explicit path, a sibling ``.npy`` next to the JSON is used if it
    exists.
    """
    ds = load_annotations(ann_path)
    if features_path is None:
        candidate = Path(ann_path).with_suffix(".npy")
        features_path = candidate if candidate.exists() else None
    if features_path is not None:
        load_features(ds, features_path)
    return ds


def apply_split(dataset: Dataset, split: SplitConfig) -> Dataset:
    """Restrict a dataset to its in-distribution labels.

    Labels outside the split move to ``withheld``; scenes left with no ID
    label are dropped entirely. Already-withheld labels are preserved, so
    the operation is idempotent.
    """
    unknown = set(split.id_class_ids) - set(dataset.class_universe)
    if unknown:
        raise ValueError(
            f"split {split.name!r} names classes {sorted(unknown)} "
            f"outside the universe {dataset.class_universe}"
        )
    id_set = set(split.id_class_ids)
    scenes: list[Scene] = []
    for s in dataset.scenes:
        kept = [lb for lb in s.labels if lb.class_id in id_set]
        moved = [lb for lb in s.labels if lb.class_id not in id_set]
        if not kept:
            continue
        scenes.append(
            Scene(
                scene_id=s.scene_id,
                extent=s.extent,
                labels=kept,
                withheld=list(s.withheld) + moved,
                features=s.features,
            )
        )
    if not scenes:
        raise ValueError(f"split {split.name!r} leaves no scenes with labels")
    return Dataset(scenes=scenes, class_universe=dataset.class_universe,
                   feature_meta=dataset.feature_meta)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def subsample_labels(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Keep a per-class round-half-up fraction of labels, chosen with the
    seeded rng; scenes left empty are dropped. fraction=1 is the identity.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[tuple[int, int]]] = {}
    for si, s in enumerate(dataset.scenes):
        for li, lb in enumerate(s.labels):
            by_class.setdefault(lb.class_id, []).append((si, li))
    keep: set[tuple[int, int]] = set()
    for class_id in sorted(by_class):
        slots = by_class[class_id]
        n_keep = _round_half_up(fraction * len(slots))
        order = rng.permutation(len(slots))[:n_keep]
        keep.update(slots[i] for i in sorted(order))
    scenes = []
    for si, s in enumerate(dataset.scenes):
        kept = [lb for li, lb in enumerate(s.labels) if (si, li) in keep]
        if not kept:
            continue
        scenes.append(replace(s, labels=kept, withheld=list(s.withheld)))
    if not scenes:
        raise ValueError("subsampling removed every labeled scene")
    return Dataset(scenes=scenes, class_universe=dataset.class_universe,
                   feature_meta=dataset.feature_meta)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for synthetic scene generation.

    Class ids 1..n_id_classes are the intended in-distribution classes and
    the next n_ood_classes ids the out-of-distribution ones; the natural
    split for a config is :func:`default_split`.
    """

    n_scenes: int
    extent: tuple[float, float] = (240.0, 240.0)
    n_id_classes: int = 3
    n_ood_classes: int = 3
    instances_min: int = 5
    instances_max: int = 9
    stride: float = 8.0
    anchor_size: float = 16.0
    noise: float = 0.08
    size_min: float = 16.0
    size_max: float = 24.0
    aspect_min: float = 0.8
    aspect_max: float = 1.25
    size_jitter: float = 0.15
    max_overlap: float = 0.3
    placement_attempts: int = 40
    clutter_min: int = 3
    clutter_max: int = 6

    def __post_init__(self) -> None:
        if self.n_scenes < 1:
            raise ValueError("n_scenes must be >= 1")
        if self.n_id_classes < 1 or self.n_ood_classes < 0:
            raise ValueError("need >= 1 ID class and >= 0 OOD classes")
        if not 1 <= self.instances_min <= self.instances_max:
            raise ValueError("need 1 <= instances_min <= instances_max")
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise ValueError(f"extent must be positive, got {self.extent}")
        if not 0.0 < self.size_min <= self.size_max:
            raise ValueError("need 0 < size_min <= size_max")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if not 0 <= self.clutter_min <= self.clutter_max:
            raise ValueError("need 0 <= clutter_min <= clutter_max")
        big = self.size_max * self.aspect_max * (1.0 + self.size_jitter)
        if big > min(self.extent):
            raise ValueError("largest possible box does not fit in the scene")

    @property
    def class_universe(self) -> tuple[int, ...]:
        return tuple(range(1, self.n_id_classes + self.n_ood_classes + 1))

    def default_split(self, name: str = "synthetic") -> SplitConfig:
        return SplitConfig(name=name, id_class_ids=tuple(range(1, self.n_id_classes + 1)))


def synthesize(cfg: SynthConfig, seed: int) -> Dataset:
    """Generate scenes, labels, and per-anchor features deterministically.

    Classes are dealt round-robin from a shuffled cycle so dataset-level
    class counts stay within one cycle of exact balance. Instances are
    placed with rejection sampling against pairwise IoU above
    cfg.max_overlap (accepting the final attempt if rejection keeps
    failing, so generation always terminates).

    Each scene also receives unlabeled clutter: box-shaped distractors
    that light the shared coverage and geometry channels but no class
    channel and never appear in scene.labels. Clutter shapes are drawn
    from the same per-class profiles as real instances, so nothing in
    the geometry block separates a distractor from a labeled object.
    """
    rng = np.random.default_rng(seed)
    universe = cfg.class_universe
    n_classes = len(universe)
    scale = rng.uniform(cfg.size_min, cfg.size_max, n_classes)
    aspect = rng.uniform(cfg.aspect_min, cfg.aspect_max, n_classes)
    deal = rng.permutation(n_classes)
    dealt = 0

    scenes: list[Scene] = []
    meta = FeatureMeta(
        stride=cfg.stride,
        anchor_size=cfg.anchor_size,
        class_channels=n_classes,
        feature_dim=n_classes + GEOMETRY_CHANNELS,
    )
    for sid in range(cfg.n_scenes):
        n_inst = int(rng.integers(cfg.instances_min, cfg.instances_max + 1))
        n_clutter = int(rng.integers(cfg.clutter_min, cfg.clutter_max + 1))
        labels: list[LabeledBox] = []
        clutter: list[Box] = []
        placed: list[Box] = []
        for k in range(n_inst + n_clutter):
            if k < n_inst:
                ci = int(deal[dealt % n_classes])
                dealt += 1
                class_id = universe[ci]
                base_w = scale[ci] * aspect[ci]
                base_h = scale[ci] / aspect[ci]
            else:
                class_id = 0
                ci = int(rng.integers(n_classes))
                base_w = scale[ci] * aspect[ci]
                base_h = scale[ci] / aspect[ci]
            for attempt in range(cfg.placement_attempts):
                jw = rng.uniform(1.0 - cfg.size_jitter, 1.0 + cfg.size_jitter)
                jh = rng.uniform(1.0 - cfg.size_jitter, 1.0 + cfg.size_jitter)
                w = base_w * jw
                h = base_h * jh
                cx = rng.uniform(0.5 * w, cfg.extent[0] - 0.5 * w)
                cy = rng.uniform(0.5 * h, cfg.extent[1] - 0.5 * h)
                box = Box.from_center(cx, cy, w, h)
                if placed:
                    overlaps = pairwise_iou(
                        box.as_array()[None, :], np.stack([p.as_array() for p in placed])
                    )
                    if overlaps.max() > cfg.max_overlap and attempt < cfg.placement_attempts - 1:
                        continue
                placed.append(box)
                if class_id:
                    labels.append(LabeledBox(box, class_id))
                else:
                    clutter.append(box)
                break
        features = _scene_features(cfg, labels, clutter, rng)
        scenes.append(Scene(scene_id=sid, extent=cfg.extent, labels=labels, features=features))
    return Dataset(scenes=scenes, class_universe=universe, feature_meta=meta)


def _scene_features(
    cfg: SynthConfig,
    labels: Sequence[LabeledBox],
    clutter: Sequence[Box],
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-anchor features: class coverage channels, then the geometry block.

    Class channels see labeled instances only; the any-object coverage
    channel and the geometry channels see clutter too.
    """
    grid = generate_anchors(cfg.extent, cfg.stride, cfg.anchor_size)
    n_anchors = len(grid)
    n_classes = len(cfg.class_universe)
    dim = n_classes + GEOMETRY_CHANNELS
    feats = np.zeros((n_anchors, dim), dtype=np.float64)

    all_boxes = [lb.box for lb in labels] + list(clutter)
    if all_boxes:
        boxes = np.stack([b.as_array() for b in all_boxes])
        a = grid.boxes
        ix = np.minimum(a[:, None, 2], boxes[None, :, 2]) - np.maximum(a[:, None, 0], boxes[None, :, 0])
        iy = np.minimum(a[:, None, 3], boxes[None, :, 3]) - np.maximum(a[:, None, 1], boxes[None, :, 1])
        inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
        anchor_area = cfg.anchor_size * cfg.anchor_size
        coverage = inter / anchor_area
        for j, lb in enumerate(labels):
            ch = lb.class_id - 1
            feats[:, ch] = np.maximum(feats[:, ch], coverage[:, j])

        g0 = n_classes
        feats[:, g0] = coverage.max(axis=1)

        centers = grid.centers
        obj_centers = 0.5 * (boxes[:, :2] + boxes[:, 2:])
        d2 = ((centers[:, None, :] - obj_centers[None, :, :]) ** 2).sum(axis=2)
        nearest = d2.argmin(axis=1)
        deltas = encode_deltas_array(a, boxes[nearest])
        feats[:, g0 + 1] = np.clip(deltas[:, 0], -DELTA_XY_CLIP, DELTA_XY_CLIP)
        feats[:, g0 + 2] = np.clip(deltas[:, 1], -DELTA_XY_CLIP, DELTA_XY_CLIP)
        feats[:, g0 + 3] = np.clip(deltas[:, 2], -DELTA_WH_CLIP, DELTA_WH_CLIP)
        feats[:, g0 + 4] = np.clip(deltas[:, 3], -DELTA_WH_CLIP, DELTA_WH_CLIP)
        dist = np.sqrt(d2[np.arange(n_anchors), nearest])
        feats[:, g0 + 5] = np.exp(-dist / cfg.anchor_size)

    noise_scale = np.concatenate([
        np.full(n_classes, SIGNATURE_NOISE_SCALE),
        [
            COVERAGE_NOISE_SCALE,
            DELTA_XY_NOISE_SCALE,
            DELTA_XY_NOISE_SCALE,
            DELTA_WH_NOISE_SCALE,
            DELTA_WH_NOISE_SCALE,
            PROXIMITY_NOISE_SCALE,
        ],
    ])
    feats += rng.normal(0.0, 1.0, feats.shape) * (cfg.noise * noise_scale)[None, :]
    return feats
