"""IoU matching, per-class average precision and mAP, plus a PSNR baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .artifact_io import BoundingBox, Detection, GroundTruthObject
from .errors import DimMismatch, EmptyClassList
from .similarity import SimilarityTable, canonical_class, normalize_label

ALL_POINT = "all_point"
ELEVEN_POINT = "eleven_point"
AP_MODES = (ALL_POINT, ELEVEN_POINT)


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    ap_mode: str = ALL_POINT
    classes: Optional[tuple[str, ...]] = None  # None: every class with ground truth

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError(f"iou_threshold must be in (0, 1), got {self.iou_threshold}")
        if self.ap_mode not in AP_MODES:
            raise ValueError(f"ap_mode must be one of {AP_MODES}")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class MatchRecord:
    detection: Detection
    gt_index: Optional[int]  # index into ClassMatches.ground_truth
    is_tp: bool


@dataclass
class ClassMatches:
    records: list[MatchRecord] = field(default_factory=list)
    ground_truth: list[GroundTruthObject] = field(default_factory=list)

    @property
    def n_gt(self) -> int:
        return len(self.ground_truth)

    @property
    def tp(self) -> int:
        return sum(r.is_tp for r in self.records)

    @property
    def fp(self) -> int:
        return len(self.records) - self.tp

    @property
    def flags(self) -> list[bool]:
        return [r.is_tp for r in self.records]


MatchSet = dict[str, ClassMatches]


def _class_of(label: str, table: SimilarityTable) -> Optional[str]:
    return canonical_class(normalize_label(label), table)


def match_class(
    dets: Sequence[Detection], gts: Sequence[GroundTruthObject], iou_threshold: float
) -> ClassMatches:
    """Greedy single-class matching.

    Detections are visited by descending score; ties go to the detection with
    the higher best-IoU in its image, then lexicographic image id, then input
    order. Each claims the unmatched ground truth of its image with the highest
    IoU at or above the threshold (lowest index on equal IoU).
    """
    by_image: dict[str, list[int]] = {}
    for gi, g in enumerate(gts):
        by_image.setdefault(g.image_id, []).append(gi)

    def best_iou(d: Detection) -> float:
        return max((iou(d.box, gts[gi].box) for gi in by_image.get(d.image_id, ())), default=0.0)

    order = sorted(
        range(len(dets)),
        key=lambda i: (-dets[i].score, -best_iou(dets[i]), dets[i].image_id, i),
    )
    taken = [False] * len(gts)
    out = ClassMatches(ground_truth=list(gts))
    for i in order:
        d = dets[i]
        best, best_gi = -1.0, None
        for gi in by_image.get(d.image_id, ()):
            if taken[gi]:
                continue
            o = iou(d.box, gts[gi].box)
            if o >= iou_threshold and o > best:
                best, best_gi = o, gi
        if best_gi is not None:
            taken[best_gi] = True
        out.records.append(MatchRecord(d, best_gi, best_gi is not None))
    return out


def match_detections(
    dets: Iterable[Detection],
    gts: Iterable[GroundTruthObject],
    iou_threshold: float,
    table: SimilarityTable,
) -> MatchSet:
    """Bucket by canonical class, then match within each class.

    Labels outside the similarity table's vocabulary are dropped.
    """
    det_buckets: dict[str, list[Detection]] = {}
    gt_buckets: dict[str, list[GroundTruthObject]] = {}
    for d in dets:
        c = _class_of(d.label, table)
        if c is not None:
            det_buckets.setdefault(c, []).append(d)
    for g in gts:
        c = _class_of(g.label, table)
        if c is not None:
            gt_buckets.setdefault(c, []).append(g)
    classes = list(dict.fromkeys([*gt_buckets, *det_buckets]))
    return {
        c: match_class(det_buckets.get(c, []), gt_buckets.get(c, []), iou_threshold)
        for c in classes
    }


def average_precision(flags: Sequence[bool], n_gt: int, mode: str = ALL_POINT) -> float:
    """AP from TP/FP flags already sorted by descending score.

    Returns 0.0 when there is no ground truth.
    """
    if n_gt <= 0 or len(flags) == 0:
        return 0.0
    tp = np.cumsum(np.asarray(flags, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(flags, dtype=np.float64))
    recall = tp / n_gt
    precision = tp / (tp + fp)
    if mode == ELEVEN_POINT:
        total = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            p = precision[recall >= t]
            total += p.max() if p.size else 0.0
        return float(total / 11.0)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mean_ap(classes: Sequence[str], aps: Mapping[str, float]) -> float:
    """Mean AP over ``classes``; classes absent from ``aps`` count as zero."""
    if not classes:
        raise EmptyClassList("mAP needs at least one class")
    return math.fsum(aps.get(c, 0.0) for c in classes) / len(classes)


def display_percent(x: float) -> int:
    """Integer percent, rounding half up (on the shortest decimal repr of ``x``)."""
    return int((Decimal(repr(float(x))) * 100).quantize(Decimal(1), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class ClassResult:
    ap: float
    tp: int
    fp: int
    gt: int


@dataclass(frozen=True)
class ApReport:
    classes: tuple[str, ...]
    results: Mapping[str, ClassResult]
    map: float

    @property
    def aps(self) -> dict[str, float]:
        return {c: self.results[c].ap for c in self.classes}

    def display(self) -> dict[str, int]:
        out = {c: display_percent(self.results[c].ap) for c in self.classes}
        out["map"] = display_percent(self.map)
        return out

    def to_json(self) -> dict:
        return {
            "classes": {
                c: {"ap": r.ap, "tp": r.tp, "fp": r.fp, "gt": r.gt}
                for c, r in ((c, self.results[c]) for c in self.classes)
            },
            "map": self.map,
            "display": self.display(),
        }

    @classmethod
    def from_aps(cls, classes: Sequence[str], aps: Mapping[str, float]) -> "ApReport":
        """Report from bare per-class APs (counts left at zero)."""
        results = {c: ClassResult(float(aps.get(c, 0.0)), 0, 0, 0) for c in classes}
        return cls(tuple(classes), results, mean_ap(classes, aps))


def evaluate(
    dets: Iterable[Detection],
    gts: Iterable[GroundTruthObject],
    table: SimilarityTable,
    config: EvalConfig = EvalConfig(),
) -> ApReport:
    matches = match_detections(dets, gts, config.iou_threshold, table)
    if config.classes is not None:
        classes = tuple(config.classes)
    else:
        classes = tuple(sorted(c for c, m in matches.items() if m.n_gt > 0))
    results = {}
    for c in classes:
        m = matches.get(c, ClassMatches())
        ap = average_precision(m.flags, m.n_gt, config.ap_mode)
        results[c] = ClassResult(ap, m.tp, m.fp, m.n_gt)
    return ApReport(classes, results, mean_ap(classes, {c: r.ap for c, r in results.items()}))


def psnr(image_a: np.ndarray, image_b: np.ndarray) -> float:
    """PSNR in dB for 8-bit images; ``math.inf`` when identical."""
    a = np.asarray(image_a)
    b = np.asarray(image_b)
    if a.shape != b.shape:
        raise DimMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * math.log10(255.0**2 / mse))


def format_db(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"
