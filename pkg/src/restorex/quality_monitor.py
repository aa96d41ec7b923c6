"""Stage restoration-quality score and training guidance.

For one training stage with ``N`` generated samples::

    phi = sum(S(p, a) * d) / N

where ``S`` is the binary label similarity between the predicted label ``p``
and the actual label ``a`` and ``d`` is the explanation probability reported
for the prediction. ``delta_phi`` is the change in ``phi`` between
consecutive stages and drives the continue/flag/stop decision.

``phi`` and ``delta_phi`` are carried as exact fractions alongside floats so
that deltas telescope exactly.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .artifact_io import (
    Detection,
    ImageDetections,
    ImageObjects,
    StageEntry,
    StageManifest,
    parse_detections,
    parse_ground_truth,
)
from .detection_eval import iou
from .errors import (
    EmptyStage,
    MissingExplainProb,
    NoGroundTruth,
    RestorexError,
    SchemaError,
    StageError,
)
from .similarity import SimilarityTable, normalize_label, similarity

log = logging.getLogger(__name__)

PRIMARY_OBJECT = "primary_object"
PER_DETECTION = "per_detection"
PAIRING_MODES = (PRIMARY_OBJECT, PER_DETECTION)

CONTINUE = "continue"
FLAG = "flag"
STOP = "stop"


@dataclass(frozen=True)
class SampleScore:
    image_id: str
    p: Optional[str]
    a: Optional[str]
    s: int
    d: Optional[float]

    @property
    def term(self) -> float:
        return self.s * (self.d or 0.0)


@dataclass(frozen=True)
class StageQuality:
    stage_id: int
    n: int
    phi_exact: Fraction

    @property
    def phi(self) -> float:
        return float(self.phi_exact)


@dataclass(frozen=True)
class GuidancePolicy:
    drop_tolerance: float = 0.05
    patience: int = 2
    min_phi: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.drop_tolerance <= 1.0:
            raise SchemaError(f"drop_tolerance must be in [0, 1], got {self.drop_tolerance}")
        if isinstance(self.patience, bool) or not isinstance(self.patience, int) or self.patience < 1:
            raise SchemaError(f"patience must be an integer >= 1, got {self.patience!r}")
        if not 0.0 <= self.min_phi <= 1.0:
            raise SchemaError(f"min_phi must be in [0, 1], got {self.min_phi}")

    @classmethod
    def from_json(cls, text: str | bytes) -> "GuidancePolicy":
        try:
            doc = json.loads(text)
        except (ValueError, TypeError, RecursionError) as exc:
            raise SchemaError(f"invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise SchemaError("policy must be a JSON object")
        unknown = set(doc) - {"drop_tolerance", "patience", "min_phi"}
        if unknown:
            raise SchemaError(f"unknown policy fields: {sorted(unknown)}")
        for key in ("drop_tolerance", "min_phi"):
            if key in doc and (isinstance(doc[key], bool) or not isinstance(doc[key], (int, float))):
                raise SchemaError(f"{key} must be a number")
        return cls(**doc)


@dataclass
class Trajectory:
    stages: list[StageQuality]
    deltas_exact: list[Fraction]
    decisions: list[str]
    rollback_to: Optional[int]
    attention: dict[int, Optional[float]] = field(default_factory=dict)

    @property
    def deltas(self) -> list[float]:
        return [float(x) for x in self.deltas_exact]

    @property
    def stopped(self) -> bool:
        return STOP in self.decisions

    def to_json(self) -> dict:
        stages = []
        for q, decision in zip(self.stages, self.decisions):
            rec = {"id": q.stage_id, "n": q.n, "phi": q.phi, "decision": decision}
            if q.stage_id in self.attention:
                rec["attention"] = self.attention[q.stage_id]
            stages.append(rec)
        out = {"stages": stages, "deltas": self.deltas}
        if self.rollback_to is not None:
            out["rollback_to"] = self.rollback_to
        return out


def phi(samples: Sequence[SampleScore], stage_id: int = 0) -> StageQuality:
    if not samples:
        raise EmptyStage(f"stage {stage_id} has no samples")
    total = Fraction(0)
    for smp in samples:
        if smp.d is None:
            raise MissingExplainProb(f"sample {smp.image_id!r} has no explanation probability")
        total += smp.s * Fraction(smp.d)
    return StageQuality(stage_id, len(samples), total / len(samples))


def _check_explain(det: Detection) -> float:
    if det.explain_prob is None:
        raise MissingExplainProb(
            f"detection {det.label!r} in image {det.image_id!r} has no explain_prob"
        )
    return det.explain_prob


def _primary_gt(img: ImageObjects):
    flagged = [o for o in img.objects if o.primary]
    if flagged:
        return flagged[0]
    # largest area; first in file order on ties
    return max(img.objects, key=lambda o: o.box.area)


def build_samples(
    detections: Sequence[ImageDetections],
    ground_truth: Sequence[ImageObjects],
    table: SimilarityTable,
    pairing_mode: str = PRIMARY_OBJECT,
) -> list[SampleScore]:
    """One sample per ground-truth image (``primary_object``) or per detection.

    ``primary_object``: the image's verdict is its detection with the highest
    explain_prob (ties: higher score, then file order); the actual label is
    the primary-flagged object, else the largest box.

    ``per_detection``: every detection is matched at IoU >= 0.5 to an unmatched
    object of its image (descending score); unmatched detections score 0.

    Images without any detection contribute a zero sample in both modes.
    """
    if pairing_mode not in PAIRING_MODES:
        raise ValueError(f"pairing_mode must be one of {PAIRING_MODES}")
    gt_by_id = {img.image_id: img for img in ground_truth}
    det_by_id = {img.image_id: img for img in detections}
    for img in detections:
        if img.detections and (img.image_id not in gt_by_id or not gt_by_id[img.image_id].objects):
            if pairing_mode == PRIMARY_OBJECT:
                raise NoGroundTruth(f"image {img.image_id!r} has detections but no ground truth")

    samples: list[SampleScore] = []
    image_ids = list(dict.fromkeys([*gt_by_id, *det_by_id]))
    for image_id in image_ids:
        gt_img = gt_by_id.get(image_id)
        det_img = det_by_id.get(image_id)
        dets = det_img.detections if det_img else ()
        objs = gt_img.objects if gt_img else ()
        if not dets:
            a = normalize_label(_primary_gt(gt_img).label) if objs else None
            samples.append(SampleScore(image_id, None, a, 0, 0.0))
            continue
        if pairing_mode == PRIMARY_OBJECT:
            probs = [_check_explain(d) for d in dets]
            best = max(range(len(dets)), key=lambda i: (probs[i], dets[i].score, -i))
            verdict = dets[best]
            p = normalize_label(verdict.label)
            a = normalize_label(_primary_gt(gt_img).label)
            samples.append(SampleScore(image_id, p, a, similarity(p, a, table), probs[best]))
            continue
        order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
        taken = [False] * len(objs)
        for i in order:
            d = dets[i]
            prob = _check_explain(d)
            p = normalize_label(d.label)
            best_o, best_j = -1.0, None
            for j, o in enumerate(objs):
                if taken[j]:
                    continue
                ov = iou(d.box, o.box)
                if ov >= 0.5 and ov > best_o:
                    best_o, best_j = ov, j
            if best_j is None:
                samples.append(SampleScore(image_id, p, None, 0, prob))
                continue
            taken[best_j] = True
            a = normalize_label(objs[best_j].label)
            samples.append(SampleScore(image_id, p, a, similarity(p, a, table), prob))
    return samples


def decide(phis: Sequence[float], policy: GuidancePolicy) -> tuple[list[str], Optional[int]]:
    """Per-stage decisions and the rollback index for a phi sequence.

    A stage is a *drop* when phi fell by more than the tolerance since the
    previous stage. ``stop`` after ``patience`` consecutive drops or when phi
    is under the floor, ``flag`` on a shorter run of drops, else ``continue``.
    The rollback index is the best stage when that is not the latest one.
    """
    decisions = []
    run = 0
    for i, value in enumerate(phis):
        if i > 0 and value - phis[i - 1] < -policy.drop_tolerance:
            run += 1
        else:
            run = 0
        if run >= policy.patience or value < policy.min_phi:
            decisions.append(STOP)
        elif run > 0:
            decisions.append(FLAG)
        else:
            decisions.append(CONTINUE)
    rollback = None
    if phis:
        best = max(range(len(phis)), key=lambda i: (phis[i], -i))
        if best != len(phis) - 1:
            rollback = best
    return decisions, rollback


def trajectory_from_qualities(
    qualities: Sequence[StageQuality], policy: GuidancePolicy = GuidancePolicy()
) -> Trajectory:
    exact = [q.phi_exact for q in qualities]
    deltas = [b - a for a, b in zip(exact, exact[1:])]
    decisions, rollback = decide([float(x) for x in exact], policy)
    return Trajectory(
        list(qualities),
        deltas,
        decisions,
        qualities[rollback].stage_id if rollback is not None else None,
    )


def stage_quality(
    entry: StageEntry, table: SimilarityTable, pairing_mode: str = PRIMARY_OBJECT
) -> StageQuality:
    try:
        dets = parse_detections(entry.detections_path.read_bytes())
        gts = parse_ground_truth(entry.ground_truth_path.read_bytes())
        return phi(build_samples(dets, gts, table, pairing_mode), entry.stage_id)
    except RestorexError as exc:
        raise StageError(entry.stage_id, exc) from exc
    except OSError as exc:
        raise StageError(entry.stage_id, RestorexError(str(exc))) from exc


def trajectory(
    manifest: StageManifest,
    table: SimilarityTable,
    policy: GuidancePolicy = GuidancePolicy(),
    pairing_mode: str = PRIMARY_OBJECT,
    threads: Optional[int] = None,
) -> Trajectory:
    """Score every stage of ``manifest`` (in parallel) and apply ``policy``."""
    entries = list(manifest)
    if not entries:
        raise EmptyStage("manifest has no stages")
    with ThreadPoolExecutor(max_workers=threads) as pool:
        qualities = list(pool.map(lambda e: stage_quality(e, table, pairing_mode), entries))
    return trajectory_from_qualities(qualities, policy)


def stage_attention(entry: StageEntry, threads: Optional[int] = None) -> Optional[float]:
    """Mean attention-in-box over images with a tensor pair in ``attention_dir``.

    ``None`` when the stage has no attention directory or no usable pairs.
    """
    from .gradcam import attention_for_pairs

    if entry.attention_dir is None:
        return None
    try:
        gts = parse_ground_truth(entry.ground_truth_path.read_bytes())
        jobs = []
        for img in gts:
            f = entry.attention_dir / f"{img.image_id}.features.rxt"
            g = entry.attention_dir / f"{img.image_id}.gradients.rxt"
            if img.objects and f.exists() and g.exists():
                jobs.append((f, g, img.height, img.width, [o.box for o in img.objects]))
        fractions = attention_for_pairs(jobs, threads)
    except RestorexError as exc:
        raise StageError(entry.stage_id, exc) from exc
    usable = [f.value for f in fractions if not f.is_blank]
    if not usable:
        return None
    return math.fsum(usable) / len(usable)


@dataclass(frozen=True)
class ImprovementSummary:
    percents: list[Optional[float]]
    mean: Optional[float]


def _exact(x: float) -> Fraction:
    # Decimal inputs like 0.05 are meant literally, not as their binary approximation.
    return Fraction(repr(float(x)))


def mean_improvement(percents: Sequence[Optional[float]]) -> Optional[float]:
    defined = [_exact(p) for p in percents if p is not None]
    if not defined:
        return None
    return float(sum(defined) / len(defined))


def improvement_summary(before: Sequence[float], after: Sequence[float]) -> ImprovementSummary:
    """Percent change in mAP per technique and its mean.

    A non-positive baseline yields an undefined (``None``) entry that is left
    out of the mean.
    """
    if len(before) != len(after) or not before:
        raise ValueError("before and after must be non-empty and of equal length")
    percents: list[Optional[float]] = []
    for i, (b, a) in enumerate(zip(before, after)):
        if b <= 0:
            log.warning("pair %d has baseline %r; percent change undefined", i, b)
            percents.append(None)
            continue
        percents.append(float(100 * (_exact(a) - _exact(b)) / _exact(b)))
    return ImprovementSummary(percents, mean_improvement(percents))
