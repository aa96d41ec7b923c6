"""Slow reference implementations used to cross-check the fast paths.

Nothing here imports from ``gradcam`` or ``detection_eval``; the point is to
get the same numbers by a different route.
"""

from __future__ import annotations

from typing import Sequence

from .artifact_io import Detection, GroundTruthObject, Tensor3


def gradcam_naive(features: Tensor3, gradients: Tensor3) -> list[list[float]]:
    """Grad-CAM by explicit loops over channels and pixels."""
    k, u, v = features.k, features.u, features.v
    f = features.flat()
    g = gradients.flat()
    weights = []
    for c in range(k):
        acc = 0.0
        for y in range(u):
            for x in range(v):
                acc += g[(c * u + y) * v + x]
        weights.append(acc / (u * v))
    out = []
    for y in range(u):
        row = []
        for x in range(v):
            acc = 0.0
            for c in range(k):
                acc += weights[c] * f[(c * u + y) * v + x]
            row.append(acc if acc > 0.0 else 0.0)
        out.append(row)
    return out


def _overlap(a, b) -> float:
    ax0, ay0, ax1, ay1 = a.x_min, a.y_min, a.x_max, a.y_max
    bx0, by0, bx1, by1 = b.x_min, b.y_min, b.x_max, b.y_max
    w = min(ax1, bx1) - max(ax0, bx0)
    h = min(ay1, by1) - max(ay0, by0)
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def greedy_flags(
    dets: Sequence[Detection], gts: Sequence[GroundTruthObject], iou_threshold: float
) -> list[bool]:
    """TP/FP flag per detection, in visiting order, by exhaustive search.

    At every step, scan all remaining detections for the next one to visit
    and all ground truth for the best unclaimed partner.
    """
    remaining = list(range(len(dets)))
    claimed: set[int] = set()
    flags = []

    def priority(i: int):
        d = dets[i]
        best = 0.0
        for g in gts:
            if g.image_id == d.image_id:
                best = max(best, _overlap(d.box, g.box))
        return (-d.score, -best, d.image_id, i)

    while remaining:
        pick = remaining[0]
        for i in remaining[1:]:
            if priority(i) < priority(pick):
                pick = i
        remaining.remove(pick)
        d = dets[pick]
        partner, partner_iou = None, 0.0
        for j, g in enumerate(gts):
            if j in claimed or g.image_id != d.image_id:
                continue
            o = _overlap(d.box, g.box)
            if o >= iou_threshold and (partner is None or o > partner_iou):
                partner, partner_iou = j, o
        if partner is not None:
            claimed.add(partner)
        flags.append(partner is not None)
    return flags


def ap_from_flags_bruteforce(flags: Sequence[bool], n_gt: int) -> float:
    """All-point AP by counting TP/FP at every cut of the ranked list.

    For each recall level j/n_gt, take the best precision among cuts that
    reach it; AP is the mean of those over j = 1..n_gt.
    """
    if n_gt == 0:
        return 0.0
    cuts = []
    for n in range(1, len(flags) + 1):
        tp = sum(1 for f in flags[:n] if f)
        fp = n - tp
        cuts.append((tp, tp / (tp + fp)))
    total = 0.0
    for j in range(1, n_gt + 1):
        best = 0.0
        for tp, prec in cuts:
            if tp >= j and prec > best:
                best = prec
        total += best
    return total / n_gt


def ap_bruteforce(
    dets: Sequence[Detection], gts: Sequence[GroundTruthObject], iou_threshold: float = 0.5
) -> float:
    """Single-class AP: exhaustive greedy matching, then brute-force PR counting."""
    return ap_from_flags_bruteforce(greedy_flags(dets, gts, iou_threshold), len(gts))
