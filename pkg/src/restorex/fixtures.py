"""Deterministic synthetic fixtures: annotations, tensors, PNGs and a manifest.

All randomness comes from one ``numpy.random.Generator`` over ``PCG64`` seeded
with ``FixtureSpec.seed``; PCG64 output is specified bit-for-bit and is the
same on every platform numpy supports. Files are written in a fixed order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .artifact_io import (
    BoundingBox,
    Detection,
    GroundTruthObject,
    ImageDetections,
    ImageObjects,
    Tensor3,
    dump_detections,
    dump_ground_truth,
    write_png,
    write_tensor_file,
)
from .similarity import DAWN_CLASSES, DEFAULT_GROUPS

# Car AP per stage for Weather-NightGAN in the reported results table, as fractions.
NIGHTGAN_CAR_SHAPE = (0.11, 0.01, 0.01, 0.17, 0.48)


@dataclass(frozen=True)
class FixtureSpec:
    seed: int = 42
    n_images: int = 20
    n_stages: int = 5
    classes: tuple[str, ...] = DAWN_CLASSES
    phi_targets: Optional[tuple[float, ...]] = None
    tensor_dims: tuple[int, int, int] = (4, 8, 8)
    image_size: tuple[int, int] = (48, 64)  # (H, W)
    epochs_per_stage: int = 20
    with_tensors: bool = True
    with_images: bool = True

    def __post_init__(self) -> None:
        if self.n_images < 1 or self.n_stages < 1:
            raise ValueError("need at least one image and one stage")
        if not self.classes:
            raise ValueError("class vocabulary is empty")
        if self.phi_targets is not None:
            if len(self.phi_targets) != self.n_stages:
                raise ValueError(
                    f"{len(self.phi_targets)} phi targets for {self.n_stages} stages"
                )
            if not all(0.0 <= t <= 1.0 for t in self.phi_targets):
                raise ValueError("phi targets must lie in [0, 1]")
        h, w = self.image_size
        if h < 8 or w < 8:
            raise ValueError("image must be at least 8x8")
        if min(self.tensor_dims) < 1:
            raise ValueError("tensor dims must be >= 1")


def successes_for_target(target: float, n: int) -> int:
    """Number of (s=1, d=1) samples out of ``n`` that best approximates ``target``."""
    return min(n, int(math.floor(target * n + 0.5)))


def _round(x: float, nd: int = 2) -> float:
    return float(round(float(x), nd))


def _random_box(rng: np.random.Generator, h: int, w: int) -> BoundingBox:
    bw = rng.uniform(0.2, 0.6) * w
    bh = rng.uniform(0.2, 0.6) * h
    x0 = rng.uniform(0, w - bw)
    y0 = rng.uniform(0, h - bh)
    return BoundingBox(_round(x0), _round(y0), _round(min(x0 + bw, w)), _round(min(y0 + bh, h)))


def _jitter(rng: np.random.Generator, box: BoundingBox, h: int, w: int) -> BoundingBox:
    dx, dy = rng.uniform(-1.5, 1.5, size=2)
    x0 = min(max(box.x_min + dx, 0.0), w - 2.0)
    y0 = min(max(box.y_min + dy, 0.0), h - 2.0)
    x1 = min(max(box.x_max + dx, x0 + 1.0), w)
    y1 = min(max(box.y_max + dy, y0 + 1.0), h)
    return BoundingBox(_round(x0), _round(y0), _round(x1), _round(y1))


def _synonym(rng: np.random.Generator, head: str) -> str:
    choices = (head, *DEFAULT_GROUPS.get(head, ()))
    return choices[int(rng.integers(len(choices)))]


def _wrong_label(rng: np.random.Generator, head: str) -> str:
    others = [c for c in DEFAULT_GROUPS if c != head]
    return others[int(rng.integers(len(others)))]


def _attention_pair(
    rng: np.random.Generator, box: BoundingBox, spec: FixtureSpec, progress: float
) -> tuple[Tensor3, Tensor3]:
    k, u, v = spec.tensor_dims
    h, w = spec.image_size
    feats = np.abs(rng.normal(0.0, 0.3, size=(k, u, v)))
    ys = (np.arange(u) + 0.5) * h / u
    xs = (np.arange(v) + 0.5) * w / v
    inside = ((ys >= box.y_min) & (ys < box.y_max))[:, None] & ((xs >= box.x_min) & (xs < box.x_max))[None, :]
    feats[:, inside] += 2.0 * progress
    grads = rng.normal(1.0 / k, 0.05, size=(k, u, v))
    return Tensor3(feats.astype(np.float32)), Tensor3(grads.astype(np.float32))


def generate(spec: FixtureSpec, out_dir: str | Path) -> Path:
    """Write a complete fixture tree under ``out_dir``; return the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    h, w = spec.image_size
    ids = [f"img{i:04d}" for i in range(spec.n_images)]

    gt_images = []
    for image_id in ids:
        n_obj = int(rng.integers(1, 4))
        objs = []
        for j in range(n_obj):
            label = spec.classes[int(rng.integers(len(spec.classes)))]
            objs.append(GroundTruthObject(image_id, _random_box(rng, h, w), label, True if j == 0 else None))
        gt_images.append(ImageObjects(image_id, w, h, tuple(objs)))
    (out / "ground_truth.json").write_text(dump_ground_truth(gt_images))

    clean = {}
    if spec.with_images:
        (out / "input").mkdir(exist_ok=True)
        for image_id in ids:
            base = rng.integers(0, 256, size=(h, w, 3)).astype(np.float64)
            noise = rng.normal(0.0, 40.0, size=(h, w, 3))
            clean[image_id] = (base, noise)
            write_png(out / "input" / f"{image_id}.png", np.clip(base + noise, 0, 255).round().astype(np.uint8))

    stages = []
    for s in range(1, spec.n_stages + 1):
        stage_dir = out / f"stage_{s}"
        stage_dir.mkdir(exist_ok=True)
        progress = s / spec.n_stages
        order = rng.permutation(spec.n_images)
        if spec.phi_targets is not None:
            m = successes_for_target(spec.phi_targets[s - 1], spec.n_images)
            succeed = {int(i) for i in order[:m]}
        else:
            succeed = {int(i) for i in order if rng.random() < 0.3 + 0.5 * progress}

        det_images = []
        for idx, img in enumerate(gt_images):
            primary = img.objects[0]
            if idx in succeed:
                label = _synonym(rng, primary.label)
                d = 1.0 if spec.phi_targets is not None else _round(rng.uniform(0.5, 1.0), 4)
            else:
                label = _wrong_label(rng, primary.label)
                d = _round(rng.uniform(0.05, 0.95), 4)
            dets = [
                Detection(img.image_id, _jitter(rng, primary.box, h, w), label,
                          _round(rng.uniform(0.3, 1.0), 4), d)
            ]
            for obj in img.objects[1:]:
                dets.append(
                    Detection(img.image_id, _jitter(rng, obj.box, h, w), obj.label,
                              _round(rng.uniform(0.05, 1.0), 4), _round(d * rng.uniform(0.0, 0.9), 4))
                )
            if rng.random() < 0.3:
                dets.append(
                    Detection(img.image_id, _random_box(rng, h, w), _wrong_label(rng, primary.label),
                              _round(rng.uniform(0.0, 0.5), 4), _round(d * rng.uniform(0.0, 0.5), 4))
                )
            det_images.append(ImageDetections(img.image_id, w, h, tuple(dets)))
        (stage_dir / "detections.json").write_text(dump_detections(det_images))

        entry = {
            "id": s,
            "epoch_range": [(s - 1) * spec.epochs_per_stage + 1, s * spec.epochs_per_stage],
            "detections": f"stage_{s}/detections.json",
            "ground_truth": "ground_truth.json",
        }
        if spec.with_tensors:
            (stage_dir / "attention").mkdir(exist_ok=True)
            for img in gt_images:
                f, g = _attention_pair(rng, img.objects[0].box, spec, progress)
                write_tensor_file(stage_dir / "attention" / f"{img.image_id}.features.rxt", f)
                write_tensor_file(stage_dir / "attention" / f"{img.image_id}.gradients.rxt", g)
            entry["attention_dir"] = f"stage_{s}/attention"
        if spec.with_images:
            (stage_dir / "restored").mkdir(exist_ok=True)
            for image_id in ids:
                base, noise = clean[image_id]
                restored = np.clip(base + noise * (1.0 - s / (spec.n_stages + 1)), 0, 255)
                write_png(stage_dir / "restored" / f"{image_id}.png", restored.round().astype(np.uint8))
            entry["restored_dir"] = f"stage_{s}/restored"
            entry["input_dir"] = "input"
        stages.append(entry)

    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"stages": stages}, indent=2) + "\n")
    return manifest


def nightgan_shape_spec(seed: int = 42, **overrides) -> FixtureSpec:
    """Five stages whose phi targets follow the NightGAN car-AP shape."""
    params = dict(seed=seed, n_images=100, n_stages=5, phi_targets=NIGHTGAN_CAR_SHAPE,
                  with_tensors=False, with_images=False)
    params.update(overrides)
    return FixtureSpec(**params)


def declining_spec(seed: int = 7, **overrides) -> FixtureSpec:
    """Three stages with phi = (0.5, 0.2, 0.1): a run that should be stopped."""
    params = dict(seed=seed, n_images=10, n_stages=3, phi_targets=(0.5, 0.2, 0.1),
                  with_tensors=False, with_images=False)
    params.update(overrides)
    return FixtureSpec(**params)


def parse_targets(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def target_error_bound(n: int) -> float:
    return 1.0 / (2 * n)

