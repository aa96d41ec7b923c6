"""Grad-CAM localization maps from exported feature maps and gradients.

The harness never runs a network. An exporter dumps, for one image and one
target class, the activations of a convolutional layer and the gradient of
the class score (taken before the softmax) with respect to them, both as
RXT1 tensors of shape ``(k, u, v)``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .artifact_io import BoundingBox, Tensor3, read_tensor_file
from .errors import BoxOutOfBounds, ChannelMismatch, ShrinkUnsupported


@dataclass(frozen=True)
class NeuronWeights:
    weights: np.ndarray  # (k,) float64

    def __len__(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class CamMap:
    values: np.ndarray  # (u, v) float64, >= 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class HeatMap:
    values: np.ndarray  # (H, W) float64 in [0, 1]
    is_blank: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]


class AttentionFraction(NamedTuple):
    value: float
    is_blank: bool


def neuron_weights(gradients: Tensor3) -> NeuronWeights:
    """Global-average-pool the gradients over the spatial dims."""
    g = gradients.array.astype(np.float64)
    return NeuronWeights(g.mean(axis=(1, 2)))


def pre_relu(features: Tensor3, weights: NeuronWeights) -> np.ndarray:
    w = np.asarray(weights.weights, dtype=np.float64)
    if w.shape != (features.k,):
        raise ChannelMismatch(f"{w.shape[0]} weights for {features.k} channels")
    return np.tensordot(w, features.array.astype(np.float64), axes=1)


def cam(features: Tensor3, weights: NeuronWeights) -> CamMap:
    return CamMap(np.maximum(pre_relu(features, weights), 0.0))


def gradcam(features: Tensor3, gradients: Tensor3) -> CamMap:
    if features.shape != gradients.shape:
        raise ChannelMismatch(
            f"features {features.shape} and gradients {gradients.shape} differ"
        )
    return cam(features, neuron_weights(gradients))


def normalize(m: Union[CamMap, HeatMap]) -> HeatMap:
    """Scale by the map maximum; an all-zero map stays zero and is flagged blank."""
    values = np.asarray(m.values, dtype=np.float64)
    peak = values.max()
    if peak <= 0:
        return HeatMap(np.zeros_like(values), is_blank=True)
    return HeatMap(values / peak)


def _axis_weights(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, pos - lo


def upsample(m: HeatMap, height: int, width: int) -> HeatMap:
    """Bilinear resize to ``(height, width)``.

    Output pixel ``i`` samples the source at ``(i + 0.5) * src / dst - 0.5``,
    clamped to ``[0, src - 1]``.
    """
    src_h, src_w = m.shape
    if height < src_h or width < src_w:
        raise ShrinkUnsupported(f"cannot resize {m.shape} down to {(height, width)}")
    y0, y1, fy = _axis_weights(src_h, height)
    x0, x1, fx = _axis_weights(src_w, width)
    v = np.asarray(m.values, dtype=np.float64)
    top = v[y0][:, x0] * (1 - fx) + v[y0][:, x1] * fx
    bottom = v[y1][:, x0] * (1 - fx) + v[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bottom * fy[:, None]
    return HeatMap(np.clip(out, 0.0, 1.0), is_blank=m.is_blank)


def box_mask(boxes: Sequence[BoundingBox], height: int, width: int) -> np.ndarray:
    """Pixels whose centre lies in the union of ``boxes`` (half-open on the max side)."""
    cy = np.arange(height) + 0.5
    cx = np.arange(width) + 0.5
    mask = np.zeros((height, width), dtype=bool)
    for b in boxes:
        if b.x_max > width or b.y_max > height:
            raise BoxOutOfBounds(f"box {b.as_list()} exceeds image {width}x{height}")
        rows = (cy >= b.y_min) & (cy < b.y_max)
        cols = (cx >= b.x_min) & (cx < b.x_max)
        mask |= rows[:, None] & cols[None, :]
    return mask


def attention_in_box(m: HeatMap, boxes: Sequence[BoundingBox]) -> AttentionFraction:
    """Fraction of heat mass inside the union of ``boxes``."""
    height, width = m.shape
    mask = box_mask(boxes, height, width)
    values = np.asarray(m.values, dtype=np.float64)
    total = values.sum()
    if total <= 0:
        return AttentionFraction(0.0, True)
    return AttentionFraction(float(min(values[mask].sum() / total, 1.0)), False)


def heatmap_for_image(features: Tensor3, gradients: Tensor3, height: int, width: int) -> HeatMap:
    return upsample(normalize(gradcam(features, gradients)), height, width)


def attention_for_pairs(
    pairs: Iterable[tuple[Path, Path, int, int, Sequence[BoundingBox]]],
    threads: Optional[int] = None,
) -> list[AttentionFraction]:
    """Attention-in-box for many ``(features, gradients, H, W, boxes)`` jobs.

    Jobs run on a thread pool; results come back in input order.
    """

    def job(item: tuple[Path, Path, int, int, Sequence[BoundingBox]]) -> AttentionFraction:
        fpath, gpath, h, w, boxes = item
        heat = heatmap_for_image(read_tensor_file(fpath), read_tensor_file(gpath), h, w)
        return attention_in_box(heat, boxes)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, pairs))


def cam_to_tensor(m: CamMap) -> Tensor3:
    return Tensor3(m.values[None, :, :])
