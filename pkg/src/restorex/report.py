"""Run reports (Markdown / JSON) and heatmap overlays."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .detection_eval import display_percent, mean_ap
from .errors import DimMismatch, EmptyClassList
from .gradcam import HeatMap

# (heat, (r, g, b)) breakpoints, linear in between
COLORMAP_BREAKPOINTS = ((0.0, (0, 0, 255)), (0.5, (0, 255, 0)), (1.0, (255, 0, 0)))


@dataclass(frozen=True)
class ReportRow:
    label: str
    aps: Mapping[str, float]
    phi: Optional[float] = None
    delta_phi: Optional[float] = None


@dataclass
class RunReport:
    technique: str
    classes: tuple[str, ...]
    rows: list[ReportRow]
    provenance: dict[str, Any] = field(default_factory=dict)

    def row_map(self, row: ReportRow) -> float:
        return mean_ap(self.classes, row.aps)

    @property
    def has_phi(self) -> bool:
        return any(r.phi is not None for r in self.rows)

    def to_json(self) -> dict[str, Any]:
        rows = []
        for r in self.rows:
            m = self.row_map(r)
            rec: dict[str, Any] = {
                "label": r.label,
                "ap": {c: float(r.aps.get(c, 0.0)) for c in self.classes},
                "map": m,
                "display": {
                    **{c: display_percent(r.aps.get(c, 0.0)) for c in self.classes},
                    "map": display_percent(m),
                },
            }
            if r.phi is not None:
                rec["phi"] = r.phi
            if r.delta_phi is not None:
                rec["delta_phi"] = r.delta_phi
            rows.append(rec)
        return {
            "technique": self.technique,
            "classes": list(self.classes),
            "rows": rows,
            "provenance": self.provenance,
        }


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.4f}"


def render_markdown(report: RunReport) -> str:
    """Table with one row per stage / noise level; APs and mAP as integer percents."""
    if not report.classes:
        raise EmptyClassList("report has no classes")
    header = ["Image Restoration Technique"]
    header += [f"Class {i} AP [{c}]" for i, c in enumerate(report.classes, 1)]
    header.append("mAP")
    if report.has_phi:
        header += ["phi", "delta phi"]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join("---" for _ in header) + "|",
        "| **" + report.technique + "**" + " |" * len(header),
    ]
    for r in report.rows:
        cells = [r.label]
        cells += [str(display_percent(r.aps.get(c, 0.0))) for c in report.classes]
        cells.append(str(display_percent(report.row_map(r))))
        if report.has_phi:
            cells += [_fmt(r.phi), _fmt(r.delta_phi)]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def colormap(heat: np.ndarray) -> np.ndarray:
    """Map heat in [0, 1] to float RGB in [0, 255]: blue -> green -> red."""
    h = np.clip(np.asarray(heat, dtype=np.float64), 0.0, 1.0)
    xs = [b[0] for b in COLORMAP_BREAKPOINTS]
    channels = [np.interp(h, xs, [b[1][ch] for b in COLORMAP_BREAKPOINTS]) for ch in range(3)]
    return np.stack(channels, axis=-1)


def render_overlay(image: np.ndarray, heatmap: HeatMap, alpha: float = 0.5) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[:2] != heatmap.shape:
        raise DimMismatch(f"image {img.shape} does not match heatmap {heatmap.shape}")
    blend = (1.0 - alpha) * img.astype(np.float64) + alpha * colormap(heatmap.values)
    return np.clip(np.floor(blend + 0.5), 0, 255).astype(np.uint8)


# -- provenance ---------------------------------------------------------------


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(config: Mapping[str, Any]) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def provenance(inputs: Iterable[str | Path], config: Mapping[str, Any]) -> dict[str, Any]:
    digests = {str(p): file_digest(p) for p in inputs}
    return {
        "tool": "restorex",
        "version": __version__,
        "inputs": digests,
        "config": dict(config),
        "config_hash": config_hash({"config": config, "inputs": digests}),
    }


def dump_json(doc: Any) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def report_from_rows(
    technique: str,
    classes: Sequence[str],
    labelled_aps: Sequence[tuple[str, Mapping[str, float]]],
    phis: Optional[Sequence[float]] = None,
    deltas: Optional[Sequence[float]] = None,
    prov: Optional[dict[str, Any]] = None,
) -> RunReport:
    rows = []
    for i, (label, aps) in enumerate(labelled_aps):
        phi = phis[i] if phis is not None and i < len(phis) else None
        delta = deltas[i - 1] if deltas is not None and 0 < i <= len(deltas) else None
        rows.append(ReportRow(label, dict(aps), phi, delta))
    return RunReport(technique, tuple(classes), rows, prov or {})
