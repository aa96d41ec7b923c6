"""Parsers and writers for the harness's on-disk formats.

Tensor files (``*.rxt``) use the RXT1 layout::

    offset  size        field
    0       4           magic  b"RXT1"
    4       4           ndim   u32 LE, must be 3
    8       12          dims   3 x u32 LE  (k, u, v)
    20      k*u*v*4     data   float32 LE, row-major, width fastest

Annotations and manifests are JSON documents; see the README for schemas.
Images are 8-bit RGB PNG.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
from PIL import Image

from .errors import (
    BadMagic,
    BoxError,
    DimMismatch,
    EpochOverlapError,
    NdimUnsupported,
    NonFinite,
    PrimaryConflict,
    RangeError,
    SchemaError,
    StageOrderError,
)

MAGIC = b"RXT1"
_HEADER = struct.Struct("<4sI3I")
_F32_LE = np.dtype("<f4")


# -- tensors ------------------------------------------------------------------


class Tensor3:
    """Dense ``(channels, height, width)`` float32 tensor.

    The backing array is read-only; equality is bit-exact.
    """

    __slots__ = ("_array",)

    def __init__(self, array: Any):
        arr = np.array(array, dtype=np.float32, copy=True)
        if arr.ndim != 3:
            raise NdimUnsupported(f"expected 3 dims, got {arr.ndim}")
        if min(arr.shape) < 1:
            raise DimMismatch(f"all dims must be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFinite("tensor contains NaN or Inf")
        arr.setflags(write=False)
        self._array = arr

    @classmethod
    def from_flat(cls, k: int, u: int, v: int, data: Sequence[float]) -> "Tensor3":
        flat = np.asarray(data, dtype=np.float32)
        if flat.size != k * u * v:
            raise DimMismatch(f"{flat.size} values for dims ({k},{u},{v})")
        return cls(flat.reshape(k, u, v))

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._array.shape  # type: ignore[return-value]

    @property
    def k(self) -> int:
        return self._array.shape[0]

    @property
    def u(self) -> int:
        return self._array.shape[1]

    @property
    def v(self) -> int:
        return self._array.shape[2]

    def flat(self) -> list[float]:
        return self._array.ravel().tolist()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tensor3):
            return NotImplemented
        return (
            self.shape == other.shape
            and self._array.astype(_F32_LE).tobytes()
            == other._array.astype(_F32_LE).tobytes()
        )

    def __hash__(self) -> int:
        return hash((self.shape, self._array.astype(_F32_LE).tobytes()))

    def __repr__(self) -> str:
        return f"Tensor3(k={self.k}, u={self.u}, v={self.v})"


def parse_tensor(data: bytes) -> Tensor3:
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {data[:4]!r}")
    if len(data) < 8:
        raise DimMismatch("truncated header")
    (ndim,) = struct.unpack_from("<I", data, 4)
    if ndim != 3:
        raise NdimUnsupported(f"ndim={ndim}, only 3 is supported")
    if len(data) < _HEADER.size:
        raise DimMismatch("truncated header")
    _, _, k, u, v = _HEADER.unpack_from(data, 0)
    if k < 1 or u < 1 or v < 1:
        raise DimMismatch(f"dims must be >= 1, got ({k},{u},{v})")
    payload = len(data) - _HEADER.size
    if payload != k * u * v * 4:
        raise DimMismatch(
            f"payload is {payload} bytes, dims ({k},{u},{v}) need {k * u * v * 4}"
        )
    arr = np.frombuffer(data, dtype=_F32_LE, offset=_HEADER.size).reshape(k, u, v)
    if not np.isfinite(arr).all():
        raise NonFinite("tensor payload contains NaN or Inf")
    return Tensor3(arr)


def write_tensor(t: Tensor3) -> bytes:
    header = _HEADER.pack(MAGIC, 3, t.k, t.u, t.v)
    return header + t.array.astype(_F32_LE, copy=False).tobytes(order="C")


def read_tensor_file(path: str | Path) -> Tensor3:
    return parse_tensor(Path(path).read_bytes())


def write_tensor_file(path: str | Path, t: Tensor3) -> None:
    Path(path).write_bytes(write_tensor(t))


# -- annotations --------------------------------------------------------------


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise BoxError(f"non-finite box {coords}")
        if min(coords) < 0:
            raise BoxError(f"negative coordinate in box {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise BoxError(f"degenerate box {coords}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: BoundingBox
    label: str
    score: float
    explain_prob: Optional[float] = None


@dataclass(frozen=True)
class GroundTruthObject:
    image_id: str
    box: BoundingBox
    label: str
    primary: Optional[bool] = None


@dataclass(frozen=True)
class ImageDetections:
    image_id: str
    width: int
    height: int
    detections: tuple[Detection, ...]


@dataclass(frozen=True)
class ImageObjects:
    image_id: str
    width: int
    height: int
    objects: tuple[GroundTruthObject, ...]


def _load_json(text: str | bytes) -> Any:
    try:
        return json.loads(text)
    except (ValueError, TypeError, RecursionError) as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None


def _field(obj: Any, key: str, where: str) -> Any:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    if key not in obj:
        raise SchemaError(f"{where}: missing field {key!r}")
    return obj[key]


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where}: expected a number, got {value!r}")
    try:
        value = float(value)
    except OverflowError:
        raise RangeError(f"{where}: value too large") from None
    if not math.isfinite(value):
        raise RangeError(f"{where}: non-finite value")
    return value


def _int(value: Any, where: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{where}: expected an integer, got {value!r}")
    if value < minimum:
        raise RangeError(f"{where}: {value} < {minimum}")
    return value


def _string(value: Any, where: str) -> str:
    if not isinstance(value, str):
        raise SchemaError(f"{where}: expected a string, got {value!r}")
    return value


def _unit(value: Any, where: str) -> float:
    x = _number(value, where)
    if not 0.0 <= x <= 1.0:
        raise RangeError(f"{where}: {x} outside [0, 1]")
    return x


def _box(value: Any, where: str) -> BoundingBox:
    if not isinstance(value, list) or len(value) != 4:
        raise SchemaError(f"{where}: box must be a list of 4 numbers")
    coords = [_number(c, where) for c in value]
    return BoundingBox(*coords)


def _images(doc: Any) -> list[Any]:
    images = _field(doc, "images", "document")
    if not isinstance(images, list):
        raise SchemaError("document: 'images' must be a list")
    return images


def _image_header(entry: Any, where: str, seen: set[str]) -> tuple[str, int, int]:
    image_id = _string(_field(entry, "id", where), f"{where}.id")
    if image_id in seen:
        raise SchemaError(f"{where}: duplicate image id {image_id!r}")
    seen.add(image_id)
    width = _int(_field(entry, "width", where), f"{where}.width", 1)
    height = _int(_field(entry, "height", where), f"{where}.height", 1)
    return image_id, width, height


def _list_field(entry: Any, key: str, where: str) -> list[Any]:
    items = _field(entry, key, where)
    if not isinstance(items, list):
        raise SchemaError(f"{where}: {key!r} must be a list")
    return items


def parse_detections(text: str | bytes) -> list[ImageDetections]:
    """Parse a ``detections.json`` document, grouped per image in file order."""
    doc = _load_json(text)
    seen: set[str] = set()
    out = []
    for i, entry in enumerate(_images(doc)):
        where = f"images[{i}]"
        image_id, width, height = _image_header(entry, where, seen)
        dets = []
        for j, rec in enumerate(_list_field(entry, "detections", where)):
            w = f"{where}.detections[{j}]"
            box = _box(_field(rec, "box", w), f"{w}.box")
            label = _string(_field(rec, "label", w), f"{w}.label")
            score = _unit(_field(rec, "score", w), f"{w}.score")
            explain = rec.get("explain_prob")
            if explain is not None:
                explain = _unit(explain, f"{w}.explain_prob")
            dets.append(Detection(image_id, box, label, score, explain))
        out.append(ImageDetections(image_id, width, height, tuple(dets)))
    return out


def parse_ground_truth(text: str | bytes) -> list[ImageObjects]:
    """Parse a ``ground_truth.json`` document, grouped per image in file order."""
    doc = _load_json(text)
    seen: set[str] = set()
    out = []
    for i, entry in enumerate(_images(doc)):
        where = f"images[{i}]"
        image_id, width, height = _image_header(entry, where, seen)
        objs = []
        n_primary = 0
        for j, rec in enumerate(_list_field(entry, "objects", where)):
            w = f"{where}.objects[{j}]"
            box = _box(_field(rec, "box", w), f"{w}.box")
            label = _string(_field(rec, "label", w), f"{w}.label")
            primary = rec.get("primary")
            if primary is not None and not isinstance(primary, bool):
                raise SchemaError(f"{w}.primary: expected a boolean")
            if primary:
                n_primary += 1
                if n_primary > 1:
                    raise PrimaryConflict(
                        f"image {image_id!r} has more than one primary object"
                    )
            objs.append(GroundTruthObject(image_id, box, label, primary))
        out.append(ImageObjects(image_id, width, height, tuple(objs)))
    return out


def _dump_images(images: list[dict]) -> str:
    return json.dumps({"images": images}, indent=2) + "\n"


def dump_detections(images: Sequence[ImageDetections]) -> str:
    out = []
    for img in images:
        dets = []
        for d in img.detections:
            rec: dict[str, Any] = {"box": d.box.as_list(), "label": d.label, "score": d.score}
            if d.explain_prob is not None:
                rec["explain_prob"] = d.explain_prob
            dets.append(rec)
        out.append({"id": img.image_id, "width": img.width, "height": img.height, "detections": dets})
    return _dump_images(out)


def dump_ground_truth(images: Sequence[ImageObjects]) -> str:
    out = []
    for img in images:
        objs = []
        for o in img.objects:
            rec: dict[str, Any] = {"box": o.box.as_list(), "label": o.label}
            if o.primary is not None:
                rec["primary"] = o.primary
            objs.append(rec)
        out.append({"id": img.image_id, "width": img.width, "height": img.height, "objects": objs})
    return _dump_images(out)


def flatten_detections(images: Sequence[ImageDetections]) -> list[Detection]:
    return [d for img in images for d in img.detections]


def flatten_ground_truth(images: Sequence[ImageObjects]) -> list[GroundTruthObject]:
    return [o for img in images for o in img.objects]


# -- manifest -----------------------------------------------------------------


@dataclass(frozen=True)
class StageEntry:
    stage_id: int
    epoch_range: tuple[int, int]
    detections_path: Path
    ground_truth_path: Path
    attention_dir: Optional[Path] = None
    restored_dir: Optional[Path] = None
    input_dir: Optional[Path] = None


@dataclass(frozen=True)
class StageManifest:
    stages: tuple[StageEntry, ...]

    def __len__(self) -> int:
        return len(self.stages)

    def __iter__(self):
        return iter(self.stages)


def _path(value: Any, where: str, base: Optional[Path]) -> Path:
    p = Path(_string(value, where))
    if base is not None and not p.is_absolute():
        p = base / p
    return p


def parse_manifest(text: str | bytes, base_dir: str | Path | None = None) -> StageManifest:
    """Parse ``manifest.json``. Relative paths are resolved against ``base_dir``."""
    base = Path(base_dir) if base_dir is not None else None
    doc = _load_json(text)
    stages_raw = _field(doc, "stages", "document")
    if not isinstance(stages_raw, list) or not stages_raw:
        raise SchemaError("document: 'stages' must be a non-empty list")
    stages: list[StageEntry] = []
    for i, rec in enumerate(stages_raw):
        where = f"stages[{i}]"
        stage_id = _int(_field(rec, "id", where), f"{where}.id", 1)
        er = _field(rec, "epoch_range", where)
        if not isinstance(er, list) or len(er) != 2:
            raise SchemaError(f"{where}.epoch_range: expected [first, last]")
        first = _int(er[0], f"{where}.epoch_range[0]", 0)
        last = _int(er[1], f"{where}.epoch_range[1]", 0)
        if first > last:
            raise SchemaError(f"{where}.epoch_range: first {first} > last {last}")
        optional = {}
        for key in ("attention_dir", "restored_dir", "input_dir"):
            val = rec.get(key)
            optional[key] = None if val is None else _path(val, f"{where}.{key}", base)
        entry = StageEntry(
            stage_id=stage_id,
            epoch_range=(first, last),
            detections_path=_path(_field(rec, "detections", where), f"{where}.detections", base),
            ground_truth_path=_path(_field(rec, "ground_truth", where), f"{where}.ground_truth", base),
            **optional,
        )
        if stages:
            prev = stages[-1]
            if entry.stage_id <= prev.stage_id:
                raise StageOrderError(
                    f"stage id {entry.stage_id} does not follow {prev.stage_id}"
                )
            if first <= prev.epoch_range[1]:
                raise EpochOverlapError(
                    f"stage {entry.stage_id} epochs {list(entry.epoch_range)} overlap or "
                    f"precede stage {prev.stage_id} epochs {list(prev.epoch_range)}"
                )
        stages.append(entry)
    return StageManifest(tuple(stages))


def read_manifest_file(path: str | Path) -> StageManifest:
    path = Path(path)
    return parse_manifest(path.read_bytes(), base_dir=path.parent)


# -- images -------------------------------------------------------------------


def read_png(path: str | Path) -> np.ndarray:
    """Load an image as an ``(H, W, 3)`` uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_png(path: str | Path, rgb: np.ndarray) -> None:
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise DimMismatch(f"expected (H, W, 3) uint8 image, got {arr.shape} {arr.dtype}")
    Image.fromarray(arr).save(path, format="PNG", optimize=False)
