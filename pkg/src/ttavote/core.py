"""Domain types, text normalization, and dataset ingestion.

A record is a scanned document image plus a ground-truth set of six name
fields. Datasets are described by a JSON manifest; a synthetic generator
renders desk-scale datasets so the pipeline can be exercised end to end
without any private data.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .rng import keyed_generator

FIELD_NAMES = (
    "SelfGivenName",
    "SelfSurname",
    "MotherGivenName",
    "MotherSurname",
    "FatherGivenName",
    "FatherSurname",
)

# Code points with the Unicode White_Space property. Python's str.isspace()
# accepts a slightly different set (e.g. U+001C..1F), so the exact list is
# pinned here for cross-platform agreement.
_WHITESPACE = frozenset(
    chr(cp)
    for cp in (
        *range(0x09, 0x0E),
        0x20,
        0x85,
        0xA0,
        0x1680,
        *range(0x2000, 0x200B),
        0x2028,
        0x2029,
        0x202F,
        0x205F,
        0x3000,
    )
)


class DatasetError(ValueError):
    """Manifest or record-level ingestion failure."""


def normalize_text(raw: str) -> str:
    """Case-fold and strip all whitespace/punctuation/symbol code points.

    Letters, digits, and combining marks are retained. Idempotent.
    """
    out = []
    for ch in raw.casefold():
        if ch in _WHITESPACE:
            continue
        if unicodedata.category(ch)[0] in ("P", "S"):
            continue
        out.append(ch)
    return "".join(out)


@dataclass(frozen=True)
class FieldSet:
    """The six extracted name fields of one record.

    ``None`` marks a field that is absent: blank on the document (ground
    truth) or not extracted (prediction). Absent is distinct from ``""``.
    """

    self_given_name: str | None = None
    self_surname: str | None = None
    mother_given_name: str | None = None
    mother_surname: str | None = None
    father_given_name: str | None = None
    father_surname: str | None = None

    _ATTRS = (
        "self_given_name",
        "self_surname",
        "mother_given_name",
        "mother_surname",
        "father_given_name",
        "father_surname",
    )

    def get(self, field_name: str) -> str | None:
        return getattr(self, self._ATTRS[FIELD_NAMES.index(field_name)])

    def to_dict(self) -> dict[str, str | None]:
        return {name: self.get(name) for name in FIELD_NAMES}

    @classmethod
    def from_dict(cls, data: dict) -> "FieldSet":
        kwargs = {}
        for name, attr in zip(FIELD_NAMES, cls._ATTRS):
            value = data.get(name)
            if value is not None and not isinstance(value, str):
                value = str(value)
            kwargs[attr] = value
        return cls(**kwargs)

    def present_fields(self) -> list[str]:
        return [name for name in FIELD_NAMES if self.get(name) is not None]


@dataclass(frozen=True)
class DocumentImage:
    """8-bit grayscale or RGB pixel grid with a record id."""

    id: str
    pixels: np.ndarray  # (H, W, C) uint8, C in {1, 3}

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, np.newaxis]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"image {self.id!r}: expected (H, W, C) with C in {{1, 3}}, got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image {self.id!r}: zero-area image")
        if px.dtype != np.uint8:
            raise ValueError(f"image {self.id!r}: expected uint8 pixels, got {px.dtype}")
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True)
class DatasetRecord:
    record_id: str
    image_path: Path
    truth: FieldSet


@dataclass(frozen=True)
class Dataset:
    records: tuple[DatasetRecord, ...]
    folds: dict[str, int] | None = None

    def __len__(self) -> int:
        return len(self.records)

    def record_ids(self) -> list[str]:
        return [r.record_id for r in self.records]

    def load_image(self, record_id: str) -> DocumentImage:
        record = next(r for r in self.records if r.record_id == record_id)
        return load_image(record.image_path, record_id=record_id)


def load_image(path: Path | str, record_id: str | None = None) -> DocumentImage:
    path = Path(path)
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DatasetError(f"could not decode image file: {path}")
    if raw.ndim == 3 and raw.shape[2] == 4:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGRA2BGR)
    if raw.ndim == 3 and raw.shape[2] == 3:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return DocumentImage(id=record_id or path.stem, pixels=raw)


def save_image(img: DocumentImage, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    px = img.pixels
    if px.shape[2] == 1:
        out = px[:, :, 0]
    else:
        out = cv2.cvtColor(px, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), out):
        raise IOError(f"failed to write image: {path}")


def load_dataset(manifest_path: Path | str) -> Dataset:
    """Load a dataset manifest, validating ids and image paths.

    Manifest format: ``{"records": [{"id", "image", "truth"}, ...]}`` with
    image paths relative to the manifest directory and ``null`` truth
    entries marking blank fields.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DatasetError(f"manifest file not found: {manifest_path}")
    try:
        data = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed manifest {manifest_path}: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("records"), list):
        raise DatasetError(f"malformed manifest {manifest_path}: missing 'records' list")

    base = manifest_path.parent
    records = []
    seen: set[str] = set()
    for i, entry in enumerate(data["records"]):
        if not isinstance(entry, dict) or "id" not in entry:
            raise DatasetError(f"malformed manifest record at index {i}: missing 'id'")
        rec_id = str(entry["id"])
        if rec_id in seen:
            raise DatasetError(f"duplicate record id: {rec_id!r}")
        seen.add(rec_id)
        if "image" not in entry or "truth" not in entry:
            raise DatasetError(f"record {rec_id!r}: missing 'image' or 'truth'")
        image_path = base / entry["image"]
        if not image_path.is_file():
            raise DatasetError(f"record {rec_id!r}: image file not found: {image_path}")
        if not isinstance(entry["truth"], dict):
            raise DatasetError(f"record {rec_id!r}: 'truth' must be an object")
        records.append(
            DatasetRecord(record_id=rec_id, image_path=image_path, truth=FieldSet.from_dict(entry["truth"]))
        )

    folds = None
    if isinstance(data.get("folds"), dict):
        folds = {str(k): int(v) for k, v in data["folds"].items()}
    return Dataset(records=tuple(records), folds=folds)


def save_dataset(dataset: Dataset, manifest_path: Path | str) -> None:
    """Write a manifest for ``dataset`` with image paths relative to it."""
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    base = manifest_path.parent
    payload: dict = {
        "records": [
            {
                "id": r.record_id,
                "image": _relative_to(r.image_path, base),
                "truth": r.truth.to_dict(),
            }
            for r in dataset.records
        ]
    }
    if dataset.folds is not None:
        payload["folds"] = dataset.folds
    manifest_path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _relative_to(path: Path, base: Path) -> str:
    try:
        return path.resolve().relative_to(base.resolve()).as_posix()
    except ValueError:
        return str(path)


def generate_synthetic_dataset(
    n_records: int,
    name_lexicon: list[str],
    seed: int,
    out_dir: Path | str,
    blank_rate: float = 0.0,
) -> Dataset:
    """Render a deterministic synthetic dataset of name-field documents.

    Each record gets machine-set field text on a lightly noised canvas and
    a ground-truth FieldSet drawn uniformly from the lexicon. Writes
    ``images/*.png`` plus ``manifest.json`` under ``out_dir``.
    """
    if n_records < 1:
        raise ValueError("n_records must be >= 1")
    if not name_lexicon:
        raise ValueError("name lexicon must be non-empty")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)

    records = []
    for i in range(n_records):
        rec_id = f"rec{i:04d}"
        rng = keyed_generator("synth", seed, rec_id)
        values: list[str | None] = []
        for name in FIELD_NAMES:
            value = name_lexicon[int(rng.integers(0, len(name_lexicon)))]
            if blank_rate > 0 and rng.random() < blank_rate:
                value = None
            values.append(value)
        truth = FieldSet.from_dict(dict(zip(FIELD_NAMES, values)))
        img = _render_record(rec_id, truth, keyed_generator("synth-noise", seed, rec_id))
        image_path = out_dir / "images" / f"{rec_id}.png"
        save_image(img, image_path)
        records.append(DatasetRecord(record_id=rec_id, image_path=image_path, truth=truth))

    dataset = Dataset(records=tuple(records))
    save_dataset(dataset, out_dir / "manifest.json")
    return dataset


def _render_record(rec_id: str, truth: FieldSet, rng: np.random.Generator) -> DocumentImage:
    h, w = 360, 480
    canvas = np.full((h, w), 243.0)
    canvas += rng.normal(0.0, 6.0, size=(h, w))
    canvas = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    for j, name in enumerate(FIELD_NAMES):
        value = truth.get(name)
        text = f"{name}: {'' if value is None else value}"
        cv2.putText(canvas, text, (16, 48 + 48 * j), cv2.FONT_HERSHEY_SIMPLEX, 0.55, 30, 1, cv2.LINE_8)
    return DocumentImage(id=rec_id, pixels=canvas[:, :, np.newaxis])
