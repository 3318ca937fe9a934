"""Synthetic long-tail datasets, head/med/tail regions, and CSV ingestion."""

import csv
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

__all__ = [
    "DataError",
    "Region",
    "Split",
    "Sample",
    "LongTailSpec",
    "Dataset",
    "CsvSchema",
    "class_counts",
    "partition_regions",
    "generate_longtail",
    "save_dataset",
    "load_csv",
]

log = logging.getLogger("kcm.data")

DATASET_FORMAT_VERSION = 1


class DataError(ValueError):
    """Raised for invalid specs, datasets, or CSV input."""


class Region(str, Enum):
    HEAD = "head"
    MED = "med"
    TAIL = "tail"


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True, eq=False)
class Sample:
    id: int
    features: np.ndarray
    label: int
    region: Region
    split: Split

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.region == other.region
            and self.split == other.split
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True)
class LongTailSpec:
    """Generator settings: exponential per-class counts, Gaussian clusters.

    Class c receives round(max_per_class * imbalance**(-c / (num_classes - 1)))
    training samples; val and test splits are class-balanced.
    """

    num_classes: int = 9
    feature_dim: int = 16
    max_per_class: int = 150
    imbalance: float = 10.0
    separation: float = 5.0
    noise: float = 1.0
    test_per_class: int = 20
    val_per_class: int = 10
    seed: int = 0

    def validate(self):
        if self.num_classes < 3:
            raise DataError(f"need at least 3 classes, got {self.num_classes}")
        if self.feature_dim < 1:
            raise DataError("feature_dim must be positive")
        if self.imbalance < 1.0:
            raise DataError(f"imbalance factor must be >= 1, got {self.imbalance}")
        if self.max_per_class < 1 or self.test_per_class < 1 or self.val_per_class < 0:
            raise DataError("per-class sample counts are out of range")
        if self.separation < 0 or self.noise < 0:
            raise DataError("separation and noise must be nonnegative")
        if min(class_counts(self)) < 1:
            raise DataError("infeasible spec: smallest class would round below 1 sample")

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "feature_dim": self.feature_dim,
            "max_per_class": self.max_per_class,
            "imbalance": self.imbalance,
            "separation": self.separation,
            "noise": self.noise,
            "test_per_class": self.test_per_class,
            "val_per_class": self.val_per_class,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LongTailSpec":
        return cls(**data)


def class_counts(spec: LongTailSpec) -> list:
    """Training-sample count per class: n_max * rho**(-c/(C-1)), rounded half up."""
    counts = []
    for c in range(spec.num_classes):
        exact = spec.max_per_class * spec.imbalance ** (-c / (spec.num_classes - 1))
        counts.append(int(np.floor(exact + 0.5)))
    return counts


def partition_regions(counts) -> list:
    """Tag classes head/med/tail by count terciles.

    Classes sort by descending count (ties by ascending class index); the top
    C // 3 are head, the bottom C // 3 tail, and the remainder med.
    """
    if any(c <= 0 for c in counts):
        raise DataError("class counts must be positive")
    n = len(counts)
    third = n // 3
    order = sorted(range(n), key=lambda c: (-counts[c], c))
    regions = [Region.MED] * n
    for c in order[:third]:
        regions[c] = Region.HEAD
    if third:
        for c in order[-third:]:
            regions[c] = Region.TAIL
    return regions


def _class_centers(spec: LongTailSpec) -> np.ndarray:
    c, d = spec.num_classes, spec.feature_dim
    if d >= c:
        # Regular simplex: centered standard basis, scaled to the requested
        # pairwise separation.
        centers = np.zeros((c, d))
        centers[:, :c] = np.eye(c) - 1.0 / c
        centers *= spec.separation / np.sqrt(2.0)
        return centers
    rng = np.random.default_rng([spec.seed, 0x5EED])
    dirs = rng.standard_normal((c, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * spec.separation / np.sqrt(2.0)


@dataclass
class Dataset:
    samples: list
    label_names: list
    manifest: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    @property
    def feature_dim(self) -> int:
        return self.samples[0].features.shape[0] if self.samples else 0

    def split(self, which: Split) -> list:
        return [s for s in self.samples if s.split == which]

    def features_of(self, which: Split) -> np.ndarray:
        part = self.split(which)
        return np.array([s.features for s in part]) if part else np.empty((0, self.feature_dim))

    def labels_of(self, which: Split) -> np.ndarray:
        return np.array([s.label for s in self.split(which)], dtype=np.int64)

    def class_histogram(self, which: Split = Split.TRAIN) -> list:
        counts = [0] * self.num_classes
        for s in self.split(which):
            counts[s.label] += 1
        return counts

    def region_of_class(self, label: int) -> Region:
        for s in self.samples:
            if s.label == label:
                return s.region
        raise DataError(f"no samples for class {label}")

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self._csv_header())
        for s in self.samples:
            writer.writerow([s.id, *[repr(float(v)) for v in s.features],
                             s.label, s.split.value])
        return buf.getvalue()

    def _csv_header(self) -> list:
        return ["id"] + [f"f{i}" for i in range(self.feature_dim)] + ["label", "split"]

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_csv_text().encode("utf-8")).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.label_names == other.label_names and self.samples == other.samples


def generate_longtail(spec: LongTailSpec) -> Dataset:
    """Gaussian cluster per class, exponential train counts, balanced val/test."""
    spec.validate()
    counts = class_counts(spec)
    regions = partition_regions(counts)
    centers = _class_centers(spec)
    label_names = [f"{regions[c].value}_{c}" for c in range(spec.num_classes)]

    rng = np.random.default_rng(spec.seed)
    samples = []
    next_id = 0

    def emit(label, split):
        nonlocal next_id
        features = centers[label] + spec.noise * rng.standard_normal(spec.feature_dim)
        samples.append(Sample(id=next_id, features=features, label=label,
                              region=regions[label], split=split))
        next_id += 1

    for label, n in enumerate(counts):
        for _ in range(n):
            emit(label, Split.TRAIN)
    for label in range(spec.num_classes):
        for _ in range(spec.val_per_class):
            emit(label, Split.VAL)
    for label in range(spec.num_classes):
        for _ in range(spec.test_per_class):
            emit(label, Split.TEST)

    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "kind": "longtail_synthetic",
        "spec": spec.to_dict(),
        "class_counts": counts,
        "regions": [r.value for r in regions],
        "label_names": label_names,
    }
    return Dataset(samples=samples, label_names=label_names, manifest=manifest)


def _manifest_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".manifest.json")


def save_dataset(dataset: Dataset, csv_path):
    """Write the dataset CSV plus its provenance manifest alongside."""
    path = Path(csv_path)
    path.write_text(dataset.to_csv_text(), encoding="utf-8")
    manifest = dict(dataset.manifest)
    manifest.setdefault("format_version", DATASET_FORMAT_VERSION)
    manifest.setdefault("label_names", dataset.label_names)
    _manifest_path(path).write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


@dataclass(frozen=True)
class CsvSchema:
    """Expected CSV shape; None fields are inferred from the file."""

    feature_dim: int | None = None
    num_classes: int | None = None


def load_csv(path, schema: CsvSchema | None = None) -> Dataset:
    """Load a dataset CSV (header: id, f0..f{d-1}, label[, split]).

    Regions are recomputed from train-split class counts. A sibling manifest
    written by :func:`save_dataset` supplies label names when present.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such dataset file")
    schema = schema or CsvSchema()

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        dim = _validate_header(path, header, schema)
        has_split = header[-1] == "split"

        rows = []
        ids_seen = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path} line {lineno}: expected {len(header)} columns, got {len(row)}")
            rows.append(_parse_row(path, lineno, row, dim, has_split, schema, ids_seen))

    num_classes = schema.num_classes
    if num_classes is None:
        num_classes = max((r[2] for r in rows), default=0) + 1

    label_names = [f"class_{i}" for i in range(num_classes)]
    manifest = {"format_version": DATASET_FORMAT_VERSION, "kind": "csv", "source": str(path)}
    mpath = _manifest_path(path)
    if mpath.exists():
        stored = json.loads(mpath.read_text(encoding="utf-8"))
        names = stored.get("label_names")
        if names and len(names) >= num_classes:
            label_names = list(names)
            num_classes = len(label_names)
        manifest = stored

    train_counts = [0] * num_classes
    for _, _, label, split in rows:
        if split == Split.TRAIN:
            train_counts[label] += 1
    regions = (
        partition_regions([max(c, 1) for c in train_counts])
        if num_classes >= 1
        else []
    )

    samples = [
        Sample(id=sid, features=feats, label=label, region=regions[label], split=split)
        for sid, feats, label, split in rows
    ]
    dataset = Dataset(samples=samples, label_names=label_names, manifest=manifest)
    log.info(
        "loaded %s: %d rows, %d features, train histogram %s",
        path, len(samples), dim, dataset.class_histogram(Split.TRAIN),
    )
    return dataset


def _validate_header(path, header, schema) -> int:
    if not header or header[0] != "id":
        raise DataError(f"{path}: header must start with 'id'")
    body = header[1:]
    if body and body[-1] == "split":
        body = body[:-1]
    if not body or body[-1] != "label":
        raise DataError(f"{path}: header must end with 'label' (or 'label,split'), got {header}")
    feat_cols = body[:-1]
    expected = [f"f{i}" for i in range(len(feat_cols))]
    if feat_cols != expected:
        raise DataError(f"{path}: feature columns must be f0..f{len(feat_cols) - 1}, got {feat_cols}")
    if not feat_cols:
        raise DataError(f"{path}: no feature columns found")
    if schema.feature_dim is not None and len(feat_cols) != schema.feature_dim:
        raise DataError(
            f"{path}: expected {schema.feature_dim} feature columns, found {len(feat_cols)}"
        )
    return len(feat_cols)


def _parse_row(path, lineno, row, dim, has_split, schema, ids_seen):
    try:
        sid = int(row[0])
    except ValueError:
        raise DataError(f"{path} line {lineno}: id {row[0]!r} is not an integer") from None
    if sid in ids_seen:
        raise DataError(f"{path} line {lineno}: duplicate id {sid} (first on line {ids_seen[sid]})")
    ids_seen[sid] = lineno

    features = np.empty(dim)
    for i in range(dim):
        try:
            features[i] = float(row[1 + i])
        except ValueError:
            raise DataError(
                f"{path} line {lineno}: feature f{i} value {row[1 + i]!r} is not numeric"
            ) from None

    try:
        label = int(row[1 + dim])
    except ValueError:
        raise DataError(f"{path} line {lineno}: label {row[1 + dim]!r} is not an integer") from None
    if label < 0 or (schema.num_classes is not None and label >= schema.num_classes):
        raise DataError(f"{path} line {lineno}: unknown label {label}")

    split = Split.TRAIN
    if has_split:
        try:
            split = Split(row[2 + dim])
        except ValueError:
            raise DataError(f"{path} line {lineno}: unknown split {row[2 + dim]!r}") from None
    return sid, features, label, split
