"""Dataset container for per-shape view features, plus a synthetic generator.

Binary layout (little-endian throughout), container tag ``3DVG-D``::

    magic   6 bytes  b"3DVG-D"
    version u32      currently 1
    header  u32 x4   num_classes, views, feature_dim, num_samples
            u8       per_shape_dirs (0 = one shared camera rig, 1 = per shape)
    split   u16 length + UTF-8 bytes
    names   num_classes x (u16 length + UTF-8 bytes)
    dirs    float64 x views x 3          (x num_samples when per_shape_dirs)
    shapes  num_samples x (u32 label + float32 x views x feature_dim)

Features are stored as 32-bit floats (the precision upstream CNN features
come in) and kept as float32 in memory, so a save/load round trip is
bit-identical. View directions are stored as float64: they are tiny next to
the features and exact storage keeps reloaded unit vectors exactly unit.

The loader never trusts the header: every count is checked against the
actual byte length before any array is built, so corrupt or truncated files
fail with a typed error instead of an allocation blow-up.
"""

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataIOError, FormatError, ValidationError
from .geometry import ViewGraph, build_view_graph, default_viewpoints

DATASET_MAGIC = b"3DVG-D"
DATASET_VERSION = 1
DEFAULT_SIGMA = 10.0


@dataclass
class ShapeSample:
    """One labeled shape: its view features (V, D_low) float32 and its view graph."""

    label: int
    features: np.ndarray
    graph: ViewGraph


@dataclass
class Dataset:
    """A list of shape samples with shared class names and a split tag."""

    samples: list
    class_names: list
    split: str = "train"

    @property
    def num_samples(self) -> int:
        return len(self.samples)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def views(self) -> int:
        return self.samples[0].features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.samples[0].features.shape[1]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def with_sigma(self, sigma: float) -> "Dataset":
        """Same data with view graphs rebuilt at a different decay parameter.

        Shapes sharing a directions array keep sharing one rebuilt graph.
        """
        cache: dict[int, ViewGraph] = {}
        samples = []
        for s in self.samples:
            key = id(s.graph)
            if key not in cache:
                cache[key] = build_view_graph(s.graph.directions, sigma)
            samples.append(ShapeSample(s.label, s.features, cache[key]))
        return Dataset(samples=samples, class_names=list(self.class_names), split=self.split)


def validate_dataset(dataset: Dataset) -> None:
    """Check the cross-sample invariants; raises FormatError/ValidationError."""
    if dataset.num_samples == 0:
        raise FormatError("dataset has no samples")
    if dataset.num_classes == 0:
        raise FormatError("dataset has no classes")
    views, dim = dataset.samples[0].features.shape
    if dim < 1:
        raise FormatError("feature dimension must be >= 1")
    for i, s in enumerate(dataset.samples):
        if s.features.shape != (views, dim):
            raise ValidationError(
                f"sample {i}: features {s.features.shape}, expected ({views}, {dim})"
            )
        if not 0 <= s.label < dataset.num_classes:
            raise ValidationError(
                f"sample {i}: label {s.label} out of range [0, {dataset.num_classes})"
            )
        if not np.isfinite(s.features).all():
            raise ValidationError(f"sample {i}: non-finite feature values")
        if s.graph.num_views != views:
            raise ValidationError(f"sample {i}: graph has {s.graph.num_views} views")


class _Reader:
    """Byte cursor that raises DataIOError instead of reading short."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        if count < 0 or self.pos + count > len(self.data):
            raise DataIOError(f"file truncated while reading {what}")
        out = self.data[self.pos : self.pos + count]
        self.pos += count
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def string(self, what: str) -> str:
        length = self.u16(f"{what} length")
        raw = self.take(length, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{what} is not valid UTF-8") from exc


def save(dataset: Dataset, path) -> None:
    """Write the dataset container; byte output is deterministic per content."""
    validate_dataset(dataset)
    views = dataset.views
    shared = all(
        np.array_equal(s.graph.directions, dataset.samples[0].graph.directions)
        for s in dataset.samples
    )
    parts = [DATASET_MAGIC, struct.pack("<I", DATASET_VERSION)]
    parts.append(
        struct.pack(
            "<IIIIB",
            dataset.num_classes,
            views,
            dataset.feature_dim,
            dataset.num_samples,
            0 if shared else 1,
        )
    )

    def put_string(text: str):
        raw = text.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError("string field longer than 65535 bytes")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)

    put_string(dataset.split)
    for name in dataset.class_names:
        put_string(name)
    if shared:
        parts.append(
            np.ascontiguousarray(dataset.samples[0].graph.directions, dtype="<f8").tobytes()
        )
    else:
        for s in dataset.samples:
            parts.append(np.ascontiguousarray(s.graph.directions, dtype="<f8").tobytes())
    for s in dataset.samples:
        parts.append(struct.pack("<I", s.label))
        parts.append(np.ascontiguousarray(s.features, dtype="<f4").tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as exc:
        raise DataIOError(f"cannot write dataset {path}: {exc}") from exc


def load(path, sigma: float = DEFAULT_SIGMA) -> Dataset:
    """Read and validate a dataset container, building graphs at ``sigma``."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read dataset {path}: {exc}") from exc
    r = _Reader(data)
    if r.take(6, "magic") != DATASET_MAGIC:
        raise FormatError("not a dataset file (bad magic)")
    version = r.u32("version")
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    num_classes = r.u32("class count")
    views = r.u32("view count")
    feature_dim = r.u32("feature dim")
    num_samples = r.u32("sample count")
    per_shape = r.u8("per-shape-dirs flag")
    if per_shape not in (0, 1):
        raise FormatError(f"per-shape-dirs flag must be 0 or 1, got {per_shape}")
    if num_classes < 1 or views < 1 or feature_dim < 1 or num_samples < 1:
        raise FormatError("header counts must all be >= 1")
    split = r.string("split tag")
    class_names = [r.string(f"class name {i}") for i in range(num_classes)]

    dirs_blocks = num_samples if per_shape else 1
    expected = (
        r.pos
        + dirs_blocks * views * 3 * 8
        + num_samples * (4 + views * feature_dim * 4)
    )
    if len(data) < expected:
        raise DataIOError(
            f"file truncated: {len(data)} bytes, layout requires {expected}"
        )
    if len(data) > expected:
        raise FormatError(f"trailing bytes: {len(data) - expected} past end of layout")

    def read_graph(what: str) -> ViewGraph:
        raw = r.take(views * 3 * 8, what)
        dirs = np.frombuffer(raw, dtype="<f8").reshape(views, 3).astype(np.float64)
        try:
            return build_view_graph(dirs, sigma)
        except ValueError as exc:
            raise ValidationError(f"{what}: {exc}") from exc

    if per_shape:
        graphs = [read_graph(f"directions of sample {i}") for i in range(num_samples)]
    else:
        graphs = [read_graph("shared directions")] * num_samples

    samples = []
    for i in range(num_samples):
        (label,) = struct.unpack("<I", r.take(4, f"label of sample {i}"))
        raw = r.take(views * feature_dim * 4, f"features of sample {i}")
        feats = np.frombuffer(raw, dtype="<f4").reshape(views, feature_dim)
        samples.append(ShapeSample(label=int(label), features=feats, graph=graphs[i]))

    dataset = Dataset(samples=samples, class_names=class_names, split=split)
    validate_dataset(dataset)
    return dataset


def generate_synthetic(
    num_classes: int,
    shapes_per_class: int,
    views: int,
    feature_dim: int,
    noise: float,
    seed: int,
    split: str = "train",
    sigma: float = DEFAULT_SIGMA,
) -> Dataset:
    """Direction-dependent synthetic view features with class structure.

    Each class gets a prototype response matrix A (D_low, 3) and offset mu
    (D_low,); shape features are ``A @ dir_j + mu`` plus isotropic Gaussian
    noise, so viewpoints genuinely matter and classes are exactly separable
    at noise 0. Prototypes depend only on the seed, while the noise stream
    also depends on the split tag: generating "train" and "test" with the
    same seed yields the same task with independent noise draws.
    """
    if num_classes < 1 or shapes_per_class < 1 or feature_dim < 1:
        raise ValueError("counts must all be >= 1")
    if views < 2:
        raise ValueError("need at least 2 views")
    if noise < 0:
        raise ValueError(f"noise must be >= 0, got {noise}")
    dirs = default_viewpoints(views)
    graph = build_view_graph(dirs, sigma)
    proto_rng = np.random.default_rng([seed, 0])
    response = proto_rng.standard_normal((num_classes, feature_dim, 3))
    offsets = proto_rng.standard_normal((num_classes, feature_dim))
    noise_rng = np.random.default_rng([seed, 1, zlib.crc32(split.encode("utf-8"))])
    samples = []
    for label in range(num_classes):
        clean = dirs @ response[label].T + offsets[label]
        for _ in range(shapes_per_class):
            feats = clean + noise * noise_rng.standard_normal((views, feature_dim))
            samples.append(
                ShapeSample(label=label, features=feats.astype(np.float32), graph=graph)
            )
    names = [f"class_{i}" for i in range(num_classes)]
    return Dataset(samples=samples, class_names=names, split=split)


def import_csv(manifest_path, sigma: float = DEFAULT_SIGMA) -> Dataset:
    """Plain-text ingestion: a JSON manifest plus one feature CSV per shape.

    Manifest fields: ``split``, ``class_names``, ``views``, ``feature_dim``,
    ``directions`` (inline list of [x, y, z]) or ``directions_csv`` (path),
    and ``shapes``, a list of ``{"features_csv": path, "label": int}``.
    Relative paths resolve against the manifest's directory; each CSV holds
    views rows of feature_dim comma-separated values.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text("utf-8"))
    except OSError as exc:
        raise DataIOError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    required = {"split", "class_names", "views", "feature_dim", "shapes"}
    missing = required - set(manifest)
    if missing:
        raise FormatError(f"manifest missing fields: {sorted(missing)}")
    views = int(manifest["views"])
    feature_dim = int(manifest["feature_dim"])
    base = manifest_path.parent

    def load_csv(rel, what: str, columns: int) -> np.ndarray:
        csv_path = base / rel
        try:
            arr = np.loadtxt(csv_path, delimiter=",", dtype=np.float64, ndmin=2)
        except OSError as exc:
            raise DataIOError(f"cannot read {what} {csv_path}: {exc}") from exc
        except ValueError as exc:
            raise FormatError(f"{what} {csv_path} is not numeric CSV: {exc}") from exc
        if arr.shape != (views, columns):
            raise ValidationError(
                f"{what} {csv_path}: shape {arr.shape}, expected ({views}, {columns})"
            )
        return arr

    if "directions" in manifest:
        dirs = np.asarray(manifest["directions"], dtype=np.float64)
        if dirs.shape != (views, 3):
            raise ValidationError(
                f"manifest directions: shape {dirs.shape}, expected ({views}, 3)"
            )
    elif "directions_csv" in manifest:
        dirs = load_csv(manifest["directions_csv"], "directions CSV", 3)
    else:
        raise FormatError("manifest needs 'directions' or 'directions_csv'")
    try:
        graph = build_view_graph(dirs, sigma)
    except ValueError as exc:
        raise ValidationError(f"manifest directions: {exc}") from exc

    samples = []
    for i, entry in enumerate(manifest["shapes"]):
        if "features_csv" not in entry or "label" not in entry:
            raise FormatError(f"shape entry {i} needs 'features_csv' and 'label'")
        feats = load_csv(entry["features_csv"], f"features of shape {i}", feature_dim)
        samples.append(
            ShapeSample(
                label=int(entry["label"]),
                features=feats.astype(np.float32),
                graph=graph,
            )
        )
    dataset = Dataset(
        samples=samples,
        class_names=[str(n) for n in manifest["class_names"]],
        split=str(manifest["split"]),
    )
    validate_dataset(dataset)
    return dataset
