"""Pooled multi-level descriptors, feature standardization, and the on-disk cache.

A descriptor is built by averaging each tapped feature map over its spatial
extent (one value per channel) and concatenating the per-layer vectors in tap
order. Per-layer segment boundaries are kept so single-layer studies can slice
the exact block a layer contributed.

The cache stores descriptors at 32-bit precision (matching inference output);
regression converts to 64-bit after load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import CacheFormatError
from .runtime import FeatureMap, ModelSpec

CACHE_MAGIC = b"MGFC"
CACHE_VERSION = 1


def gap(feature_map: FeatureMap) -> np.ndarray:
    """Global average pooling: per-channel mean over the spatial extent.

    Returns a float64 vector of length ``feature_map.channels``.
    """
    return feature_map.values.mean(axis=(0, 1), dtype=np.float64)


@dataclass
class FeatureVector:
    """Concatenated pooled descriptor of one image.

    ``segments`` records (layer_name, offset, length) for each tap, contiguous
    and in tap order; ``values`` has length equal to the sum of the segment
    lengths.
    """

    image_id: str
    segments: tuple[tuple[str, int, int], ...]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        offset = 0
        for name, off, length in self.segments:
            if off != offset or length <= 0:
                raise ValueError(
                    f"segment {name!r} at offset {off} breaks contiguous layout"
                )
            offset += length
        if self.values.ndim != 1 or self.values.size != offset:
            raise ValueError(
                f"values length {self.values.size} != segment total {offset}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"feature vector {self.image_id!r} has non-finite values")

    @property
    def layer_names(self) -> tuple[str, ...]:
        return tuple(name for name, _, _ in self.segments)


def segments_for_taps(taps) -> tuple[tuple[str, int, int], ...]:
    segments = []
    offset = 0
    for name, dim in taps:
        segments.append((name, offset, int(dim)))
        offset += int(dim)
    return tuple(segments)


def concatenate(maps: list[FeatureMap], spec: ModelSpec, image_id: str = "") -> FeatureVector:
    """Pool each map and concatenate in tap order.

    The maps must arrive in spec tap order with matching channel counts.
    """
    if len(maps) != len(spec.taps):
        raise ValueError(f"expected {len(spec.taps)} maps, got {len(maps)}")
    parts = []
    for fmap, (name, dim) in zip(maps, spec.taps):
        if fmap.layer_name != name:
            raise ValueError(
                f"map order mismatch: got {fmap.layer_name!r} where {name!r} expected"
            )
        if fmap.channels != dim:
            raise ValueError(
                f"layer {name!r}: {fmap.channels} channels, spec declares {dim}"
            )
        parts.append(gap(fmap))
    return FeatureVector(
        image_id=image_id,
        segments=segments_for_taps(spec.taps),
        values=np.concatenate(parts),
    )


def slice_layer(vector: FeatureVector, layer_name: str) -> np.ndarray:
    """Return exactly the segment a layer contributed."""
    for name, offset, length in vector.segments:
        if name == layer_name:
            return vector.values[offset : offset + length]
    raise KeyError(f"layer {layer_name!r} not in {vector.layer_names}")


@dataclass
class FeatureTable:
    """All descriptors extracted for one dataset with a shared segment layout.

    ``model_name`` is in-memory metadata; the cache file format does not
    persist it.
    """

    taps: tuple[tuple[str, int], ...]
    rows: list[FeatureVector] = field(default_factory=list)
    model_name: str = ""

    def __post_init__(self):
        self.taps = tuple((str(n), int(d)) for n, d in self.taps)
        self._index: dict[str, int] = {}
        rows = self.rows
        self.rows = []
        for row in rows:
            self.add_row(row)

    @property
    def segments(self) -> tuple[tuple[str, int, int], ...]:
        return segments_for_taps(self.taps)

    @property
    def total_dim(self) -> int:
        return sum(dim for _, dim in self.taps)

    def add_row(self, row: FeatureVector) -> None:
        if row.segments != self.segments:
            raise ValueError(
                f"row {row.image_id!r} segment layout does not match the table"
            )
        if row.image_id in self._index:
            raise ValueError(f"duplicate image_id {row.image_id!r}")
        self._index[row.image_id] = len(self.rows)
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._index

    def row(self, image_id: str) -> FeatureVector:
        return self.rows[self._index[image_id]]

    def ids(self) -> list[str]:
        return [r.image_id for r in self.rows]

    def layer_bounds(self, layer_name: str) -> tuple[int, int]:
        for name, offset, length in self.segments:
            if name == layer_name:
                return offset, length
        raise KeyError(f"layer {layer_name!r} not in table")

    def matrix(self, image_ids=None, layer: str | None = None) -> np.ndarray:
        """Feature matrix (float64) for the given ids (default: all rows),
        optionally restricted to one layer's columns."""
        if image_ids is None:
            rows = self.rows
        else:
            rows = [self.rows[self._index[i]] for i in image_ids]
        out = np.empty((len(rows), self.total_dim), dtype=np.float64)
        for k, r in enumerate(rows):
            out[k] = r.values
        if layer is not None:
            offset, length = self.layer_bounds(layer)
            out = out[:, offset : offset + length]
        return out


class FeatureStandardizer(TransformerMixin, BaseEstimator):
    """Per-dimension standardization fitted on the training split only.

    Uses the sample standard deviation (ddof=1). Dimensions with zero std are
    flagged and passed through after mean subtraction, never divided.

    Parameters
    ----------
    fitted_on : str
        Identifier of the split the statistics were computed on (metadata).

    Attributes
    ----------
    mean_ : ndarray of shape (n_features,)
    std_ : ndarray of shape (n_features,)
        Sample std; zero for constant dimensions.
    constant_mask_ : ndarray of bool
        True where the training column was constant.
    """

    def __init__(self, fitted_on: str = ""):
        self.fitted_on = fitted_on

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        self.mean_ = X.mean(axis=0)
        self.std_ = X.std(axis=0, ddof=1)
        self.constant_mask_ = self.std_ == 0.0
        self.scale_ = np.where(self.constant_mask_, 1.0, self.std_)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        return (X - self.mean_) / self.scale_


def fit_standardizer(table: FeatureTable, train_ids, fitted_on: str = "") -> FeatureStandardizer:
    return FeatureStandardizer(fitted_on=fitted_on).fit(table.matrix(train_ids))


def apply_standardizer(standardizer: FeatureStandardizer, vector: FeatureVector) -> FeatureVector:
    values = standardizer.transform(vector.values.reshape(1, -1))[0]
    return FeatureVector(
        image_id=vector.image_id, segments=vector.segments, values=values
    )


# ---------------------------------------------------------------------------
# Binary cache format (little-endian), bit-exact at 32-bit precision:
#
#   magic   "MGFC" (4 bytes)
#   version u32 = 1
#   L       u32 layer count
#   L times:  u16 name length, UTF-8 name, u32 dim
#   n       u64 row count
#   n times:  u16 id length, UTF-8 image_id, (sum of dims) f32 values
# ---------------------------------------------------------------------------


def save_cache(table: FeatureTable, path: str | Path) -> None:
    """Write the table; values are cast to float32. Atomic (tmp + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", CACHE_VERSION))
        fh.write(struct.pack("<I", len(table.taps)))
        for name, dim in table.taps:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", dim))
        fh.write(struct.pack("<Q", len(table.rows)))
        for row in table.rows:
            raw = row.image_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(np.asarray(row.values, dtype="<f4").tobytes())
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CacheFormatError(f"truncated feature cache: {self.path}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_cache(path: str | Path) -> FeatureTable:
    """Read a cache file back into a FeatureTable (values float32)."""
    path = Path(path)
    if not path.is_file():
        raise CacheFormatError(f"feature cache not found: {path}")
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != CACHE_MAGIC:
        raise CacheFormatError(f"not a feature cache: {path}")
    version = reader.u32()
    if version != CACHE_VERSION:
        raise CacheFormatError(
            f"unsupported cache version {version} in {path} (expected {CACHE_VERSION})"
        )
    n_layers = reader.u32()
    taps = []
    for _ in range(n_layers):
        name = reader.take(reader.u16()).decode("utf-8")
        taps.append((name, reader.u32()))
    table = FeatureTable(taps=tuple(taps))
    total = table.total_dim
    segments = table.segments
    n_rows = reader.u64()
    for _ in range(n_rows):
        image_id = reader.take(reader.u16()).decode("utf-8")
        values = np.frombuffer(reader.take(4 * total), dtype="<f4").copy()
        if image_id in table:
            raise CacheFormatError(f"duplicate image_id {image_id!r} in {path}")
        table.add_row(
            FeatureVector(image_id=image_id, segments=segments, values=values)
        )
    if reader.pos != len(reader.data):
        raise CacheFormatError(f"trailing bytes after row {n_rows} in {path}")
    return table
