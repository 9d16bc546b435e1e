"""Dataset manifests and deterministic train/validation/test splitting.

Databases with artificial distortions derive many images from a small pool of
reference images; splitting those by reference group keeps all variants of
one source photo inside a single set, so train and test never share content.

All randomness comes from ``numpy.random.default_rng`` (PCG64) seeded per
plan, which has fixed stream semantics across platforms: the same (manifest,
seed, fractions) always yields the identical plan.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ManifestError

MOS_SCALE = (1.0, 5.0)
MANIFEST_COLUMNS = ("image_id", "path", "mos", "ref_id")
DEFAULT_FRACTIONS = (0.6, 0.2, 0.2)


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    path: str
    mos: float
    ref_id: str | None = None


@dataclass
class DatasetManifest:
    """Validated image records of one IQA database.

    ``distortion_kind`` is "authentic" (no reference images; ``ref_id`` absent)
    or "artificial" (every record carries the id of its reference image).
    ``missing_paths`` lists records whose image files were absent at load time;
    they are reported, not dropped.
    """

    name: str
    distortion_kind: str
    records: list[ImageRecord]
    root: Path = Path(".")
    missing_paths: list[str] = None

    def __post_init__(self):
        if self.missing_paths is None:
            self.missing_paths = []

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> list[str]:
        return [r.image_id for r in self.records]

    def mos_by_id(self) -> dict[str, float]:
        return {r.image_id: r.mos for r in self.records}

    def resolved_path(self, record: ImageRecord) -> Path:
        p = Path(record.path)
        return p if p.is_absolute() else self.root / p

    def ref_groups(self) -> list[list[str]]:
        """Image ids grouped by ref_id, groups ordered by first appearance."""
        groups: dict[str, list[str]] = {}
        for r in self.records:
            groups.setdefault(r.ref_id, []).append(r.image_id)
        return list(groups.values())


def load_manifest(path: str | Path, schema: str) -> DatasetManifest:
    """Load and validate a manifest CSV (header: image_id,path,mos,ref_id).

    ``schema`` must be "authentic" or "artificial". Relative image paths
    resolve against the CSV's directory. Rows whose image file is missing are
    collected in ``missing_paths`` for the caller to report.
    """
    if schema not in ("authentic", "artificial"):
        raise ManifestError(f"unknown manifest schema {schema!r}")
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")

    records: list[ImageRecord] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        missing_cols = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing_cols:
            raise ManifestError(f"{path}: missing columns {missing_cols}")
        for lineno, row in enumerate(reader, start=2):
            image_id = (row["image_id"] or "").strip()
            if not image_id:
                raise ManifestError(f"{path}:{lineno}: empty image_id")
            if image_id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate image_id {image_id!r}")
            seen.add(image_id)
            try:
                mos = float(row["mos"])
            except (TypeError, ValueError):
                raise ManifestError(
                    f"{path}:{lineno}: mos {row['mos']!r} is not a number"
                ) from None
            if not (MOS_SCALE[0] <= mos <= MOS_SCALE[1]):
                raise ManifestError(
                    f"{path}:{lineno}: mos {mos} outside scale "
                    f"[{MOS_SCALE[0]}, {MOS_SCALE[1]}]"
                )
            ref_id = (row["ref_id"] or "").strip() or None
            if schema == "artificial" and ref_id is None:
                raise ManifestError(f"{path}:{lineno}: artificial row without ref_id")
            if schema == "authentic" and ref_id is not None:
                raise ManifestError(f"{path}:{lineno}: authentic row carries a ref_id")
            records.append(
                ImageRecord(
                    image_id=image_id, path=row["path"], mos=mos, ref_id=ref_id
                )
            )
    if not records:
        raise ManifestError(f"{path}: manifest has no rows")

    manifest = DatasetManifest(
        name=path.stem, distortion_kind=schema, records=records, root=path.parent
    )
    manifest.missing_paths = [
        r.path for r in records if not manifest.resolved_path(r).is_file()
    ]
    return manifest


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint train/val/test image-id partition for one seed."""

    seed: int
    fractions: tuple[float, float, float]
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    @property
    def all_ids(self) -> frozenset[str]:
        return frozenset(self.train) | frozenset(self.val) | frozenset(self.test)


def _check_fractions(fractions) -> tuple[float, float, float]:
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError(f"fractions must be three positive values, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    return fractions


def _partition_counts(n: int, fractions) -> tuple[int, int, int]:
    # floor the val/test counts; leftover units go to train. This is the one
    # reproducible rule used everywhere (10 -> 6/2/2, 81 -> 49/16/16).
    n_val = math.floor(n * fractions[1])
    n_test = math.floor(n * fractions[2])
    n_train = n - n_val - n_test
    if n_train <= 0 or n_val <= 0 or n_test <= 0:
        raise ValueError(
            f"{n} units cannot fill three non-empty sets at fractions {fractions}"
        )
    return n_train, n_val, n_test


def make_split(manifest: DatasetManifest, seed: int, fractions=DEFAULT_FRACTIONS) -> SplitPlan:
    """Seeded three-way split.

    Authentic databases shuffle image ids uniformly; artificial databases
    shuffle reference groups and expand them, so no ref_id spans two sets.
    """
    fractions = _check_fractions(fractions)
    if manifest.distortion_kind == "artificial":
        units = manifest.ref_groups()
    else:
        units = [[r.image_id] for r in manifest.records]

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(units))
    n_train, n_val, _ = _partition_counts(len(units), fractions)

    def expand(idx) -> tuple[str, ...]:
        return tuple(image_id for k in idx for image_id in units[k])

    return SplitPlan(
        seed=seed,
        fractions=fractions,
        train=expand(order[:n_train]),
        val=expand(order[n_train : n_train + n_val]),
        test=expand(order[n_train + n_val :]),
    )


def make_split_series(
    manifest: DatasetManifest, base_seed: int, count: int = 100, fractions=DEFAULT_FRACTIONS
) -> list[SplitPlan]:
    """Plans for seeds base_seed, base_seed+1, ... (independent draws)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return [make_split(manifest, base_seed + i, fractions) for i in range(count)]


@dataclass(frozen=True)
class CrossPlan:
    """Train on all of database A, test on all of database B.

    A validation subset for hyperparameter search is carved from A with a
    seeded group-aware 80/20 split; the final model retrains on all of A.
    """

    train_name: str
    test_name: str
    seed: int
    train: tuple[str, ...]
    carve_val: tuple[str, ...]
    test: tuple[str, ...]


def cross_pair(
    train_manifest: DatasetManifest,
    test_manifest: DatasetManifest,
    seed: int = 0,
    carve_fraction: float = 0.2,
) -> CrossPlan:
    if train_manifest.name == test_manifest.name or set(train_manifest.ids()) == set(
        test_manifest.ids()
    ):
        raise ValueError("cross-database test needs two distinct manifests")
    if not (0.0 < carve_fraction < 1.0):
        raise ValueError(f"carve fraction {carve_fraction} outside (0, 1)")

    if train_manifest.distortion_kind == "artificial":
        units = train_manifest.ref_groups()
    else:
        units = [[r.image_id] for r in train_manifest.records]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(units))
    n_val = math.floor(len(units) * carve_fraction)
    if n_val <= 0 or n_val >= len(units):
        raise ValueError("carve split would leave an empty set")

    def expand(idx) -> tuple[str, ...]:
        return tuple(image_id for k in idx for image_id in units[k])

    return CrossPlan(
        train_name=train_manifest.name,
        test_name=test_manifest.name,
        seed=seed,
        train=expand(order[: len(units) - n_val]),
        carve_val=expand(order[len(units) - n_val :]),
        test=tuple(test_manifest.ids()),
    )


def write_plans_csv(plans: list[SplitPlan], path: str | Path) -> None:
    """Audit export: one row per (image_id, role, seed)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "role", "seed"])
        for plan in plans:
            for role in ("train", "val", "test"):
                for image_id in getattr(plan, role):
                    writer.writerow([image_id, role, plan.seed])
