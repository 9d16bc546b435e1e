"""Experiment pipelines: extraction, repeated-split evaluation, ablation,
cross-database tests, and the deployable predictor bundle.

Every pipeline is deterministic for a fixed (cache, manifest, seed, grid)
tuple; parallel execution only distributes work and never changes a reported
number (per-task determinism, ordered reduction).
"""

from __future__ import annotations

import io
import json
import logging
import time
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .datasets import CrossPlan, DatasetManifest, SplitPlan, cross_pair, make_split_series
from .errors import ConfigError, NumericalError, UndefinedCorrelationError
from .features import (
    FeatureStandardizer,
    FeatureTable,
    FeatureVector,
    concatenate,
    load_cache,
    save_cache,
    segments_for_taps,
    slice_layer,
)
from .metrics import SplitResultSummary, aggregate, plcc, srocc
from .regressors import (
    HyperparamGrid,
    default_gpr_grid,
    default_svr_grid,
    grid_search,
    load_regressor,
    make_regressor,
    save_regressor,
)
from . import runtime

log = logging.getLogger(__name__)

ALL_LAYERS = "All concatenated"


# ---------------------------------------------------------------------------
# Feature extraction
# ---------------------------------------------------------------------------


@dataclass
class ExtractionReport:
    extracted: int = 0
    skipped: int = 0
    failures: list[tuple[str, str]] = field(default_factory=list)
    elapsed: float = 0.0
    total_dim: int = 0


def extract_features(
    spec: runtime.ModelSpec,
    manifest: DatasetManifest,
    cache_path: str | Path,
    workers: int = 1,
    checkpoint_every: int = 64,
) -> ExtractionReport:
    """Extract one descriptor per manifest record into the cache file.

    Resumable: ids already cached are skipped, and the output rows always
    follow manifest order, so an interrupted run plus a rerun produces the
    same file as one uninterrupted run. Per-image failures are collected, not
    fatal. Each worker thread owns its own model handle.
    """
    cache_path = Path(cache_path)
    existing: dict[str, FeatureVector] = {}
    if cache_path.is_file():
        old = load_cache(cache_path)
        if old.taps != tuple(spec.taps):
            raise ConfigError(
                f"cache {cache_path} was built with different taps; refusing to mix"
            )
        existing = {r.image_id: r for r in old.rows}

    todo = [r for r in manifest.records if r.image_id not in existing]
    report = ExtractionReport(
        skipped=len(manifest.records) - len(todo), total_dim=spec.total_dim
    )
    started = time.perf_counter()

    results: dict[str, FeatureVector] = {}
    failures: list[tuple[str, str]] = []

    def run_one(record):
        image = runtime.load_image(manifest.resolved_path(record))
        handle = _thread_handle(spec)
        maps = handle.extract(image)
        return concatenate(maps, spec, image_id=record.image_id)

    def flush():
        table = FeatureTable(taps=spec.taps, model_name=spec.model_name)
        for record in manifest.records:
            row = existing.get(record.image_id) or results.get(record.image_id)
            if row is not None:
                table.add_row(row)
        save_cache(table, cache_path)

    if workers <= 1:
        handle_box = {}

        def _thread_handle(s):
            if "h" not in handle_box:
                handle_box["h"] = runtime.load_model(s)
            return handle_box["h"]

        for i, record in enumerate(todo):
            try:
                results[record.image_id] = run_one(record)
            except Exception as exc:
                failures.append((record.image_id, str(exc)))
            if (i + 1) % checkpoint_every == 0:
                flush()
    else:
        import threading

        local = threading.local()

        def _thread_handle(s):
            if not hasattr(local, "handle"):
                local.handle = runtime.load_model(s)
            return local.handle

        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [(r, pool.submit(run_one, r)) for r in todo]
            for i, (record, future) in enumerate(futures):
                try:
                    results[record.image_id] = future.result()
                except Exception as exc:
                    failures.append((record.image_id, str(exc)))
                if (i + 1) % checkpoint_every == 0:
                    flush()

    flush()
    report.extracted = len(results)
    report.failures = failures
    report.elapsed = time.perf_counter() - started
    return report


# ---------------------------------------------------------------------------
# Repeated-split evaluation
# ---------------------------------------------------------------------------


@dataclass
class SplitOutcome:
    split_index: int
    seed: int
    plcc: float | None
    srocc: float | None
    status: str  # "ok" | "failed"
    detail: str = ""


@dataclass
class EvalResult:
    summary: SplitResultSummary | None
    outcomes: list[SplitOutcome]
    n_effective: int
    layer: str | None = None
    dimension: int = 0


def _resolve_grid(kind: str, grid: HyperparamGrid | None, n_features: int, y_train):
    if grid is not None:
        return grid
    if kind == "svr":
        return default_svr_grid(n_features)
    return default_gpr_grid(n_features, y_train)


def _fit_best(X_train, y_train, X_val, y_val, kind, grid, standardize):
    """Standardize, pick hyperparameters on the validation split, and return
    (model, standardizer). One-point grids skip the search and fold the
    validation images into training."""
    single = grid is not None and grid.n_points() == 1
    if single:
        X_fit = np.vstack([X_train, X_val])
        y_fit = np.concatenate([y_train, y_val])
    else:
        X_fit, y_fit = X_train, y_train

    standardizer = None
    if standardize:
        standardizer = FeatureStandardizer().fit(X_fit)
        X_fit = standardizer.transform(X_fit)
        X_val = standardizer.transform(X_val)

    grid = _resolve_grid(kind, grid, X_fit.shape[1], y_fit)
    if grid.n_points() == 1:
        params = next(grid.candidates(kind))
        model = make_regressor(kind, params).fit(X_fit, y_fit)
    else:
        params, _, model = grid_search(X_fit, y_fit, X_val, y_val, grid, kind)
    return model, standardizer


def _evaluate_one_split(
    index: int,
    plan: SplitPlan,
    table: FeatureTable,
    mos: dict[str, float],
    kind: str,
    grid: HyperparamGrid | None,
    standardize: bool,
    layer: str | None,
) -> SplitOutcome:
    y = lambda ids: np.asarray([mos[i] for i in ids], dtype=np.float64)
    try:
        X_train = table.matrix(plan.train, layer=layer)
        X_val = table.matrix(plan.val, layer=layer)
        X_test = table.matrix(plan.test, layer=layer)
        model, standardizer = _fit_best(
            X_train, y(plan.train), X_val, y(plan.val), kind, grid, standardize
        )
        if standardizer is not None:
            X_test = standardizer.transform(X_test)
        predicted = model.predict(X_test)
        y_test = y(plan.test)
        return SplitOutcome(
            split_index=index,
            seed=plan.seed,
            plcc=plcc(y_test, predicted),
            srocc=srocc(y_test, predicted),
            status="ok",
        )
    except UndefinedCorrelationError as exc:
        return SplitOutcome(index, plan.seed, None, None, "failed", f"undefined correlation: {exc}")
    except NumericalError as exc:
        return SplitOutcome(index, plan.seed, None, None, "failed", str(exc))


def _check_coverage(table: FeatureTable, manifest: DatasetManifest) -> None:
    missing = [r.image_id for r in manifest.records if r.image_id not in table]
    if missing:
        raise ConfigError(
            f"{len(missing)} manifest ids missing from the feature cache "
            f"(first few: {missing[:5]})"
        )


def run_eval(
    table: FeatureTable,
    manifest: DatasetManifest,
    kind: str,
    grid: HyperparamGrid | None = None,
    splits: int = 100,
    seed: int = 0,
    standardize: bool = True,
    layer: str | None = None,
    workers: int = 1,
    plans: list[SplitPlan] | None = None,
) -> EvalResult:
    """Repeated-split protocol: for every plan, fit on train, tune on val,
    score PLCC/SROCC on test, then aggregate."""
    _check_coverage(table, manifest)
    if plans is None:
        plans = make_split_series(manifest, seed, splits)
    mos = manifest.mos_by_id()

    if workers > 1:
        outcomes = Parallel(n_jobs=workers)(
            delayed(_evaluate_one_split)(
                i, plan, table, mos, kind, grid, standardize, layer
            )
            for i, plan in enumerate(plans)
        )
    else:
        outcomes = [
            _evaluate_one_split(i, plan, table, mos, kind, grid, standardize, layer)
            for i, plan in enumerate(plans)
        ]

    good = [(o.plcc, o.srocc) for o in outcomes if o.status == "ok"]
    summary = aggregate(good) if good else None
    if layer is None:
        dimension = table.total_dim
    else:
        dimension = table.layer_bounds(layer)[1]
    return EvalResult(
        summary=summary,
        outcomes=outcomes,
        n_effective=len(good),
        layer=layer,
        dimension=dimension,
    )


# ---------------------------------------------------------------------------
# Ablation: one row per layer plus the concatenated descriptor, every row on
# the identical split series (paired comparison).
# ---------------------------------------------------------------------------


def run_ablation(
    table: FeatureTable,
    manifest: DatasetManifest,
    kind: str,
    grid: HyperparamGrid | None = None,
    splits: int = 100,
    seed: int = 0,
    standardize: bool = True,
    workers: int = 1,
) -> list[EvalResult]:
    plans = make_split_series(manifest, seed, splits)
    results = []
    for name, _dim in table.taps:
        results.append(
            run_eval(
                table, manifest, kind, grid=grid, standardize=standardize,
                layer=name, workers=workers, plans=plans,
            )
        )
    full = run_eval(
        table, manifest, kind, grid=grid, standardize=standardize,
        layer=None, workers=workers, plans=plans,
    )
    full.layer = ALL_LAYERS
    results.append(full)
    return results


# ---------------------------------------------------------------------------
# Cross-database test
# ---------------------------------------------------------------------------


@dataclass
class CrossResult:
    plan: CrossPlan
    plcc: float
    srocc: float
    params: dict


def run_cross(
    train_table: FeatureTable,
    train_manifest: DatasetManifest,
    test_table: FeatureTable,
    test_manifest: DatasetManifest,
    kind: str,
    grid: HyperparamGrid | None = None,
    seed: int = 0,
    standardize: bool = True,
) -> tuple[CrossResult, "PredictorBundle"]:
    """Tune on a carved validation subset of A, retrain on all of A, and
    score on all of B."""
    _check_coverage(train_table, train_manifest)
    _check_coverage(test_table, test_manifest)
    if train_table.taps != test_table.taps:
        raise ConfigError("train and test caches have different tap layouts")
    plan = cross_pair(train_manifest, test_manifest, seed=seed)

    mos_a = train_manifest.mos_by_id()
    y_train = np.asarray([mos_a[i] for i in plan.train], dtype=np.float64)
    y_val = np.asarray([mos_a[i] for i in plan.carve_val], dtype=np.float64)
    X_train = train_table.matrix(plan.train)
    X_val = train_table.matrix(plan.carve_val)

    # search phase on the carve
    search_std = FeatureStandardizer().fit(X_train) if standardize else None
    Xs_train = search_std.transform(X_train) if search_std else X_train
    Xs_val = search_std.transform(X_val) if search_std else X_val
    grid = _resolve_grid(kind, grid, X_train.shape[1], y_train)
    if grid.n_points() == 1:
        params = next(grid.candidates(kind))
    else:
        params, _, _ = grid_search(Xs_train, y_train, Xs_val, y_val, grid, kind)

    # final model on all of A
    all_ids = list(plan.train) + list(plan.carve_val)
    X_all = train_table.matrix(all_ids)
    y_all = np.asarray([mos_a[i] for i in all_ids], dtype=np.float64)
    final_std = FeatureStandardizer().fit(X_all) if standardize else None
    X_fit = final_std.transform(X_all) if final_std else X_all
    model = make_regressor(kind, params).fit(X_fit, y_all)

    X_test = test_table.matrix(plan.test)
    if final_std is not None:
        X_test = final_std.transform(X_test)
    predicted = model.predict(X_test)
    mos_b = test_manifest.mos_by_id()
    y_test = np.asarray([mos_b[i] for i in plan.test], dtype=np.float64)

    result = CrossResult(
        plan=plan, plcc=plcc(y_test, predicted), srocc=srocc(y_test, predicted),
        params=params,
    )
    bundle = PredictorBundle(
        kind=kind, model=model, standardizer=final_std,
        taps=train_table.taps, layer=None,
    )
    return result, bundle


# ---------------------------------------------------------------------------
# Deployable predictor bundle
# ---------------------------------------------------------------------------

MOS_RANGE = (1.0, 5.0)


@dataclass
class PredictorBundle:
    """A trained regressor plus everything needed to score a raw descriptor:
    the standardizer (if any), the tap layout, and the layer restriction."""

    kind: str
    model: object
    standardizer: FeatureStandardizer | None
    taps: tuple[tuple[str, int], ...]
    layer: str | None = None

    def predict_vector(self, vector: FeatureVector, clamp: bool = False) -> float:
        if vector.segments != segments_for_taps(self.taps):
            raise ConfigError("feature vector layout does not match the bundle")
        values = (
            slice_layer(vector, self.layer) if self.layer else vector.values
        )
        X = np.asarray(values, dtype=np.float64).reshape(1, -1)
        if self.standardizer is not None:
            X = self.standardizer.transform(X)
        out = float(self.model.predict(X)[0])
        if clamp:
            out = min(MOS_RANGE[1], max(MOS_RANGE[0], out))
        return out


def save_bundle(bundle: PredictorBundle, path: str | Path) -> None:
    path = Path(path)
    buf = io.BytesIO()
    save_regressor(bundle.model, buf)
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("regressor.npz", buf.getvalue())
        meta = {
            "format_version": 1,
            "kind": bundle.kind,
            "taps": [[n, d] for n, d in bundle.taps],
            "layer": bundle.layer or "",
            "standardized": bundle.standardizer is not None,
        }
        zf.writestr("bundle.json", json.dumps(meta, indent=2))
        if bundle.standardizer is not None:
            sbuf = io.BytesIO()
            np.savez(
                sbuf,
                mean=bundle.standardizer.mean_,
                std=bundle.standardizer.std_,
                fitted_on=bundle.standardizer.fitted_on,
            )
            zf.writestr("standardizer.npz", sbuf.getvalue())


def load_bundle(path: str | Path) -> PredictorBundle:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("bundle.json"))
            model = load_regressor(io.BytesIO(zf.read("regressor.npz")))
            standardizer = None
            if meta.get("standardized"):
                with np.load(io.BytesIO(zf.read("standardizer.npz"))) as data:
                    standardizer = FeatureStandardizer(
                        fitted_on=str(data["fitted_on"])
                    )
                    standardizer.mean_ = data["mean"]
                    standardizer.std_ = data["std"]
                    standardizer.constant_mask_ = standardizer.std_ == 0.0
                    standardizer.scale_ = np.where(
                        standardizer.constant_mask_, 1.0, standardizer.std_
                    )
                    standardizer.n_features_in_ = len(standardizer.mean_)
    except (KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path} is not a predictor bundle: {exc}") from None
    return PredictorBundle(
        kind=str(meta["kind"]),
        model=model,
        standardizer=standardizer,
        taps=tuple((str(n), int(d)) for n, d in meta["taps"]),
        layer=str(meta["layer"]) or None,
    )
