"""Command-line entry points.

Subcommands: extract, eval, ablate, cross, predict, split. Values come from
built-in defaults, then the ``--config`` JSON file, then explicit flags
(flags win). Exit codes: 0 success, 1 configuration error, 2 partial data
failure, 3 numerical failure.
"""

from __future__ import annotations

import json
import logging
import sys
import time
from pathlib import Path

import click

from . import datasets, harness, reporting, runtime
from .errors import (
    CacheFormatError,
    ConfigError,
    ManifestError,
    ModelGraphError,
    MultigapError,
    NumericalError,
    UndefinedCorrelationError,
)
from .features import load_cache
from .regressors import HyperparamGrid

log = logging.getLogger("multigap")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2
EXIT_NUMERICAL = 3


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return doc


def _merge(ctx: click.Context, config: dict, **flags):
    """defaults < config file < explicitly passed flags."""
    merged = dict(flags)
    for key, value in config.items():
        if key not in flags:
            raise ConfigError(f"unknown config key {key!r}")
        source = ctx.get_parameter_source(key)
        if source == click.core.ParameterSource.COMMANDLINE:
            continue
        merged[key] = value
    return merged


def _load_grid(path: str | None, metric: str = "plcc") -> HyperparamGrid | None:
    if not path:
        return None
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"grid file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"grid file {path} is not valid JSON: {exc}") from None
    metric = doc.pop("metric", metric)
    try:
        return HyperparamGrid(
            params={k: [float(v) for v in vs] for k, vs in doc.items()},
            metric=metric,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"grid file {path} is malformed: {exc}") from None


def _load_manifest_auto(path: str, schema: str) -> datasets.DatasetManifest:
    manifest = datasets.load_manifest(path, schema)
    if manifest.missing_paths:
        log.warning(
            "%s: %d records point at missing image files",
            manifest.name, len(manifest.missing_paths),
        )
    return manifest


def _require(opts: dict, *keys: str) -> None:
    missing = [k for k in keys if not opts.get(k)]
    if missing:
        raise ConfigError(
            "missing required option(s): " + ", ".join(f"--{k.replace('_', '-')}" for k in missing)
        )


@click.group()
def cli():
    """No-reference image quality assessment from pooled multi-level CNN
    features."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")


@cli.command()
@click.option("--model-spec", default=None, help="JSON sidecar of the exported graph.")
@click.option("--manifest", default=None, help="Dataset manifest CSV.")
@click.option("--schema", type=click.Choice(["authentic", "artificial"]),
              default="authentic", show_default=True)
@click.option("--cache", default=None, help="Feature cache to create or resume.")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--config", default=None, help="JSON config file (flags override it).")
@click.pass_context
def extract(ctx, **flags):
    """Run every manifest image through the graph and cache descriptors."""
    opts = _merge(ctx, _load_config_file(flags.pop("config")), **flags)
    _require(opts, "model_spec", "manifest", "cache")
    spec = runtime.load_model_spec(opts["model_spec"])
    manifest = _load_manifest_auto(opts["manifest"], opts["schema"])
    report = harness.extract_features(
        spec, manifest, opts["cache"], workers=int(opts["workers"])
    )
    rate = report.extracted / report.elapsed if report.elapsed > 0 else 0.0
    click.echo(
        f"extracted {report.extracted} descriptors (dim {report.total_dim}), "
        f"skipped {report.skipped} already cached, "
        f"{report.elapsed:.1f}s ({rate:.2f} images/s)"
    )
    if report.failures:
        for image_id, reason in report.failures:
            log.error("failed %s: %s", image_id, reason)
        click.echo(f"{len(report.failures)} images failed", err=True)
        ctx.exit(EXIT_PARTIAL)


def _eval_options(fn):
    fn = click.option("--manifest", default=None)(fn)
    fn = click.option("--schema", type=click.Choice(["authentic", "artificial"]),
                      default="authentic", show_default=True)(fn)
    fn = click.option("--cache", default=None)(fn)
    fn = click.option("--regressor", type=click.Choice(["svr", "gpr"]),
                      default="svr", show_default=True)(fn)
    fn = click.option("--splits", type=int, default=100, show_default=True)(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True)(fn)
    fn = click.option("--standardize", type=click.Choice(["on", "off"]),
                      default="on", show_default=True)(fn)
    fn = click.option("--grid", default=None, help="JSON grid file.")(fn)
    fn = click.option("--out", default=None, help="Output directory.")(fn)
    fn = click.option("--workers", type=int, default=1, show_default=True)(fn)
    fn = click.option("--config", default=None,
                      help="JSON config file (flags override it).")(fn)
    return fn


def _finish_eval(result: harness.EvalResult, out_dir: Path, prefix: str) -> int:
    reporting.write_per_split_csv(result.outcomes, out_dir / f"{prefix}_per_split.csv")
    reporting.write_summary_csv(result, out_dir / f"{prefix}_summary.csv")
    (out_dir / f"{prefix}_summary.md").write_text(
        reporting.format_rows_markdown(reporting.report_rows([result])),
        encoding="utf-8",
    )
    failed = [o for o in result.outcomes if o.status != "ok"]
    if result.summary is not None:
        s = result.summary
        click.echo(
            f"PLCC {s.plcc_mean:.4f}/{s.plcc_median:.4f} (+-{s.plcc_std:.4f})  "
            f"SROCC {s.srocc_mean:.4f}/{s.srocc_median:.4f} (+-{s.srocc_std:.4f})  "
            f"n_effective {result.n_effective}/{len(result.outcomes)}"
        )
    for o in failed:
        log.warning("split %d failed: %s", o.split_index, o.detail)
    if result.n_effective == 0:
        return EXIT_NUMERICAL
    if failed:
        return EXIT_PARTIAL
    return EXIT_OK


@cli.command(name="eval")
@_eval_options
@click.option("--layer", default=None, help="Restrict features to one tap layer.")
@click.pass_context
def eval_cmd(ctx, **flags):
    """Repeated-split evaluation with validation-set hyperparameter search."""
    opts = _merge(ctx, _load_config_file(flags.pop("config")), **flags)
    _require(opts, "manifest", "cache", "out")
    manifest = _load_manifest_auto(opts["manifest"], opts["schema"])
    table = load_cache(opts["cache"])
    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    result = harness.run_eval(
        table,
        manifest,
        opts["regressor"],
        grid=_load_grid(opts["grid"]),
        splits=int(opts["splits"]),
        seed=int(opts["seed"]),
        standardize=opts["standardize"] == "on",
        layer=opts["layer"],
        workers=int(opts["workers"]),
    )
    log.info("evaluation took %.1fs", time.perf_counter() - started)
    ctx.exit(_finish_eval(result, out_dir, "eval"))


@cli.command()
@_eval_options
@click.pass_context
def ablate(ctx, **flags):
    """Per-layer study: every tap alone plus the concatenated descriptor,
    all on the identical split series."""
    opts = _merge(ctx, _load_config_file(flags.pop("config")), **flags)
    _require(opts, "manifest", "cache", "out")
    manifest = _load_manifest_auto(opts["manifest"], opts["schema"])
    table = load_cache(opts["cache"])
    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    results = harness.run_ablation(
        table,
        manifest,
        opts["regressor"],
        grid=_load_grid(opts["grid"]),
        splits=int(opts["splits"]),
        seed=int(opts["seed"]),
        standardize=opts["standardize"] == "on",
        workers=int(opts["workers"]),
    )
    reporting.write_ablation_per_split_csv(results, out_dir / "ablation_per_split.csv")
    table_out = reporting.report_table(results)
    reporting.write_table_csv(table_out, out_dir / "ablation.csv")
    markdown = reporting.format_table_markdown(table_out)
    (out_dir / "ablation.md").write_text(markdown, encoding="utf-8")
    click.echo(markdown, nl=False)
    if any(r.n_effective == 0 for r in results):
        ctx.exit(EXIT_NUMERICAL)
    if any(r.n_effective < len(r.outcomes) for r in results):
        ctx.exit(EXIT_PARTIAL)


@cli.command()
@click.option("--manifest", "manifests", multiple=True,
              help="Two manifests: train database then test database.")
@click.option("--schema", "schemas", multiple=True,
              type=click.Choice(["authentic", "artificial"]),
              help="Schema per manifest (defaults to authentic).")
@click.option("--cache", "caches", multiple=True,
              help="Two caches matching the manifests.")
@click.option("--regressor", type=click.Choice(["svr", "gpr"]), default="svr",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--standardize", type=click.Choice(["on", "off"]), default="on",
              show_default=True)
@click.option("--grid", default=None)
@click.option("--out", required=True)
@click.option("--save-model", default=None,
              help="Write the model trained on all of database A.")
@click.pass_context
def cross(ctx, manifests, schemas, caches, regressor, seed, standardize, grid,
          out, save_model):
    """Cross-database test: train on all of database A, test on all of B."""
    if len(manifests) != 2 or len(caches) != 2:
        raise ConfigError("cross needs exactly two --manifest and two --cache")
    schemas = list(schemas) + ["authentic"] * (2 - len(schemas))
    manifest_a = _load_manifest_auto(manifests[0], schemas[0])
    manifest_b = _load_manifest_auto(manifests[1], schemas[1])
    table_a = load_cache(caches[0])
    table_b = load_cache(caches[1])
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result, bundle = harness.run_cross(
        table_a, manifest_a, table_b, manifest_b, regressor,
        grid=_load_grid(grid), seed=seed, standardize=standardize == "on",
    )
    with open(out_dir / "cross.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("train,test,plcc,srocc\n")
        fh.write(
            f"{result.plan.train_name},{result.plan.test_name},"
            f"{result.plcc!r},{result.srocc!r}\n"
        )
    click.echo(
        f"{result.plan.train_name} -> {result.plan.test_name}: "
        f"PLCC {result.plcc:.4f}  SROCC {result.srocc:.4f}"
    )
    if save_model:
        harness.save_bundle(bundle, save_model)
        log.info("saved predictor bundle to %s", save_model)


@cli.command()
@click.option("--model", "model_path", required=True, help="Predictor bundle file.")
@click.option("--cache", default=None, help="Feature cache holding the image.")
@click.option("--id", "image_id", default=None, help="Image id inside the cache.")
@click.option("--image", default=None, help="Image file to score.")
@click.option("--model-spec", default=None, help="Graph sidecar (with --image).")
@click.option("--clamp", is_flag=True, help="Clip the prediction to [1, 5].")
@click.pass_context
def predict(ctx, model_path, cache, image_id, image, model_spec, clamp):
    """Predict the quality score of one image (from cache or from pixels)."""
    bundle = harness.load_bundle(model_path)
    if cache and image_id:
        table = load_cache(cache)
        if image_id not in table:
            raise ConfigError(f"id {image_id!r} not in cache {cache}")
        vector = table.row(image_id)
    elif image and model_spec:
        spec = runtime.load_model_spec(model_spec)
        if tuple(spec.taps) != bundle.taps:
            raise ConfigError("model spec taps do not match the bundle")
        handle = runtime.load_model(spec)
        from .features import concatenate

        vector = concatenate(handle.extract(runtime.load_image(image)), spec)
    else:
        raise ConfigError("predict needs --cache with --id, or --image with --model-spec")
    click.echo(repr(bundle.predict_vector(vector, clamp=clamp)))


@cli.command()
@click.option("--manifest", required=True)
@click.option("--schema", type=click.Choice(["authentic", "artificial"]),
              default="authentic", show_default=True)
@click.option("--splits", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, help="Plans CSV path.")
def split(manifest, schema, splits, seed, out):
    """Generate split plans and dump them for audit."""
    m = _load_manifest_auto(manifest, schema)
    plans = datasets.make_split_series(m, seed, splits)
    datasets.write_plans_csv(plans, out)
    click.echo(f"wrote {len(plans)} plans for {len(m)} images to {out}")


def main(argv=None) -> int:
    try:
        rc = cli.main(args=argv, standalone_mode=False)
        return int(rc) if isinstance(rc, int) else EXIT_OK
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except (click.UsageError, click.BadParameter) as exc:
        exc.show(file=sys.stderr)
        return EXIT_CONFIG
    except click.Abort:
        return EXIT_CONFIG
    except (ConfigError, ManifestError, ModelGraphError, CacheFormatError,
            ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (NumericalError, UndefinedCorrelationError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERICAL
    except MultigapError as exc:
        log.error("%s", exc)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
