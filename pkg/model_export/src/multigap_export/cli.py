"""CLI: export multi-tap graphs and verify them against the source model."""

from __future__ import annotations

import sys

import click

from .export import ExportRequest, export as run_export
from .surgery import ExportError
from .verify import verify as run_verify


@click.group()
def cli():
    """Export pretrained CNN bodies with per-Inception-module taps."""


@cli.command(name="export")
@click.option("--arch", type=click.Choice(["googlenet", "inception_v3"]), required=True)
@click.option("--weights", default=None,
              help="State-dict checkpoint; omit to pull torchvision zoo weights.")
@click.option("--out", required=True, help="Output directory for graph + sidecar.")
@click.option("--mean", nargs=3, type=float, default=None,
              help="Override preprocessing mean (three floats).")
@click.option("--scale", nargs=3, type=float, default=None,
              help="Override preprocessing scale (three floats).")
def export_cmd(arch, weights, out, mean, scale):
    """Write <arch>.pt and <arch>.json into the output directory."""
    kwargs = {}
    if mean:
        kwargs["mean"] = tuple(mean)
    if scale:
        kwargs["scale"] = tuple(scale)
    result = run_export(ExportRequest(
        architecture=arch, output_dir=out, weights_path=weights, **kwargs
    ))
    click.echo(
        f"exported {arch}: {len(result.taps)} taps, total dim {result.total_dim}, "
        f"min input {result.min_input}x{result.min_input}"
    )
    click.echo(f"graph: {result.graph_path}")
    click.echo(f"spec:  {result.spec_path}")


@cli.command(name="verify")
@click.option("--graph", required=True)
@click.option("--spec", required=True)
@click.option("--image", required=True)
@click.option("--weights", default=None,
              help="Checkpoint the graph was exported from (omit for zoo weights).")
def verify_cmd(graph, spec, image, weights):
    """Compare the exported graph against the source framework on one image."""
    report = run_verify(graph, spec, image, weights_path=weights)
    for name, diff in sorted(report.per_tap.items()):
        click.echo(f"  {name}: max-abs {diff:.3e}")
    if report.classifier_label is not None:
        click.echo(f"  classifier argmax label: {report.classifier_label}")
    for message in report.messages:
        click.echo(f"  ! {message}", err=True)
    click.echo("PASS" if report.passed else "FAIL")
    if not report.passed:
        raise SystemExit(1)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except ExportError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
