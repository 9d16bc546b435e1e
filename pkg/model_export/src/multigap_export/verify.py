"""Numerical parity check between the source model and an exported graph."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .surgery import ARCHITECTURES, ExportError, build_backbone

PARITY_TOLERANCE = 1e-4


@dataclass
class VerifyReport:
    passed: bool
    max_abs_diff: float
    per_tap: dict = field(default_factory=dict)
    classifier_label: int | None = None
    messages: list = field(default_factory=list)


def load_image_tensor(path: str | Path, mean, scale) -> torch.Tensor:
    with Image.open(path) as img:
        raster = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    raster = (raster - np.asarray(mean, np.float32)) / np.asarray(scale, np.float32)
    return torch.from_numpy(raster.transpose(2, 0, 1)).unsqueeze(0)


def verify(graph_path: str | Path, spec_path: str | Path, image_path: str | Path,
           weights_path: str | None = None) -> VerifyReport:
    """Run the source framework and the exported graph on one image.

    Asserts tap-by-tap agreement within 1e-4 max-abs and that the source
    model's classifier head still emits a plausible label (an in-range class
    index with finite logits; sanity, not accuracy).
    """
    spec = json.loads(Path(spec_path).read_text(encoding="utf-8"))
    architecture = spec["model_name"]
    if architecture not in ARCHITECTURES:
        raise ExportError(f"spec names unknown architecture {architecture!r}")
    pre = spec.get("preprocessing", {})
    mean = pre.get("mean", [0.5, 0.5, 0.5])
    scale = pre.get("scale", [0.5, 0.5, 0.5])

    x = load_image_tensor(image_path, mean, scale)
    min_hw = spec.get("min_input_hw", [1, 1])
    if x.shape[2] < min_hw[0] or x.shape[3] < min_hw[1]:
        raise ExportError(
            f"sample image {x.shape[2]}x{x.shape[3]} is below the graph minimum "
            f"{min_hw[0]}x{min_hw[1]}"
        )

    try:
        exported = torch.jit.load(str(graph_path), map_location="cpu").eval()
    except Exception as exc:
        raise ExportError(f"cannot load exported graph {graph_path}: {exc}") from None
    with torch.no_grad():
        export_taps = exported(x)

    source = build_backbone(architecture, weights_path)
    stage_for_tap = {
        tap: stage for stage, tap in ARCHITECTURES[architecture]["stages"] if tap
    }
    captured = {}
    hooks = []
    for tap, stage in stage_for_tap.items():
        module = getattr(source, stage)
        hooks.append(module.register_forward_hook(
            lambda m, args, out, tap=tap: captured.__setitem__(tap, out)
        ))
    with torch.no_grad():
        logits = source(x)
    for hook in hooks:
        hook.remove()
    if hasattr(logits, "logits"):  # training-mode namedtuple guard
        logits = logits.logits

    report = VerifyReport(passed=True, max_abs_diff=0.0)
    declared = [name for name, _ in spec["taps"]]
    for name in declared:
        if name not in export_taps:
            report.passed = False
            report.messages.append(f"tap {name} missing from exported graph")
            continue
        if name not in captured:
            report.passed = False
            report.messages.append(f"tap {name} missing from source run")
            continue
        diff = float((export_taps[name] - captured[name]).abs().max())
        report.per_tap[name] = diff
        report.max_abs_diff = max(report.max_abs_diff, diff)
        if diff > PARITY_TOLERANCE:
            report.passed = False
            report.messages.append(
                f"tap {name}: max-abs {diff:.3e} exceeds {PARITY_TOLERANCE:.0e}"
            )
        expected_dim = dict((n, d) for n, d in spec["taps"])[name]
        produced = int(export_taps[name].shape[1])
        if produced != int(expected_dim):
            report.passed = False
            report.messages.append(
                f"tap {name}: {produced} channels, spec declares {expected_dim}"
            )

    if not torch.all(torch.isfinite(logits)):
        report.passed = False
        report.messages.append("classifier head produced non-finite logits")
    elif logits.shape[-1] != 1000:
        report.passed = False
        report.messages.append(f"classifier head has {logits.shape[-1]} outputs")
    else:
        report.classifier_label = int(logits.argmax(dim=-1)[0])

    return report
