"""One-time export: scripted multi-tap graph file plus its JSON sidecar."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .surgery import ARCHITECTURES, ExportError, TapBody, attach_taps, build_backbone

# The exported graphs run with the backbone's input transform disabled, so
# they expect pixels in [0, 1] normalized by 0.5 mean / 0.5 scale per channel
# (the TF-style convention both zoo ports were trained with).
DEFAULT_MEAN = (0.5, 0.5, 0.5)
DEFAULT_SCALE = (0.5, 0.5, 0.5)


@dataclass
class ExportRequest:
    architecture: str
    output_dir: Path
    weights_path: str | None = None  # None = torchvision zoo default
    mean: tuple = DEFAULT_MEAN
    scale: tuple = DEFAULT_SCALE
    profile: str = field(default_factory=lambda: f"torchscript-{torch.__version__}")

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ExportError(
                f"unsupported architecture {self.architecture!r}; "
                f"supported: {sorted(ARCHITECTURES)}"
            )
        self.output_dir = Path(self.output_dir)


@dataclass
class ExportResult:
    graph_path: Path
    spec_path: Path
    taps: list
    total_dim: int
    min_input: int


def probe_min_input(module, upper: int = 400) -> int:
    """Smallest square input the graph accepts, by bisection.

    Validity is monotone in the input size for these purely convolutional
    bodies, so bisection is exact.
    """

    def works(size: int) -> bool:
        try:
            with torch.no_grad():
                module(torch.zeros(1, 3, size, size))
            return True
        except RuntimeError:
            return False

    lo, hi = 1, upper
    if not works(hi):
        raise ExportError(f"graph rejects even a {upper}x{upper} input")
    while lo < hi:
        mid = (lo + hi) // 2
        if works(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


def export(request: ExportRequest) -> ExportResult:
    """Build, script, validate, and write <arch>.pt + <arch>.json."""
    arch = ARCHITECTURES[request.architecture]
    backbone = build_backbone(request.architecture, request.weights_path)
    body = attach_taps(backbone, request.architecture)
    scripted = torch.jit.script(body)

    # validate tap channel widths on a probe forward before writing anything
    size = arch["default_input"]
    with torch.no_grad():
        outputs = scripted(torch.zeros(1, 3, size, size))
    tap_names = [name for name in body.tap_names if name]
    taps = []
    for name, expected in zip(tap_names, arch["tap_dims"]):
        produced = int(outputs[name].shape[1])
        if produced != expected:
            raise ExportError(
                f"tap {name}: produced {produced} channels, expected {expected}"
            )
        taps.append([name, expected])

    min_input = probe_min_input(scripted)

    request.output_dir.mkdir(parents=True, exist_ok=True)
    graph_path = request.output_dir / f"{request.architecture}.pt"
    spec_path = request.output_dir / f"{request.architecture}.json"
    torch.jit.save(scripted, str(graph_path))

    sidecar = {
        "model_name": request.architecture,
        "graph_path": graph_path.name,
        "taps": taps,
        "total_dim": sum(dim for _, dim in taps),
        "preprocessing": {
            "mean": list(request.mean),
            "scale": list(request.scale),
            "pixel_range": [0.0, 1.0],
        },
        "input_layout": {"channel_order": "rgb", "spatial": "native"},
        "min_input_hw": [min_input, min_input],
        "source": {
            "framework": "torchvision",
            "profile": request.profile,
            "weights": request.weights_path or "zoo-default",
            "transform_input": False,
        },
    }
    spec_path.write_text(json.dumps(sidecar, indent=2), encoding="utf-8")
    return ExportResult(
        graph_path=graph_path,
        spec_path=spec_path,
        taps=taps,
        total_dim=sum(dim for _, dim in taps),
        min_input=min_input,
    )
