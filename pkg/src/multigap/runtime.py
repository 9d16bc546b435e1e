"""Loading and running a pretrained inference graph with named tap outputs.

The engine consumes a CNN body as two files produced by the companion export
tool (or any tool producing the same artifacts):

* a TorchScript archive whose ``forward`` maps an NCHW float32 batch of one
  image to a ``Dict[str, Tensor]`` of feature maps, one entry per tapped
  module, and
* a JSON sidecar describing the model (see :func:`load_model_spec` for the
  exact key names).

Nothing in here implements network math; the graph is opaque. ``torch`` is
imported lazily so that feature-table and regression workflows never pay for
it.

Thread-safety: a :class:`ModelHandle` must not be shared across concurrent
executions; give each worker its own handle (`load_model` per worker). All
operations are deterministic for a fixed graph file and input.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ModelGraphError

# Tap tables for the two stock architectures. Dimensions are architecture
# constants; the sum is the length of the concatenated descriptor.
GOOGLENET_TAPS: tuple[tuple[str, int], ...] = (
    ("inception_3a", 256),
    ("inception_3b", 480),
    ("inception_4a", 512),
    ("inception_4b", 512),
    ("inception_4c", 512),
    ("inception_4d", 528),
    ("inception_4e", 832),
    ("inception_5a", 832),
    ("inception_5b", 1024),
)
INCEPTION_V3_TAPS: tuple[tuple[str, int], ...] = (
    ("mixed0", 256),
    ("mixed1", 288),
    ("mixed2", 288),
    ("mixed3", 768),
    ("mixed4", 768),
    ("mixed5", 768),
    ("mixed6", 768),
    ("mixed7", 768),
    ("mixed8", 1280),
    ("mixed9", 2048),
    ("mixed10", 2048),
)

_STOCK = {
    "googlenet": {"taps": GOOGLENET_TAPS, "min_input_hw": (15, 15)},
    "inception_v3": {"taps": INCEPTION_V3_TAPS, "min_input_hw": (75, 75)},
}


@dataclass(frozen=True)
class ModelSpec:
    """Description of an exported inference graph and how to feed it.

    ``spatial_policy`` is either the string ``"native"`` (keep the input
    resolution; the pooled descriptor is resolution independent) or a fixed
    ``(height, width)`` pair for memory-bounded runs. ``pixel_range`` is the
    interval pixel values are mapped into before the per-channel ``mean`` and
    ``scale`` are applied.
    """

    model_name: str
    graph_path: Path
    taps: tuple[tuple[str, int], ...]
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: tuple[float, float, float] = (1.0, 1.0, 1.0)
    pixel_range: tuple[float, float] = (0.0, 1.0)
    channel_order: str = "rgb"
    spatial_policy: str | tuple[int, int] = "native"
    min_input_hw: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if not self.taps:
            raise ModelGraphError("model spec declares no taps")
        for name, dim in self.taps:
            if not name or int(dim) <= 0:
                raise ModelGraphError(f"invalid tap ({name!r}, {dim!r})")
        if len({name for name, _ in self.taps}) != len(self.taps):
            raise ModelGraphError("duplicate tap names in model spec")
        if self.channel_order not in ("rgb", "bgr"):
            raise ModelGraphError(f"unknown channel order {self.channel_order!r}")
        if isinstance(self.spatial_policy, str) and self.spatial_policy != "native":
            raise ModelGraphError(f"unknown spatial policy {self.spatial_policy!r}")
        if self.pixel_range[1] <= self.pixel_range[0]:
            raise ModelGraphError("pixel_range must be increasing")

    @property
    def total_dim(self) -> int:
        return sum(dim for _, dim in self.taps)

    @property
    def tap_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.taps)


def stock_model_spec(architecture: str, graph_path: str | Path = "") -> ModelSpec:
    """ModelSpec for one of the stock architectures.

    The stock exports are produced with the network's own input transform
    disabled, so they expect TF-style normalization: pixels in [0, 1] shifted
    and scaled by 0.5 per channel.
    """
    try:
        stock = _STOCK[architecture]
    except KeyError:
        raise ModelGraphError(
            f"unknown architecture {architecture!r}; expected one of {sorted(_STOCK)}"
        ) from None
    return ModelSpec(
        model_name=architecture,
        graph_path=Path(graph_path) if graph_path else Path(f"{architecture}.pt"),
        taps=stock["taps"],
        mean=(0.5, 0.5, 0.5),
        scale=(0.5, 0.5, 0.5),
        pixel_range=(0.0, 1.0),
        min_input_hw=stock["min_input_hw"],
    )


def load_model_spec(path: str | Path) -> ModelSpec:
    """Parse a JSON sidecar into a ModelSpec.

    Expected keys::

        model_name      string
        graph_path      string, relative paths resolve against the sidecar dir
        taps            list of [name, channel_dim] pairs, shallow to deep
        preprocessing   {"mean": [r,g,b], "scale": [r,g,b],
                         "pixel_range": [lo, hi]}
        input_layout    {"channel_order": "rgb"|"bgr",
                         "spatial": "native" | [height, width]}
        min_input_hw    [height, width]
        total_dim       optional; validated against the tap dims when present
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ModelGraphError(f"model spec not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ModelGraphError(f"model spec {path} is not valid JSON: {exc}") from None

    try:
        taps = tuple((str(n), int(d)) for n, d in doc["taps"])
        pre = doc.get("preprocessing", {})
        layout = doc.get("input_layout", {})
        spatial = layout.get("spatial", "native")
        if spatial != "native":
            spatial = (int(spatial[0]), int(spatial[1]))
        graph_path = Path(doc["graph_path"])
        if not graph_path.is_absolute():
            graph_path = path.parent / graph_path
        spec = ModelSpec(
            model_name=str(doc.get("model_name", path.stem)),
            graph_path=graph_path,
            taps=taps,
            mean=tuple(float(v) for v in pre.get("mean", (0.0, 0.0, 0.0))),
            scale=tuple(float(v) for v in pre.get("scale", (1.0, 1.0, 1.0))),
            pixel_range=tuple(float(v) for v in pre.get("pixel_range", (0.0, 1.0))),
            channel_order=str(layout.get("channel_order", "rgb")),
            spatial_policy=spatial,
            min_input_hw=tuple(int(v) for v in doc.get("min_input_hw", (1, 1))),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelGraphError(f"model spec {path} is malformed: {exc}") from None

    declared = doc.get("total_dim")
    if declared is not None and int(declared) != spec.total_dim:
        raise ModelGraphError(
            f"model spec {path}: declared total_dim {declared} != sum of tap dims "
            f"{spec.total_dim}"
        )
    return spec


@dataclass
class FeatureMap:
    """One tapped activation block, values in row-major (h, w, c) order."""

    layer_name: str
    values: np.ndarray  # shape (height, width, channels)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3 or self.values.size == 0:
            raise ValueError(
                f"feature map {self.layer_name!r} must be non-empty (h, w, c), "
                f"got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"feature map {self.layer_name!r} has non-finite values")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def _check_raster(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an RGB raster (h, w, 3), got shape {image.shape}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError("image has no pixels")
    if image.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixel data, got dtype {image.dtype}")
    return image


def _resize(image: np.ndarray, height: int, width: int) -> np.ndarray:
    pil = Image.fromarray(image, mode="RGB")
    return np.asarray(pil.resize((width, height), Image.BILINEAR))


def _fit_min_size(image: np.ndarray, min_h: int, min_w: int) -> np.ndarray:
    """Upscale (aspect preserved) and mirror-pad so both dims reach the minimum."""
    h, w = image.shape[:2]
    if h >= min_h and w >= min_w:
        return image
    s = min(min_h / h, min_w / w)
    if s > 1.0:
        image = _resize(image, max(1, round(h * s)), max(1, round(w * s)))
        h, w = image.shape[:2]
    pad_h = max(0, min_h - h)
    pad_w = max(0, min_w - w)
    if pad_h or pad_w:
        image = np.pad(
            image,
            ((pad_h // 2, pad_h - pad_h // 2), (pad_w // 2, pad_w - pad_w // 2), (0, 0)),
            mode="symmetric",
        )
    return image


def preprocess(image: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """Turn a decoded uint8 RGB raster into the graph's input tensor.

    Returns a float32 array of shape (1, 3, H, W). Under the "native" policy
    the spatial dims are preserved, except images smaller than the graph's
    minimum valid input, which are upscaled (aspect preserved) and then
    mirror-padded up to that minimum.
    """
    image = _check_raster(image)
    if spec.spatial_policy == "native":
        image = _fit_min_size(image, *spec.min_input_hw)
    else:
        image = _resize(image, *spec.spatial_policy)

    x = image.astype(np.float32) / 255.0
    lo, hi = spec.pixel_range
    if (lo, hi) != (0.0, 1.0):
        x = lo + x * (hi - lo)
    if spec.channel_order == "bgr":
        x = x[:, :, ::-1]
    mean = np.asarray(spec.mean, dtype=np.float32)
    scale = np.asarray(spec.scale, dtype=np.float32)
    x = (x - mean) / scale
    return np.ascontiguousarray(x.transpose(2, 0, 1))[np.newaxis]


class ModelHandle:
    """A loaded inference graph bound to its spec. Not safe to share across
    concurrent executions; create one per worker."""

    def __init__(self, spec: ModelSpec, module):
        self.spec = spec
        self._module = module

    def forward_taps(self, input_tensor: np.ndarray) -> list[FeatureMap]:
        return forward_taps(self, input_tensor)

    def extract(self, image: np.ndarray) -> list[FeatureMap]:
        """preprocess + forward in one call."""
        return self.forward_taps(preprocess(image, self.spec))


def load_model(spec: ModelSpec) -> ModelHandle:
    """Load the graph and validate it against the spec.

    Runs one probe inference at the minimum input size to verify that every
    declared tap exists and produces the declared channel count (a mismatch
    signals a wrong or stale export).
    """
    import torch

    if not Path(spec.graph_path).is_file():
        raise ModelGraphError(f"graph file not found: {spec.graph_path}")
    try:
        module = torch.jit.load(str(spec.graph_path), map_location="cpu")
    except Exception as exc:
        raise ModelGraphError(f"cannot load graph {spec.graph_path}: {exc}") from None
    module.eval()
    handle = ModelHandle(spec, module)

    if spec.spatial_policy == "native":
        probe_hw = spec.min_input_hw
    else:
        probe_hw = spec.spatial_policy
    probe = np.zeros((1, 3, probe_hw[0], probe_hw[1]), dtype=np.float32)
    handle.forward_taps(probe)
    return handle


def forward_taps(handle: ModelHandle, input_tensor: np.ndarray) -> list[FeatureMap]:
    """Run one forward pass, returning one FeatureMap per tap in spec order."""
    import torch

    x = np.asarray(input_tensor, dtype=np.float32)
    if x.ndim != 4 or x.shape[0] != 1 or x.shape[1] != 3:
        raise ModelGraphError(
            f"input tensor must have shape (1, 3, h, w), got {x.shape}"
        )
    try:
        with torch.no_grad():
            outputs = handle._module(torch.from_numpy(x))
    except RuntimeError as exc:
        raise ModelGraphError(f"inference failed: {exc}") from None

    maps = []
    for name, dim in handle.spec.taps:
        if name not in outputs:
            raise ModelGraphError(
                f"tap {name!r} not produced by the graph; available: "
                f"{sorted(outputs.keys())}"
            )
        t = outputs[name]
        if t.dim() != 4 or t.shape[1] != dim:
            raise ModelGraphError(
                f"tap {name!r}: expected {dim} channels, graph produced "
                f"{tuple(t.shape)}"
            )
        values = t[0].permute(1, 2, 0).contiguous().numpy()
        maps.append(FeatureMap(layer_name=name, values=values))
    return maps


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file into a uint8 RGB raster."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValueError(f"cannot decode image {path}: {exc}") from None
