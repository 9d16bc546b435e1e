"""Export tool: pretrained CNN bodies with one named output per Inception
module, saved as TorchScript plus a JSON sidecar the scoring engine reads."""

from .export import ExportRequest, ExportResult, export, probe_min_input
from .surgery import ARCHITECTURES, ExportError, TapBody, attach_taps, build_backbone
from .verify import VerifyReport, verify

__version__ = "0.1.0"
