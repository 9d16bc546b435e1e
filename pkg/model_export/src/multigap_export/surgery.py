"""Model surgery: wrap a torchvision classification CNN so its forward pass
returns the output of every Inception block as a named tap.

The wrapper calls the backbone's submodules in their published order and
stops after the last Inception block; classifier heads, aux heads, dropout,
and the final pooling never run. Networks are always built with
``transform_input`` disabled, so the exported graphs expect TF-style inputs
(pixels in [0, 1], shifted and scaled by 0.5 per channel); that convention is
recorded in the sidecar, and fine-tuned checkpoints with different
normalization can override it there.
"""

from __future__ import annotations

from typing import Dict, List

import torch
import torch.nn as nn


class ExportError(Exception):
    pass


# Stage order and tap naming per supported architecture. A stage tagged with
# a tap name contributes its output to the returned dict.
ARCHITECTURES = {
    "googlenet": {
        "stages": [
            ("conv1", None),
            ("maxpool1", None),
            ("conv2", None),
            ("conv3", None),
            ("maxpool2", None),
            ("inception3a", "inception_3a"),
            ("inception3b", "inception_3b"),
            ("maxpool3", None),
            ("inception4a", "inception_4a"),
            ("inception4b", "inception_4b"),
            ("inception4c", "inception_4c"),
            ("inception4d", "inception_4d"),
            ("inception4e", "inception_4e"),
            ("maxpool4", None),
            ("inception5a", "inception_5a"),
            ("inception5b", "inception_5b"),
        ],
        "tap_dims": (256, 480, 512, 512, 512, 528, 832, 832, 1024),
        "default_input": 224,
    },
    "inception_v3": {
        "stages": [
            ("Conv2d_1a_3x3", None),
            ("Conv2d_2a_3x3", None),
            ("Conv2d_2b_3x3", None),
            ("maxpool1", None),
            ("Conv2d_3b_1x1", None),
            ("Conv2d_4a_3x3", None),
            ("maxpool2", None),
            ("Mixed_5b", "mixed0"),
            ("Mixed_5c", "mixed1"),
            ("Mixed_5d", "mixed2"),
            ("Mixed_6a", "mixed3"),
            ("Mixed_6b", "mixed4"),
            ("Mixed_6c", "mixed5"),
            ("Mixed_6d", "mixed6"),
            ("Mixed_6e", "mixed7"),
            ("Mixed_7a", "mixed8"),
            ("Mixed_7b", "mixed9"),
            ("Mixed_7c", "mixed10"),
        ],
        "tap_dims": (256, 288, 288, 768, 768, 768, 768, 768, 1280, 2048, 2048),
        "default_input": 299,
    },
}


class TapBody(nn.Module):
    """Sequential body over the backbone stages, emitting named taps."""

    def __init__(self, stages: List[nn.Module], tap_names_by_stage: List[str]):
        super().__init__()
        self.stages = nn.ModuleList(stages)
        self.tap_names: List[str] = tap_names_by_stage  # "" marks no tap

    def forward(self, x: torch.Tensor) -> Dict[str, torch.Tensor]:
        taps = torch.jit.annotate(Dict[str, torch.Tensor], {})
        for i, stage in enumerate(self.stages):
            x = stage(x)
            name = self.tap_names[i]
            if name != "":
                taps[name] = x
        return taps


def build_backbone(architecture: str, weights_path: str | None = None) -> nn.Module:
    """Instantiate the torchvision model, optionally loading a checkpoint.

    Without a checkpoint the zoo weights are requested from torchvision
    (needs network access to the model zoo); pass a state-dict file to work
    offline or to export a fine-tuned model.
    """
    import torchvision.models as models

    if architecture not in ARCHITECTURES:
        raise ExportError(
            f"unsupported architecture {architecture!r}; "
            f"supported: {sorted(ARCHITECTURES)}"
        )
    builder = getattr(models, architecture)
    if weights_path is not None:
        model = builder(weights=None, transform_input=False, aux_logits=True,
                        init_weights=False)
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    else:
        try:
            model = builder(weights="DEFAULT", transform_input=False)
        except Exception as exc:
            raise ExportError(
                f"could not obtain zoo weights for {architecture} ({exc}); "
                "pass an explicit checkpoint file instead"
            ) from None
    return model.eval()


def attach_taps(model: nn.Module, architecture: str) -> TapBody:
    """Slice the backbone into a tap-emitting body.

    Unknown stage names (zoo version drift) raise with the list of available
    candidates.
    """
    plan = ARCHITECTURES[architecture]["stages"]
    available = dict(model.named_children())
    missing = [stage for stage, _ in plan if stage not in available]
    if missing:
        raise ExportError(
            f"{architecture}: stages {missing} not found in the loaded model; "
            f"available candidates: {sorted(available)}"
        )
    stages = [available[stage] for stage, _ in plan]
    tap_names = [tap or "" for _, tap in plan]
    return TapBody(stages, tap_names).eval()
