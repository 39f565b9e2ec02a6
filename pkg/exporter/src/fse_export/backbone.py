"""Penultimate-layer feature extractors over torchvision backbones."""

from __future__ import annotations

import torch
from torch import nn
from torchvision import models

# name -> (constructor, documented penultimate feature width)
BACKBONES = {
    "resnet18": (models.resnet18, 512),
    "resnet34": (models.resnet34, 512),
    "resnet50": (models.resnet50, 2048),
}


def load_backbone(name: str, checkpoint: str | None = None) -> tuple[nn.Module, int]:
    """Build a headless backbone returning penultimate features.

    With ``checkpoint`` the state dict is loaded from that file (keys for
    the classification head are ignored). Without one the network keeps a
    deterministic random initialization — the export pipeline and file
    format behave identically, only the feature quality differs.
    """
    if name not in BACKBONES:
        known = ", ".join(sorted(BACKBONES))
        raise ValueError(f"unknown backbone {name!r}; expected one of {known}")
    ctor, width = BACKBONES[name]
    torch.manual_seed(0)
    net = ctor(weights=None)
    if checkpoint is not None:
        state = torch.load(checkpoint, map_location="cpu", weights_only=True)
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        state = {k: v for k, v in state.items() if not k.startswith("fc.")}
        missing, unexpected = net.load_state_dict(state, strict=False)
        missing = [k for k in missing if not k.startswith("fc.")]
        if missing:
            raise ValueError(f"checkpoint missing backbone keys: {missing[:5]} ...")
        if unexpected:
            raise ValueError(f"checkpoint has unexpected keys: {unexpected[:5]} ...")
    net.fc = nn.Identity()
    net.eval()
    return net, width
