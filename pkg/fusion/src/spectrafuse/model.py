"""Fusion network: deep-stem residual image branch plus clinical branch.

The image branch follows the 14-layer "deep" residual layout: a
three-conv stem, four stages of one basic block each, and average-pool
downsampling in the shortcut paths. Global pooling feeds a linear
bottleneck projection (10 units by default); the paper-style fusion
normalizes both bottlenecks, concatenates them, and applies one more
fully connected block before the classification head. Without a
clinical branch the bottleneck goes straight to the head, which is the
image-only model.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import ArchitectureConfig

_STAGE_WIDTHS = (64, 128, 256, 512)


def _width(base: int, factor: float) -> int:
    return max(8, int(round(base * factor)))


class BasicBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or in_ch != out_ch:
            # "d" variant: average pooling handles the stride, then 1x1 conv
            shortcut = []
            if stride != 1:
                shortcut.append(nn.AvgPool2d(2, stride=stride, ceil_mode=True))
            shortcut += [nn.Conv2d(in_ch, out_ch, 1, bias=False), nn.BatchNorm2d(out_ch)]
            self.shortcut = nn.Sequential(*shortcut)
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class ImageBackbone(nn.Module):
    """Deep-stem residual net truncated at a linear bottleneck."""

    def __init__(self, config: ArchitectureConfig):
        super().__init__()
        widths = [_width(w, config.width_factor) for w in _STAGE_WIDTHS]
        stem_w = widths[0] // 2
        self.stem = nn.Sequential(
            nn.Conv2d(config.input_channels, stem_w, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(stem_w),
            nn.ReLU(inplace=True),
            nn.Conv2d(stem_w, stem_w, 3, padding=1, bias=False),
            nn.BatchNorm2d(stem_w),
            nn.ReLU(inplace=True),
            nn.Conv2d(stem_w, widths[0], 3, padding=1, bias=False),
            nn.BatchNorm2d(widths[0]),
            nn.ReLU(inplace=True),
        )
        self.pool = nn.MaxPool2d(3, stride=2, padding=1)
        self.stages = nn.Sequential(
            BasicBlock(widths[0], widths[0]),
            BasicBlock(widths[0], widths[1], stride=2),
            BasicBlock(widths[1], widths[2], stride=2),
            BasicBlock(widths[2], widths[3], stride=2),
        )
        self.head_pool = nn.AdaptiveAvgPool2d(1)
        self.bottleneck = nn.Linear(widths[3], config.bottleneck_units)

    def forward(self, x):
        x = self.pool(self.stem(x))
        x = self.stages(x)
        x = self.head_pool(x).flatten(1)
        return self.bottleneck(x)


class ClinicalBranch(nn.Module):
    """Two fully connected blocks then a linear head of bottleneck width."""

    def __init__(self, config: ArchitectureConfig):
        super().__init__()
        sizes = config.clinical_block_sizes
        self.blocks = nn.Sequential(
            nn.Linear(config.n_clinical, sizes[0]),
            nn.BatchNorm1d(sizes[0]),
            nn.ELU(),
            nn.Dropout(config.dropout),
            nn.Linear(sizes[0], sizes[1]),
            nn.BatchNorm1d(sizes[1]),
            nn.ELU(),
            nn.Dropout(config.dropout),
        )
        self.head = nn.Linear(sizes[1], config.clinical_head_units)

    def forward(self, x):
        return self.head(self.blocks(x))


class FusionClassifier(nn.Module):
    def __init__(self, config: ArchitectureConfig):
        super().__init__()
        self.config = config
        self.image_branch = ImageBackbone(config)
        if config.n_clinical:
            self.clinical_branch = ClinicalBranch(config)
            self.image_norm = nn.BatchNorm1d(config.bottleneck_units)
            self.clinical_norm = nn.BatchNorm1d(config.clinical_head_units)
            fused_width = config.bottleneck_units + config.clinical_head_units
            self.fused_block = nn.Sequential(
                nn.Linear(fused_width, fused_width),
                nn.BatchNorm1d(fused_width),
                nn.ELU(),
                nn.Dropout(config.dropout),
            )
            self.classifier = nn.Linear(fused_width, config.n_classes)
        else:
            self.clinical_branch = None
            self.classifier = nn.Linear(config.bottleneck_units, config.n_classes)

    def forward(self, image, clinical=None):
        features = self.image_branch(image)
        if self.clinical_branch is None:
            return self.classifier(features)
        if clinical is None:
            raise ValueError("this model needs a clinical input tensor")
        fused = torch.cat(
            [self.image_norm(features), self.clinical_norm(self.clinical_branch(clinical))],
            dim=1,
        )
        return self.classifier(self.fused_block(fused))


def build_model(config: ArchitectureConfig, seed: int = 0,
                pretrained_path: str | None = None) -> tuple[FusionClassifier, dict]:
    """Construct the network; returns (model, build_info).

    When pretrained_path is given, backbone weights are loaded from a
    state dict; a 3-channel first convolution is adapted to more input
    channels by averaging its kernels over the channel axis, replicating
    the mean across the new channels, and rescaling by 3/C to preserve
    activation magnitude. Without a path the model keeps its random
    initialization and build_info records the fallback.
    """
    torch.manual_seed(seed)
    model = FusionClassifier(config)
    info = {"pretrained": False, "note": "random initialization"}
    if pretrained_path:
        state = torch.load(pretrained_path, map_location="cpu", weights_only=True)
        state = adapt_first_conv(state, config.input_channels)
        missing, unexpected = model.image_branch.load_state_dict(state, strict=False)
        info = {
            "pretrained": True,
            "note": f"loaded {pretrained_path}",
            "missing_keys": list(missing),
            "unexpected_keys": list(unexpected),
        }
    return model, info


def adapt_first_conv(state: dict, input_channels: int) -> dict:
    key = "stem.0.weight"
    if key not in state:
        return state
    weight = state[key]
    if weight.shape[1] == input_channels:
        return state
    if weight.shape[1] != 3:
        raise ValueError(
            f"cannot adapt first conv from {weight.shape[1]} to {input_channels} channels"
        )
    mean = weight.mean(dim=1, keepdim=True)
    adapted = mean.repeat(1, input_channels, 1, 1) * (3.0 / input_channels)
    out = dict(state)
    out[key] = adapted
    return out
