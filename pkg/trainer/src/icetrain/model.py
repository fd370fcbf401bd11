"""U-Net encoder-decoder with skip connections.

UNetSpec fixes the topology: ``depth`` down steps of two 3x3
convolutions and a 2x2 max-pool, a two-convolution bottleneck, ``depth``
up steps (nearest-neighbor upsample, 2x2 convolution halving the
channels, concatenation with the matching contracting feature map, two
3x3 convolutions), and a final 1x1 convolution to the class channels.
At depth 5 that is 28 convolution layers. Same padding throughout, so
spatial dims survive end to end and the skip concatenations line up
without cropping.

Width scales through ``base_channels`` (8 is plenty for desk-scale
corpora, 64 for the real thing); depth scales through ``depth``. The
layer-count arithmetic 5*depth + 3 is an invariant either way.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

# 0.0 disables dropout for deterministic verification runs.
DROPOUT_CHOICES = (0.0, 0.1, 0.2, 0.3)


@dataclass(frozen=True)
class UNetSpec:
    input_size: int = 256
    in_channels: int = 3
    classes: int = 3
    depth: int = 5
    base_channels: int = 64
    dropout: float = 0.1

    def __post_init__(self) -> None:
        for name in ("input_size", "in_channels", "classes", "depth", "base_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.input_size % (2 ** self.depth):
            raise ValueError(
                f"input_size {self.input_size} is not divisible by "
                f"2^depth = {2 ** self.depth}; the pooling chain would not close")
        if self.dropout not in DROPOUT_CHOICES:
            raise ValueError(
                f"dropout {self.dropout} not in {DROPOUT_CHOICES} (0.0 disables)")

    @property
    def conv_layers(self) -> int:
        # depth*2 down + 2 bottleneck + depth*(1 halving + 2) up + 1 final
        return 5 * self.depth + 3

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "UNetSpec":
        known = {f: data[f] for f in cls.__dataclass_fields__ if f in data}
        return cls(**known)


class _DoubleConv(nn.Module):
    def __init__(self, cin: int, cout: int, dropout: float) -> None:
        super().__init__()
        layers = [
            nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1), nn.ReLU(inplace=True),
        ]
        if dropout > 0:
            layers.append(nn.Dropout2d(dropout))
        self.block = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.block(x)


class _HalvingConv(nn.Module):
    """2x2 convolution after upsampling. 2x2 kernels cannot pad
    symmetrically, so one row/column of zeros goes on the far edges."""

    def __init__(self, cin: int) -> None:
        super().__init__()
        self.conv = nn.Conv2d(cin, cin // 2, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(F.pad(x, (0, 1, 0, 1)))


class UNet(nn.Module):
    def __init__(self, spec: UNetSpec) -> None:
        super().__init__()
        self.spec = spec
        chans = [spec.base_channels * (2 ** i) for i in range(spec.depth + 1)]

        self.down = nn.ModuleList()
        cin = spec.in_channels
        for c in chans[:-1]:
            self.down.append(_DoubleConv(cin, c, spec.dropout))
            cin = c
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _DoubleConv(chans[-2], chans[-1], spec.dropout)

        self.upsample = nn.Upsample(scale_factor=2, mode="nearest")
        self.halve = nn.ModuleList(_HalvingConv(c) for c in reversed(chans[1:]))
        self.up = nn.ModuleList(
            _DoubleConv(c, c // 2, spec.dropout) for c in reversed(chans[1:]))
        self.out = nn.Conv2d(chans[0], spec.classes, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Class logits, shape (n, classes, h, w)."""
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ValueError(
                f"expected (n, {self.spec.in_channels}, h, w) input, got {tuple(x.shape)}")
        step = 2 ** self.spec.depth
        if x.shape[2] % step or x.shape[3] % step:
            raise ValueError(
                f"spatial dims {tuple(x.shape[2:])} not divisible by {step}")

        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for halve, block, skip in zip(self.halve, self.up, reversed(skips)):
            x = halve(self.upsample(x))
            x = block(torch.cat([skip, x], dim=1))
        return self.out(x)

    def probabilities(self, x: torch.Tensor) -> torch.Tensor:
        """Per-pixel class probabilities (softmax over channel dim)."""
        return torch.softmax(self.forward(x), dim=1)

    def conv_layer_count(self) -> int:
        return sum(isinstance(m, nn.Conv2d) for m in self.modules())
