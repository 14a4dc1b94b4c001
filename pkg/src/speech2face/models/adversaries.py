"""Image discriminators: real/fake judge and identity classifier."""
from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import ShapeMismatch

DEFAULT_CHANNELS = (64, 128, 256)
EXTRA_CHANNELS = 512         # extra conv layer for 128 x 128 inputs
HIDDEN = 1024
REAL = 0


class Discriminator(nn.Module):
    """Conv(4x4, s2, p1) -> BN -> ReLU stack, global average pool, Linear -> ReLU -> Linear.

    ``forward`` returns logits; use :meth:`probs` for the softmax output.
    """

    def __init__(self, n_out: int, resolution: int = 64, channels=DEFAULT_CHANNELS,
                 extra_channels: int = EXTRA_CHANNELS, hidden: int = HIDDEN):
        super().__init__()
        if resolution not in (64, 128):
            raise ShapeMismatch(f"discriminators are defined for 64 or 128 inputs, got {resolution}")
        self.resolution = resolution
        self.n_out = n_out
        widths = list(channels) + ([extra_channels] if resolution == 128 else [])
        layers, prev = [], 3
        for c in widths:
            layers += [nn.Conv2d(prev, c, 4, stride=2, padding=1), nn.BatchNorm2d(c), nn.ReLU()]
            prev = c
        self.body = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Sequential(nn.Linear(prev, hidden), nn.ReLU(), nn.Linear(hidden, n_out))

    def _check(self, img):
        if img.dim() != 4 or img.shape[1:] != (3, self.resolution, self.resolution):
            raise ShapeMismatch(
                f"expected (B, 3, {self.resolution}, {self.resolution}) images, got {tuple(img.shape)}")

    def feature_map(self, img):
        self._check(img)
        return self.body(img)

    def forward(self, img):
        return self.fc(self.pool(self.feature_map(img)).flatten(1))

    def probs(self, img):
        return torch.softmax(self(img), dim=-1)


def build_discriminators(n_identities: int, resolution: int = 64, channels=DEFAULT_CHANNELS,
                         extra_channels: int = EXTRA_CHANNELS, hidden: int = HIDDEN):
    """Independent ``(D_real, D_id)`` pair with no shared parameters."""
    if n_identities < 2:
        raise ValueError("identity classifier needs at least two classes")
    return (Discriminator(2, resolution, channels, extra_channels, hidden),
            Discriminator(n_identities, resolution, channels, extra_channels, hidden))


def judge_real(img, d_real: Discriminator):
    """(B, 2) probabilities; column 0 is "real"."""
    return d_real.probs(img)


def classify_identity(img, d_id: Discriminator):
    return d_id.probs(img)
