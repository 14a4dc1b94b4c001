"""Face decoders: upsample-convolve blocks from a 1x1 embedding map to an RGB image."""
from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import BadResolution, ShapeMismatch

DEFAULT_CHANNELS = (1024, 512, 256, 128, 64, 32)
EXTRA_CHANNELS = 16          # UpBlock 7, used at 128 x 128
RESOLUTIONS = (64, 128)


class UpBlock(nn.Module):
    """2x upsample -> Conv 3x3 (stride 1, pad 1) -> ReLU -> BatchNorm."""

    def __init__(self, in_channels: int, out_channels: int, mode: str = "bilinear"):
        super().__init__()
        self.up = nn.Upsample(scale_factor=2, mode=mode,
                              align_corners=False if mode == "bilinear" else None)
        self.conv = nn.Conv2d(in_channels, out_channels, 3, stride=1, padding=1)
        self.act = nn.ReLU()
        self.bn = nn.BatchNorm2d(out_channels)

    def forward(self, x):
        return self.bn(self.act(self.conv(self.up(x))))


class DeconvBlock(nn.Module):
    """Stride-2 transposed convolution -> ReLU -> BatchNorm; the baseline-decoder ablation."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.deconv = nn.ConvTranspose2d(in_channels, out_channels, 4, stride=2, padding=1)
        self.act = nn.ReLU()
        self.bn = nn.BatchNorm2d(out_channels)

    def forward(self, x):
        return self.bn(self.act(self.deconv(x)))


def _n_blocks(resolution: int) -> int:
    if resolution not in RESOLUTIONS:
        raise BadResolution(f"resolution must be one of {RESOLUTIONS}, got {resolution}")
    return 6 if resolution == 64 else 7


class FaceDecoder(nn.Module):
    """Embedding ``(B, d)`` to image ``(B, 3, R, R)``.

    With ``multi=True`` the trunk runs to 128 x 128 and a second 1x1 head taps the
    64 x 64 map after block 6; ``forward`` then returns ``(img64, img128)``.
    Outputs are linear (unclamped); clamp only when exporting.
    """

    def __init__(self, embed_dim: int = 512, channels=DEFAULT_CHANNELS, extra_channels: int = EXTRA_CHANNELS,
                 resolution: int = 64, multi: bool = False, kind: str = "upsample", mode: str = "bilinear"):
        super().__init__()
        if len(channels) != 6:
            raise ValueError("decoder needs exactly six trunk widths")
        self.embed_dim = embed_dim
        self.multi = multi
        self.resolution = 128 if multi else resolution
        n = _n_blocks(self.resolution)
        widths = list(channels) + [extra_channels]
        make = {"upsample": lambda i, o: UpBlock(i, o, mode), "deconv": DeconvBlock}[kind]
        blocks, prev = [], embed_dim
        for c in widths[:n]:
            blocks.append(make(prev, c))
            prev = c
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(prev, 3, 1)
        self.head_low = nn.Conv2d(widths[5], 3, 1) if multi else None

    def _input(self, f):
        if f.dim() != 2 or f.shape[1] != self.embed_dim:
            raise ShapeMismatch(f"expected (B, {self.embed_dim}) embeddings, got {tuple(f.shape)}")
        return f[:, :, None, None]

    def trace(self, f):
        """Activations after every block (for shape checks)."""
        x, out = self._input(f), []
        for b in self.blocks:
            x = b(x)
            out.append(x)
        return out

    def forward(self, f):
        x = self._input(f)
        low = None
        for k, b in enumerate(self.blocks):
            x = b(x)
            if k == 5 and self.multi:
                low = self.head_low(x)
        img = self.head(x)
        return (low, img) if self.multi else img


def decode(f, decoder: FaceDecoder, resolution: int | None = None):
    if resolution is not None and resolution != decoder.resolution and not decoder.multi:
        raise BadResolution(f"decoder was built for {decoder.resolution}, asked for {resolution}")
    out = decoder(f)
    if decoder.multi:
        if resolution is None or resolution not in RESOLUTIONS:
            raise BadResolution(f"multi-resolution decoder offers {RESOLUTIONS}, asked for {resolution}")
        return out[0] if resolution == 64 else out[1]
    return out


def decode_multi(f, decoder: FaceDecoder):
    if not decoder.multi:
        raise ValueError("decoder was not built with multi=True")
    return decoder(f)


def export_image(img: torch.Tensor) -> torch.Tensor:
    """Clamp to [-1, 1] and quantise to 8 bits, returned as uint8."""
    return torch.round((img.clamp(-1.0, 1.0) + 1.0) * 127.5).to(torch.uint8)


def dequantize(img_u8: torch.Tensor) -> torch.Tensor:
    return img_u8.to(torch.float32) / 127.5 - 1.0
