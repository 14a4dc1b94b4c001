"""Voice encoder: a stack of 1D Inception modules over log-mel frames."""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ShapeMismatch

DEFAULT_CHANNELS = (256, 384, 576, 864, 512)
KERNEL_SIZES = (2, 3, 5, 7)


def l2_normalize(v, eps: float = 1e-12, dim: int = -1):
    """``v / max(||v||_2, eps)`` for torch tensors or numpy arrays."""
    if isinstance(v, torch.Tensor):
        return v / v.norm(dim=dim, keepdim=True).clamp_min(eps)
    v = np.asarray(v, dtype=np.float64)
    return v / np.maximum(np.linalg.norm(v, axis=dim, keepdims=True), eps)


def same_padding(t_in: int, kernel: int, stride: int) -> tuple[int, int]:
    """Left/right zero padding giving ``ceil(t_in / stride)`` output frames."""
    t_out = math.ceil(t_in / stride)
    total = max((t_out - 1) * stride + kernel - t_in, 0)
    return total // 2, total - total // 2


class SameConv1d(nn.Conv1d):
    def forward(self, x):
        left, right = same_padding(x.shape[-1], self.kernel_size[0], self.stride[0])
        return super().forward(F.pad(x, (left, right)))


def _init_conv(conv: nn.Module):
    # fan-in scaled uniform; BN after the conv makes a bias redundant
    bound = 1.0 / math.sqrt(conv.weight[0].numel())
    nn.init.uniform_(conv.weight, -bound, bound)
    if conv.bias is not None:
        nn.init.zeros_(conv.bias)


class InceptionBlock1d(nn.Module):
    """Four parallel strided convolutions (kernels 2/3/5/7), each Conv -> BN -> ReLU,
    concatenated along channels."""

    def __init__(self, in_channels: int, branch_channels: int, kernel_sizes=KERNEL_SIZES,
                 stride: int = 2, bn_momentum: float = 0.1):
        super().__init__()
        self.in_channels = in_channels
        self.branch_channels = branch_channels
        self.branches = nn.ModuleList()
        for k in kernel_sizes:
            conv = SameConv1d(in_channels, branch_channels, k, stride=stride, bias=False)
            _init_conv(conv)
            self.branches.append(nn.Sequential(conv, nn.BatchNorm1d(branch_channels, momentum=bn_momentum),
                                               nn.ReLU()))

    @property
    def out_channels(self) -> int:
        return self.branch_channels * len(self.branches)

    def forward(self, x):
        if x.dim() != 3 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"expected (B, {self.in_channels}, T), got {tuple(x.shape)}")
        return torch.cat([b(x) for b in self.branches], dim=1)


class VoiceEncoder(nn.Module):
    """Mel frames ``(B, n_mels, T)`` to unit-norm embeddings ``(B, channels[-1])``."""

    def __init__(self, n_mels: int = 40, channels=DEFAULT_CHANNELS, kernel_sizes=KERNEL_SIZES,
                 bn_momentum: float = 0.1):
        super().__init__()
        self.n_mels = n_mels
        blocks, prev = [], n_mels
        for c in channels:
            if c % len(kernel_sizes):
                raise ValueError(f"{c} channels cannot be split across {len(kernel_sizes)} branches")
            block = InceptionBlock1d(prev, c // len(kernel_sizes), kernel_sizes, bn_momentum=bn_momentum)
            blocks.append(block)
            prev = block.out_channels
        self.blocks = nn.ModuleList(blocks)
        self.embed_dim = prev

    def features(self, x):
        """Per-block activations, for shape tracing."""
        out = []
        for b in self.blocks:
            x = b(x)
            out.append(x)
        return out

    def pooled(self, x):
        if x.dim() != 3 or x.shape[1] != self.n_mels:
            raise ShapeMismatch(f"expected (B, {self.n_mels}, T) mel input, got {tuple(x.shape)}")
        for b in self.blocks:
            x = b(x)
        return x.mean(dim=-1)

    def forward(self, x):
        return l2_normalize(self.pooled(x))


class CNNEncoder(nn.Module):
    """Single-kernel strided 1D CNN with the same widths; the baseline-encoder ablation."""

    def __init__(self, n_mels: int = 40, channels=DEFAULT_CHANNELS, kernel_size: int = 3,
                 bn_momentum: float = 0.1):
        super().__init__()
        self.n_mels = n_mels
        layers, prev = [], n_mels
        for c in channels:
            conv = SameConv1d(prev, c, kernel_size, stride=2, bias=False)
            _init_conv(conv)
            layers += [conv, nn.BatchNorm1d(c, momentum=bn_momentum), nn.ReLU()]
            prev = c
        self.net = nn.Sequential(*layers)
        self.embed_dim = prev

    def pooled(self, x):
        if x.dim() != 3 or x.shape[1] != self.n_mels:
            raise ShapeMismatch(f"expected (B, {self.n_mels}, T) mel input, got {tuple(x.shape)}")
        return self.net(x).mean(dim=-1)

    def forward(self, x):
        return l2_normalize(self.pooled(x))


def mel_batch(values, device=None, dtype=torch.float32) -> torch.Tensor:
    """``(T, F)`` or ``(B, T, F)`` mel arrays to encoder layout ``(B, F, T)``."""
    arr = torch.as_tensor(np.asarray(values), dtype=dtype, device=device)
    if arr.dim() == 2:
        arr = arr.unsqueeze(0)
    return arr.transpose(1, 2).contiguous()


@torch.no_grad()
def encode(segment, model: nn.Module) -> np.ndarray:
    """Embed one :class:`MelSegment` (or ``T x F`` array) in inference mode."""
    values = getattr(segment, "values", segment)
    was_training = model.training
    model.eval()
    param = next(model.parameters())
    out = model(mel_batch(values, param.device, param.dtype))[0].cpu().numpy()
    model.train(was_training)
    return out
